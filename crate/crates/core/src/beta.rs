//! Closed-form teacher rationality estimates.
//!
//! With the Boltzmann model, a teacher's preference rate on a fixed pair pins
//! down `β·Δ`. Knowing `Δ` gives `β` directly; otherwise every teacher
//! measured on the same pair shares the unknown factor and the estimates are
//! comparable after normalizing the largest to 1.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HubError, Result};
use crate::hub::{AgentObservation, ArmDistribution, HubInstance, ItemId, QueryProfile, Teacher, UtilityFunction};
use crate::naive::{clip_probability, PREFERENCE_CLIP};

/// Rationality implied by `p`, the rate at which the lesser item of a pair
/// is preferred, given `a = -1/Δ` for that pair. Negative values, which arise
/// when noise pushes `p` above one half, clamp to zero.
pub fn beta_from_preference(p: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(HubError::InvalidAnchor(format!("scale a must be positive, got {a}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(HubError::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    let p = clip_probability(p);
    let beta = a * (1.0 / p - 1.0).ln();
    if beta < 0.0 {
        log::warn!("negative rationality estimate {beta:.4} (p = {p:.4}) clamped to 0");
        return Ok(0.0);
    }
    Ok(beta)
}

/// Affine map `x ↦ scale·x + shift` sending `lesser ↦ 0` and `greater ↦ 1`.
pub fn affine_anchor(lesser: f64, greater: f64) -> Result<(f64, f64)> {
    if !(lesser < greater) {
        return Err(HubError::InvalidAnchor(format!(
            "anchor utilities must be strictly ordered, got {lesser} and {greater}"
        )));
    }
    let scale = 1.0 / (greater - lesser);
    Ok((scale, -lesser * scale))
}

/// Rationality of a diagnostic test with the given sensitivity.
///
/// The sensitivity is read as the rate at which a patient at `u_max` is
/// preferred over one at `u_min`, i.e. the greater item wins. Flipping to the
/// lesser-item orientation gives `β = ln(s / (1 - s)) / (u_max - u_min)`.
pub fn beta_from_sensitivity(sensitivity: f64, u_min: f64, u_max: f64) -> Result<f64> {
    if !(u_max > u_min) {
        return Err(HubError::InvalidParameter(format!(
            "need u_max > u_min, got [{u_min}, {u_max}]"
        )));
    }
    if !(0.0..=1.0).contains(&sensitivity) {
        return Err(HubError::InvalidParameter(format!(
            "sensitivity {sensitivity} outside [0, 1]"
        )));
    }
    let s = sensitivity.clamp(PREFERENCE_CLIP, 1.0 - PREFERENCE_CLIP);
    if s != sensitivity {
        log::warn!("degenerate sensitivity {sensitivity} clipped to {s}");
    }
    beta_from_preference(1.0 - s, 1.0 / (u_max - u_min))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTally {
    /// Times the lesser item was preferred.
    pub preferred: u64,
    pub total: u64,
}

impl PreferenceTally {
    pub fn rate(&self) -> f64 {
        self.preferred as f64 / self.total as f64
    }
}

/// One teacher's answers on an anchor pair `(lesser, greater)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSampleSet {
    pub pair: (ItemId, ItemId),
    pub tally: PreferenceTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub raw: f64,
    pub scaled: f64,
    pub scaling_anchor: String,
}

/// Estimates every teacher's rationality from answers on a shared pair.
/// With `known_delta` (the lesser minus greater utility, negative) the raw
/// estimates are rescaled to absolute values; otherwise they are divided by
/// the largest one.
pub fn estimate_betas_from_logs(
    samples: &[PreferenceSampleSet],
    known_delta: Option<f64>,
) -> Result<Vec<BetaEstimate>> {
    let Some(first) = samples.first() else {
        return Err(HubError::InsufficientData("no teachers to estimate".into()));
    };
    let pair = first.pair;
    if let Some(bad) = samples.iter().find(|s| s.pair != pair) {
        return Err(HubError::InvalidAnchor(format!(
            "teachers measured on different pairs {:?} and {:?}",
            pair, bad.pair
        )));
    }
    for (m, s) in samples.iter().enumerate() {
        if s.tally.total == 0 || s.tally.preferred > s.tally.total {
            return Err(HubError::InvalidParameter(format!(
                "teacher {m}: tally {}/{} is not a valid count",
                s.tally.preferred, s.tally.total
            )));
        }
    }
    let raw: Vec<f64> = samples
        .iter()
        .map(|s| beta_from_preference(s.tally.rate(), 1.0))
        .collect::<Result<_>>()?;
    let (factor, anchor) = match known_delta {
        Some(delta) => {
            if !(delta < 0.0) || !delta.is_finite() {
                return Err(HubError::InvalidAnchor(format!(
                    "known difference must be negative (lesser minus greater), got {delta}"
                )));
            }
            (-1.0 / delta, format!("pair {pair:?} with known difference {delta}"))
        }
        None => {
            let max = raw.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                (1.0 / max, format!("pair {pair:?}, normalized to the largest estimate"))
            } else {
                log::warn!("every rationality estimate is zero; normalization skipped");
                (0.0, format!("pair {pair:?}, all estimates zero"))
            }
        }
    };
    Ok(raw
        .into_iter()
        .map(|r| BetaEstimate {
            raw: r,
            scaled: r * factor,
            scaling_anchor: anchor.clone(),
        })
        .collect())
}

/// One row of a preference log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub teacher: String,
    pub item_i: String,
    pub item_j: String,
    /// The preferred item's label.
    pub preferred: String,
}

impl PreferenceRecord {
    /// Normalizes `preferred` given as `1`/`true` (first item) or `0`/`false`.
    fn winner(&self) -> Result<&str> {
        match self.preferred.trim() {
            p if p == self.item_i => Ok(&self.item_i),
            p if p == self.item_j => Ok(&self.item_j),
            "1" | "true" => Ok(&self.item_i),
            "0" | "false" => Ok(&self.item_j),
            other => Err(HubError::Config(format!(
                "preferred '{other}' is neither '{}' nor '{}'",
                self.item_i, self.item_j
            ))),
        }
    }
}

pub fn read_preference_log(path: &Path) -> Result<Vec<PreferenceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| HubError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .deserialize()
        .map(|r| r.map_err(|e| HubError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_preference_log(path: &Path, records: &[PreferenceRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HubError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        // serde writes the header with the first row; keep empty logs readable
        w.write_record(["teacher", "item_i", "item_j", "preferred"])
            .map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
    }
    for r in records {
        w.serialize(r)
            .map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| HubError::io(path, e))
}

/// Preference records for every query answered in `log`.
pub fn preference_records(hub: &HubInstance, log: &crate::episode::EpisodeLog) -> Vec<PreferenceRecord> {
    log.rows
        .iter()
        .filter_map(|r| match r.observation {
            AgentObservation::PreferenceSample {
                teacher,
                pair: (i, j),
                preferred_first,
            } => Some(PreferenceRecord {
                teacher: hub.teacher_label(teacher),
                item_i: hub.items[i].clone(),
                item_j: hub.items[j].clone(),
                preferred: hub.items[if preferred_first { i } else { j }].clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Result of estimating rationality from a preference log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaReport {
    pub lesser: String,
    pub greater: String,
    pub teachers: Vec<String>,
    pub tallies: Vec<PreferenceTally>,
    pub estimates: Vec<BetaEstimate>,
}

/// Tallies a log on an anchor pair and estimates every teacher's rationality.
///
/// Without an explicit anchor the pair answered most often by every teacher
/// is used, oriented so the item preferred less often overall is the lesser.
pub fn beta_report(
    records: &[PreferenceRecord],
    anchor: Option<(&str, &str)>,
    known_delta: Option<f64>,
) -> Result<BetaReport> {
    let mut teachers: Vec<String> = Vec::new();
    for r in records {
        if !teachers.contains(&r.teacher) {
            teachers.push(r.teacher.clone());
        }
    }
    if teachers.is_empty() {
        return Err(HubError::InsufficientData("preference log is empty".into()));
    }
    let key = |r: &PreferenceRecord| {
        if r.item_i <= r.item_j {
            (r.item_i.clone(), r.item_j.clone())
        } else {
            (r.item_j.clone(), r.item_i.clone())
        }
    };
    let (lesser, greater) = match anchor {
        Some((l, g)) => (l.to_string(), g.to_string()),
        None => {
            // pair -> (per-teacher counts, wins for the first label)
            type PairTally<'a> = (BTreeMap<&'a str, u64>, u64);
            let mut pairs: BTreeMap<(String, String), PairTally> = BTreeMap::new();
            for r in records {
                let k = key(r);
                let winner = r.winner()?;
                let entry = pairs.entry(k.clone()).or_default();
                *entry.0.entry(r.teacher.as_str()).or_default() += 1;
                if winner == k.0 {
                    entry.1 += 1;
                }
            }
            let best = pairs
                .iter()
                .filter(|(_, (per, _))| per.len() == teachers.len())
                .max_by_key(|(_, (per, _))| per.values().sum::<u64>())
                .ok_or_else(|| HubError::InvalidAnchor("no pair was answered by every teacher".into()))?;
            let ((a, b), (per, first_wins)) = best;
            let total: u64 = per.values().sum();
            if 2 * first_wins <= total {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            }
        }
    };
    let mut tallies = vec![PreferenceTally::default(); teachers.len()];
    for r in records {
        let on_anchor = (r.item_i == lesser && r.item_j == greater) || (r.item_i == greater && r.item_j == lesser);
        if !on_anchor {
            continue;
        }
        let m = teachers.iter().position(|t| t == &r.teacher).unwrap();
        tallies[m].total += 1;
        if r.winner()? == lesser {
            tallies[m].preferred += 1;
        }
    }
    if let Some(m) = tallies.iter().position(|t| t.total == 0) {
        return Err(HubError::InsufficientData(format!(
            "teacher '{}' never answered the anchor pair ({lesser}, {greater})",
            teachers[m]
        )));
    }
    let samples: Vec<PreferenceSampleSet> = tallies
        .iter()
        .map(|&tally| PreferenceSampleSet { pair: (0, 1), tally })
        .collect();
    let mut estimates = estimate_betas_from_logs(&samples, known_delta)?;
    for e in &mut estimates {
        e.scaling_anchor = e.scaling_anchor.replace("(0, 1)", &format!("({lesser}, {greater})"));
    }
    Ok(BetaReport {
        lesser,
        greater,
        teachers,
        tallies,
        estimates,
    })
}

/// Two-item hub used by the recovery study: utilities 0 and 1 (so the
/// anchor difference is -1), two arms, one teacher per rationality, no costs.
pub fn recovery_study_hub(true_betas: &[f64]) -> Result<HubInstance> {
    HubInstance {
        items: vec!["low".into(), "high".into()],
        utility: UtilityFunction::new(vec![0.0, 1.0], 0.0, 1.0)?,
        arm_names: vec!["left".into(), "right".into()],
        arms: vec![
            ArmDistribution::new(vec![0.7, 0.3])?,
            ArmDistribution::new(vec![0.3, 0.7])?,
        ],
        teachers: true_betas
            .iter()
            .enumerate()
            .map(|(m, &b)| Teacher::new(format!("teacher{m}"), b, 0.0))
            .collect::<Result<_>>()?,
        query_profile: QueryProfile::uniform(2),
        gamma: 0.99,
    }
    .validated()
}

fn max_normalized(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Squared error of one simulated study: random policy over arms and
/// teachers, then max-normalized estimates against max-normalized truth.
fn recovery_trial(hub: &HubInstance, true_betas: &[f64], steps: usize, seed: u64) -> Result<f64> {
    let mut rng = crate::seeded_rng(seed);
    let k = hub.n_arms();
    let mut tallies = vec![PreferenceTally::default(); hub.n_teachers()];
    for _ in 0..steps {
        let a = rng.gen_range(0..k + hub.n_teachers());
        if a < k {
            crate::hub::pull_arm(hub, a, &mut rng)?;
            continue;
        }
        let m = a - k;
        if let (
            AgentObservation::PreferenceSample {
                pair: (i, _),
                preferred_first,
                ..
            },
            _,
        ) = crate::hub::query_teacher(hub, m, &mut rng)?
        {
            tallies[m].total += 1;
            // item 0 is the lesser one
            if preferred_first == (i == 0) {
                tallies[m].preferred += 1;
            }
        }
    }
    let raw: Vec<f64> = tallies
        .iter()
        .map(|t| {
            if t.total == 0 {
                Ok(0.0)
            } else {
                beta_from_preference(t.rate(), 1.0)
            }
        })
        .collect::<Result<_>>()?;
    let est = max_normalized(&raw);
    let truth = max_normalized(true_betas);
    Ok(est.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / truth.len() as f64)
}

/// Mean squared error of max-normalized rationality estimates over `sims`
/// independent runs of `steps` uniformly random actions.
pub fn run_beta_recovery_study<R: Rng + ?Sized>(
    true_betas: &[f64],
    steps: usize,
    sims: usize,
    rng: &mut R,
) -> Result<f64> {
    if steps == 0 || sims == 0 {
        return Err(HubError::InvalidParameter("steps and sims must be positive".into()));
    }
    let hub = recovery_study_hub(true_betas)?;
    let seeds: Vec<u64> = (0..sims).map(|_| rng.gen()).collect();
    let errors = crate::parallel::map_ordered(seeds, |s| recovery_trial(&hub, true_betas, steps, s));
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    Ok(errors.iter().sum::<f64>() / sims as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hub::preference_probability;
    use crate::seeded_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn preference_examples() {
        assert_eq!(beta_from_preference(0.5, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(beta_from_preference(0.268941, 1.0).unwrap(), 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(beta_from_preference(0.047426, 0.5).unwrap(), 1.5, epsilon = 1e-5);
        assert!(matches!(
            beta_from_preference(0.3, 0.0),
            Err(HubError::InvalidAnchor(_))
        ));
        assert!(matches!(
            beta_from_preference(0.3, -1.0),
            Err(HubError::InvalidAnchor(_))
        ));
        assert_eq!(beta_from_preference(0.7, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(beta_from_sensitivity(0.5, 0.0, 10.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            beta_from_sensitivity(0.9, 0.0, 10.0).unwrap(),
            9f64.ln() / 10.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(beta_from_sensitivity(0.9, 0.0, 10.0).unwrap(), 0.2197, epsilon = 1e-4);
        assert!(beta_from_sensitivity(1.0, 0.0, 10.0).unwrap().is_finite());
        assert!(beta_from_sensitivity(0.9, 3.0, 3.0).is_err());
    }

    #[test]
    fn sensitivity_is_monotone() {
        let betas: Vec<f64> = [0.55, 0.7, 0.85, 0.95, 0.99]
            .iter()
            .map(|&s| beta_from_sensitivity(s, 0.0, 9.0).unwrap())
            .collect();
        assert!(betas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn affine_anchor_maps_pair_to_unit_interval() {
        for (l, g) in [(0.0, 1.0), (-3.0, 7.5), (2.0, 2.5), (-10.0, -4.0)] {
            let (a, b) = affine_anchor(l, g).unwrap();
            assert_abs_diff_eq!(a * l + b, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a * g + b, 1.0, epsilon = 1e-12);
        }
        assert!(matches!(affine_anchor(1.0, 1.0), Err(HubError::InvalidAnchor(_))));
    }

    fn set(preferred: u64, total: u64) -> PreferenceSampleSet {
        PreferenceSampleSet {
            pair: (0, 1),
            tally: PreferenceTally { preferred, total },
        }
    }

    #[test]
    fn log_estimates_examples() {
        // P = 0.5 and P ≈ 1/(1+e)
        let est = estimate_betas_from_logs(&[set(500, 1000), set(268_941, 1_000_000)], None).unwrap();
        assert_abs_diff_eq!(est[0].scaled, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est[1].scaled, 1.0, epsilon = 1e-12);

        let known = estimate_betas_from_logs(&[set(268_941, 1_000_000)], Some(-1.0)).unwrap();
        assert_eq!(known[0].scaled, known[0].raw);

        let mixed = [
            set(1, 2),
            PreferenceSampleSet {
                pair: (0, 2),
                tally: PreferenceTally { preferred: 1, total: 2 },
            },
        ];
        assert!(matches!(
            estimate_betas_from_logs(&mixed, None),
            Err(HubError::InvalidAnchor(_))
        ));
        assert!(estimate_betas_from_logs(&[set(0, 0)], None).is_err());
        assert!(estimate_betas_from_logs(&[set(1, 2)], Some(1.0)).is_err());
    }

    #[test]
    fn estimates_are_invariant_to_utility_scale() {
        // exact preference rates on utilities scaled by c
        let betas = [0.3, 1.2, 2.0];
        let mut normalized = Vec::new();
        for c in [0.5, 1.0, 2.0] {
            let samples: Vec<PreferenceSampleSet> = betas
                .iter()
                .map(|&b| {
                    let p = preference_probability(0.0, 2.0 * c, b);
                    set((p * 1e15).round() as u64, 1_000_000_000_000_000)
                })
                .collect();
            let est = estimate_betas_from_logs(&samples, Some(-2.0 * c)).unwrap();
            let base = estimate_betas_from_logs(&samples, Some(-2.0)).unwrap();
            for (e, b) in est.iter().zip(&base) {
                assert_abs_diff_eq!(e.scaled * c, b.scaled, epsilon = 1e-6);
            }
            normalized.push(estimate_betas_from_logs(&samples, None).unwrap());
        }
        for n in &normalized[1..] {
            for (a, b) in n.iter().zip(&normalized[0]) {
                assert_abs_diff_eq!(a.scaled, b.scaled, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn report_from_records() {
        let mk = |t: &str, i: &str, j: &str, p: &str| PreferenceRecord {
            teacher: t.into(),
            item_i: i.into(),
            item_j: j.into(),
            preferred: p.into(),
        };
        let mut records = Vec::new();
        for k in 0..100 {
            // teacher a: coin flip; teacher b: prefers "hi" 90% of the time
            records.push(mk("a", "lo", "hi", if k % 2 == 0 { "lo" } else { "hi" }));
            records.push(mk("b", "hi", "lo", if k % 10 == 0 { "0" } else { "1" }));
        }
        let report = beta_report(&records, None, None).unwrap();
        assert_eq!((report.lesser.as_str(), report.greater.as_str()), ("lo", "hi"));
        assert_eq!(
            report.tallies[0],
            PreferenceTally {
                preferred: 50,
                total: 100
            }
        );
        assert_eq!(
            report.tallies[1],
            PreferenceTally {
                preferred: 10,
                total: 100
            }
        );
        assert_abs_diff_eq!(report.estimates[1].scaled, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.estimates[1].raw, 9f64.ln(), epsilon = 1e-12);
        assert!(beta_report(&[mk("a", "x", "y", "z")], None, None).is_err());
    }

    #[test]
    fn preference_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.csv");
        let records = vec![PreferenceRecord {
            teacher: "t".into(),
            item_i: "a".into(),
            item_j: "b".into(),
            preferred: "b".into(),
        }];
        write_preference_log(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("teacher,item_i,item_j,preferred\n"));
        assert_eq!(read_preference_log(&path).unwrap(), records);
    }

    #[test]
    fn recovery_study_smoke() {
        let mse = run_beta_recovery_study(&[0.01, 1.0], 50, 1, &mut seeded_rng(0)).unwrap();
        assert!(mse.is_finite() && mse >= 0.0);
        assert!(run_beta_recovery_study(&[0.01, 1.0], 0, 1, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn recovery_study_is_consistent() {
        let mse = run_beta_recovery_study(&[0.01, 1.0], 1_000_000, 10, &mut seeded_rng(1)).unwrap();
        assert!(mse < 0.01, "mse {mse}");
    }

    proptest! {
        #[test]
        fn forward_then_invert(beta in 0.01f64..50.0, gap in 0.1f64..10.0, lo in -5.0f64..5.0) {
            let p = preference_probability(lo, lo + gap, beta);
            let a = 1.0 / gap;
            let got = beta_from_preference(p, a).unwrap();
            prop_assert!((got - beta).abs() <= 1e-9 * beta.max(1.0), "{} vs {}", got, beta);
        }
    }
}
