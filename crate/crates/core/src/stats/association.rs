use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rank::{benjamini_hochberg, dunn_test, kruskal_wallis, kruskal_wallis_permutation_p};
use super::signature::{MedicationPattern, UserSignature};
use super::{StatsConfig, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGroup {
    pub pattern: MedicationPattern,
    pub size: usize,
}

/// Binary presence of one side effect for the users of one pattern, in
/// user-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPresence {
    pub pattern: MedicationPattern,
    pub presence: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub pattern_a: MedicationPattern,
    pub pattern_b: MedicationPattern,
    pub z: f64,
    pub p: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub side_effect: String,
    pub groups: Vec<GroupPresence>,
    pub h: f64,
    pub df: u32,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub pairwise: Vec<PairwiseResult>,
    /// Why the test fell back to `H = 0, p = 1`, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub side_effect: String,
    /// Proportion of each pattern's users with the side effect, in
    /// [`Heatmap::patterns`] order.
    pub prevalence: Vec<f64>,
}

/// Prevalence of significant side effects across patterns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub patterns: Vec<MedicationPattern>,
    pub group_sizes: Vec<usize>,
    pub rows: Vec<HeatmapRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Fewer than two patterns reach `min_group_size`.
    SinglePattern,
    NoSideEffects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub alpha: f64,
    pub patterns: Vec<PatternGroup>,
    pub results: Vec<AssociationResult>,
    pub heatmap: Heatmap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<SkipReason>,
}

impl AssociationReport {
    pub fn significant(&self) -> impl Iterator<Item = &AssociationResult> {
        self.results.iter().filter(|r| r.significant)
    }
}

/// Tests every side effect in `side_effects` for association with the
/// medication pattern.
///
/// Presence is binary per user. Kruskal-Wallis p-values are BH-adjusted
/// across side effects; significant side effects get Dunn pairwise
/// comparisons, BH-adjusted within each side effect.
pub fn association_report(
    signatures: &[UserSignature],
    side_effects: &[String],
    cfg: &StatsConfig,
) -> Result<AssociationReport, StatsError> {
    cfg.validate()?;
    let mut grouped: BTreeMap<&MedicationPattern, Vec<&UserSignature>> = BTreeMap::new();
    for s in signatures {
        grouped.entry(&s.pattern).or_default().push(s);
    }
    let groups: Vec<(MedicationPattern, Vec<&UserSignature>)> = grouped
        .into_iter()
        .filter(|(_, users)| users.len() >= cfg.min_group_size)
        .map(|(p, mut users)| {
            users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
            (p.clone(), users)
        })
        .collect();
    let patterns: Vec<PatternGroup> = groups
        .iter()
        .map(|(p, u)| PatternGroup {
            pattern: p.clone(),
            size: u.len(),
        })
        .collect();
    let mut report = AssociationReport {
        alpha: cfg.alpha,
        patterns,
        results: Vec::new(),
        heatmap: Heatmap::default(),
        skipped: None,
    };
    if groups.len() < 2 {
        report.skipped = Some(SkipReason::SinglePattern);
        return Ok(report);
    }
    if side_effects.is_empty() {
        report.skipped = Some(SkipReason::NoSideEffects);
        return Ok(report);
    }

    let mut results: Vec<AssociationResult> = side_effects
        .par_iter()
        .map(|se| test_one(se, &groups, cfg))
        .collect::<Result<_, _>>()?;

    let adjusted = benjamini_hochberg(&results.iter().map(|r| r.p).collect::<Vec<_>>())?;
    for (r, adj) in results.iter_mut().zip(adjusted) {
        r.p_adjusted = adj;
        r.significant = adj < cfg.alpha;
        if r.significant {
            let samples: Vec<Vec<f64>> = r
                .groups
                .iter()
                .map(|g| g.presence.iter().map(|&v| f64::from(v)).collect())
                .collect();
            r.pairwise = dunn_test(&samples)?
                .into_iter()
                .map(|c| PairwiseResult {
                    pattern_a: r.groups[c.group_a].pattern.clone(),
                    pattern_b: r.groups[c.group_b].pattern.clone(),
                    z: c.z,
                    p: c.p,
                    p_adjusted: c.p_adjusted,
                })
                .collect();
        }
    }

    report.heatmap = Heatmap {
        patterns: groups.iter().map(|(p, _)| p.clone()).collect(),
        group_sizes: groups.iter().map(|(_, u)| u.len()).collect(),
        rows: results
            .iter()
            .filter(|r| r.significant)
            .map(|r| HeatmapRow {
                side_effect: r.side_effect.clone(),
                prevalence: r
                    .groups
                    .iter()
                    .map(|g| g.presence.iter().map(|&v| f64::from(v)).sum::<f64>() / g.presence.len() as f64)
                    .collect(),
            })
            .collect(),
    };
    report.results = results;
    Ok(report)
}

fn test_one(
    side_effect: &str,
    groups: &[(MedicationPattern, Vec<&UserSignature>)],
    cfg: &StatsConfig,
) -> Result<AssociationResult, StatsError> {
    let presence: Vec<GroupPresence> = groups
        .iter()
        .map(|(p, users)| GroupPresence {
            pattern: p.clone(),
            presence: users.iter().map(|u| u8::from(u.side_effects.contains(side_effect))).collect(),
        })
        .collect();
    let samples: Vec<Vec<f64>> = presence
        .iter()
        .map(|g| g.presence.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let (h, df, p, note) = match kruskal_wallis(&samples) {
        Ok(kw) => {
            let p = match cfg.permutations {
                Some(n) if kw.h > 0.0 => kruskal_wallis_permutation_p(&samples, n, cfg.seed)?,
                _ => kw.p,
            };
            (kw.h, kw.df, p, None)
        }
        Err(e @ (StatsError::TooFewObservations(_) | StatsError::TooFewGroups(_))) => {
            (0.0, samples.len() as u32 - 1, 1.0, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    Ok(AssociationResult {
        side_effect: side_effect.to_string(),
        groups: presence,
        h,
        df,
        p,
        p_adjusted: p,
        significant: false,
        pairwise: Vec::new(),
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::FunctionalClass;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn pattern(c: FunctionalClass) -> MedicationPattern {
        MedicationPattern::new([c])
    }

    fn cohort(per_group: usize, with_x: [usize; 2]) -> Vec<UserSignature> {
        let mut out = Vec::new();
        for (g, class) in [FunctionalClass::HormoneTherapy, FunctionalClass::Chemotherapy].into_iter().enumerate() {
            for i in 0..per_group {
                let mut ses = std::collections::BTreeSet::new();
                if i < with_x[g] {
                    ses.insert("x".to_string());
                }
                if i % 2 == 0 {
                    ses.insert("null".to_string());
                }
                out.push(UserSignature {
                    user_id: format!("g{g}u{i:03}"),
                    medications: ["m".to_string()].into(),
                    side_effects: ses,
                    pattern: pattern(class),
                });
            }
        }
        out
    }

    /// Two-group permutation p-value computed from the difference in
    /// counts, independent of the rank machinery.
    fn permutation_p(a: &[u8], b: &[u8], n_perm: usize) -> f64 {
        let mut pooled: Vec<u8> = a.iter().chain(b).copied().collect();
        let stat = |xs: &[u8]| {
            let pa = xs[..a.len()].iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
            let pb = xs[a.len()..].iter().map(|&v| v as f64).sum::<f64>() / b.len() as f64;
            (pa - pb).abs()
        };
        let observed = stat(&pooled);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for _ in 0..n_perm {
            pooled.shuffle(&mut rng);
            if stat(&pooled) >= observed - 1e-12 {
                hits += 1;
            }
        }
        (hits + 1) as f64 / (n_perm + 1) as f64
    }

    #[test]
    fn strong_association_is_significant() {
        // 36/40 = 90% vs 2/40 = 5%.
        let sigs = cohort(40, [36, 2]);
        let report = association_report(&sigs, &["x".into(), "null".into()], &StatsConfig::default()).unwrap();
        let x = &report.results[0];
        assert!(x.significant);
        let null = &report.results[1];
        assert!(!null.significant);
        assert_eq!(x.pairwise.len(), 1);
        // Brute-force permutation check agrees that the difference is extreme.
        let perm = permutation_p(&x.groups[0].presence, &x.groups[1].presence, 2000);
        assert!(perm < 0.01 && x.p < 0.01, "{perm} {}", x.p);
        assert_eq!(report.heatmap.rows.len(), 1);
        assert_eq!(report.heatmap.rows[0].prevalence, [0.9, 0.05]);
        assert_eq!(report.heatmap.group_sizes, [40, 40]);
    }

    #[test]
    fn absent_side_effect_is_not_significant() {
        let sigs = cohort(10, [0, 0]);
        let report = association_report(&sigs, &["x".into()], &StatsConfig::default()).unwrap();
        assert_eq!(report.results[0].h, 0.0);
        assert_eq!(report.results[0].p, 1.0);
        assert!(!report.results[0].significant);
    }

    #[test]
    fn one_row_per_side_effect() {
        let sigs = cohort(10, [5, 1]);
        let ses: Vec<String> = (0..31).map(|i| format!("se{i:02}")).collect();
        let report = association_report(&sigs, &ses, &StatsConfig::default()).unwrap();
        assert_eq!(report.results.len(), 31);
    }

    #[test]
    fn single_pattern_skips_tests() {
        let sigs: Vec<UserSignature> = cohort(10, [5, 1]).into_iter().take(10).collect();
        let report = association_report(&sigs, &["x".into()], &StatsConfig::default()).unwrap();
        assert_eq!(report.skipped, Some(SkipReason::SinglePattern));
        assert!(report.results.is_empty());
    }

    #[test]
    fn min_group_size_filters_patterns() {
        let mut sigs = cohort(10, [5, 1]);
        sigs.truncate(12);
        let cfg = StatsConfig {
            min_group_size: 3,
            ..StatsConfig::default()
        };
        let report = association_report(&sigs, &["x".into()], &cfg).unwrap();
        assert_eq!(report.skipped, Some(SkipReason::SinglePattern));
    }

    #[test]
    fn permutation_option() {
        let sigs = cohort(40, [36, 2]);
        let cfg = StatsConfig {
            permutations: Some(500),
            seed: 3,
            ..StatsConfig::default()
        };
        let report = association_report(&sigs, &["x".into()], &cfg).unwrap();
        assert!((report.results[0].p - 1.0 / 501.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_groups_fall_back() {
        let sigs: Vec<UserSignature> = cohort(1, [1, 0]);
        let report = association_report(&sigs, &["x".into()], &StatsConfig::default()).unwrap();
        assert_eq!(report.results[0].p, 1.0);
        assert!(report.results[0].note.is_some());
    }
}
