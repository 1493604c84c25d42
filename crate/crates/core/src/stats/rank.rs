//! Kruskal-Wallis H test, Dunn's pairwise test and Benjamini-Hochberg
//! adjustment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::special::{chi_square_sf, normal_two_sided_p};
use super::StatsError;

/// Mid-ranks of `values` (1-based) and the sizes of every tie block.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j share ranks i+1..=j.
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// `Σ (t³ − t)` over tie blocks.
fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: u32,
    pub p: f64,
    pub n: usize,
}

struct Pooled {
    /// Nonempty groups' rank sums and sizes.
    rank_sums: Vec<f64>,
    sizes: Vec<usize>,
    n: usize,
    ties: Vec<usize>,
}

fn pool(groups: &[Vec<f64>]) -> Result<Pooled, StatsError> {
    let nonempty: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if nonempty.len() < 2 {
        return Err(StatsError::TooFewGroups(nonempty.len()));
    }
    let values: Vec<f64> = nonempty.iter().flat_map(|g| g.iter().copied()).collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(StatsError::NotANumber);
    }
    let (ranks, ties) = midranks(&values);
    let mut rank_sums = Vec::with_capacity(nonempty.len());
    let mut offset = 0;
    for g in &nonempty {
        rank_sums.push(ranks[offset..offset + g.len()].iter().sum());
        offset += g.len();
    }
    Ok(Pooled {
        rank_sums,
        sizes: nonempty.iter().map(|g| g.len()).collect(),
        n: values.len(),
        ties,
    })
}

fn h_statistic(p: &Pooled) -> f64 {
    let n = p.n as f64;
    let correction = 1.0 - tie_sum(&p.ties) / (n.powi(3) - n);
    if correction <= 0.0 {
        return 0.0;
    }
    let s: f64 = p.rank_sums.iter().zip(&p.sizes).map(|(r, &k)| r * r / k as f64).sum();
    let h = (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction;
    // Round-off can push an all-equal configuration slightly negative.
    h.max(0.0)
}

/// Kruskal-Wallis H with tie correction and chi-square `k − 1` df p-value.
///
/// Empty groups are ignored. When every pooled value is tied, `H = 0` and
/// `p = 1`.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, StatsError> {
    let pooled = pool(groups)?;
    if pooled.n < 3 {
        return Err(StatsError::TooFewObservations(pooled.n));
    }
    let df = (pooled.sizes.len() - 1) as u32;
    let h = h_statistic(&pooled);
    let p = if h == 0.0 { 1.0 } else { chi_square_sf(h, df) };
    Ok(KruskalWallis { h, df, p, n: pooled.n })
}

/// Monte-Carlo permutation p-value for H: `(1 + #{H* ≥ H}) / (1 + n_perm)`.
pub fn kruskal_wallis_permutation_p(groups: &[Vec<f64>], n_perm: usize, seed: u64) -> Result<f64, StatsError> {
    let observed = kruskal_wallis(groups)?.h;
    let nonempty: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let sizes: Vec<usize> = nonempty.iter().map(|g| g.len()).collect();
    let mut pooled: Vec<f64> = nonempty.iter().flat_map(|g| g.iter().copied()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-9 * observed.abs().max(1.0);
    let mut hits = 0usize;
    let mut regrouped: Vec<Vec<f64>> = Vec::with_capacity(sizes.len());
    for _ in 0..n_perm {
        pooled.shuffle(&mut rng);
        regrouped.clear();
        let mut off = 0;
        for &s in &sizes {
            regrouped.push(pooled[off..off + s].to_vec());
            off += s;
        }
        if h_statistic(&pool(&regrouped)?) >= observed - tol {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn benjamini_hochberg(pvals: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let idx = order[rank - 1];
        running = running.min(pvals[idx] * m as f64 / rank as f64);
        adjusted[idx] = running.min(1.0);
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnComparison {
    /// Indices into the nonempty input groups.
    pub group_a: usize,
    pub group_b: usize,
    /// `(mean rank a − mean rank b) / se`.
    pub z: f64,
    pub p: f64,
    /// BH-adjusted within this family of comparisons.
    pub p_adjusted: f64,
}

/// Dunn's test for every pair of groups, using the pooled tie-corrected
/// variance. Pairs come out in `(0,1), (0,2), …, (1,2), …` order.
pub fn dunn_test(groups: &[Vec<f64>]) -> Result<Vec<DunnComparison>, StatsError> {
    let pooled = pool(groups)?;
    let n = pooled.n as f64;
    let variance = n * (n + 1.0) / 12.0 - tie_sum(&pooled.ties) / (12.0 * (n - 1.0));
    let k = pooled.sizes.len();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let (na, nb) = (pooled.sizes[a] as f64, pooled.sizes[b] as f64);
            let diff = pooled.rank_sums[a] / na - pooled.rank_sums[b] / nb;
            let se = (variance * (1.0 / na + 1.0 / nb)).sqrt();
            let (z, p) = if variance <= 0.0 || !se.is_finite() || se == 0.0 {
                (0.0, 1.0)
            } else {
                let z = diff / se;
                (z, normal_two_sided_p(z))
            };
            out.push(DunnComparison {
                group_a: a,
                group_b: b,
                z,
                p,
                p_adjusted: p,
            });
        }
    }
    let adjusted = benjamini_hochberg(&out.iter().map(|c| c.p).collect::<Vec<_>>())?;
    for (c, adj) in out.iter_mut().zip(adjusted) {
        c.p_adjusted = adj;
    }
    Ok(out)
}
