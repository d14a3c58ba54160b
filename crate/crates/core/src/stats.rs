//! Significance tests for model-preference and within/across comparisons.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::ema::{Gender, Group, SpeakerMeta};

/// Largest sample size for which the Wilcoxon null is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} pairs, got {found}")]
    TooFewPairs { found: usize, needed: usize },
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no {0} pairs in the cohort")]
    EmptyCell(&'static str),
    #[error("non-finite score in input")]
    NonFinite,
    #[error("{rows}×{cols} matrix does not match {speakers} speakers")]
    ShapeMismatch { rows: usize, cols: usize, speakers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedTest {
    #[default]
    PairedT,
    WilcoxonSignedRank,
}

/// Degenerate inputs that still yield a defined p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Every difference is zero; p is defined as 1.
    AllDifferencesZero,
    /// Differences are a nonzero constant; p is the `σ → 0` limit, 0.
    ZeroVarianceDifferences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub labels: Vec<String>,
    pub a_scores: Vec<f64>,
    pub b_scores: Vec<f64>,
    pub mean_diff: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub test: PairedTest,
    pub degeneracy: Option<Degeneracy>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Two-sided Student-t p-value, `P(|T_df| ≥ |t|) = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn normal_two_sided_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// Average ranks (1-based) of `x`, ties sharing the mean rank.
pub fn rank_average(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Exact null distribution of the signed-rank sum. Ranks are given doubled
/// (so tied half-ranks become integers); `counts[s]` is the number of sign
/// assignments whose positive doubled-rank sum equals `s`.
pub fn signed_rank_null(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided exact p from the doubled positive-rank sum.
pub fn exact_signed_rank_p(doubled_ranks: &[u64], w_plus_doubled: u64) -> f64 {
    let counts = signed_rank_null(doubled_ranks);
    let total: f64 = counts.iter().sum();
    let w = w_plus_doubled as usize;
    let lower: f64 = counts[..=w.min(counts.len() - 1)].iter().sum();
    let upper: f64 = counts[w.min(counts.len())..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Returns `(W+, p)`. Zero differences are dropped.
fn wilcoxon(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    let ranks = rank_average(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    if n <= WILCOXON_EXACT_MAX_N {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        return (w_plus, exact_signed_rank_p(&doubled, (2.0 * w_plus).round() as u64));
    }
    let nf = n as f64;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    (w_plus, normal_two_sided_p((w_plus - mu) / var.sqrt()))
}

/// Two-sided paired comparison of `a` against `b` (differences `a − b`).
pub fn paired_test(labels: &[String], a: &[f64], b: &[f64], test: PairedTest) -> Result<PairedComparison, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(StatsError::TooFewPairs { found: a.len(), needed: 3 });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&diffs);
    let n = diffs.len() as f64;

    let (statistic, p_value, degeneracy) = if diffs.iter().all(|d| *d == 0.0) {
        (0.0, 1.0, Some(Degeneracy::AllDifferencesZero))
    } else {
        match test {
            PairedTest::PairedT => {
                let sd = variance(&diffs).sqrt();
                if sd == 0.0 || diffs.iter().all(|d| *d == diffs[0]) {
                    (mean_diff.signum() * f64::INFINITY, 0.0, Some(Degeneracy::ZeroVarianceDifferences))
                } else {
                    let t = mean_diff / (sd / n.sqrt());
                    (t, t_two_sided_p(t, n - 1.0), None)
                }
            }
            PairedTest::WilcoxonSignedRank => {
                let (w, p) = wilcoxon(&diffs);
                (w, p, None)
            }
        }
    };
    Ok(PairedComparison {
        labels: labels.to_vec(),
        a_scores: a.to_vec(),
        b_scores: b.to_vec(),
        mean_diff,
        statistic,
        p_value,
        test,
        degeneracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    for x in [a, b] {
        if x.len() < 2 {
            return Err(StatsError::TooFewPairs { found: x.len(), needed: 2 });
        }
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = sa + sb;
    let diff = ma - mb;
    let (t, df, p_value) = if se2 == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        if diff == 0.0 {
            (0.0, df, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, df, 0.0)
        }
    } else {
        let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
        let t = diff / se2.sqrt();
        (t, df, t_two_sided_p(t, df))
    };
    Ok(WelchResult {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// `{EN.SH, EN.BJ}` against `{EN.US}`; other groups are ignored.
    Dialect,
    /// Male against female; unknown gender is ignored.
    Gender,
}

impl Partition {
    pub fn cell(self, meta: &SpeakerMeta) -> Option<u8> {
        match self {
            Partition::Dialect => match meta.group {
                Group::EnSh | Group::EnBj => Some(0),
                Group::EnUs => Some(1),
                _ => None,
            },
            Partition::Gender => match meta.gender {
                Gender::M => Some(0),
                Gender::F => Some(1),
                Gender::Unknown => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinAcross {
    pub partition: Partition,
    pub within: Vec<f64>,
    pub across: Vec<f64>,
    pub within_mean: f64,
    pub across_mean: f64,
    /// `within_mean − across_mean`.
    pub difference: f64,
    /// Welch test of within against across.
    pub test: WelchResult,
}

/// Splits the directed off-diagonal entries of a speaker transfer matrix into
/// within-cell and across-cell pairs. `speakers[i]` labels row/column `i`;
/// `corpus`, when given, restricts the cohort to that corpus.
pub fn within_across(
    matrix: &Array2<f64>,
    speakers: &[SpeakerMeta],
    partition: Partition,
    corpus: Option<&str>,
) -> Result<WithinAcross, StatsError> {
    let s = speakers.len();
    if matrix.dim() != (s, s) {
        return Err(StatsError::ShapeMismatch { rows: matrix.nrows(), cols: matrix.ncols(), speakers: s });
    }
    let cells: Vec<Option<u8>> = speakers
        .iter()
        .map(|m| match corpus {
            Some(c) if m.corpus != c => None,
            _ => partition.cell(m),
        })
        .collect();
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for i in 0..s {
        for j in 0..s {
            let (Some(ci), Some(cj)) = (cells[i], cells[j]) else { continue };
            let v = matrix[[i, j]];
            if i == j || !v.is_finite() {
                continue;
            }
            if ci == cj { &mut within } else { &mut across }.push(v);
        }
    }
    if within.is_empty() {
        return Err(StatsError::EmptyCell("within"));
    }
    if across.is_empty() {
        return Err(StatsError::EmptyCell("across"));
    }
    let test = welch_t_test(&within, &across)?;
    Ok(WithinAcross {
        partition,
        within_mean: test.mean_a,
        across_mean: test.mean_b,
        difference: test.mean_a - test.mean_b,
        within,
        across,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    /// Student-t density integrated with composite Simpson on [0, |t|].
    fn t_p_by_quadrature(t: f64, df: u32) -> f64 {
        // Γ((ν+1)/2) / (√(νπ) Γ(ν/2)) by the half-integer recurrences
        fn gamma_half(k: u32) -> f64 {
            // Γ(k/2)
            if k == 1 {
                std::f64::consts::PI.sqrt()
            } else if k == 2 {
                1.0
            } else {
                (k as f64 / 2.0 - 1.0) * gamma_half(k - 2)
            }
        }
        let nu = df as f64;
        let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
        let pdf = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = pdf(0.0) + pdf(t.abs());
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn t_test_matches_quadrature() {
        let d = [0.5, -0.2, 0.8, 1.1, -0.1, 0.4, 0.9, 0.3, 0.6, 0.2];
        let zeros = [0.0; 10];
        let r = paired_test(&labels(10), &d, &zeros, PairedTest::PairedT).unwrap();
        assert!((r.mean_diff - 0.45).abs() < 1e-12);
        let oracle = t_p_by_quadrature(r.statistic, 9);
        assert!((r.p_value - oracle).abs() < 1e-6, "{} vs {}", r.p_value, oracle);
        assert!(r.degeneracy.is_none());
    }

    #[test]
    fn t_p_against_quadrature_on_grid() {
        for df in [1u32, 2, 3, 5, 9, 20] {
            for t in [0.1, 0.7, 1.5, 2.5, 4.0] {
                assert!((t_two_sided_p(t, df as f64) - t_p_by_quadrature(t, df)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn identical_samples() {
        let a = [0.8, 0.82, 0.9];
        for test in [PairedTest::PairedT, PairedTest::WilcoxonSignedRank] {
            let r = paired_test(&labels(3), &a, &a, test).unwrap();
            assert_eq!(r.mean_diff, 0.0);
            assert_eq!(r.p_value, 1.0);
            assert_eq!(r.degeneracy, Some(Degeneracy::AllDifferencesZero));
        }
    }

    #[test]
    fn constant_shift_is_flagged() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.25).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let r = paired_test(&labels(10), &a, &b, PairedTest::PairedT).unwrap();
        assert_eq!(r.degeneracy, Some(Degeneracy::ZeroVarianceDifferences));
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.mean_diff, 1.0);
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(
            paired_test(&labels(2), &[1.0, 2.0], &[0.0, 0.0], PairedTest::PairedT),
            Err(StatsError::TooFewPairs { .. })
        ));
        assert!(matches!(
            paired_test(&labels(3), &[1.0, 2.0, 3.0], &[0.0, 0.0], PairedTest::PairedT),
            Err(StatsError::LengthMismatch(3, 2))
        ));
    }

    /// Two-sided p by enumerating all 2ⁿ sign vectors.
    fn brute_force_wilcoxon(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let ranks = rank_average(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let observed: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let n = nz.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn exact_wilcoxon_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 3..=12 {
            for trial in 0..20 {
                // every fourth trial draws from a coarse grid to force ties
                let d: Vec<f64> = (0..n)
                    .map(|_| {
                        if trial % 4 == 0 {
                            rng.random_range(-3i32..=3) as f64 * 0.5
                        } else {
                            rng.random_range(-1.0..1.0) + 0.2
                        }
                    })
                    .collect();
                if d.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let zeros = vec![0.0; n];
                let r = paired_test(&labels(n), &d, &zeros, PairedTest::WilcoxonSignedRank).unwrap();
                let oracle = brute_force_wilcoxon(&d);
                assert!((r.p_value - oracle).abs() < 1e-12, "n={n}: {} vs {oracle}", r.p_value);
            }
        }
    }

    #[test]
    fn wilcoxon_known_value() {
        // all 8 positive: W+ = 36, p = 2/256
        let d: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let r = paired_test(&labels(8), &d, &[0.0; 8], PairedTest::WilcoxonSignedRank).unwrap();
        assert_eq!(r.statistic, 36.0);
        assert!((r.p_value - 2.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_normal_approximation_is_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0) + 0.25).collect();
        let exact = wilcoxon(&d).1;
        let mut d30 = d.clone();
        d30.extend((0..5).map(|_| rng.random_range(-1.0..1.0) + 0.25));
        let approx = wilcoxon(&d30).1;
        assert!(exact > 0.0 && exact < 1.0);
        assert!(approx > 0.0 && approx < 1.0);
        let nz = d30.clone();
        let ranks = rank_average(&nz.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let w: f64 = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r) as u64).collect();
        let exact30 = exact_signed_rank_p(&doubled, (2.0 * w) as u64);
        assert!((approx - exact30).abs() < 0.01, "{approx} vs {exact30}");
    }

    proptest! {
        #[test]
        fn antisymmetry(a in prop::collection::vec(-2.0f64..2.0, 3..30), b_seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
            for test in [PairedTest::PairedT, PairedTest::WilcoxonSignedRank] {
                let ab = paired_test(&labels(a.len()), &a, &b, test).unwrap();
                let ba = paired_test(&labels(a.len()), &b, &a, test).unwrap();
                prop_assert_eq!(ab.mean_diff, -ba.mean_diff);
                prop_assert_eq!(ab.p_value, ba.p_value);
            }
        }

        #[test]
        fn shift_invariance(a in prop::collection::vec(0.0f64..1.0, 3..30), c in -10.0f64..10.0) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.9 + 0.01 * (i % 3) as f64).collect();
            let a2: Vec<f64> = a.iter().map(|x| x + c).collect();
            let b2: Vec<f64> = b.iter().map(|x| x + c).collect();
            let p1 = paired_test(&labels(a.len()), &a, &b, PairedTest::PairedT).unwrap().p_value;
            let p2 = paired_test(&labels(a.len()), &a2, &b2, PairedTest::PairedT).unwrap().p_value;
            prop_assert!((p1 - p2).abs() < 1e-6);
        }
    }

    #[test]
    fn welch_known_value() {
        // reference values from scipy.stats.ttest_ind(equal_var=False)
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let r = welch_t_test(&a, &b).unwrap();
        // independent check of df by the Satterthwaite formula
        let va = variance(&a) / 15.0;
        let vb = variance(&b) / 15.0;
        let df = (va + vb).powi(2) / (va * va / 14.0 + vb * vb / 14.0);
        assert!((r.df - df).abs() < 1e-12);
        assert!((r.t - -2.455356398286006).abs() < 1e-12);
        assert!((r.df - 24.988529290231416).abs() < 1e-9);
        assert!((r.p_value - 0.021378001462866985).abs() < 1e-10, "{}", r.p_value);
    }

    fn meta(id: &str, group: Group, gender: Gender, corpus: &str) -> SpeakerMeta {
        SpeakerMeta {
            speaker_id: id.into(),
            corpus: corpus.into(),
            group,
            gender,
            minutes: 1.0,
        }
    }

    #[test]
    fn within_across_splits_pairs() {
        let speakers = vec![
            meta("a", Group::EnSh, Gender::M, "EMA-MAE"),
            meta("b", Group::EnBj, Gender::F, "EMA-MAE"),
            meta("c", Group::EnUs, Gender::M, "EMA-MAE"),
            meta("d", Group::EnUs, Gender::F, "EMA-MAE"),
            meta("e", Group::It, Gender::M, "MSPKA"),
        ];
        let m = Array2::from_shape_fn((5, 5), |(i, j)| {
            let cell = |k: usize| usize::from(k >= 2);
            if i == j { 1.0 } else if cell(i) == cell(j) { 0.9 + 0.001 * (i + j) as f64 } else { 0.7 + 0.001 * (i * j) as f64 }
        });
        let r = within_across(&m, &speakers, Partition::Dialect, Some("EMA-MAE")).unwrap();
        assert_eq!(r.within.len(), 4);
        assert_eq!(r.across.len(), 8);
        assert!(r.difference > 0.15 && r.test.p_value < 0.01);

        let g = within_across(&m, &speakers, Partition::Gender, Some("EMA-MAE")).unwrap();
        assert_eq!(g.within.len() + g.across.len(), 12);
    }

    #[test]
    fn single_cell_has_no_across() {
        let speakers = vec![
            meta("a", Group::EnUs, Gender::M, "HPRC"),
            meta("b", Group::EnUs, Gender::M, "HPRC"),
            meta("c", Group::EnUs, Gender::M, "HPRC"),
        ];
        let m = Array2::from_elem((3, 3), 0.9);
        assert_eq!(
            within_across(&m, &speakers, Partition::Dialect, None),
            Err(StatsError::EmptyCell("across"))
        );
        assert_eq!(
            within_across(&m, &speakers, Partition::Gender, None),
            Err(StatsError::EmptyCell("across"))
        );
    }
}
