//! Agreement metrics between predicted and reference RV timecourses, and
//! the Friedman rank test for comparing methods across many scans.
//!
//! Pearson correlation refuses constant inputs instead of returning a
//! silent zero, and dynamic time warping is the classic unconstrained
//! dynamic program over absolute differences (no step normalization).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-scan agreement metrics between a predicted and a reference series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    /// Scan the metrics belong to.
    pub scan_id: String,
    /// Mean absolute error.
    pub mae: f64,
    /// Mean squared error.
    pub mse: f64,
    /// Pearson correlation coefficient.
    pub pearson_r: f64,
    /// Dynamic-time-warping distance.
    pub dtw: f64,
}

impl ScanMetrics {
    /// Computes all four metrics for one scan.
    pub fn compute(scan_id: impl Into<String>, pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            scan_id: scan_id.into(),
            mae: mae(pred, truth)?,
            mse: mse(pred, truth)?,
            pearson_r: pearson(pred, truth)?,
            dtw: dtw(pred, truth)?,
        })
    }
}

/// Outcome of a Friedman rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    /// The chi-square distributed test statistic.
    pub chi_square: f64,
    /// Degrees of freedom (`k - 1` for `k` treatments).
    pub dof: usize,
    /// Right-tail probability of the statistic.
    pub p_value: f64,
    /// Per-treatment rank sums (rank 1 is best within each block).
    pub rank_sums: Vec<f64>,
}

fn check_pair(op: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(op, "empty input"));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: op.to_string(),
        });
    }
    Ok(())
}

fn check_same_len(op: &str, a: &[f64], b: &[f64]) -> Result<()> {
    check_pair(op, a, b)?;
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{op}: series lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean absolute error between equal-length series.
pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len("mae", a, b)?;
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

/// Mean squared error between equal-length series.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len("mse", a, b)?;
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Pearson correlation coefficient between equal-length series.
///
/// Requires at least two points and refuses constant inputs with
/// [`Error::ZeroVariance`]: a correlation of a flat series is undefined
/// and silently reporting 0 would hide broken predictors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len("pearson", a, b)?;
    if a.len() < 2 {
        return Err(Error::InsufficientData(
            "pearson needs at least 2 points".into(),
        ));
    }
    for (name, xs) in [("first", a), ("second", b)] {
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo == hi {
            return Err(Error::ZeroVariance(format!("{name} series of pearson")));
        }
    }
    let n = a.len() as f64;
    let ma: f64 = a.iter().sum::<f64>() / n;
    let mb: f64 = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    Ok(num / (da * db).sqrt())
}

/// Dynamic-time-warping distance between two series.
///
/// Classic unconstrained dynamic program: cell cost `|a_i - b_j|`, steps
/// match/insert/delete, no windowing and no path-length normalization.
/// Zero if and only if the series are identical up to repeated samples.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair("dtw", a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            let cost = (x - y).abs();
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Average ranks of one block's scores (rank 1 is best; ties averaged).
fn block_ranks(row: &[f64], lower_is_better: bool) -> Vec<f64> {
    let k = row.len();
    let mut order: Vec<usize> = (0..k).collect();
    if lower_is_better {
        order.sort_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap());
    } else {
        order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap());
    }
    let mut ranks = vec![0.0; k];
    let mut pos = 0;
    while pos < k {
        let mut end = pos + 1;
        while end < k && row[order[end]] == row[order[pos]] {
            end += 1;
        }
        // Positions pos..end hold equal scores: share the average rank.
        let avg = (pos + 1..=end).map(|r| r as f64).sum::<f64>() / (end - pos) as f64;
        for &idx in &order[pos..end] {
            ranks[idx] = avg;
        }
        pos = end;
    }
    ranks
}

/// Friedman rank test over a `[blocks x treatments]` score matrix.
///
/// Each block (row) ranks the treatments; rank 1 goes to the best score,
/// which is the smallest when `lower_is_better` and the largest otherwise.
/// Ties share averaged ranks. The statistic is
/// `12 / (n k (k+1)) * sum_j R_j^2 - 3 n (k+1)` with `R_j` the rank sums,
/// referred to a chi-square distribution with `k - 1` degrees of freedom
/// (no tie correction).
pub fn friedman_test(scores: &Array2<f64>, lower_is_better: bool) -> Result<FriedmanResult> {
    let n = scores.nrows();
    let k = scores.ncols();
    if k < 2 {
        return Err(Error::StatTest(format!(
            "need at least 2 treatments, got {k}"
        )));
    }
    if n < 2 {
        return Err(Error::StatTest(format!("need at least 2 blocks, got {n}")));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "friedman scores".into(),
        });
    }
    let mut rank_sums = vec![0.0; k];
    for row in scores.rows() {
        let ranks = block_ranks(row.as_slice().expect("row-major scores"), lower_is_better);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
    }
    let nf = n as f64;
    let kf = k as f64;
    let sum_sq: f64 = rank_sums.iter().map(|&r| r * r).sum();
    let chi_square = 12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0);
    let dof = k - 1;
    let p_value = 1.0 - chi_square_cdf(chi_square, dof);
    Ok(FriedmanResult {
        chi_square,
        dof,
        p_value,
        rank_sums,
    })
}

/// Cumulative distribution function of the chi-square distribution.
///
/// `chi_square_cdf(x, k)` is the regularized lower incomplete gamma
/// function `P(k/2, x/2)`; values at or below zero map to 0.
pub fn chi_square_cdf(x: f64, dof: usize) -> f64 {
    assert!(dof >= 1, "chi-square needs dof >= 1");
    if x <= 0.0 {
        return 0.0;
    }
    reg_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + G + 0.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Regularized lower incomplete gamma function `P(a, x)`.
///
/// Series expansion for `x < a + 1`, continued fraction (modified Lentz)
/// otherwise; both converge to machine precision for the chi-square
/// arguments that arise here.
fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "P(a, x) needs a > 0, x >= 0");
    if x == 0.0 {
        return 0.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // P(a,x) = x^a e^-x / Gamma(a) * sum_{n>=0} x^n / (a (a+1) ... (a+n)).
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * log_prefix.exp()
    } else {
        // Q(a,x) via the continued fraction; P = 1 - Q.
        const FPMIN: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - log_prefix.exp() * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Enumerates every monotone warping path (brute force) and returns the
    /// cheapest accumulated cost; sums run start-to-end like the DP does.
    fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            if i + 1 < a.len() {
                go(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                go(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                go(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        go(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn mae_mse_hand_values() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert_eq!(mae(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn pearson_hand_values() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
    }

    #[test]
    fn pearson_rejects_constant_series() {
        let err = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(_)), "{err}");
        assert!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_err());
    }

    #[test]
    fn dtw_hand_values() {
        // [0,0,1] aligns with [0,1] at zero cost: duplicate the first 0.
        assert_eq!(dtw(&[0.0, 0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[2.0], &[5.0]).unwrap(), 3.0);
        assert_eq!(dtw(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn dtw_matches_brute_force_on_short_series() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let la = rng.random_range(1..=8);
            let lb = rng.random_range(1..=8);
            let a: Vec<f64> = (0..la).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let b: Vec<f64> = (0..lb).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let fast = dtw(&a, &b).unwrap();
            let slow = dtw_brute(&a, &b);
            assert_eq!(fast, slow, "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn friedman_uniform_winner_matches_closed_form() {
        // 10 blocks, 2 treatments, treatment A always better: rank sums
        // (10, 20), chi-square exactly 10, p = 1 - erf(sqrt(5)).
        let mut scores = Array2::zeros((10, 2));
        for mut row in scores.rows_mut() {
            row[0] = 1.0;
            row[1] = 2.0;
        }
        let r = friedman_test(&scores, true).unwrap();
        assert_eq!(r.chi_square, 10.0);
        assert_eq!(r.dof, 1);
        assert_eq!(r.rank_sums, vec![10.0, 20.0]);
        let expect_p = 1.0 - statrs::function::erf::erf(5.0f64.sqrt());
        assert_relative_eq!(r.p_value, expect_p, max_relative = 1e-10);
        assert_relative_eq!(r.p_value, 1.565_4e-3, max_relative = 1e-3);
    }

    #[test]
    fn friedman_higher_is_better_flips_ranks() {
        let mut scores = Array2::zeros((10, 2));
        for mut row in scores.rows_mut() {
            row[0] = 1.0;
            row[1] = 2.0;
        }
        let r = friedman_test(&scores, false).unwrap();
        assert_eq!(r.rank_sums, vec![20.0, 10.0]);
        assert_eq!(r.chi_square, 10.0);
    }

    #[test]
    fn friedman_identical_scores_give_zero_statistic() {
        let scores = Array2::from_elem((6, 3), 1.25);
        let r = friedman_test(&scores, true).unwrap();
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn friedman_ties_share_average_ranks() {
        assert_eq!(block_ranks(&[1.0, 1.0, 2.0], true), vec![1.5, 1.5, 3.0]);
        assert_eq!(block_ranks(&[4.0, 4.0, 4.0], true), vec![2.0, 2.0, 2.0]);
        assert_eq!(block_ranks(&[0.3, 0.1, 0.2], false), vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn friedman_rejects_degenerate_inputs() {
        assert!(friedman_test(&Array2::zeros((5, 1)), true).is_err());
        assert!(friedman_test(&Array2::zeros((1, 3)), true).is_err());
        let bad = Array2::from_elem((3, 2), f64::NAN);
        assert!(friedman_test(&bad, true).is_err());
    }

    #[test]
    fn chi_square_cdf_matches_closed_form_dof2() {
        // For dof 2 the CDF is 1 - exp(-x/2).
        for i in 0..200 {
            let x = i as f64 * 0.1;
            let want = 1.0 - (-x / 2.0).exp();
            assert_relative_eq!(chi_square_cdf(x, 2), want, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn chi_square_cdf_matches_erf_dof1() {
        // For dof 1 the CDF is erf(sqrt(x/2)).
        for i in 1..200 {
            let x = i as f64 * 0.1;
            let want = statrs::function::erf::erf((x / 2.0).sqrt());
            assert_relative_eq!(chi_square_cdf(x, 1), want, max_relative = 1e-10);
        }
    }

    #[test]
    fn chi_square_cdf_matches_reference_distribution() {
        use statrs::distribution::ContinuousCDF;
        for dof in 1..=12usize {
            let dist = statrs::distribution::ChiSquared::new(dof as f64).unwrap();
            for i in 1..=60 {
                let x = i as f64 * 0.5;
                let want = dist.cdf(x);
                assert_relative_eq!(
                    chi_square_cdf(x, dof),
                    want,
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn ln_gamma_matches_reference() {
        for i in 1..100 {
            let x = i as f64 * 0.25;
            assert_relative_eq!(
                ln_gamma(x),
                statrs::function::gamma::ln_gamma(x),
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-100.0f64..100.0, 1..max_len)
        }

        proptest! {
            #[test]
            fn dtw_is_symmetric(a in series(40), b in series(40)) {
                prop_assert_eq!(dtw(&a, &b).unwrap(), dtw(&b, &a).unwrap());
            }

            #[test]
            fn dtw_self_distance_is_zero(a in series(40)) {
                prop_assert_eq!(dtw(&a, &a).unwrap(), 0.0);
            }

            #[test]
            fn dtw_never_negative(a in series(30), b in series(30)) {
                prop_assert!(dtw(&a, &b).unwrap() >= 0.0);
            }

            #[test]
            fn mae_bounded_by_rms(pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..50)) {
                let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let mae = mae(&a, &b).unwrap();
                let mse = mse(&a, &b).unwrap();
                prop_assert!(mae <= mse.sqrt() + 1e-12, "mae {mae} vs rms {}", mse.sqrt());
            }

            #[test]
            fn pearson_affine_invariance(
                pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
                scale in 0.1f64..5.0,
                offset in -20.0f64..20.0,
                flip in proptest::bool::ANY,
            ) {
                let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let s = if flip { -scale } else { scale };
                let mapped: Vec<f64> = b.iter().map(|&v| s * v + offset).collect();
                let Ok(base) = pearson(&a, &b) else { return Ok(()); };
                let Ok(got) = pearson(&a, &mapped) else { return Ok(()); };
                let want = if flip { -base } else { base };
                prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }

            #[test]
            fn friedman_invariant_to_block_order(
                seed in any::<u64>(),
                n in 3usize..12,
                k in 2usize..5,
            ) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let scores = Array2::from_shape_fn((n, k), |_| rng.random::<f64>());
                let base = friedman_test(&scores, true).unwrap();
                let mut perm: Vec<usize> = (0..n).collect();
                // Deterministic rotation is enough to shuffle block order.
                perm.rotate_left(n / 2);
                let rows: Vec<f64> = perm
                    .iter()
                    .flat_map(|&i| scores.row(i).to_vec())
                    .collect();
                let shuffled = Array2::from_shape_vec((n, k), rows).unwrap();
                let got = friedman_test(&shuffled, true).unwrap();
                prop_assert_eq!(base.chi_square, got.chi_square);
                prop_assert_eq!(base.rank_sums, got.rank_sums);
            }
        }
    }
}
