//! α-entmax: a family of simplex mappings from softmax (α=1) to
//! increasingly sparse distributions.
//!
//! α=1 is evaluated as an exact softmax, α=2 as exact sparsemax via
//! sort-and-threshold, and other α by bisection on the threshold τ of
//! `p_i = [(α-1)·w_i − τ]₊^{1/(α-1)}` until |Σp − 1| <= 1e-12.

use crate::error::{Error, Result};

/// Map `w` onto the probability simplex with sparsity level `alpha`.
pub fn entmax(w: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("entmax of empty vector".into()));
    }
    if alpha < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 1, got {alpha}"
        )));
    }
    if w.len() == 1 {
        return Ok(vec![1.0]);
    }
    if alpha == 1.0 {
        return Ok(softmax(w));
    }
    if alpha == 2.0 {
        return Ok(sparsemax(w));
    }
    Ok(entmax_bisect(w, alpha))
}

fn softmax(w: &[f64]) -> Vec<f64> {
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Exact Euclidean projection onto the simplex.
fn sparsemax(w: &[f64]) -> Vec<f64> {
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    let mut support = 0usize;
    for (k, &z) in sorted.iter().enumerate() {
        cumsum += z;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if z > candidate {
            tau = candidate;
            support = k + 1;
        } else {
            break;
        }
    }
    debug_assert!(support >= 1);
    w.iter().map(|&z| (z - tau).max(0.0)).collect()
}

fn entmax_bisect(w: &[f64], alpha: f64) -> Vec<f64> {
    let a1 = alpha - 1.0;
    let inv = 1.0 / a1;
    let s: Vec<f64> = w.iter().map(|&v| a1 * v).collect();
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Σp is 0 at τ = max and >= 1 at τ = max - 1.
    let mut lo = max - 1.0;
    let mut hi = max;
    let sum_at = |tau: f64| -> f64 {
        s.iter()
            .map(|&si| {
                let d = si - tau;
                if d > 0.0 {
                    d.powf(inv)
                } else {
                    0.0
                }
            })
            .sum()
    };
    // Bisect to full float precision; the interval collapses in ~60 steps
    // so the 1e-12 simplex contract holds with plenty of margin.
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        tau = mid;
        if sum_at(tau) > 1.0 {
            lo = tau;
        } else {
            hi = tau;
        }
    }
    s.iter()
        .map(|&si| {
            let d = si - tau;
            if d > 0.0 {
                d.powf(inv)
            } else {
                0.0
            }
        })
        .collect()
}

/// Indices with strictly positive probability.
pub fn support(p: &[f64]) -> Vec<usize> {
    p.iter()
        .enumerate()
        .filter_map(|(i, &v)| (v > 0.0).then_some(i))
        .collect()
}

/// Jacobian-vector product of entmax at output `p`:
/// `∂p/∂w · v = diag(g)·v − g·(gᵀv)/Σg` with `g_i = s_i · p_i^{2−α}`
/// and `s` the support indicator.
pub fn vjp(p: &[f64], alpha: f64, upstream: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = p
        .iter()
        .map(|&pi| if pi > 0.0 { pi.powf(2.0 - alpha) } else { 0.0 })
        .collect();
    let g_sum: f64 = g.iter().sum();
    let gv: f64 = g.iter().zip(upstream).map(|(&gi, &vi)| gi * vi).sum();
    let ratio = gv / g_sum;
    g.iter()
        .zip(upstream)
        .map(|(&gi, &vi)| gi * vi - gi * ratio)
        .collect()
}

/// Central-difference derivative of the entmax output with respect to α,
/// contracted with an upstream gradient. Used for the learnable α.
pub fn alpha_grad_fd(w: &[f64], alpha: f64, upstream: &[f64], h: f64) -> Result<f64> {
    let up = entmax(w, (alpha + h).max(1.0 + 1e-6))?;
    let down = entmax(w, (alpha - h).max(1.0 + 1e-6))?;
    Ok(upstream
        .iter()
        .zip(up.iter().zip(&down))
        .map(|(&u, (&a, &b))| u * (a - b) / (2.0 * h))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Euclidean projection onto the simplex by exhaustive support search.
    /// Only sensible for tiny K; used as the sparsemax oracle.
    pub(crate) fn projection_oracle(w: &[f64]) -> Vec<f64> {
        let k = w.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << k) {
            let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let sum: f64 = idx.iter().map(|&i| w[i]).sum();
            let tau = (sum - 1.0) / idx.len() as f64;
            let mut p = vec![0.0; k];
            let mut feasible = true;
            for &i in &idx {
                let v = w[i] - tau;
                if v < 0.0 {
                    feasible = false;
                    break;
                }
                p[i] = v;
            }
            if !feasible {
                continue;
            }
            let dist: f64 = w.iter().zip(&p).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if best.as_ref().map_or(true, |(d, _)| dist < *d) {
                best = Some((dist, p));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn alpha_one_is_uniform_on_zeros() {
        assert_eq!(entmax(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn sparsemax_hand_examples() {
        let p = entmax(&[2.0, 0.0], 2.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] == 0.0);

        let p = entmax(&[0.3, 0.1], 2.0).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-12);
        assert!((p[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sparsemax_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let k = rng.random_range(1..=5);
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = entmax(&w, 2.0).unwrap();
            let oracle = projection_oracle(&w);
            for (a, b) in fast.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10, "{fast:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn alpha_one_matches_softmax_closely() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let k = rng.random_range(2..=8);
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = entmax(&w, 1.0).unwrap();
            let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = w.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (a, e) in p.iter().zip(&exps) {
                assert!((a - e / sum).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simplex_shift_and_permutation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &alpha in &[1.0, 1.5, 2.0, 2.5, 3.5] {
            for _ in 0..100 {
                let k = rng.random_range(2..=9);
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
                let p = entmax(&w, alpha).unwrap();
                assert!(p.iter().all(|&v| v >= 0.0));
                let sum: f64 = p.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12, "alpha={alpha} sum={sum}");

                // shift invariance
                let c = rng.random_range(-2.0..2.0);
                let shifted: Vec<f64> = w.iter().map(|&v| v + c).collect();
                let p2 = entmax(&shifted, alpha).unwrap();
                for (a, b) in p.iter().zip(&p2) {
                    assert!((a - b).abs() <= 1e-9, "alpha={alpha}");
                }

                // permutation equivariance (reverse)
                let rev: Vec<f64> = w.iter().rev().cloned().collect();
                let p3 = entmax(&rev, alpha).unwrap();
                for (a, b) in p.iter().rev().zip(&p3) {
                    assert!((a - b).abs() <= 1e-12, "alpha={alpha}");
                }
            }
        }
    }

    #[test]
    fn larger_alpha_is_sparser_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut n_lo = 0usize;
        let mut n_hi = 0usize;
        for _ in 0..200 {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            n_lo += support(&entmax(&w, 1.5).unwrap()).len();
            n_hi += support(&entmax(&w, 3.0).unwrap()).len();
        }
        assert!(n_hi < n_lo, "support at alpha=3 ({n_hi}) vs alpha=1.5 ({n_lo})");
    }

    #[test]
    fn vjp_matches_finite_differences_on_stable_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for &alpha in &[1.0, 1.5, 2.0, 2.5] {
            let mut checked = 0;
            while checked < 50 {
                let k = rng.random_range(2..=6);
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let p = entmax(&w, alpha).unwrap();
                // Keep clear of support boundaries so the FD stays valid.
                let stable = (0..k).all(|i| {
                    let mut wp = w.clone();
                    wp[i] += 10.0 * h;
                    let a = support(&entmax(&wp, alpha).unwrap());
                    wp[i] -= 20.0 * h;
                    let b = support(&entmax(&wp, alpha).unwrap());
                    a == support(&p) && b == support(&p)
                });
                if !stable {
                    continue;
                }
                checked += 1;
                let upstream: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let analytic = vjp(&p, alpha, &upstream);
                for i in 0..k {
                    let mut wp = w.clone();
                    wp[i] += h;
                    let up = entmax(&wp, alpha).unwrap();
                    wp[i] -= 2.0 * h;
                    let down = entmax(&wp, alpha).unwrap();
                    let fd: f64 = upstream
                        .iter()
                        .zip(up.iter().zip(&down))
                        .map(|(&u, (&a, &b))| u * (a - b) / (2.0 * h))
                        .sum();
                    let denom = fd.abs().max(analytic[i].abs()).max(1e-4);
                    assert!(
                        (fd - analytic[i]).abs() / denom <= 1e-5,
                        "alpha={alpha} coord={i} fd={fd} analytic={}",
                        analytic[i]
                    );
                }
            }
        }
    }

    #[test]
    fn alpha_below_one_rejected() {
        assert!(entmax(&[0.1, 0.2], 0.5).is_err());
    }
}
