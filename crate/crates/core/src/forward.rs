//! Forward model of packet sampling: the Poisson mixture of per-flow sampled
//! counts, its restriction to sampled flows, closed-form geometric-Poisson
//! sums, total variation distance and the Le Cam bound.
//!
//! Poisson terms are always evaluated as `exp(j ln(λ) - λ - ln Γ(j+1))`.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{check_probability, Error, Result};
use crate::pmf::DiscretePmf;

/// `ln P(Poisson(mean) = j)`.
pub fn ln_poisson(j: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    j as f64 * mean.ln() - mean - ln_factorial(j)
}

pub fn poisson_pmf(j: u64, mean: f64) -> f64 {
    ln_poisson(j, mean).exp()
}

fn ln_factorial(j: u64) -> f64 {
    if j < 2 {
        0.0
    } else {
        ln_gamma(j as f64 + 1.0)
    }
}

/// Mixture law of the sampled count of a random flow.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureResult {
    /// `Q_0..=Q_jmax`; the tail mass holds everything else, including the
    /// part attributable to the truncated flow-size support.
    pub probs: DiscretePmf,
    /// Flow-size mass beyond the explicit support of the input pmf, whose
    /// contribution to each `Q_j` is unknown.
    pub truncation_error: f64,
}

/// `Q_j = Σ_ℓ P(v=ℓ) (pℓ)^j e^{-pℓ} / j!` for `j = 0..=j_max`.
pub fn mixture_q(v_pmf: &DiscretePmf, p: f64, j_max: u64) -> Result<MixtureResult> {
    check_probability("p", p)?;
    let q = raw_mixture(v_pmf, p, j_max);
    let explicit = v_pmf.explicit_mass();
    let covered: f64 = q.iter().sum();
    let tail = (explicit - covered).max(0.0) + v_pmf.tail_mass();
    Ok(MixtureResult {
        probs: DiscretePmf::unnormalized(0, q, tail)?,
        truncation_error: v_pmf.tail_mass(),
    })
}

/// Mixture sums without validation. Each `Q_j` is an independent
/// log-sum-exp over the support, so the parallel evaluation is bit-stable.
pub(crate) fn raw_mixture(v_pmf: &DiscretePmf, p: f64, j_max: u64) -> Vec<f64> {
    // (ln P(v=ℓ), pℓ, ln pℓ) for every support point with positive mass
    let atoms: Vec<(f64, f64, f64)> = v_pmf
        .iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|(l, w)| {
            let mean = p * l as f64;
            (w.ln(), mean, mean.ln())
        })
        .collect();

    (0..=j_max)
        .into_par_iter()
        .map(|j| {
            let jf = j as f64;
            let lf = ln_factorial(j);
            let term = |&(lw, mean, lmean): &(f64, f64, f64)| {
                if mean == 0.0 {
                    if j == 0 {
                        lw
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    lw + jf * lmean - mean - lf
                }
            };
            let peak = atoms.iter().map(term).fold(f64::NEG_INFINITY, f64::max);
            if peak == f64::NEG_INFINITY {
                return 0.0;
            }
            let scaled: f64 = atoms.iter().map(|a| (term(a) - peak).exp()).sum();
            peak.exp() * scaled
        })
        .collect()
}

/// Predicted law of the sampled size of a sampled flow, `Q_j / ν` for
/// `j = 1..=j_max`. It is a proper pmf when `ν = 1 - Q_0`.
pub fn forward_sampled_pmf(
    v_pmf: &DiscretePmf,
    p: f64,
    nu: f64,
    j_max: u64,
) -> Result<DiscretePmf> {
    check_probability("p", p)?;
    check_probability("nu", nu)?;
    if j_max == 0 {
        return Err(Error::param("j_max", "must be at least 1"));
    }
    let q = raw_mixture(v_pmf, p, j_max);
    let sampled_mass = v_pmf.explicit_mass() - q[0];
    let probs: Vec<f64> = q[1..].iter().map(|&x| x / nu).collect();
    let explicit: f64 = probs.iter().sum();
    let tail = (sampled_mass / nu - explicit).max(0.0) + v_pmf.tail_mass() / nu;
    DiscretePmf::unnormalized(1, probs, tail)
}

/// `S_j = Σ_{ℓ>=1} (1-r) r^ℓ (pℓ)^j e^{-pℓ} / j!`.
///
/// Closed forms with `q = r e^{-p}` for `j <= 2`, a converging direct sum
/// otherwise.
pub fn geom_poisson_sum(r: f64, p: f64, j: u64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0 && r < 1.0) {
        return Err(Error::param("r", format!("{r} is not in (0, 1)")));
    }
    check_probability("p", p)?;
    let q = r * (-p).exp();
    let c = (1.0 - r) * q;
    Ok(match j {
        0 => c / (1.0 - q),
        1 => p * c / (1.0 - q).powi(2),
        2 => 0.5 * p * p * c * (1.0 + q) / (1.0 - q).powi(3),
        _ => geom_poisson_direct(r, p, j),
    })
}

fn geom_poisson_direct(r: f64, p: f64, j: u64) -> f64 {
    let ln_r = r.ln();
    let jf = j as f64;
    let lf = ln_factorial(j);
    // summand is unimodal in ℓ with its peak near j / (p - ln r)
    let peak = (jf / (p - ln_r)).max(1.0);
    let ln_term = |l: f64| ln_r * l + jf * (p * l).ln() - p * l - lf;
    let top = ln_term(peak.floor().max(1.0)).max(ln_term(peak.ceil()));
    let mut sum = 0.0;
    let mut l = 1.0f64;
    loop {
        let t = (ln_term(l) - top).exp();
        sum += t;
        if l > peak && t < 1e-18 * sum {
            break;
        }
        l += 1.0;
    }
    (1.0 - r) * top.exp() * sum
}

/// Total variation distance. Mass beyond each explicit support is treated
/// as one extra atom, so identical inputs are at distance zero.
pub fn tv_distance(d1: &DiscretePmf, d2: &DiscretePmf) -> f64 {
    let lo = d1.support_start().min(d2.support_start());
    let hi = d1.support_end().max(d2.support_end());
    let explicit: f64 = (lo..hi).map(|j| (d1.get(j) - d2.get(j)).abs()).sum();
    (0.5 * (explicit + (d1.tail_mass() - d2.tail_mass()).abs())).min(1.0)
}

/// Right-hand side of the Le Cam bound on `|E(W_j) - K Q_j|`:
/// `p Σ_i v_i² / V` with every flow active over the whole window of
/// `total_packets` packets.
pub fn lecam_bound(flow_sizes: &[u64], total_packets: u64, p: f64) -> Result<f64> {
    check_probability("p", p)?;
    if total_packets == 0 {
        return Err(Error::param("total_packets", "must be positive"));
    }
    if let Some(&max) = flow_sizes.iter().max() {
        if max > total_packets {
            return Err(Error::param(
                "total_packets",
                format!("{total_packets} is below the largest flow ({max})"),
            ));
        }
    }
    Ok(flow_sizes
        .iter()
        .map(|&s| flow_lecam_bound(s, total_packets, p))
        .sum())
}

/// Per-flow total-variation bound `p v² / V` between the sampled count of
/// one flow and its Poisson approximation.
pub fn flow_lecam_bound(size: u64, total_packets: u64, p: f64) -> f64 {
    let s = size as f64;
    p * s * s / total_packets as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn poisson_dist(mean: f64, j_max: u64) -> DiscretePmf {
        let probs = (0..=j_max).map(|j| poisson_pmf(j, mean)).collect();
        DiscretePmf::with_residual_tail(0, probs).unwrap()
    }

    #[test]
    fn point_mass_mixture_is_poisson() {
        let q = mixture_q(&DiscretePmf::point_mass(100), 0.01, 30).unwrap();
        assert_abs_diff_eq!(q.probs.get(0), (-1.0f64).exp(), epsilon = 1e-12);
        for j in 0..=30 {
            assert_abs_diff_eq!(q.probs.get(j), poisson_pmf(j, 1.0), epsilon = 1e-12);
        }
        let q = mixture_q(&DiscretePmf::point_mass(1), 1.0, 10).unwrap();
        assert_abs_diff_eq!(q.probs.get(0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(q.probs.get(1), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(q.probs.get(2), 0.5 * (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn mixture_handles_zero_atom() {
        let v = DiscretePmf::new(0, vec![0.5, 0.5], 0.0).unwrap();
        let q = mixture_q(&v, 0.5, 5).unwrap();
        assert_abs_diff_eq!(q.probs.get(0), 0.5 + 0.5 * (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(q.probs.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mixture_reports_truncation() {
        let v = DiscretePmf::new(1, vec![0.5, 0.25], 0.25).unwrap();
        let q = mixture_q(&v, 0.1, 50).unwrap();
        assert_eq!(q.truncation_error, 0.25);
        assert_abs_diff_eq!(q.probs.total_mass(), 1.0, epsilon = 1e-12);
        assert!(mixture_q(&v, 0.0, 5).is_err());
    }

    #[test]
    fn mixture_stable_for_huge_support() {
        // support points up to 1e8 at tiny p
        let probs = vec![0.25; 4];
        let v = DiscretePmf::new(99_999_997, probs, 0.0).unwrap();
        let q = mixture_q(&v, 1e-6, 400).unwrap();
        assert!(q.probs.probs().iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(q.probs.get(100), poisson_pmf(100, 100.0), epsilon = 1e-6);
    }

    #[test]
    fn sampled_pmf_conditions_on_sampling() {
        let nu = 1.0 - (-1.0f64).exp();
        let f = forward_sampled_pmf(&DiscretePmf::point_mass(100), 0.01, nu, 40).unwrap();
        for j in 1..=40 {
            assert_abs_diff_eq!(f.get(j), poisson_pmf(j, 1.0) / nu, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(f.total_mass(), 1.0, epsilon = 1e-12);
        assert!(forward_sampled_pmf(&DiscretePmf::point_mass(1), 0.5, 0.0, 3).is_err());
    }

    #[test]
    fn geom_sum_reference_values() {
        let s0 = geom_poisson_sum(0.5, 0.1, 0).unwrap();
        let s1 = geom_poisson_sum(0.5, 0.1, 1).unwrap();
        // direct sums over l = 1..2000
        let direct = |j: u64| -> f64 {
            (1..2000u64)
                .map(|l| 0.5 * 0.5f64.powi(l as i32) * poisson_pmf(j, 0.1 * l as f64))
                .sum()
        };
        assert_relative_eq!(s0, direct(0), max_relative = 1e-12);
        assert_relative_eq!(s1, direct(1), max_relative = 1e-12);
        assert_abs_diff_eq!(s0, 0.413106, epsilon = 5e-7);
        assert_abs_diff_eq!(s1, 0.075442, epsilon = 5e-7);
        assert!(geom_poisson_sum(1.0, 0.1, 1).is_err());
        assert!(geom_poisson_sum(0.5, 0.0, 1).is_err());
    }

    #[test]
    fn geom_sum_direct_branch_matches_closed_branch() {
        for &(r, p) in &[(0.5, 0.1), (0.9, 0.01), (0.05, 1.0)] {
            for j in 0..=2 {
                let closed = geom_poisson_sum(r, p, j).unwrap();
                assert_relative_eq!(geom_poisson_direct(r, p, j), closed, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn geom_sum_matches_mixture_of_geometric_pmf() {
        // mixture over the (unnormalized) geometric weights (1-r) r^ℓ
        let (r, p) = (0.75f64, 0.01);
        let weights: Vec<f64> = (1..=400).map(|l| (1.0 - r) * r.powi(l)).collect();
        let v = DiscretePmf::unnormalized(1, weights, 0.0).unwrap();
        let q = raw_mixture(&v, p, 6);
        for j in 0..=6 {
            assert_relative_eq!(
                q[j as usize],
                geom_poisson_sum(r, p, j).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn tv_basics() {
        let a = poisson_dist(1.0, 30);
        assert_eq!(tv_distance(&a, &a), 0.0);
        let tv = tv_distance(&DiscretePmf::point_mass(0), &DiscretePmf::point_mass(1));
        assert_abs_diff_eq!(tv, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lecam_bound_values() {
        let n = 1000;
        let ones = vec![1u64; n];
        let b = lecam_bound(&ones, n as u64, 0.1).unwrap();
        assert_relative_eq!(b / n as f64, 0.1 / n as f64, max_relative = 1e-12);
        assert_relative_eq!(
            flow_lecam_bound(100, 10_000, 0.01),
            0.01,
            max_relative = 1e-12
        );
        assert!(lecam_bound(&[5], 0, 0.1).is_err());
        assert!(lecam_bound(&[5], 4, 0.1).is_err());
    }
}
