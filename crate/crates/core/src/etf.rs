//! Simplex equiangular tight frames and the closed-form global minimizers
//! they induce.
//!
//! At a minimizer the classifier rows form a simplex ETF with
//! `W·Wᵀ = ρ/(K−1)·(I − 11ᵀ/K)`, every feature of class `k` equals `a·w_k`
//! with `a = √(λ_W/(nλ_H))`, and all biases share one value. The objective
//! then collapses to a function of `(ρ, b)` only, see [`reduced_objective`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bias::{solve_bias, BiasProblem};
use crate::error::{Error, Result};
use crate::linalg::{helmert_basis, orthonormalize_columns, Mat};
use crate::losses::LossKind;
use crate::model::{HyperParams, ModelState};
use crate::scalar::Real;
use crate::stable::{sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtfSpec<T> {
    pub k: usize,
    pub d: usize,
    /// Target `‖W‖²_F`.
    pub rho: T,
    pub orientation_seed: u64,
}

/// Seeded orthonormal d×m frame from Gram-Schmidt on a Gaussian matrix.
fn random_orthonormal_frame<T: Real>(d: usize, m: usize, seed: u64) -> Mat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = Mat::from_fn(d, m, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            T::lit(x)
        });
        if let Some(q) = orthonormalize_columns(&g) {
            return q;
        }
    }
}

/// K×d classifier whose rows form a simplex ETF with `‖W‖²_F = ρ`.
///
/// Built as `√(ρ/(K−1)) · U · Qᵀ` where `U` is the Helmert basis of the
/// sum-zero subspace of ℝᴷ and `Q` is a seeded orthonormal d×(K−1) frame.
pub fn simplex_etf<T: Real>(spec: &EtfSpec<T>) -> Result<Mat<T>> {
    if spec.k < 2 {
        return Err(Error::InvalidHyperParams(format!("K must be >= 2, got {}", spec.k)));
    }
    if spec.d + 1 < spec.k {
        return Err(Error::InfeasibleDimensions { k: spec.k, d: spec.d });
    }
    if !(spec.rho > T::zero()) || !spec.rho.is_finite() {
        return Err(Error::InvalidHyperParams(format!("rho must be > 0, got {}", spec.rho)));
    }
    let m = spec.k - 1;
    let u: Mat<T> = helmert_basis(spec.k);
    let q = random_orthonormal_frame(spec.d, m, spec.orientation_seed);
    let scale = (spec.rho / T::of_usize(m)).sqrt();
    Ok(u.matmul_t(&q).scale(scale))
}

/// The collapsed state: simplex-ETF classifier with `‖W‖²_F = ρ`, every
/// class-`k` feature equal to `a·w_k`, and `b = b_star·1`.
pub fn analytic_minimizer<T: Real>(
    hp: &HyperParams<T>,
    rho: T,
    b_star: T,
    orientation_seed: u64,
) -> Result<ModelState<T>> {
    hp.validate()?;
    if !hp.etf_feasible() {
        return Err(Error::InfeasibleDimensions { k: hp.k, d: hp.d });
    }
    let w = simplex_etf(&EtfSpec {
        k: hp.k,
        d: hp.d,
        rho,
        orientation_seed,
    })?;
    let a = hp.feature_scale();
    let h = Mat::from_fn(hp.d, hp.n_total(), |p, c| a * w[(c / hp.n, p)]);
    Ok(ModelState {
        w,
        h,
        b: vec![b_star; hp.k],
    })
}

fn reduced_kind(kind: LossKind) -> Result<()> {
    match kind {
        LossKind::Ce | LossKind::Bce => Ok(()),
        LossKind::NaiveBce => Err(Error::Config("reduced objective is defined for CE and BCE only".into())),
    }
}

/// Objective at the collapsed configuration with parameters `(ρ, b)`.
///
/// BCE: `softplus(b − aρ/K) + (K−1)·softplus(−aρ/(K(K−1)) − b)`;
/// CE: `log(1 + (K−1)·exp(−aρ/(K−1)))`; both plus `λ_W·ρ + (λ_b/2)·K·b²`.
pub fn reduced_objective<T: Real>(kind: LossKind, rho: T, b: T, hp: &HyperParams<T>) -> Result<T> {
    reduced_kind(kind)?;
    let k = T::of_usize(hp.k);
    let km1 = T::of_usize(hp.k - 1);
    let pos = hp.feature_scale() * rho / k;
    let neg = -pos / km1;
    let loss = match kind {
        LossKind::Bce => softplus(b - pos) + km1 * softplus(neg - b),
        _ => {
            // log(1 + (K−1)·e^{neg−pos}) = softplus(neg − pos + ln(K−1)).
            softplus(neg - pos + km1.ln())
        }
    };
    Ok(loss + hp.lambda_w * rho + T::lit(0.5) * hp.lambda_b * k * b * b)
}

/// `∂/∂ρ` of [`reduced_objective`] at fixed `b`.
pub fn reduced_objective_drho<T: Real>(kind: LossKind, rho: T, b: T, hp: &HyperParams<T>) -> Result<T> {
    reduced_kind(kind)?;
    let k = T::of_usize(hp.k);
    let km1 = T::of_usize(hp.k - 1);
    let a = hp.feature_scale();
    let pos = a * rho / k;
    let neg = -pos / km1;
    let dloss = match kind {
        LossKind::Bce => -(a / k) * (sigmoid(b - pos) + sigmoid(neg - b)),
        _ => -(a / km1) * sigmoid(neg - pos + km1.ln()),
    };
    Ok(dloss + hp.lambda_w)
}

/// Minimizer `(ρ*, b*)` of the reduced objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedOptimum<T> {
    pub rho: T,
    pub bias: T,
    pub value: T,
}

/// Optimal bias for a given `ρ`: the bias-equation root for BCE, zero for CE.
pub fn optimal_bias<T: Real>(kind: LossKind, rho: T, hp: &HyperParams<T>) -> Result<T> {
    reduced_kind(kind)?;
    match kind {
        LossKind::Bce => solve_bias(&BiasProblem::from_hyper(hp, rho)?),
        _ => Ok(T::zero()),
    }
}

/// Minimizes the reduced objective over `ρ ≥ 0` with `b` profiled out.
///
/// A log-spaced grid brackets the minimum, golden-section search narrows
/// it, and bisection on the profiled derivative (the bias is stationary, so
/// the partial in `ρ` is the total derivative) polishes `ρ*` to roundoff.
pub fn optimal_rho_bias<T: Real>(kind: LossKind, hp: &HyperParams<T>) -> Result<ReducedOptimum<T>> {
    reduced_kind(kind)?;
    hp.validate()?;
    let profile = |rho: T| -> Result<T> {
        let b = optimal_bias(kind, rho, hp)?;
        reduced_objective(kind, rho, b, hp)
    };
    let slope = |rho: T| -> Result<T> {
        let b = optimal_bias(kind, rho, hp)?;
        reduced_objective_drho(kind, rho, b, hp)
    };

    if slope(T::zero())? >= T::zero() {
        let b = optimal_bias(kind, T::zero(), hp)?;
        return Ok(ReducedOptimum {
            rho: T::zero(),
            bias: b,
            value: profile(T::zero())?,
        });
    }

    let mut grid = vec![T::zero()];
    grid.extend((0..=240).map(|i| T::lit(10f64.powf(-8.0 + i as f64 / 15.0))));
    let values = grid.iter().map(|&r| profile(r)).collect::<Result<Vec<T>>>()?;
    let best = values
        .iter()
        .enumerate()
        .fold(0, |bi, (i, v)| if *v < values[bi] { i } else { bi });
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(grid.len() - 1)];

    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = profile(x1)?;
    let mut f2 = profile(x2)?;
    for _ in 0..200 {
        if hi - lo <= T::lit(1e-12) * hi.max(T::one()) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = profile(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = profile(x2)?;
        }
    }

    // Widen slightly so the derivative changes sign inside, then bisect.
    let centre = (lo + hi) * T::lit(0.5);
    let width = (hi - lo).max(T::lit(1e-6) * centre.max(T::one()));
    let mut a = (centre - width).max(T::zero());
    let mut b = centre + width;
    let mut rho = centre;
    if slope(a)? < T::zero() && slope(b)? > T::zero() {
        for _ in 0..200 {
            let mid = a + (b - a) * T::lit(0.5);
            if mid <= a || mid >= b {
                break;
            }
            let s = slope(mid)?;
            if s == T::zero() {
                a = mid;
                b = mid;
                break;
            }
            if s < T::zero() {
                a = mid;
            } else {
                b = mid;
            }
        }
        rho = if slope(a)?.abs() <= slope(b)?.abs() { a } else { b };
    }
    let bias = optimal_bias(kind, rho, hp)?;
    Ok(ReducedOptimum {
        rho,
        bias,
        value: reduced_objective(kind, rho, bias, hp)?,
    })
}

/// Constants `(c₁, c₂) = (exp(aρ/K − b), exp(b + aρ/(K(K−1))))` at which the
/// BCE lower bound is tight for the collapsed configuration `(ρ, b)`.
pub fn tight_bound_constants<T: Real>(rho: T, b: T, hp: &HyperParams<T>) -> (T, T) {
    let k = T::of_usize(hp.k);
    let pos = hp.feature_scale() * rho / k;
    let neg = pos / T::of_usize(hp.k - 1);
    ((pos - b).exp(), (b + neg).exp())
}

/// Value of the BCE lower bound at critical points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound<T> {
    pub value: T,
    /// Set when `λ_b = 0` makes the bias term unbounded; `value` is then −∞.
    pub unbounded_bias_term: bool,
}

/// Constant `C(c₁, c₂)` of the per-sample BCE lower bound.
pub fn bound_constant<T: Real>(c1: T, c2: T, k: usize) -> T {
    let one = T::one();
    let km1 = T::of_usize(k - 1);
    let part1 = c1 / (one + c1) * (one / c1).ln_1p() + c1.ln_1p() / (one + c1);
    let part2 = km1 / (one + c2) * (c2 * (one / c2).ln_1p() + c2.ln_1p());
    part1 + part2
}

/// Lower bound on the BCE objective at any critical point with `‖W‖²_F = ρ`:
///
/// `[λ_W − (1/(N(1+c₂)) + 1/(N(1+c₁)))·√(nλ_W/λ_H)]·ρ
///   − ((K−1)/(1+c₂) − 1/(1+c₁))² / (2Kλ_b) + C(c₁, c₂)`.
pub fn bce_lower_bound<T: Real>(rho: T, c1: T, c2: T, hp: &HyperParams<T>) -> Result<LowerBound<T>> {
    if !(c1 > T::zero() && c2 > T::zero()) {
        return Err(Error::InvalidHyperParams("c1 and c2 must be positive".into()));
    }
    if !(rho >= T::zero()) {
        return Err(Error::InvalidHyperParams("rho must be >= 0".into()));
    }
    let one = T::one();
    let n_total = T::of_usize(hp.n_total());
    let k = T::of_usize(hp.k);
    let km1 = T::of_usize(hp.k - 1);
    let root = (T::of_usize(hp.n) * hp.lambda_w / hp.lambda_h).sqrt();
    let coef = hp.lambda_w - (one / (n_total * (one + c2)) + one / (n_total * (one + c1))) * root;
    let q = km1 / (one + c2) - one / (one + c1);
    let constant = bound_constant(c1, c2, hp.k);
    if hp.lambda_b > T::zero() {
        let bias_term = q * q / (T::lit(2.0) * k * hp.lambda_b);
        Ok(LowerBound {
            value: coef * rho - bias_term + constant,
            unbounded_bias_term: false,
        })
    } else if q == T::zero() {
        Ok(LowerBound {
            value: coef * rho + constant,
            unbounded_bias_term: false,
        })
    } else {
        Ok(LowerBound {
            value: T::neg_infinity(),
            unbounded_bias_term: true,
        })
    }
}
