//! The BCE bias fixed point at collapse.
//!
//! At a BCE global minimizer every bias equals the same scalar `b*`, the
//! unique zero of
//!
//! ```text
//! α(b) = −(K−1)/K · σ(−b − aρ/(K(K−1))) + 1/K · σ(b − aρ/K) + λ_b·b,
//! ```
//!
//! with `a = √(λ_W/(nλ_H))` and `ρ = ‖W‖²_F`. `α` is `(β₁ − β₂)/K` where
//! `β₁(b) = λ_b·K·b + σ(b − aρ/K)` increases strictly and
//! `β₂(b) = (K−1)·σ(−b − aρ/(K(K−1)))` decreases strictly, so bisection on a
//! sign-changing bracket always finds it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HyperParams;
use crate::scalar::Real;
use crate::stable::sigmoid;

/// Inputs of the bias equation. `n` is real-valued so that effective
/// per-class counts (e.g. batch size / K) can be audited.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasProblem<T> {
    pub k: usize,
    pub n: T,
    pub lambda_w: T,
    pub lambda_h: T,
    pub lambda_b: T,
    pub rho: T,
}

impl<T: Real> BiasProblem<T> {
    pub fn new(k: usize, n: T, lambda_w: T, lambda_h: T, lambda_b: T, rho: T) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidHyperParams(format!("K must be >= 2, got {k}")));
        }
        if !(n > T::zero()) || !(lambda_w > T::zero()) || !(lambda_h > T::zero()) {
            return Err(Error::InvalidHyperParams("n, lambda_w and lambda_h must be positive".into()));
        }
        if !(lambda_b >= T::zero()) {
            return Err(Error::InvalidHyperParams("lambda_b must be >= 0".into()));
        }
        if !(rho >= T::zero()) || !rho.is_finite() {
            return Err(Error::InvalidHyperParams(format!("rho must be finite and >= 0, got {rho}")));
        }
        Ok(Self {
            k,
            n,
            lambda_w,
            lambda_h,
            lambda_b,
            rho,
        })
    }

    pub fn from_hyper(hp: &HyperParams<T>, rho: T) -> Result<Self> {
        Self::new(hp.k, T::of_usize(hp.n), hp.lambda_w, hp.lambda_h, hp.lambda_b, rho)
    }

    /// `a = √(λ_W/(nλ_H))`.
    pub fn feature_scale(&self) -> T {
        (self.lambda_w / (self.n * self.lambda_h)).sqrt()
    }

    /// Bias-free positive score at collapse, `aρ/K`.
    pub fn positive_score(&self) -> T {
        self.feature_scale() * self.rho / T::of_usize(self.k)
    }

    /// Bias-free negative score at collapse, `−aρ/(K(K−1))`.
    pub fn negative_score(&self) -> T {
        -self.positive_score() / T::of_usize(self.k - 1)
    }
}

pub fn beta1<T: Real>(b: T, prob: &BiasProblem<T>) -> T {
    prob.lambda_b * T::of_usize(prob.k) * b + sigmoid(b - prob.positive_score())
}

pub fn beta2<T: Real>(b: T, prob: &BiasProblem<T>) -> T {
    T::of_usize(prob.k - 1) * sigmoid(-b + prob.negative_score())
}

/// Residual `α(b)` of the bias equation; zero exactly at `b*`.
pub fn alpha_residual<T: Real>(b: T, prob: &BiasProblem<T>) -> T {
    let k = T::of_usize(prob.k);
    let neg = T::of_usize(prob.k - 1) / k * sigmoid(-b + prob.negative_score());
    let pos = sigmoid(b - prob.positive_score()) / k;
    pos - neg + prob.lambda_b * b
}

/// Absolute residual tolerance targeted by [`solve_bias`].
pub const BIAS_TOLERANCE: f64 = 1e-12;

/// Unique root of [`alpha_residual`], by bracket doubling then bisection.
pub fn solve_bias<T: Real>(prob: &BiasProblem<T>) -> Result<T> {
    let tol = T::lit(BIAS_TOLERANCE);
    let f = |b: T| alpha_residual(b, prob);
    let half_width = prob.positive_score() + T::of_usize(prob.k).ln() + T::one();
    let (mut lo, mut hi) = (-half_width, half_width);
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    let mut doublings = 0;
    while f_lo > T::zero() {
        lo = lo * T::lit(2.0);
        f_lo = f(lo);
        doublings += 1;
        if doublings > 2000 || !lo.is_finite() {
            return Err(Error::NonFinite("bias bracket (lower end)".into()));
        }
    }
    while f_hi < T::zero() {
        hi = hi * T::lit(2.0);
        f_hi = f(hi);
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(Error::NonFinite("bias bracket (upper end)".into()));
        }
    }
    if !(f_lo.is_finite() && f_hi.is_finite()) {
        return Err(Error::NonFinite("bias residual".into()));
    }
    if f_lo == T::zero() {
        return Ok(lo);
    }
    if f_hi == T::zero() {
        return Ok(hi);
    }
    for _ in 0..4096 {
        let mid = lo + (hi - lo) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if !f_mid.is_finite() {
            return Err(Error::NonFinite("bias residual".into()));
        }
        if f_mid.abs() < tol * T::lit(1e-3) {
            return Ok(mid);
        }
        if f_mid < T::zero() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    Ok(if f_lo.abs() <= f_hi.abs() { lo } else { hi })
}

/// Whether `b*` lies strictly between the collapsed negative and positive
/// scores: `K > 2` and `λ_b·aρ/(K−1) + 1/(2(K−1)) > 1/(1 + exp(aρ/(K−1)))`.
pub fn separation_holds<T: Real>(prob: &BiasProblem<T>) -> bool {
    if prob.k <= 2 {
        return false;
    }
    let km1 = T::of_usize(prob.k - 1);
    let x = prob.feature_scale() * prob.rho / km1;
    let lhs = prob.lambda_b * x + T::one() / (T::lit(2.0) * km1);
    lhs > sigmoid(-x)
}
