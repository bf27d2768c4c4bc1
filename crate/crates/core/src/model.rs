//! The free-variable (layer-peeled) model: classifier `W`, features `H`,
//! biases `b`, and the decision scores `Z = W·H − b·1ᵀ`.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::scalar::Real;

/// Problem dimensions and weight-decay strengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    /// Number of classes.
    pub k: usize,
    /// Feature dimension.
    pub d: usize,
    /// Samples per class.
    pub n: usize,
    pub lambda_w: T,
    pub lambda_h: T,
    pub lambda_b: T,
}

impl<T: Real> HyperParams<T> {
    pub fn new(k: usize, d: usize, n: usize, lambda_w: T, lambda_h: T, lambda_b: T) -> Result<Self> {
        let hp = Self {
            k,
            d,
            n,
            lambda_w,
            lambda_h,
            lambda_b,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidHyperParams(format!("K must be >= 2, got {}", self.k)));
        }
        if self.d < 1 || self.n < 1 {
            return Err(Error::InvalidHyperParams(format!(
                "d and n must be >= 1, got d = {}, n = {}",
                self.d, self.n
            )));
        }
        if !(self.lambda_w > T::zero() && self.lambda_w.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("lambda_w must be > 0, got {}", self.lambda_w)));
        }
        if !(self.lambda_h > T::zero() && self.lambda_h.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("lambda_h must be > 0, got {}", self.lambda_h)));
        }
        if !(self.lambda_b >= T::zero() && self.lambda_b.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("lambda_b must be >= 0, got {}", self.lambda_b)));
        }
        Ok(())
    }

    /// Total number of samples, `N = n·K`.
    pub fn n_total(&self) -> usize {
        self.n * self.k
    }

    /// Whether a simplex ETF fits in the feature space (`d ≥ K − 1`).
    pub fn etf_feasible(&self) -> bool {
        self.d + 1 >= self.k
    }

    /// Feature-to-classifier ratio at collapse, `√(λ_W / (n·λ_H))`.
    pub fn feature_scale(&self) -> T {
        (self.lambda_w / (T::of_usize(self.n) * self.lambda_h)).sqrt()
    }
}

/// Class labels, stored zero-based. Files and user-facing APIs use `1..=K`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    classes: Vec<usize>,
    k: usize,
}

impl Labels {
    /// Class-major layout: column `c` belongs to class `c / n`.
    pub fn class_major(k: usize, n: usize) -> Self {
        Self {
            classes: (0..k * n).map(|c| c / n).collect(),
            k,
        }
    }

    /// Zero-based constructor.
    pub fn new(classes: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
            return Err(Error::LabelOutOfRange { label: bad + 1, k });
        }
        Ok(Self { classes, k })
    }

    pub fn from_one_based(labels: &[usize], k: usize) -> Result<Self> {
        let mut classes = Vec::with_capacity(labels.len());
        for &l in labels {
            if l == 0 || l > k {
                return Err(Error::LabelOutOfRange { label: l, k });
            }
            classes.push(l - 1);
        }
        Ok(Self { classes, k })
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.classes[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &c in &self.classes {
            counts[c] += 1;
        }
        counts
    }
}

/// The free variables `(W, H, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    /// Classifier, K×d, rows are `w_k`.
    pub w: Mat<T>,
    /// Features, d×N, one column per sample.
    pub h: Mat<T>,
    /// Biases, length K.
    pub b: Vec<T>,
}

impl<T: Real> ModelState<T> {
    pub fn new(w: Mat<T>, h: Mat<T>, b: Vec<T>) -> Result<Self> {
        let state = Self { w, h, b };
        state.check_dims()?;
        if !state.is_finite() {
            return Err(Error::NonFinite("model state".into()));
        }
        Ok(state)
    }

    pub fn zeros(hp: &HyperParams<T>) -> Self {
        Self {
            w: Mat::zeros(hp.k, hp.d),
            h: Mat::zeros(hp.d, hp.n_total()),
            b: vec![T::zero(); hp.k],
        }
    }

    pub fn check_dims(&self) -> Result<()> {
        if self.w.cols() != self.h.rows() {
            return Err(Error::DimensionMismatch(format!(
                "W is {}x{} but H has {} rows",
                self.w.rows(),
                self.w.cols(),
                self.h.rows()
            )));
        }
        if self.b.len() != self.w.rows() {
            return Err(Error::DimensionMismatch(format!(
                "W has {} rows but b has length {}",
                self.w.rows(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Checks that the state matches the dimensions in `hp`.
    pub fn check_against(&self, hp: &HyperParams<T>) -> Result<()> {
        self.check_dims()?;
        if self.w.shape() != (hp.k, hp.d) || self.h.cols() != hp.n_total() {
            return Err(Error::DimensionMismatch(format!(
                "state has W {}x{}, H {}x{}; expected K={}, d={}, N={}",
                self.w.rows(),
                self.w.cols(),
                self.h.rows(),
                self.h.cols(),
                hp.k,
                hp.d,
                hp.n_total()
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn num_samples(&self) -> usize {
        self.h.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.h.is_finite() && self.b.iter().all(|x| x.is_finite())
    }

    /// `‖W‖²_F`.
    pub fn rho(&self) -> T {
        self.w.frobenius_sq()
    }

    /// Largest absolute entry over all three blocks.
    pub fn max_abs(&self) -> T {
        let b = self.b.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        self.w.max_abs().max(self.h.max_abs()).max(b)
    }
}

/// Decision scores, K×N. Entry `(j, i)` is `w_jᵀh_i − b_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<T>(pub Mat<T>);

impl<T> Deref for ScoreMatrix<T> {
    type Target = Mat<T>;
    fn deref(&self) -> &Mat<T> {
        &self.0
    }
}

impl<T: Real> ScoreMatrix<T> {
    pub fn column(&self, i: usize) -> Vec<T> {
        self.0.column(i)
    }
}

/// `Z = W·H − b·1ᵀ`.
pub fn decision_scores<T: Real>(state: &ModelState<T>) -> Result<ScoreMatrix<T>> {
    state.check_dims()?;
    let mut z = state.w.matmul(&state.h);
    for (j, &bj) in state.b.iter().enumerate() {
        for x in z.row_mut(j) {
            *x = *x - bj;
        }
    }
    Ok(ScoreMatrix(z))
}

/// `W·H`, the scores with the bias left out.
pub fn raw_scores<T: Real>(state: &ModelState<T>) -> Result<ScoreMatrix<T>> {
    state.check_dims()?;
    Ok(ScoreMatrix(state.w.matmul(&state.h)))
}

/// Score of a single sample column against a single class, without materializing `Z`.
pub fn score_entry<T: Real>(state: &ModelState<T>, class: usize, sample: usize) -> T {
    dot(state.w.row(class), &state.h.column(sample)) - state.b[class]
}

/// Seed and bias offset for [`init_state`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub seed: u64,
    /// Added to every bias after the base draw.
    pub bias_mean_offset: f64,
    /// Remove the mean of the base bias draw before the offset is added, so
    /// `mean(b)` equals `bias_mean_offset` exactly.
    #[serde(default)]
    pub center_bias: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            bias_mean_offset: 0.0,
            center_bias: false,
        }
    }
}

/// Random initial state.
///
/// `W` is Kaiming-uniform with bound `√(6/d)`, `b` is uniform on `±1/√d`
/// (optionally recentered to zero mean) then shifted by `bias_mean_offset`, and `H` is Gaussian with standard
/// deviation `1/√d`. Draw order is W (row-major), b, H (row-major).
pub fn init_state<T: Real>(hp: &HyperParams<T>, cfg: &InitConfig) -> ModelState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = hp.d as f64;
    let w_bound = (6.0 / d).sqrt();
    let b_bound = 1.0 / d.sqrt();
    let h_dist = Normal::new(0.0, 1.0 / d.sqrt()).expect("positive std");

    let w = Mat::from_fn(hp.k, hp.d, |_, _| T::lit(rng.random_range(-w_bound..=w_bound)));
    let mut base: Vec<f64> = (0..hp.k).map(|_| rng.random_range(-b_bound..=b_bound)).collect();
    if cfg.center_bias {
        let mean = base.iter().sum::<f64>() / hp.k as f64;
        base.iter_mut().for_each(|x| *x -= mean);
    }
    let b = base.iter().map(|&x| T::lit(x + cfg.bias_mean_offset)).collect();
    let h = Mat::from_fn(hp.d, hp.n_total(), |_, _| T::lit(h_dist.sample(&mut rng)));
    ModelState { w, h, b }
}
