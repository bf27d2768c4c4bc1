//! Collapse and feature-quality metrics.
//!
//! * NC1: `trace(Σ_W Σ_B†)/K`, within-class scatter against the pseudo-inverse
//!   of between-class scatter.
//! * NC2: distance of the normalized classifier Gram from the normalized
//!   simplex frame `(I − 11ᵀ/K)/√(K−1)`.
//! * NC3: the same distance for `W·H̃`, `H̃` holding centered class means.
//! * Accuracy, uniform (single global threshold) accuracy, compactness and
//!   distinctiveness of features, and positive/negative score moments.
//!
//! Percent-valued metrics are in `[0, 100]`.

use serde::{Deserialize, Serialize};

use crate::bias::{alpha_residual, BiasProblem};
use crate::error::{Error, Result};
use crate::linalg::{centering_matrix, dot, norm, sym_eigen, Mat};
use crate::model::{decision_scores, raw_scores, HyperParams, Labels, ModelState, ScoreMatrix};
use crate::scalar::Real;

/// Relative cutoff below which singular values of `Σ_B` are treated as zero.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Default number of thresholds swept by [`uniform_accuracy`].
pub const DEFAULT_THRESHOLDS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcMetrics<T> {
    pub nc1: T,
    pub nc2: T,
    pub nc3: T,
}

fn check_labels<T: Real>(h: &Mat<T>, labels: &Labels, k: usize) -> Result<Vec<usize>> {
    if labels.len() != h.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature columns but {} labels",
            h.cols(),
            labels.len()
        )));
    }
    if labels.num_classes() != k {
        return Err(Error::DimensionMismatch(format!(
            "labels span {} classes, expected {}",
            labels.num_classes(),
            k
        )));
    }
    if k < 2 {
        return Err(Error::Degenerate("at least two classes are required".into()));
    }
    let counts = labels.counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Degenerate(format!("class {} has no samples", empty + 1)));
    }
    Ok(counts)
}

/// Class means as a d×K matrix, and the global mean over all samples.
pub fn class_means<T: Real>(h: &Mat<T>, labels: &Labels) -> (Mat<T>, Vec<T>) {
    let (d, n) = h.shape();
    let k = labels.num_classes();
    let counts = labels.counts();
    let mut means = Mat::zeros(d, k);
    let mut global = vec![T::zero(); d];
    for i in 0..n {
        let c = labels.get(i);
        for p in 0..d {
            means[(p, c)] = means[(p, c)] + h[(p, i)];
            global[p] = global[p] + h[(p, i)];
        }
    }
    for c in 0..k {
        let inv = T::one() / T::of_usize(counts[c].max(1));
        for p in 0..d {
            means[(p, c)] = means[(p, c)] * inv;
        }
    }
    let inv_n = T::one() / T::of_usize(n.max(1));
    global.iter_mut().for_each(|x| *x = *x * inv_n);
    (means, global)
}

fn frame_distance<T: Real>(m: &Mat<T>) -> T {
    let k = m.rows();
    let target = centering_matrix::<T>(k).scale(T::one() / T::of_usize(k - 1).sqrt());
    let norm = m.frobenius();
    let normalized = if norm > T::zero() { m.scale(T::one() / norm) } else { Mat::zeros(k, k) };
    (&normalized - &target).frobenius()
}

/// NC1, NC2 and NC3 for classifier `w` (K×d) and features `h` (d×N).
///
/// With `centered_classifier` the classifier rows have their mean removed
/// before NC2 and NC3 are formed; otherwise the raw `W` is used.
pub fn nc_metrics<T: Real>(w: &Mat<T>, h: &Mat<T>, labels: &Labels, centered_classifier: bool) -> Result<NcMetrics<T>> {
    let (k, d) = w.shape();
    if h.rows() != d {
        return Err(Error::DimensionMismatch(format!("W has {d} columns but H has {} rows", h.rows())));
    }
    check_labels(h, labels, k)?;
    let n = h.cols();
    let (means, global) = class_means(h, labels);
    let centered_means = Mat::from_fn(d, k, |p, c| means[(p, c)] - global[p]);

    // Σ_B = M·Mᵀ/K shares its nonzero spectrum with the K×K Gram Mᵀ·M/K.
    let gram = centered_means.t_matmul(&centered_means);
    let (vals, vecs) = sym_eigen(&gram);
    let top = vals.iter().copied().fold(T::zero(), T::max);
    let within: Vec<Vec<T>> = (0..n)
        .map(|i| (0..d).map(|p| h[(p, i)] - means[(p, labels.get(i))]).collect())
        .collect();
    let within_zero = within.iter().all(|v| v.iter().all(|&x| x == T::zero()));
    let nc1 = if top <= T::zero() {
        if within_zero {
            T::zero()
        } else {
            T::infinity()
        }
    } else {
        let cutoff = T::lit(PINV_RELATIVE_CUTOFF) * top;
        let inv_n = T::one() / T::of_usize(n);
        let kf = T::of_usize(k);
        let mut trace = T::zero();
        for (idx, &lambda) in vals.iter().enumerate() {
            if lambda <= cutoff {
                continue;
            }
            // Unit eigenvector of Σ_B with eigenvalue λ/K.
            let scale = T::one() / lambda.sqrt();
            let u: Vec<T> = (0..d)
                .map(|p| (0..k).map(|c| centered_means[(p, c)] * vecs[(c, idx)]).sum::<T>() * scale)
                .collect();
            let quad: T = within.iter().map(|v| dot(&u, v).powi(2)).sum::<T>() * inv_n;
            trace = trace + kf / lambda * quad;
        }
        trace / kf
    };

    let w_used = if centered_classifier {
        let mean: Vec<T> = (0..d)
            .map(|p| w.column(p).iter().copied().sum::<T>() / T::of_usize(k))
            .collect();
        Mat::from_fn(k, d, |j, p| w[(j, p)] - mean[p])
    } else {
        w.clone()
    };
    let nc2 = frame_distance(&w_used.matmul_t(&w_used));
    let nc3 = frame_distance(&w_used.matmul(&centered_means));
    Ok(NcMetrics { nc1, nc2, nc3 })
}

fn check_scores<T: Real>(z: &ScoreMatrix<T>, labels: &Labels) -> Result<()> {
    if labels.len() != z.cols() || labels.num_classes() != z.rows() {
        return Err(Error::DimensionMismatch(format!(
            "scores are {}x{} but labels cover {} samples over {} classes",
            z.rows(),
            z.cols(),
            labels.len(),
            labels.num_classes()
        )));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the smallest index.
fn argmax<T: Real>(z: &ScoreMatrix<T>, i: usize) -> usize {
    let mut best = 0;
    for j in 1..z.rows() {
        if z[(j, i)] > z[(best, i)] {
            best = j;
        }
    }
    best
}

/// Percentage of samples whose own class wins the argmax.
pub fn accuracy<T: Real>(z: &ScoreMatrix<T>, labels: &Labels) -> Result<T> {
    check_scores(z, labels)?;
    if labels.is_empty() {
        return Ok(T::zero());
    }
    let correct = (0..z.cols()).filter(|&i| argmax(z, i) == labels.get(i)).count();
    Ok(T::lit(100.0) * T::of_usize(correct) / T::of_usize(z.cols()))
}

/// `(positive score, largest negative score)` per sample.
fn pos_and_max_neg<T: Real>(z: &ScoreMatrix<T>, labels: &Labels) -> Vec<(T, T)> {
    (0..z.cols())
        .map(|i| {
            let c = labels.get(i);
            let neg = (0..z.rows())
                .filter(|&j| j != c)
                .map(|j| z[(j, i)])
                .fold(T::neg_infinity(), T::max);
            (z[(c, i)], neg)
        })
        .collect()
}

/// Best percentage of samples separated by one global threshold `t`
/// (`positive > t ≥ every negative`), over `n_thresholds` evenly spaced
/// values between the smallest positive and largest negative score.
pub fn uniform_accuracy<T: Real>(z: &ScoreMatrix<T>, labels: &Labels, n_thresholds: usize) -> Result<T> {
    check_scores(z, labels)?;
    if n_thresholds == 0 {
        return Err(Error::Config("n_thresholds must be >= 1".into()));
    }
    if labels.is_empty() {
        return Ok(T::zero());
    }
    let pairs = pos_and_max_neg(z, labels);
    let pos_min = pairs.iter().map(|p| p.0).fold(T::infinity(), T::min);
    let neg_max = pairs.iter().map(|p| p.1).fold(T::neg_infinity(), T::max);
    let hundred = T::lit(100.0);
    if pos_min > neg_max {
        return Ok(hundred);
    }
    let step = if n_thresholds > 1 {
        (neg_max - pos_min) / T::of_usize(n_thresholds - 1)
    } else {
        T::zero()
    };
    let mut best = 0;
    for s in 0..n_thresholds {
        let t = if s + 1 == n_thresholds && n_thresholds > 1 {
            neg_max
        } else {
            pos_min + step * T::of_usize(s)
        };
        let count = pairs.iter().filter(|&&(p, q)| p > t && t >= q).count();
        best = best.max(count);
    }
    Ok(hundred * T::of_usize(best) / T::of_usize(pairs.len()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureProperties<T> {
    /// Compactness, percent.
    pub e_com: T,
    /// Distinctiveness, percent.
    pub e_dis: T,
    /// Cosine pairs dropped because one of the vectors had zero norm.
    pub skipped_pairs: usize,
}

/// Sum of unit vectors per class, and the number of nonzero vectors used.
fn unit_sums<T: Real>(vectors: &[Vec<T>], labels: &Labels) -> (Vec<Vec<T>>, Vec<usize>) {
    let k = labels.num_classes();
    let d = vectors.first().map_or(0, Vec::len);
    let mut sums = vec![vec![T::zero(); d]; k];
    let mut used = vec![0; k];
    for (i, v) in vectors.iter().enumerate() {
        let len = norm(v);
        if len == T::zero() {
            continue;
        }
        let c = labels.get(i);
        used[c] += 1;
        for (s, &x) in sums[c].iter_mut().zip(v) {
            *s = *s + x / len;
        }
    }
    (sums, used)
}

/// Feature compactness and distinctiveness.
///
/// Mean pairwise cosines are computed as `‖Σ uᵢ‖²/m²` (within class) and
/// `⟨Σ uᵢ, Σ u′ⱼ⟩/(m·m′)` (across classes) on unit vectors, which equals the
/// double sum over pairs including self-pairs.
pub fn feature_properties<T: Real>(h: &Mat<T>, labels: &Labels) -> Result<FeatureProperties<T>> {
    let k = labels.num_classes();
    let counts = check_labels(h, labels, k)?;
    let (d, n) = h.shape();
    let (_, global) = class_means(h, labels);
    let half = T::lit(0.5);
    let hundred = T::lit(100.0);

    let centered: Vec<Vec<T>> = (0..n).map(|i| (0..d).map(|p| h[(p, i)] - global[p]).collect()).collect();
    let (csums, cused) = unit_sums(&centered, labels);
    let mut skipped = 0;
    let mut com_total = T::zero();
    let mut com_classes = 0;
    for c in 0..k {
        skipped += counts[c] * counts[c] - cused[c] * cused[c];
        if cused[c] == 0 {
            continue;
        }
        let m = T::of_usize(cused[c]);
        com_total = com_total + dot(&csums[c], &csums[c]) / (m * m);
        com_classes += 1;
    }
    if com_classes == 0 {
        return Err(Error::Degenerate("every compactness pair involves a zero vector".into()));
    }
    let e_com = half * (com_total / T::of_usize(com_classes) + T::one()) * hundred;

    let raw: Vec<Vec<T>> = (0..n).map(|i| h.column(i)).collect();
    let (rsums, rused) = unit_sums(&raw, labels);
    let mut dis_total = T::zero();
    let mut dis_pairs = 0;
    for c in 0..k {
        for c2 in 0..k {
            if c == c2 {
                continue;
            }
            skipped += counts[c] * counts[c2] - rused[c] * rused[c2];
            if rused[c] == 0 || rused[c2] == 0 {
                continue;
            }
            let denom = T::of_usize(rused[c]) * T::of_usize(rused[c2]);
            dis_total = dis_total + dot(&rsums[c], &rsums[c2]) / denom;
            dis_pairs += 1;
        }
    }
    if dis_pairs == 0 {
        return Err(Error::Degenerate("every distinctiveness pair involves a zero vector".into()));
    }
    let e_dis = half * (T::one() - dis_total / T::of_usize(dis_pairs)) * hundred;
    Ok(FeatureProperties {
        e_com,
        e_dis,
        skipped_pairs: skipped,
    })
}

/// Population moments of positive (own-class) and negative scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats<T> {
    pub pos_mean: T,
    pub pos_std: T,
    pub neg_mean: T,
    pub neg_std: T,
}

fn mean_std<T: Real>(xs: &[T]) -> (T, T) {
    if xs.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Moments of `{z_label(i), i}` and `{z_j,i : j ≠ label(i)}`; pass bias-free scores.
pub fn score_stats<T: Real>(z: &ScoreMatrix<T>, labels: &Labels) -> Result<ScoreStats<T>> {
    check_scores(z, labels)?;
    let mut pos = Vec::with_capacity(z.cols());
    let mut neg = Vec::with_capacity(z.cols() * z.rows().saturating_sub(1));
    for i in 0..z.cols() {
        let c = labels.get(i);
        for j in 0..z.rows() {
            if j == c {
                pos.push(z[(j, i)]);
            } else {
                neg.push(z[(j, i)]);
            }
        }
    }
    let (pos_mean, pos_std) = mean_std(&pos);
    let (neg_mean, neg_std) = mean_std(&neg);
    Ok(ScoreStats {
        pos_mean,
        pos_std,
        neg_mean,
        neg_std,
    })
}

/// Whether the argmax classifier and the nearest-class-mean rule agree on every sample.
pub fn nearest_center_agreement<T: Real>(state: &ModelState<T>, labels: &Labels) -> Result<bool> {
    check_labels(&state.h, labels, state.num_classes())?;
    let z = decision_scores(state)?;
    let (means, _) = class_means(&state.h, labels);
    let (d, k) = means.shape();
    for i in 0..state.num_samples() {
        let mut nearest = 0;
        let mut best = T::infinity();
        for c in 0..k {
            let dist: T = (0..d).map(|p| (state.h[(p, i)] - means[(p, c)]).powi(2)).sum();
            if dist < best {
                best = dist;
                nearest = c;
            }
        }
        if argmax(&z, i) != nearest {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `‖WᵀW − (λ_H/λ_W)·HHᵀ‖_F / ‖WᵀW‖_F`, zero at every critical point.
pub fn coupling_residual<T: Real>(state: &ModelState<T>, hp: &HyperParams<T>) -> T {
    let wtw = state.w.t_matmul(&state.w);
    let hht = state.h.matmul_t(&state.h).scale(hp.lambda_h / hp.lambda_w);
    (&wtw - &hht).frobenius() / wtw.frobenius()
}

/// Parameters of the bias-equation residual reported alongside the metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams<T> {
    /// Effective per-class sample count.
    pub n: T,
    pub lambda_w: T,
    pub lambda_h: T,
    pub lambda_b: T,
}

impl<T: Real> AlphaParams<T> {
    pub fn from_hyper(hp: &HyperParams<T>) -> Self {
        Self {
            n: T::of_usize(hp.n),
            lambda_w: hp.lambda_w,
            lambda_h: hp.lambda_h,
            lambda_b: hp.lambda_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub centered_classifier: bool,
    pub n_thresholds: usize,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            centered_classifier: true,
            n_thresholds: DEFAULT_THRESHOLDS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub nc1: T,
    pub nc2: T,
    pub nc3: T,
    pub accuracy: T,
    pub uniform_accuracy: T,
    pub e_com: T,
    pub e_dis: T,
    pub score_stats: ScoreStats<T>,
    /// `‖W‖²_F`.
    pub rho: T,
    pub bias_mean: T,
    pub bias_std: T,
    /// Bias-equation residual evaluated at `bias_mean` and `rho`.
    pub alpha_at_bias: T,
}

/// Every metric for one state.
pub fn metrics_report<T: Real>(
    state: &ModelState<T>,
    labels: &Labels,
    alpha: &AlphaParams<T>,
    opts: &MetricsOptions,
) -> Result<MetricsReport<T>> {
    let nc = nc_metrics(&state.w, &state.h, labels, opts.centered_classifier)?;
    let z = decision_scores(state)?;
    let accuracy = accuracy(&z, labels)?;
    let uniform_accuracy = uniform_accuracy(&z, labels, opts.n_thresholds)?;
    let features = feature_properties(&state.h, labels)?;
    let stats = score_stats(&raw_scores(state)?, labels)?;
    let rho = state.rho();
    let (bias_mean, bias_std) = mean_std(&state.b);
    let prob = BiasProblem::new(
        state.num_classes(),
        alpha.n,
        alpha.lambda_w,
        alpha.lambda_h,
        alpha.lambda_b,
        rho,
    )?;
    Ok(MetricsReport {
        nc1: nc.nc1,
        nc2: nc.nc2,
        nc3: nc.nc3,
        accuracy,
        uniform_accuracy,
        e_com: features.e_com,
        e_dis: features.e_dis,
        score_stats: stats,
        rho,
        bias_mean,
        bias_std,
        alpha_at_bias: alpha_residual(bias_mean, &prob),
    })
}
