//! CE, BCE and naive-BCE losses, the weight-decayed objective over the free
//! variables, and its analytic gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{HyperParams, Labels, ModelState, ScoreMatrix};
use crate::scalar::Real;
use crate::stable::{log_sum_exp, sigmoid, softmax_into, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy.
    Ce,
    /// Sum of K one-vs-rest sigmoid cross-entropies.
    Bce,
    /// Single-sigmoid loss on the score difference; two classes only.
    NaiveBce,
}

impl LossKind {
    pub fn check_classes(self, k: usize) -> Result<()> {
        match self {
            LossKind::NaiveBce if k != 2 => Err(Error::NaiveBceNeedsTwoClasses(k)),
            _ => Ok(()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Bce => "bce",
            LossKind::NaiveBce => "naive_bce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "bce" => Ok(LossKind::Bce),
            "naive_bce" | "naive-bce" | "nbce" => Ok(LossKind::NaiveBce),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Per-sample loss for score column `z` of a sample in class `class` (zero-based).
pub fn loss_value<T: Real>(kind: LossKind, z: &[T], class: usize) -> Result<T> {
    let k = z.len();
    kind.check_classes(k)?;
    if class >= k {
        return Err(Error::LabelOutOfRange { label: class + 1, k });
    }
    Ok(loss_unchecked(kind, z, class))
}

fn loss_unchecked<T: Real>(kind: LossKind, z: &[T], class: usize) -> T {
    match kind {
        LossKind::Ce => {
            let zk = z[class];
            let top = z.iter().copied().fold(T::neg_infinity(), T::max);
            if zk == top {
                // log1p keeps precision when the margin is large.
                let rest: T = z
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != class)
                    .map(|(_, &zl)| (zl - zk).exp())
                    .sum();
                rest.ln_1p()
            } else {
                log_sum_exp(z) - zk
            }
        }
        LossKind::Bce => z
            .iter()
            .enumerate()
            .map(|(j, &zj)| if j == class { softplus(-zj) } else { softplus(zj) })
            .sum(),
        LossKind::NaiveBce => {
            // Class 0 pays softplus(z₀ − z₁).
            let diff = z[0] - z[1];
            if class == 0 {
                softplus(diff)
            } else {
                softplus(-diff)
            }
        }
    }
}

/// `∂L/∂z` for one column, written into `out`.
fn score_gradient_into<T: Real>(kind: LossKind, z: &[T], class: usize, out: &mut [T]) {
    match kind {
        LossKind::Ce => {
            softmax_into(z, out);
            out[class] = out[class] - T::one();
        }
        LossKind::Bce => {
            for (o, &zj) in out.iter_mut().zip(z) {
                *o = sigmoid(zj);
            }
            out[class] = out[class] - T::one();
        }
        LossKind::NaiveBce => {
            let diff = z[0] - z[1];
            let g = if class == 0 { sigmoid(diff) } else { -sigmoid(-diff) };
            out[0] = g;
            out[1] = -g;
        }
    }
}

/// Gradient of the per-sample loss with respect to every score: column `i`
/// is `∂L(z_i)/∂z_i`.
pub fn per_score_gradient<T: Real>(kind: LossKind, z: &ScoreMatrix<T>, labels: &Labels) -> Result<Mat<T>> {
    let (k, n) = z.shape();
    kind.check_classes(k)?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} score columns but {} labels",
            n,
            labels.len()
        )));
    }
    if labels.num_classes() != k {
        return Err(Error::DimensionMismatch(format!(
            "labels span {} classes but scores have {} rows",
            labels.num_classes(),
            k
        )));
    }
    let mut g = Mat::zeros(k, n);
    let mut col = vec![T::zero(); k];
    let mut gcol = vec![T::zero(); k];
    for i in 0..n {
        for (j, c) in col.iter_mut().enumerate() {
            *c = z[(j, i)];
        }
        score_gradient_into(kind, &col, labels.get(i), &mut gcol);
        g.set_column(i, &gcol);
    }
    Ok(g)
}

/// Gradient of the objective with respect to `(W, H, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T> {
    pub dw: Mat<T>,
    pub dh: Mat<T>,
    pub db: Vec<T>,
}

impl<T: Real> Gradient<T> {
    pub fn inf_norm(&self) -> T {
        let b = self.db.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        self.dw.max_abs().max(self.dh.max_abs()).max(b)
    }

    pub fn is_finite(&self) -> bool {
        self.dw.is_finite() && self.dh.is_finite() && self.db.iter().all(|x| x.is_finite())
    }
}

fn regularizer<T: Real>(state: &ModelState<T>, hp: &HyperParams<T>) -> T {
    let half = T::lit(0.5);
    let b_sq: T = state.b.iter().map(|&x| x * x).sum();
    half * (hp.lambda_w * state.w.frobenius_sq() + hp.lambda_h * state.h.frobenius_sq() + hp.lambda_b * b_sq)
}

fn check_problem<T: Real>(state: &ModelState<T>, hp: &HyperParams<T>, kind: LossKind) -> Result<()> {
    state.check_against(hp)?;
    kind.check_classes(hp.k)
}

/// Mean per-sample loss plus `(λ_W/2)‖W‖² + (λ_H/2)‖H‖² + (λ_b/2)‖b‖²`,
/// with the class-major labelling implied by `hp`.
pub fn objective<T: Real>(state: &ModelState<T>, hp: &HyperParams<T>, kind: LossKind) -> Result<T> {
    check_problem(state, hp, kind)?;
    let labels = Labels::class_major(hp.k, hp.n);
    Ok(data_term(state, &labels, kind, None) + regularizer(state, hp))
}

/// Analytic gradient of [`objective`].
pub fn grad_objective<T: Real>(state: &ModelState<T>, hp: &HyperParams<T>, kind: LossKind) -> Result<Gradient<T>> {
    Ok(objective_and_grad(state, hp, kind)?.1)
}

/// Objective value and gradient in one pass.
pub fn objective_and_grad<T: Real>(
    state: &ModelState<T>,
    hp: &HyperParams<T>,
    kind: LossKind,
) -> Result<(T, Gradient<T>)> {
    check_problem(state, hp, kind)?;
    let labels = Labels::class_major(hp.k, hp.n);
    Ok(evaluate(state, &labels, hp, kind, None))
}

/// Objective and gradient where the loss term averages only over `columns`;
/// the weight decay still covers every variable.
pub fn minibatch_objective_and_grad<T: Real>(
    state: &ModelState<T>,
    hp: &HyperParams<T>,
    kind: LossKind,
    columns: &[usize],
) -> Result<(T, Gradient<T>)> {
    check_problem(state, hp, kind)?;
    if columns.is_empty() || columns.iter().any(|&c| c >= hp.n_total()) {
        return Err(Error::DimensionMismatch("minibatch column out of range or empty".into()));
    }
    let labels = Labels::class_major(hp.k, hp.n);
    Ok(evaluate(state, &labels, hp, kind, Some(columns)))
}

fn data_term<T: Real>(state: &ModelState<T>, labels: &Labels, kind: LossKind, columns: Option<&[usize]>) -> T {
    let k = state.num_classes();
    let all: Vec<usize>;
    let cols = match columns {
        Some(c) => c,
        None => {
            all = (0..state.num_samples()).collect();
            &all
        }
    };
    let mut z = vec![T::zero(); k];
    let mut total = T::zero();
    for &i in cols {
        let h = state.h.column(i);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = crate::linalg::dot(state.w.row(j), &h) - state.b[j];
        }
        total = total + loss_unchecked(kind, &z, labels.get(i));
    }
    total / T::of_usize(cols.len())
}

fn evaluate<T: Real>(
    state: &ModelState<T>,
    labels: &Labels,
    hp: &HyperParams<T>,
    kind: LossKind,
    columns: Option<&[usize]>,
) -> (T, Gradient<T>) {
    let (k, d) = state.w.shape();
    let n_all = state.num_samples();
    let cols: Vec<usize> = match columns {
        Some(c) => c.to_vec(),
        None => (0..n_all).collect(),
    };
    let m = cols.len();
    let inv_m = T::one() / T::of_usize(m);

    // Scores and per-score gradient over the selected columns.
    let h_sel = Mat::from_fn(d, m, |p, c| state.h[(p, cols[c])]);
    let mut z = state.w.matmul(&h_sel);
    for (j, &bj) in state.b.iter().enumerate() {
        for x in z.row_mut(j) {
            *x = *x - bj;
        }
    }
    let mut g = Mat::zeros(k, m);
    let mut zcol = vec![T::zero(); k];
    let mut gcol = vec![T::zero(); k];
    let mut loss = T::zero();
    for c in 0..m {
        for (j, zj) in zcol.iter_mut().enumerate() {
            *zj = z[(j, c)];
        }
        let class = labels.get(cols[c]);
        loss = loss + loss_unchecked(kind, &zcol, class);
        score_gradient_into(kind, &zcol, class, &mut gcol);
        g.set_column(c, &gcol);
    }
    let value = loss * inv_m + regularizer(state, hp);

    let mut dw = g.matmul_t(&h_sel).scale(inv_m);
    dw.axpy(hp.lambda_w, &state.w);

    let wg = state.w.t_matmul(&g);
    let mut dh = state.h.scale(hp.lambda_h);
    for (c, &col) in cols.iter().enumerate() {
        for p in 0..d {
            dh[(p, col)] = dh[(p, col)] + wg[(p, c)] * inv_m;
        }
    }

    let db = g
        .row_sums()
        .into_iter()
        .zip(&state.b)
        .map(|(s, &bj)| -s * inv_m + hp.lambda_b * bj)
        .collect();

    (value, Gradient { dw, dh, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_state, InitConfig};
    use std::f64::consts::LN_2;

    #[test]
    fn zero_score_losses() {
        assert!((loss_value(LossKind::Ce, &[0.0f64, 0.0], 0).unwrap() - LN_2).abs() < 1e-15);
        assert!((loss_value(LossKind::Bce, &[0.0f64, 0.0], 0).unwrap() - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn three_class_losses() {
        let z = [1.0f64, 0.0, 0.0];
        let ce = loss_value(LossKind::Ce, &z, 0).unwrap();
        let bce = loss_value(LossKind::Bce, &z, 0).unwrap();
        let ce_direct = (1.0 + 2.0 * (-1.0f64).exp()).ln();
        let bce_direct = (1.0 + (-1.0f64).exp()).ln() + 2.0 * LN_2;
        assert!((ce - ce_direct).abs() < 1e-15);
        assert!((bce - bce_direct).abs() < 1e-15);
        assert!((ce - 0.551445).abs() < 1e-6);
        assert!((bce - 1.699556).abs() < 1e-6);
    }

    #[test]
    fn naive_bce_rejects_more_than_two_classes() {
        assert!(matches!(
            loss_value(LossKind::NaiveBce, &[0.0f64, 0.0, 0.0], 0),
            Err(Error::NaiveBceNeedsTwoClasses(3))
        ));
        assert!(matches!(
            loss_value(LossKind::Ce, &[0.0f64, 0.0], 2),
            Err(Error::LabelOutOfRange { label: 3, k: 2 })
        ));
    }

    #[test]
    fn naive_bce_sign_convention() {
        // Class 0 pays softplus(z₀ − z₁), which equals CE as if labelled class 1.
        let z = [2.0f64, -0.5];
        let nb0 = loss_value(LossKind::NaiveBce, &z, 0).unwrap();
        assert!((nb0 - softplus(2.5)).abs() < 1e-15);
        assert!((nb0 - loss_value(LossKind::Ce, &z, 1).unwrap()).abs() < 1e-14);
        let nb1 = loss_value(LossKind::NaiveBce, &z, 1).unwrap();
        assert!((nb1 - loss_value(LossKind::Ce, &z, 0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let z = [800.0f64, -800.0, 0.0];
        for kind in [LossKind::Ce, LossKind::Bce] {
            for c in 0..3 {
                let v = loss_value(kind, &z, c).unwrap();
                assert!(v.is_finite() && v >= 0.0);
            }
        }
    }

    #[test]
    fn ce_is_shift_invariant_bce_is_not() {
        let z = [0.3f64, -1.2, 2.0, 0.7];
        let shifted: Vec<f64> = z.iter().map(|x| x + 1.0).collect();
        let a = loss_value(LossKind::Ce, &z, 1).unwrap();
        let b = loss_value(LossKind::Ce, &shifted, 1).unwrap();
        assert!((a - b).abs() < 1e-12);
        let a = loss_value(LossKind::Bce, &z, 1).unwrap();
        let b = loss_value(LossKind::Bce, &shifted, 1).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn per_score_gradient_examples() {
        let labels = Labels::class_major(2, 1);
        let zero = ScoreMatrix(Mat::from_rows(&[vec![0.0f64, 0.0], vec![0.0, 0.0]]));
        for kind in [LossKind::Ce, LossKind::Bce] {
            let g = per_score_gradient(kind, &zero, &labels).unwrap();
            assert_eq!(g.column(0), vec![-0.5, 0.5]);
        }
        let z = ScoreMatrix(Mat::from_rows(&[vec![2.0f64, 0.0], vec![-1.0, 0.0]]));
        let g = per_score_gradient(LossKind::Bce, &z, &labels).unwrap();
        assert!((g[(0, 0)] - (-0.119202922022118)).abs() < 1e-12);
        assert!((g[(1, 0)] - 0.268941421369995).abs() < 1e-12);
    }

    #[test]
    fn zero_state_objectives() {
        for k in 2..6 {
            let hp = HyperParams::new(k, 3, 2, 0.1, 0.2, 0.3).unwrap();
            let s = ModelState::zeros(&hp);
            let ce = objective(&s, &hp, LossKind::Ce).unwrap();
            let bce = objective(&s, &hp, LossKind::Bce).unwrap();
            assert!((ce - (k as f64).ln()).abs() < 1e-14);
            assert!((bce - k as f64 * LN_2).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_saddle_has_zero_gradient() {
        let hp = HyperParams::new(2, 3, 1, 1e-12, 1e-12, 0.0).unwrap();
        let mut hp0 = hp;
        hp0.lambda_w = 0.0;
        hp0.lambda_h = 0.0;
        let s = ModelState::zeros(&hp);
        // Evaluate with all decay removed; validation forbids zero λ, so go through `evaluate`.
        let labels = Labels::class_major(2, 1);
        let (_, g) = evaluate(&s, &labels, &hp0, LossKind::Ce, None);
        assert_eq!(g.inf_norm(), 0.0);
    }

    #[test]
    fn zero_features_leave_only_decay_on_w() {
        let hp = HyperParams::new(3, 4, 2, 0.7, 0.1, 0.2).unwrap();
        let mut s = init_state(&hp, &InitConfig { seed: 1, bias_mean_offset: 0.0, ..InitConfig::default() });
        s.h = Mat::zeros(4, 6);
        s.b = vec![0.0; 3];
        for kind in [LossKind::Ce, LossKind::Bce] {
            let g = grad_objective(&s, &hp, kind).unwrap();
            assert_eq!(g.dw, s.w.scale(0.7));
        }
    }

    #[test]
    fn ce_bias_gradient_sums_to_zero_without_decay() {
        let hp = HyperParams::new(5, 4, 3, 0.01, 0.01, 0.0).unwrap();
        let s = init_state(&hp, &InitConfig { seed: 9, bias_mean_offset: 2.0, ..InitConfig::default() });
        let g = grad_objective(&s, &hp, LossKind::Ce).unwrap();
        assert!(g.db.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn minibatch_over_all_columns_matches_full() {
        let hp = HyperParams::<f64>::new(3, 4, 2, 0.01, 0.02, 0.03).unwrap();
        let s = init_state(&hp, &InitConfig { seed: 4, bias_mean_offset: 0.0, ..InitConfig::default() });
        let all: Vec<usize> = (0..6).collect();
        let (v1, g1) = objective_and_grad(&s, &hp, LossKind::Bce).unwrap();
        let (v2, g2) = minibatch_objective_and_grad(&s, &hp, LossKind::Bce, &all).unwrap();
        assert!((v1 - v2).abs() < 1e-15);
        assert!((&g1.dw - &g2.dw).max_abs() < 1e-15);
        assert!((&g1.dh - &g2.dh).max_abs() < 1e-15);
    }
}
