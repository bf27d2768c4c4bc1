//! Deterministic first-order training of the free-variable model.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{minibatch_objective_and_grad, objective_and_grad, Gradient, LossKind};
use crate::metrics::MetricsReport;
use crate::model::{HyperParams, ModelState};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method<T> {
    Gd,
    /// Heavy-ball momentum: `v ← βv + g`, `x ← x − ηv`.
    Momentum { beta: T },
    /// Adam-style moments with bias correction; weight decay stays in the gradient.
    AdaptiveMoments { beta1: T, beta2: T, eps: T },
}

impl<T: Real> Method<T> {
    pub fn adaptive_default() -> Self {
        Method::AdaptiveMoments {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule<T> {
    Constant,
    /// `lr0 · gamma^⌊t/period⌋`.
    Step { period: usize, gamma: T },
    /// Half-cosine from `lr0` down to `lr_min` over `total` steps, then flat.
    Cosine { total: usize, lr_min: T },
}

/// Learning rate at step `t`.
pub fn lr_at<T: Real>(schedule: &Schedule<T>, lr0: T, t: usize) -> T {
    match *schedule {
        Schedule::Constant => lr0,
        Schedule::Step { period, gamma } => {
            let exponent = (t / period.max(1)) as i32;
            lr0 * gamma.powi(exponent)
        }
        Schedule::Cosine { total, lr_min } => {
            if total == 0 || t >= total {
                return lr_min;
            }
            let frac = T::of_usize(t) / T::of_usize(total);
            let cos = (T::PI() * frac).cos();
            lr_min + (lr0 - lr_min) * (T::one() + cos) * T::lit(0.5)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub method: Method<T>,
    pub lr0: T,
    pub schedule: Schedule<T>,
    pub steps: usize,
    /// Columns sampled per step; `None` is full batch.
    pub batch_size: Option<usize>,
    /// Stop once the full gradient's ∞-norm drops below this.
    pub grad_tol: T,
    /// Seed for minibatch sampling.
    pub seed: u64,
    pub record_every: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            method: Method::Gd,
            lr0: T::lit(0.5),
            schedule: Schedule::Constant,
            steps: 200_000,
            batch_size: None,
            grad_tol: T::lit(1e-8),
            seed: 0,
            record_every: 1000,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self, n_total: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > T::zero()) || !self.lr0.is_finite() {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(self.grad_tol >= T::zero()) {
            return bad("grad_tol must be >= 0".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if let Some(bs) = self.batch_size {
            if bs == 0 || bs > n_total {
                return bad(format!("batch_size must lie in [1, {n_total}], got {bs}"));
            }
        }
        match self.method {
            Method::Gd => {}
            Method::Momentum { beta } => {
                if !(beta >= T::zero() && beta < T::one()) {
                    return bad("momentum beta must lie in [0, 1)".into());
                }
            }
            Method::AdaptiveMoments { beta1, beta2, eps } => {
                let unit = |x: T| x >= T::zero() && x < T::one();
                if !unit(beta1) || !unit(beta2) || !(eps > T::zero()) {
                    return bad("adaptive moments need beta1, beta2 in [0, 1) and eps > 0".into());
                }
            }
        }
        match self.schedule {
            Schedule::Constant => {}
            Schedule::Step { period, gamma } => {
                if period == 0 || !(gamma > T::zero() && gamma < T::one()) {
                    return bad("step schedule needs period >= 1 and gamma in (0, 1)".into());
                }
            }
            Schedule::Cosine { lr_min, .. } => {
                if !(lr_min >= T::zero()) {
                    return bad("cosine lr_min must be >= 0".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub step: usize,
    pub objective: T,
    pub grad_inf_norm: T,
    pub metrics: Option<MetricsReport<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Gradient ∞-norm fell below `grad_tol`.
    Converged,
    /// Ran the configured number of steps.
    StepLimit,
    /// A step produced a non-finite value; the last finite state is kept.
    Diverged { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub records: Vec<Record<T>>,
    pub final_state: ModelState<T>,
    pub outcome: Outcome,
    /// Updates applied to reach `final_state`.
    pub steps_taken: usize,
}

impl<T> Trajectory<T> {
    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }

    pub fn last_record(&self) -> Option<&Record<T>> {
        self.records.last()
    }
}

/// Per-run optimizer memory, laid out as W, then H, then b.
enum Memory<T> {
    None,
    Velocity(Vec<T>),
    Moments { m: Vec<T>, v: Vec<T> },
}

fn flat_grad<T: Real>(g: &Gradient<T>) -> impl Iterator<Item = T> + '_ {
    g.dw.as_slice()
        .iter()
        .chain(g.dh.as_slice())
        .chain(&g.db)
        .copied()
}

fn apply_update<T: Real>(
    state: &mut ModelState<T>,
    grad: &Gradient<T>,
    method: &Method<T>,
    memory: &mut Memory<T>,
    lr: T,
    t: usize,
) {
    let params = state
        .w
        .as_mut_slice()
        .iter_mut()
        .chain(state.h.as_mut_slice().iter_mut())
        .chain(state.b.iter_mut());
    match (method, memory) {
        (Method::Gd, _) => {
            for (x, g) in params.zip(flat_grad(grad)) {
                *x = *x - lr * g;
            }
        }
        (Method::Momentum { beta }, Memory::Velocity(vel)) => {
            for ((x, g), v) in params.zip(flat_grad(grad)).zip(vel.iter_mut()) {
                *v = *beta * *v + g;
                *x = *x - lr * *v;
            }
        }
        (Method::AdaptiveMoments { beta1, beta2, eps }, Memory::Moments { m, v }) => {
            let step = (t + 1) as i32;
            let c1 = T::one() - beta1.powi(step);
            let c2 = T::one() - beta2.powi(step);
            for (((x, g), mi), vi) in params.zip(flat_grad(grad)).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = *beta1 * *mi + (T::one() - *beta1) * g;
                *vi = *beta2 * *vi + (T::one() - *beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x = *x - lr * m_hat / (v_hat.sqrt() + *eps);
            }
        }
        _ => unreachable!("optimizer memory matches its method"),
    }
}

/// Trains from `state0`; see [`train_observed`].
pub fn train<T: Real>(
    state0: &ModelState<T>,
    hp: &HyperParams<T>,
    kind: LossKind,
    cfg: &TrainConfig<T>,
) -> Result<Trajectory<T>> {
    train_observed(state0, hp, kind, cfg, |_, _| Ok(None))
}

/// Trains from `state0`, calling `observe` at every recorded step so the
/// caller can attach metrics to the record.
///
/// A record is written at step 0, every `record_every` steps, and at the
/// final step. The loop stops early once the full-gradient ∞-norm is below
/// `grad_tol`, and aborts (keeping the last finite state) on divergence.
pub fn train_observed<T: Real, F>(
    state0: &ModelState<T>,
    hp: &HyperParams<T>,
    kind: LossKind,
    cfg: &TrainConfig<T>,
    mut observe: F,
) -> Result<Trajectory<T>>
where
    F: FnMut(usize, &ModelState<T>) -> Result<Option<MetricsReport<T>>>,
{
    hp.validate()?;
    state0.check_against(hp)?;
    kind.check_classes(hp.k)?;
    cfg.validate(hp.n_total())?;

    let total = state0.w.as_slice().len() + state0.h.as_slice().len() + state0.b.len();
    let mut memory = match cfg.method {
        Method::Gd => Memory::None,
        Method::Momentum { .. } => Memory::Velocity(vec![T::zero(); total]),
        Method::AdaptiveMoments { .. } => Memory::Moments {
            m: vec![T::zero(); total],
            v: vec![T::zero(); total],
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = state0.clone();
    let mut records = Vec::new();
    let mut outcome = Outcome::StepLimit;
    let mut steps_taken = 0;

    for t in 0..=cfg.steps {
        let (value, grad) = objective_and_grad(&state, hp, kind)?;
        let gnorm = grad.inf_norm();
        if !value.is_finite() || !gnorm.is_finite() {
            records.push(Record {
                step: t,
                objective: value,
                grad_inf_norm: gnorm,
                metrics: None,
            });
            outcome = Outcome::Diverged { step: t };
            break;
        }
        let converged = gnorm < cfg.grad_tol;
        let last = converged || t == cfg.steps;
        if t % cfg.record_every == 0 || last {
            records.push(Record {
                step: t,
                objective: value,
                grad_inf_norm: gnorm,
                metrics: observe(t, &state)?,
            });
        }
        if converged {
            outcome = Outcome::Converged;
            break;
        }
        if last {
            break;
        }

        let lr = lr_at(&cfg.schedule, cfg.lr0, t);
        let mut next = state.clone();
        match cfg.batch_size {
            None => apply_update(&mut next, &grad, &cfg.method, &mut memory, lr, t),
            Some(bs) => {
                let mut cols = sample(&mut rng, hp.n_total(), bs).into_vec();
                cols.sort_unstable();
                let (_, mg) = minibatch_objective_and_grad(&state, hp, kind, &cols)?;
                apply_update(&mut next, &mg, &cfg.method, &mut memory, lr, t);
            }
        }
        if !next.is_finite() {
            outcome = Outcome::Diverged { step: t + 1 };
            records.push(Record {
                step: t + 1,
                objective: T::nan(),
                grad_inf_norm: T::nan(),
                metrics: None,
            });
            break;
        }
        state = next;
        steps_taken = t + 1;
    }

    Ok(Trajectory {
        records,
        final_state: state,
        outcome,
        steps_taken,
    })
}
