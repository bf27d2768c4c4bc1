//! Neural-collapse laboratory for the layer-peeled (unconstrained-features)
//! classifier with a bias term.
//!
//! The model holds a classifier `W` (K×d), free last-layer features `H`
//! (d×N, class-major) and a bias `b`. Everything numeric is generic over
//! [`Real`] (`f32` or `f64`); the aliases below fix `f64`, which is what the
//! CLI and experiment driver use.

pub mod bias;
pub mod error;
pub mod etf;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod scalar;
pub mod stable;

pub use bias::{alpha_residual, beta1, beta2, separation_holds, solve_bias, BiasProblem};
pub use error::{Error, Result};
pub use etf::{analytic_minimizer, optimal_rho_bias, simplex_etf, EtfSpec, ReducedOptimum};
pub use linalg::Mat;
pub use losses::{grad_objective, loss_value, objective, objective_and_grad, Gradient, LossKind};
pub use metrics::{metrics_report, MetricsOptions, MetricsReport};
pub use model::{decision_scores, init_state, HyperParams, InitConfig, Labels, ModelState, ScoreMatrix};
pub use optimizer::{lr_at, train, train_observed, Method, Outcome, Schedule, TrainConfig, Trajectory};
pub use scalar::Real;

pub type Matrix = Mat<f64>;
pub type Hyper = HyperParams<f64>;
pub type State = ModelState<f64>;
pub type Scores = ScoreMatrix<f64>;
pub type Grad = Gradient<f64>;
pub type Bias = BiasProblem<f64>;
pub type Config = TrainConfig<f64>;
pub type Run = Trajectory<f64>;
pub type Report = MetricsReport<f64>;

pub type Matrix32 = Mat<f32>;
pub type Hyper32 = HyperParams<f32>;
pub type State32 = ModelState<f32>;
