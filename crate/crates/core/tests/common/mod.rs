//! Independent reference implementations used by the integration tests and
//! the acceptance runner. Nothing here calls the metric or gradient code it
//! checks.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nclab::losses::{objective, LossKind};
use nclab::{Hyper, Labels, Matrix, State};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_state(rng: &mut ChaCha8Rng, hp: &Hyper, scale: f64) -> State {
    let w = random_matrix(rng, hp.k, hp.d, scale);
    let h = random_matrix(rng, hp.d, hp.n_total(), scale);
    let b = (0..hp.k).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    State::new(w, h, b).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Labels {
    // Every class appears at least once.
    let mut classes: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        classes.swap(i, j);
    }
    Labels::new(classes, k).unwrap()
}

/// Random hyperparameters and state with K ≤ 6, d ≤ 8, n ≤ 5 (K = 2 for naive BCE).
pub fn grad_instance(seed: u64, kind: LossKind) -> (Hyper, State) {
    let mut r = rng(seed);
    let k = if kind == LossKind::NaiveBce { 2 } else { r.random_range(2..=6) };
    let d = r.random_range(1..=8);
    let n = r.random_range(1..=5);
    let lam = |r: &mut ChaCha8Rng| 10f64.powf(r.random_range(-4.0..-1.0));
    let hp = Hyper::new(k, d, n, lam(&mut r), lam(&mut r), lam(&mut r)).unwrap();
    let scale = r.random_range(0.3..3.0);
    let s = random_state(&mut r, &hp, scale);
    (hp, s)
}

pub struct MetricInstance {
    pub w: Matrix,
    pub h: Matrix,
    pub labels: Labels,
}

/// Small random classifier, labels and features with a class signal.
pub fn metric_instance(seed: u64) -> MetricInstance {
    let mut r = rng(seed);
    let k = r.random_range(2..=5);
    let d = r.random_range(k..=k + 4);
    let n = r.random_range(k..=4 * k);
    let labels = random_labels(&mut r, k, n);
    let w = random_matrix(&mut r, k, d, 1.0);
    // Mix a class signal into the features so Σ_B is well conditioned.
    let signal = random_matrix(&mut r, d, k, 2.0);
    let noise = random_matrix(&mut r, d, n, 0.5);
    let h = Matrix::from_fn(d, n, |p, i| signal[(p, labels.get(i))] + noise[(p, i)]);
    MetricInstance { w, h, labels }
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Random orthogonal d×d matrix.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    a.qr().q()
}

/// Gradient by Richardson-extrapolated central differences on every entry.
pub struct FdGradient {
    pub dw: Vec<f64>,
    pub dh: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn fd_gradient(state: &State, hp: &Hyper, kind: LossKind, step: f64) -> FdGradient {
    let f = |s: &State| objective(s, hp, kind).unwrap();
    let deriv = |set: &dyn Fn(&mut State, f64)| {
        let central = |h: f64| {
            let mut plus = state.clone();
            set(&mut plus, h);
            let mut minus = state.clone();
            set(&mut minus, -h);
            (f(&plus) - f(&minus)) / (2.0 * h)
        };
        (4.0 * central(step / 2.0) - central(step)) / 3.0
    };
    let dw = (0..hp.k * hp.d)
        .map(|idx| deriv(&|s: &mut State, h| s.w.as_mut_slice()[idx] += h))
        .collect();
    let dh = (0..hp.d * hp.n_total())
        .map(|idx| deriv(&|s: &mut State, h| s.h.as_mut_slice()[idx] += h))
        .collect();
    let db = (0..hp.k).map(|idx| deriv(&|s: &mut State, h| s.b[idx] += h)).collect();
    FdGradient { dw, dh, db }
}

/// Largest entrywise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

pub struct NcOracle {
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
}

/// NC metrics straight from the scatter-matrix definitions, with an
/// SVD-based pseudo-inverse of the d×d between-class scatter.
pub fn nc_oracle(w: &Matrix, h: &Matrix, labels: &Labels, centered: bool) -> NcOracle {
    let (k, d) = w.shape();
    let n = h.cols();
    let hn = to_na(h);
    let mut means = vec![DMatrix::<f64>::zeros(d, 1); k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let c = labels.get(i);
        means[c] += hn.column(i);
        counts[c] += 1;
    }
    for c in 0..k {
        means[c] /= counts[c] as f64;
    }
    let global = hn.column_sum() / n as f64;

    let mut sigma_w = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let v = hn.column(i) - &means[labels.get(i)];
        sigma_w += &v * v.transpose();
    }
    sigma_w /= n as f64;
    let mut sigma_b = DMatrix::<f64>::zeros(d, d);
    for m in &means {
        let v = m - &global;
        sigma_b += &v * v.transpose();
    }
    sigma_b /= k as f64;

    let svd = sigma_b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut pinv = DMatrix::<f64>::zeros(d, d);
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-10 * smax && s > 0.0 {
            pinv += vt.row(idx).transpose() * u.column(idx).transpose() / s;
        }
    }
    let nc1 = (&sigma_w * &pinv).trace() / k as f64;

    let wn = to_na(w);
    let w_used = if centered {
        let mean = wn.row_sum() / k as f64;
        DMatrix::from_fn(k, d, |j, p| wn[(j, p)] - mean[p])
    } else {
        wn
    };
    let target = (DMatrix::<f64>::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64)) / ((k - 1) as f64).sqrt();
    let frame = |m: DMatrix<f64>| (&m / m.norm() - &target).norm();
    let mut h_tilde = DMatrix::<f64>::zeros(d, k);
    for c in 0..k {
        h_tilde.set_column(c, &(&means[c] - &global));
    }
    NcOracle {
        nc1,
        nc2: frame(&w_used * w_used.transpose()),
        nc3: frame(&w_used * h_tilde),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Compactness and distinctiveness by explicit double loops over all
/// ordered pairs (self-pairs included within a class).
pub fn feature_oracle(h: &Matrix, labels: &Labels) -> (f64, f64) {
    let (d, n) = h.shape();
    let k = labels.num_classes();
    let global: Vec<f64> = (0..d).map(|p| (0..n).map(|i| h[(p, i)]).sum::<f64>() / n as f64).collect();
    let col = |i: usize| (0..d).map(|p| h[(p, i)]).collect::<Vec<_>>();
    let centered = |i: usize| (0..d).map(|p| h[(p, i)] - global[p]).collect::<Vec<_>>();
    let members: Vec<Vec<usize>> = (0..k).map(|c| (0..n).filter(|&i| labels.get(i) == c).collect()).collect();

    let mut com = 0.0;
    let mut com_classes = 0;
    for m in &members {
        let (mut s, mut cnt) = (0.0, 0);
        for &i in m {
            for &j in m {
                if let Some(c) = cosine(&centered(i), &centered(j)) {
                    s += c;
                    cnt += 1;
                }
            }
        }
        if cnt > 0 {
            com += s / cnt as f64;
            com_classes += 1;
        }
    }
    let mut dis = 0.0;
    let mut dis_pairs = 0;
    for (c1, m1) in members.iter().enumerate() {
        for (c2, m2) in members.iter().enumerate() {
            if c1 == c2 {
                continue;
            }
            let (mut s, mut cnt) = (0.0, 0);
            for &i in m1 {
                for &j in m2 {
                    if let Some(c) = cosine(&col(i), &col(j)) {
                        s += c;
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                dis += s / cnt as f64;
                dis_pairs += 1;
            }
        }
    }
    (
        50.0 * (com / com_classes as f64 + 1.0),
        50.0 * (1.0 - dis / dis_pairs as f64),
    )
}

/// `(pos_mean, pos_std, neg_mean, neg_std)`, two-pass population moments.
pub fn score_stats_oracle(z: &Matrix, labels: &Labels) -> (f64, f64, f64, f64) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..z.cols() {
        for j in 0..z.rows() {
            if j == labels.get(i) {
                pos.push(z[(j, i)]);
            } else {
                neg.push(z[(j, i)]);
            }
        }
    }
    let moments = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        (m, v.sqrt())
    };
    let (pm, ps) = moments(&pos);
    let (nm, ns) = moments(&neg);
    (pm, ps, nm, ns)
}

/// Uniform accuracy by checking every grid threshold against every entry.
pub fn uniform_accuracy_oracle(z: &Matrix, labels: &Labels, n_thresholds: usize) -> f64 {
    let (k, n) = z.shape();
    let mut pos_min = f64::INFINITY;
    let mut neg_max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..k {
            if j == labels.get(i) {
                pos_min = pos_min.min(z[(j, i)]);
            } else {
                neg_max = neg_max.max(z[(j, i)]);
            }
        }
    }
    if pos_min > neg_max {
        return 100.0;
    }
    let grid: Vec<f64> = if n_thresholds == 1 {
        vec![pos_min]
    } else {
        (0..n_thresholds)
            .map(|s| {
                if s == n_thresholds - 1 {
                    neg_max
                } else {
                    pos_min + (neg_max - pos_min) * s as f64 / (n_thresholds - 1) as f64
                }
            })
            .collect()
    };
    let mut best = 0;
    for t in grid {
        let ok = (0..n)
            .filter(|&i| (0..k).all(|j| if j == labels.get(i) { z[(j, i)] > t } else { z[(j, i)] <= t }))
            .count();
        best = best.max(ok);
    }
    100.0 * best as f64 / n as f64
}

/// Accuracy with smallest-index tie breaking, by explicit comparison.
pub fn accuracy_oracle(z: &Matrix, labels: &Labels) -> f64 {
    let (k, n) = z.shape();
    let ok = (0..n)
        .filter(|&i| {
            let c = labels.get(i);
            (0..k).all(|j| if j < c { z[(j, i)] < z[(c, i)] } else { z[(j, i)] <= z[(c, i)] })
        })
        .count();
    100.0 * ok as f64 / n as f64
}

/// Relative error below `tol`, or both values within roundoff of each other.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    rel_err(a, b) < tol || (a - b).abs() < 1e-12
}
