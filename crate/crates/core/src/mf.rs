//! Static QoS prediction by low-rank matrix factorization `X ≈ U Sᵀ`.
//!
//! The objective is
//!
//! ```text
//! ½ Σ_{(i,j) observed} term(X_ij − U_i·S_j) + (λ_u/2)‖U‖² + (λ_s/2)‖S‖²
//! ```
//!
//! where `term` is `ln(1 + r²/γ²)` for the Cauchy loss, `r²` for L2 and
//! `2|r|` for L1. It is minimized by row-wise gradient descent: every user
//! row is updated in ascending order, then every service row, and each
//! update sees rows already updated in the same sweep.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationMatrix;
use crate::error::{Error, Result};
use crate::loss::LossKind;

/// Guards the relative-change denominator when the objective reaches zero.
pub const OBJECTIVE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub rank: usize,
    pub loss: LossKind,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub eta_u: f64,
    pub eta_s: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl MfConfig {
    /// Response-time profile: `l = 30, γ = 1, λ = 1, η = 0.003`.
    pub fn response_time() -> Self {
        Self {
            rank: 30,
            loss: LossKind::Cauchy { gamma: 1.0 },
            lambda_u: 1.0,
            lambda_s: 1.0,
            eta_u: 0.003,
            eta_s: 0.003,
            max_iters: 1000,
            rel_tol: 1e-6,
            seed: 0,
            init_scale: 0.1,
        }
    }

    /// Throughput profile: `l = 30, γ = 20, λ = 0.01, η = 0.025`.
    pub fn throughput() -> Self {
        Self {
            loss: LossKind::Cauchy { gamma: 20.0 },
            lambda_u: 0.01,
            lambda_s: 0.01,
            eta_u: 0.025,
            eta_s: 0.025,
            ..Self::response_time()
        }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.rank == 0 {
            return Err(Error::config("rank must be at least 1"));
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !nonneg(self.lambda_u) || !nonneg(self.lambda_s) {
            return Err(Error::config("regularization coefficients must be nonnegative"));
        }
        if !pos(self.eta_u) || !pos(self.eta_s) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if !nonneg(self.rel_tol) {
            return Err(Error::config("rel_tol must be nonnegative"));
        }
        if !pos(self.init_scale) {
            return Err(Error::config("init_scale must be positive"));
        }
        Ok(())
    }
}

impl Default for MfConfig {
    fn default() -> Self {
        Self::response_time()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    /// `m × l`; row `i` is the latent feature of user `i`.
    pub user_factors: Array2<f64>,
    /// `n × l`; row `j` is the latent feature of service `j`.
    pub service_factors: Array2<f64>,
    pub iterations_run: usize,
    pub final_objective: f64,
}

impl MfModel {
    pub fn from_factors(user_factors: Array2<f64>, service_factors: Array2<f64>) -> Result<Self> {
        if user_factors.ncols() != service_factors.ncols() {
            return Err(Error::contract(format!(
                "factor ranks differ: {} vs {}",
                user_factors.ncols(),
                service_factors.ncols()
            )));
        }
        Ok(Self {
            user_factors,
            service_factors,
            iterations_run: 0,
            final_objective: f64::NAN,
        })
    }

    pub fn rank(&self) -> usize {
        self.user_factors.ncols()
    }

    pub fn predict_pair(&self, user: usize, service: usize) -> Result<f64> {
        if user >= self.user_factors.nrows() || service >= self.service_factors.nrows() {
            return Err(Error::contract(format!(
                "pair ({user}, {service}) outside {}x{}",
                self.user_factors.nrows(),
                self.service_factors.nrows()
            )));
        }
        Ok(self.user_factors.row(user).dot(&self.service_factors.row(service)))
    }
}

/// Contribution of one residual to the objective, before the shared `½`.
#[inline]
fn objective_term(loss: LossKind, r: f64) -> f64 {
    match loss {
        LossKind::L2 => r * r,
        LossKind::L1 => 2.0 * r.abs(),
        LossKind::Cauchy { .. } => loss.value_unchecked(r),
    }
}

/// `−∂objective/∂r` per residual: `r/(γ² + r²)`, `r` or `sign(r)`.
#[inline]
fn residual_pull(loss: LossKind, r: f64) -> f64 {
    match loss {
        LossKind::Cauchy { gamma } => r / (gamma * gamma + r * r),
        _ => loss.influence_unchecked(r),
    }
}

fn check_shapes(matrix: &ObservationMatrix, model: &MfModel, config: &MfConfig) -> Result<()> {
    let (u, s) = (&model.user_factors, &model.service_factors);
    if u.nrows() != matrix.users() || s.nrows() != matrix.services() {
        return Err(Error::contract(format!(
            "model is {}x{} but observations are {}x{}",
            u.nrows(),
            s.nrows(),
            matrix.users(),
            matrix.services()
        )));
    }
    if u.ncols() != config.rank || s.ncols() != config.rank {
        return Err(Error::contract(format!(
            "model rank {} does not match configured rank {}",
            u.ncols(),
            config.rank
        )));
    }
    Ok(())
}

fn objective_raw(
    matrix: &ObservationMatrix,
    u: &Array2<f64>,
    s: &Array2<f64>,
    config: &MfConfig,
) -> f64 {
    let data: f64 = matrix
        .entries()
        .iter()
        .map(|e| {
            let r = e.value - u.row(e.user).dot(&s.row(e.service));
            objective_term(config.loss, r)
        })
        .sum();
    let reg_u: f64 = u.iter().map(|v| v * v).sum();
    let reg_s: f64 = s.iter().map(|v| v * v).sum();
    0.5 * data + 0.5 * config.lambda_u * reg_u + 0.5 * config.lambda_s * reg_s
}

pub fn objective(matrix: &ObservationMatrix, model: &MfModel, config: &MfConfig) -> Result<f64> {
    config.loss.validate()?;
    check_shapes(matrix, model, config)?;
    Ok(objective_raw(
        matrix,
        &model.user_factors,
        &model.service_factors,
        config,
    ))
}

/// `λ·own − Σ pull(r)·other_k` over `(row of other factor, observed value)` pairs.
fn row_gradient_into(
    out: &mut [f64],
    own: ArrayView1<f64>,
    other: &Array2<f64>,
    lambda: f64,
    loss: LossKind,
    entries: impl Iterator<Item = (usize, f64)>,
) {
    for (o, &v) in out.iter_mut().zip(own.iter()) {
        *o = lambda * v;
    }
    for (k, x) in entries {
        let row = other.row(k);
        let r = x - own.dot(&row);
        let pull = residual_pull(loss, r);
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o -= pull * v;
        }
    }
}

fn user_gradient_into(
    out: &mut [f64],
    matrix: &ObservationMatrix,
    u: &Array2<f64>,
    s: &Array2<f64>,
    config: &MfConfig,
    user: usize,
) {
    let entries = matrix.entries();
    row_gradient_into(
        out,
        u.row(user),
        s,
        config.lambda_u,
        config.loss,
        matrix
            .user_entries(user)
            .iter()
            .map(|&e| (entries[e].service, entries[e].value)),
    );
}

fn service_gradient_into(
    out: &mut [f64],
    matrix: &ObservationMatrix,
    u: &Array2<f64>,
    s: &Array2<f64>,
    config: &MfConfig,
    service: usize,
) {
    let entries = matrix.entries();
    row_gradient_into(
        out,
        s.row(service),
        u,
        config.lambda_s,
        config.loss,
        matrix
            .service_entries(service)
            .iter()
            .map(|&e| (entries[e].user, entries[e].value)),
    );
}

/// Gradient of the objective with respect to user row `U_i`.
pub fn grad_row_u(
    matrix: &ObservationMatrix,
    model: &MfModel,
    config: &MfConfig,
    user: usize,
) -> Result<Array1<f64>> {
    config.loss.validate()?;
    check_shapes(matrix, model, config)?;
    if user >= matrix.users() {
        return Err(Error::contract(format!(
            "user {user} out of range 0..{}",
            matrix.users()
        )));
    }
    let mut out = vec![0.0; config.rank];
    user_gradient_into(
        &mut out,
        matrix,
        &model.user_factors,
        &model.service_factors,
        config,
        user,
    );
    Ok(Array1::from(out))
}

/// Gradient of the objective with respect to service row `S_j`.
pub fn grad_row_s(
    matrix: &ObservationMatrix,
    model: &MfModel,
    config: &MfConfig,
    service: usize,
) -> Result<Array1<f64>> {
    config.loss.validate()?;
    check_shapes(matrix, model, config)?;
    if service >= matrix.services() {
        return Err(Error::contract(format!(
            "service {service} out of range 0..{}",
            matrix.services()
        )));
    }
    let mut out = vec![0.0; config.rank];
    service_gradient_into(
        &mut out,
        matrix,
        &model.user_factors,
        &model.service_factors,
        config,
        service,
    );
    Ok(Array1::from(out))
}

/// Draws the starting factors: i.i.d. uniform on `[0, init_scale)`, `U` first, row-major.
pub fn initial_model(users: usize, services: usize, config: &MfConfig) -> MfModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |rows: usize| {
        Array2::from_shape_simple_fn((rows, config.rank), || {
            rng.random::<f64>() * config.init_scale
        })
    };
    let u = draw(users);
    let s = draw(services);
    MfModel {
        user_factors: u,
        service_factors: s,
        iterations_run: 0,
        final_objective: f64::NAN,
    }
}

/// One Gauss–Seidel gradient sweep over all user rows, then all service rows.
pub fn sweep(matrix: &ObservationMatrix, model: &mut MfModel, config: &MfConfig) -> Result<()> {
    config.validate()?;
    check_shapes(matrix, model, config)?;
    let mut grad = vec![0.0; config.rank];
    sweep_raw(matrix, model, config, &mut grad);
    Ok(())
}

fn sweep_raw(matrix: &ObservationMatrix, model: &mut MfModel, config: &MfConfig, grad: &mut [f64]) {
    let MfModel {
        user_factors: u,
        service_factors: s,
        ..
    } = model;
    for i in 0..matrix.users() {
        user_gradient_into(grad, matrix, u, s, config, i);
        for (x, g) in u.row_mut(i).iter_mut().zip(grad.iter()) {
            *x -= config.eta_u * g;
        }
    }
    for j in 0..matrix.services() {
        service_gradient_into(grad, matrix, u, s, config, j);
        for (x, g) in s.row_mut(j).iter_mut().zip(grad.iter()) {
            *x -= config.eta_s * g;
        }
    }
}

/// Fits `U`, `S` by repeated sweeps until the relative objective change drops
/// below `rel_tol` or `max_iters` sweeps have run.
pub fn fit(matrix: &ObservationMatrix, config: &MfConfig) -> Result<MfModel> {
    config.validate()?;
    if matrix.is_empty() {
        return Err(Error::contract("cannot fit an empty observation matrix"));
    }
    let mut model = initial_model(matrix.users(), matrix.services(), config);
    let mut grad = vec![0.0; config.rank];
    let mut prev = objective_raw(matrix, &model.user_factors, &model.service_factors, config);
    if !prev.is_finite() {
        return Err(Error::Divergence { sweep: 0 });
    }
    for sweep in 1..=config.max_iters {
        sweep_raw(matrix, &mut model, config, &mut grad);
        let cur = objective_raw(matrix, &model.user_factors, &model.service_factors, config);
        if !cur.is_finite() {
            return Err(Error::Divergence { sweep });
        }
        model.iterations_run = sweep;
        model.final_objective = cur;
        if (prev - cur).abs() / prev.max(OBJECTIVE_EPS) < config.rel_tol {
            break;
        }
        prev = cur;
    }
    Ok(model)
}

/// `U_i · S_j` for every pair; no clamping to the QoS value range.
pub fn predict(model: &MfModel, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(i, j)| model.predict_pair(i, j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MatrixEntry;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn config(rank: usize, loss: LossKind, lambda: f64) -> MfConfig {
        MfConfig {
            rank,
            loss,
            lambda_u: lambda,
            lambda_s: lambda,
            ..MfConfig::default()
        }
    }

    fn random_instance(m: usize, n: usize, l: usize, seed: u64) -> (ObservationMatrix, MfModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < 0.6 {
                    entries.push(MatrixEntry {
                        user: i,
                        service: j,
                        value: rng.random::<f64>() * 4.0,
                    });
                }
            }
        }
        let matrix = ObservationMatrix::new(m, n, entries).unwrap();
        let u = Array2::from_shape_simple_fn((m, l), || rng.random::<f64>() - 0.3);
        let s = Array2::from_shape_simple_fn((n, l), || rng.random::<f64>() - 0.3);
        (matrix, MfModel::from_factors(u, s).unwrap())
    }

    /// Naive double loop over the dense indicator.
    fn naive_objective(matrix: &ObservationMatrix, model: &MfModel, cfg: &MfConfig) -> f64 {
        let mut dense = vec![vec![None; matrix.services()]; matrix.users()];
        for e in matrix.entries() {
            dense[e.user][e.service] = Some(e.value);
        }
        let mut total = 0.0;
        for i in 0..matrix.users() {
            for j in 0..matrix.services() {
                if let Some(x) = dense[i][j] {
                    let mut pred = 0.0;
                    for k in 0..cfg.rank {
                        pred += model.user_factors[[i, k]] * model.service_factors[[j, k]];
                    }
                    let r: f64 = x - pred;
                    total += match cfg.loss {
                        LossKind::Cauchy { gamma } => 0.5 * (1.0 + r * r / (gamma * gamma)).ln(),
                        LossKind::L2 => 0.5 * r * r,
                        LossKind::L1 => r.abs(),
                    };
                }
            }
        }
        for v in model.user_factors.iter() {
            total += 0.5 * cfg.lambda_u * v * v;
        }
        for v in model.service_factors.iter() {
            total += 0.5 * cfg.lambda_s * v * v;
        }
        total
    }

    #[test]
    fn objective_zero_on_perfect_fit() {
        let u = array![[1.0, 2.0], [0.5, 0.0]];
        let s = array![[3.0, 0.5], [1.0, 1.0]];
        let model = MfModel::from_factors(u, s).unwrap();
        let entries = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| MatrixEntry {
                user: i,
                service: j,
                value: model.predict_pair(i, j).unwrap(),
            })
            .collect();
        let matrix = ObservationMatrix::new(2, 2, entries).unwrap();
        let cfg = config(2, LossKind::Cauchy { gamma: 1.0 }, 0.0);
        assert_eq!(objective(&matrix, &model, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn objective_single_entry() {
        let matrix = ObservationMatrix::new(
            1,
            1,
            vec![MatrixEntry { user: 0, service: 0, value: 1.0 }],
        )
        .unwrap();
        let model = MfModel::from_factors(array![[0.0]], array![[0.0]]).unwrap();
        let cfg = config(1, LossKind::Cauchy { gamma: 1.0 }, 0.0);
        assert_relative_eq!(
            objective(&matrix, &model, &cfg).unwrap(),
            0.5 * 2f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn objective_matches_naive_loop() {
        let (matrix, model) = random_instance(5, 4, 2, 11);
        for loss in [LossKind::Cauchy { gamma: 0.7 }, LossKind::L2, LossKind::L1] {
            let cfg = config(2, loss, 0.1);
            assert_relative_eq!(
                objective(&matrix, &model, &cfg).unwrap(),
                naive_objective(&matrix, &model, &cfg),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn gradient_of_unobserved_rows_is_regularizer() {
        let matrix = ObservationMatrix::new(
            2,
            2,
            vec![MatrixEntry { user: 1, service: 1, value: 1.0 }],
        )
        .unwrap();
        let model = MfModel::from_factors(array![[2.0, 0.0], [1.0, 1.0]], array![[0.0, 3.0], [1.0, 1.0]])
            .unwrap();
        let mut cfg = config(2, LossKind::Cauchy { gamma: 1.0 }, 0.5);
        assert_eq!(grad_row_u(&matrix, &model, &cfg, 0).unwrap(), array![1.0, 0.0]);
        cfg.lambda_s = 1.0;
        assert_eq!(grad_row_s(&matrix, &model, &cfg, 0).unwrap(), array![0.0, 3.0]);
    }

    fn finite_difference_check(loss: LossKind, seed: u64) {
        let (matrix, model) = random_instance(6, 5, 3, seed);
        let cfg = config(3, loss, 0.2);
        let h = 1e-6;
        for i in 0..matrix.users() {
            let g = grad_row_u(&matrix, &model, &cfg, i).unwrap();
            for k in 0..3 {
                let mut plus = model.clone();
                plus.user_factors[[i, k]] += h;
                let mut minus = model.clone();
                minus.user_factors[[i, k]] -= h;
                let fd = (objective(&matrix, &plus, &cfg).unwrap()
                    - objective(&matrix, &minus, &cfg).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "user {i} comp {k}: fd {fd} vs {}",
                    g[k]
                );
            }
        }
        for j in 0..matrix.services() {
            let g = grad_row_s(&matrix, &model, &cfg, j).unwrap();
            for k in 0..3 {
                let mut plus = model.clone();
                plus.service_factors[[j, k]] += h;
                let mut minus = model.clone();
                minus.service_factors[[j, k]] -= h;
                let fd = (objective(&matrix, &plus, &cfg).unwrap()
                    - objective(&matrix, &minus, &cfg).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "service {j} comp {k}: fd {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(LossKind::Cauchy { gamma: 1.0 }, 3);
        finite_difference_check(LossKind::L2, 4);
    }

    #[test]
    fn service_gradient_is_user_gradient_of_transpose() {
        let (matrix, model) = random_instance(6, 5, 2, 9);
        let mut cfg = config(2, LossKind::Cauchy { gamma: 1.3 }, 0.0);
        cfg.lambda_u = 0.2;
        cfg.lambda_s = 0.7;
        let t = matrix.transpose();
        let swapped =
            MfModel::from_factors(model.service_factors.clone(), model.user_factors.clone()).unwrap();
        let cfg_t = MfConfig {
            lambda_u: cfg.lambda_s,
            lambda_s: cfg.lambda_u,
            ..cfg.clone()
        };
        for j in 0..matrix.services() {
            let a = grad_row_s(&matrix, &model, &cfg, j).unwrap();
            let b = grad_row_u(&t, &swapped, &cfg_t, j).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_relative_eq!(x, y, max_relative = 1e-14, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn outlier_pull_is_bounded() {
        let gamma = 0.8;
        let s_row = array![[1.5, -2.0]];
        let model = MfModel::from_factors(array![[0.1, 0.1]], s_row.clone()).unwrap();
        let matrix = ObservationMatrix::new(
            1,
            1,
            vec![MatrixEntry { user: 0, service: 0, value: 1e9 }],
        )
        .unwrap();
        let cfg = config(2, LossKind::Cauchy { gamma }, 0.0);
        let g = grad_row_u(&matrix, &model, &cfg, 0).unwrap();
        let norm = |v: ArrayView1<f64>| v.dot(&v).sqrt();
        assert!(norm(g.view()) <= norm(s_row.row(0)) / (2.0 * gamma));
    }

    #[test]
    fn index_errors() {
        let (matrix, model) = random_instance(3, 3, 2, 1);
        let cfg = config(2, LossKind::L2, 0.0);
        assert!(matches!(grad_row_u(&matrix, &model, &cfg, 3), Err(Error::Contract(_))));
        assert!(matches!(grad_row_s(&matrix, &model, &cfg, 3), Err(Error::Contract(_))));
        assert!(matches!(predict(&model, &[(0, 5)]), Err(Error::Contract(_))));
        let wrong_rank = config(3, LossKind::L2, 0.0);
        assert!(objective(&matrix, &model, &wrong_rank).is_err());
    }

    #[test]
    fn predict_examples() {
        let model = MfModel::from_factors(array![[1.0, 2.0]], array![[3.0, 0.5]]).unwrap();
        assert_eq!(predict(&model, &[(0, 0)]).unwrap(), vec![4.0]);
        let zero = MfModel::from_factors(Array2::zeros((3, 2)), Array2::zeros((4, 2))).unwrap();
        assert!(predict(&zero, &[(0, 0), (2, 3), (1, 1)])
            .unwrap()
            .iter()
            .all(|&p| p == 0.0));
    }

    #[test]
    fn objective_from_predictions_agrees() {
        let (matrix, model) = random_instance(7, 6, 3, 21);
        let cfg = config(3, LossKind::Cauchy { gamma: 1.0 }, 0.3);
        let pairs: Vec<_> = matrix.entries().iter().map(|e| (e.user, e.service)).collect();
        let preds = predict(&model, &pairs).unwrap();
        let data: f64 = matrix
            .entries()
            .iter()
            .zip(&preds)
            .map(|(e, p)| 0.5 * ((e.value - p) / 1.0).powi(2).ln_1p())
            .sum();
        let reg = 0.15
            * (model.user_factors.iter().map(|v| v * v).sum::<f64>()
                + model.service_factors.iter().map(|v| v * v).sum::<f64>());
        assert!((data + reg - objective(&matrix, &model, &cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn small_steps_descend_monotonically() {
        let (matrix, _) = random_instance(10, 8, 3, 5);
        let cfg = MfConfig {
            eta_u: 1e-4,
            eta_s: 1e-4,
            ..config(3, LossKind::Cauchy { gamma: 1.0 }, 0.1)
        };
        let mut model = initial_model(10, 8, &cfg);
        let mut prev = objective(&matrix, &model, &cfg).unwrap();
        for _ in 0..100 {
            sweep(&matrix, &mut model, &cfg).unwrap();
            let cur = objective(&matrix, &model, &cfg).unwrap();
            assert!(cur <= prev * (1.0 + 1e-10));
            prev = cur;
        }
    }

    #[test]
    fn cauchy_gradient_tends_to_l2() {
        let (matrix, model) = random_instance(6, 6, 2, 13);
        let gamma = 1e6;
        let cauchy = config(2, LossKind::Cauchy { gamma }, 0.0);
        let l2 = config(2, LossKind::L2, 0.0);
        for i in 0..6 {
            let a = grad_row_u(&matrix, &model, &cauchy, i).unwrap() * (gamma * gamma);
            let b = grad_row_u(&matrix, &model, &l2, i).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_relative_eq!(x, y, max_relative = 1e-4, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (matrix, _) = random_instance(8, 7, 2, 17);
        let cfg = MfConfig {
            max_iters: 50,
            seed: 42,
            eta_u: 0.01,
            eta_s: 0.01,
            ..config(2, LossKind::Cauchy { gamma: 1.0 }, 0.1)
        };
        let a = fit(&matrix, &cfg).unwrap();
        let b = fit(&matrix, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_rejects_empty_and_reports_divergence() {
        let empty = ObservationMatrix::new(2, 2, vec![]).unwrap();
        assert!(matches!(
            fit(&empty, &MfConfig::default()),
            Err(Error::Contract(_))
        ));
        let (matrix, _) = random_instance(8, 8, 2, 2);
        let cfg = MfConfig {
            eta_u: 50.0,
            eta_s: 50.0,
            init_scale: 1.0,
            max_iters: 200,
            ..config(2, LossKind::L2, 0.0)
        };
        assert!(matches!(fit(&matrix, &cfg), Err(Error::Divergence { .. })));
    }
}
