//! Time-aware QoS prediction by nonnegative CP factorization of a sparse
//! user × service × time tensor under the Cauchy loss.
//!
//! Each entry is approximated by `x̂_ijk = Σ_ℓ U_iℓ S_jℓ T_kℓ`. Factors are
//! updated one mode at a time with multiplicative rules of the form
//!
//! ```text
//! U_iℓ ← U_iℓ · Σ Δ_ijk x_ijk (S_jℓ T_kℓ) / (Σ Δ_ijk x̂_ijk (S_jℓ T_kℓ) + λ_u U_iℓ)
//! ```
//!
//! with `Δ_ijk = 1/(γ² + (x_ijk − x̂_ijk)²)` taken from the predictions at the
//! start of the mode update. Internally the weights are carried as `γ²Δ`
//! (and `λ` as `γ²λ`), which leaves every ratio unchanged but keeps the
//! denominator floor meaningful for large `γ`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTensor;
use crate::error::{Error, Result};
use crate::mf::OBJECTIVE_EPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfConfig {
    pub rank: usize,
    pub gamma: f64,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub mu_floor: f64,
}

impl TfConfig {
    /// Response-time profile tuned for MAE: `l = 15, λ = 0.1, γ = 10`.
    pub fn response_time_mae() -> Self {
        Self {
            rank: 15,
            gamma: 10.0,
            lambda_u: 0.1,
            lambda_s: 0.1,
            lambda_t: 0.1,
            max_iters: 500,
            rel_tol: 1e-6,
            seed: 0,
            init_scale: 1.0,
            mu_floor: 1e-12,
        }
    }

    /// Response-time profile tuned for RMSE: as the MAE profile with `γ = 35`.
    pub fn response_time_rmse() -> Self {
        Self {
            gamma: 35.0,
            ..Self::response_time_mae()
        }
    }

    /// Throughput profile: `l = 15, λ = 100, γ = 5`.
    pub fn throughput() -> Self {
        Self {
            gamma: 5.0,
            lambda_u: 100.0,
            lambda_s: 100.0,
            lambda_t: 100.0,
            ..Self::response_time_mae()
        }
    }

    /// Near-Frobenius limit: `γ = 10⁶` and no regularization.
    pub fn l2_limit(self) -> Self {
        Self {
            gamma: 1e6,
            lambda_u: 0.0,
            lambda_s: 0.0,
            lambda_t: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.rank == 0 {
            return Err(Error::config("rank must be at least 1"));
        }
        if !pos(self.gamma) {
            return Err(Error::Domain(format!(
                "Cauchy scale must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !nonneg(self.lambda_u) || !nonneg(self.lambda_s) || !nonneg(self.lambda_t) {
            return Err(Error::config("regularization coefficients must be nonnegative"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if !nonneg(self.rel_tol) {
            return Err(Error::config("rel_tol must be nonnegative"));
        }
        if !pos(self.mu_floor) {
            return Err(Error::config("mu_floor must be positive"));
        }
        if !pos(self.init_scale) || self.init_scale <= self.mu_floor {
            return Err(Error::config("init_scale must exceed mu_floor"));
        }
        Ok(())
    }
}

impl Default for TfConfig {
    fn default() -> Self {
        Self::response_time_mae()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfModel {
    pub user_factors: Array2<f64>,
    pub service_factors: Array2<f64>,
    pub time_factors: Array2<f64>,
    pub iterations_run: usize,
    pub final_objective: f64,
}

impl TfModel {
    pub fn from_factors(
        user_factors: Array2<f64>,
        service_factors: Array2<f64>,
        time_factors: Array2<f64>,
    ) -> Result<Self> {
        let l = user_factors.ncols();
        if service_factors.ncols() != l || time_factors.ncols() != l {
            return Err(Error::contract("factor ranks differ"));
        }
        let model = Self {
            user_factors: user_factors.as_standard_layout().to_owned(),
            service_factors: service_factors.as_standard_layout().to_owned(),
            time_factors: time_factors.as_standard_layout().to_owned(),
            iterations_run: 0,
            final_objective: f64::NAN,
        };
        if model.factors().iter().any(|f| f.iter().any(|&v| !(v >= 0.0))) {
            return Err(Error::Domain("tensor factors must be nonnegative".into()));
        }
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.user_factors.ncols()
    }

    fn factors(&self) -> [&Array2<f64>; 3] {
        [&self.user_factors, &self.service_factors, &self.time_factors]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    User,
    Service,
    Time,
}

#[inline]
fn row(f: &[f64], idx: usize, l: usize) -> &[f64] {
    &f[idx * l..(idx + 1) * l]
}

#[inline]
fn triple_dot(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum()
}

fn slices(model: &TfModel) -> (&[f64], &[f64], &[f64]) {
    (
        model.user_factors.as_slice().expect("standard layout"),
        model.service_factors.as_slice().expect("standard layout"),
        model.time_factors.as_slice().expect("standard layout"),
    )
}

/// `Σ_ℓ U_iℓ S_jℓ T_kℓ`.
pub fn predict_entry(model: &TfModel, user: usize, service: usize, time: usize) -> Result<f64> {
    let [u, s, t] = model.factors();
    if user >= u.nrows() || service >= s.nrows() || time >= t.nrows() {
        return Err(Error::contract(format!(
            "index ({user}, {service}, {time}) outside {}x{}x{}",
            u.nrows(),
            s.nrows(),
            t.nrows()
        )));
    }
    Ok((0..model.rank())
        .map(|k| u[[user, k]] * s[[service, k]] * t[[time, k]])
        .sum())
}

pub fn predict(model: &TfModel, triples: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
    triples
        .iter()
        .map(|&(i, j, k)| predict_entry(model, i, j, k))
        .collect()
}

fn check_shapes(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig) -> Result<()> {
    let [u, s, t] = model.factors();
    if u.nrows() != tensor.users() || s.nrows() != tensor.services() || t.nrows() != tensor.times() {
        return Err(Error::contract(format!(
            "model is {}x{}x{} but observations are {}x{}x{}",
            u.nrows(),
            s.nrows(),
            t.nrows(),
            tensor.users(),
            tensor.services(),
            tensor.times()
        )));
    }
    if model.rank() != config.rank {
        return Err(Error::contract(format!(
            "model rank {} does not match configured rank {}",
            model.rank(),
            config.rank
        )));
    }
    Ok(())
}

fn predictions(tensor: &ObservationTensor, model: &TfModel) -> Vec<f64> {
    let l = model.rank();
    let (u, s, t) = slices(model);
    tensor
        .entries()
        .iter()
        .map(|e| triple_dot(row(u, e.user, l), row(s, e.service, l), row(t, e.time, l)))
        .collect()
}

fn objective_raw(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig) -> f64 {
    let g2 = config.gamma * config.gamma;
    let data: f64 = tensor
        .entries()
        .iter()
        .zip(predictions(tensor, model))
        .map(|(e, p)| {
            let r = e.value - p;
            (r * r / g2).ln_1p()
        })
        .sum();
    let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
    0.5 * data
        + 0.5 * config.lambda_u * sq(&model.user_factors)
        + 0.5 * config.lambda_s * sq(&model.service_factors)
        + 0.5 * config.lambda_t * sq(&model.time_factors)
}

/// `½ Σ ln(1 + r²/γ²) + Σ_mode (λ/2)‖factor‖²`.
pub fn objective(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig) -> Result<f64> {
    config.validate()?;
    check_shapes(tensor, model, config)?;
    Ok(objective_raw(tensor, model, config))
}

/// Computes the multiplicative update of one mode's factor from the current model.
fn mu_update(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig, mode: Mode) -> Array2<f64> {
    let l = model.rank();
    let (u, s, t) = slices(model);
    let (target, lambda) = match mode {
        Mode::User => (&model.user_factors, config.lambda_u),
        Mode::Service => (&model.service_factors, config.lambda_s),
        Mode::Time => (&model.time_factors, config.lambda_t),
    };
    let rows = target.nrows();
    let g2 = config.gamma * config.gamma;
    let mut num = vec![0.0; rows * l];
    let mut den = vec![0.0; rows * l];
    let mut p = vec![0.0; l];
    for e in tensor.entries() {
        let (ur, sr, tr) = (row(u, e.user, l), row(s, e.service, l), row(t, e.time, l));
        let pred = triple_dot(ur, sr, tr);
        let r = e.value - pred;
        // γ²Δ
        let w = 1.0 / (1.0 + r * r / g2);
        let (idx, a, b) = match mode {
            Mode::User => (e.user, sr, tr),
            Mode::Service => (e.service, ur, tr),
            Mode::Time => (e.time, ur, sr),
        };
        for ((pk, &x), &y) in p.iter_mut().zip(a).zip(b) {
            *pk = x * y;
        }
        let wx = w * e.value;
        let wp = w * pred;
        let nrow = &mut num[idx * l..(idx + 1) * l];
        for (n, &pk) in nrow.iter_mut().zip(&p) {
            *n += wx * pk;
        }
        let drow = &mut den[idx * l..(idx + 1) * l];
        for (d, &pk) in drow.iter_mut().zip(&p) {
            *d += wp * pk;
        }
    }
    let scaled_lambda = lambda * g2;
    let old = target.as_slice().expect("standard layout");
    let updated: Vec<f64> = old
        .iter()
        .zip(num)
        .zip(den)
        .map(|((&v, n), d)| {
            let d = d + scaled_lambda * v;
            if n == 0.0 && d == 0.0 {
                // no observations and no regularization: leave the entry alone
                return v;
            }
            v * (n.max(0.0) / d.max(config.mu_floor))
        })
        .collect();
    Array2::from_shape_vec((rows, l), updated).expect("shape preserved")
}

fn sweep_checked(
    tensor: &ObservationTensor,
    model: &TfModel,
    config: &TfConfig,
    mode: Mode,
) -> Result<Array2<f64>> {
    config.validate()?;
    check_shapes(tensor, model, config)?;
    Ok(mu_update(tensor, model, config, mode))
}

/// Multiplicative update of `U` with `S`, `T` fixed; returns the new `U`.
pub fn mu_sweep_u(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig) -> Result<Array2<f64>> {
    sweep_checked(tensor, model, config, Mode::User)
}

/// Multiplicative update of `S` with `U`, `T` fixed; returns the new `S`.
pub fn mu_sweep_s(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig) -> Result<Array2<f64>> {
    sweep_checked(tensor, model, config, Mode::Service)
}

/// Multiplicative update of `T` with `U`, `S` fixed; returns the new `T`.
pub fn mu_sweep_t(tensor: &ObservationTensor, model: &TfModel, config: &TfConfig) -> Result<Array2<f64>> {
    sweep_checked(tensor, model, config, Mode::Time)
}

/// One full sweep: `U`, then `S`, then `T`, each seeing the previous updates.
pub fn sweep(tensor: &ObservationTensor, model: &mut TfModel, config: &TfConfig) -> Result<()> {
    config.validate()?;
    check_shapes(tensor, model, config)?;
    sweep_raw(tensor, model, config);
    Ok(())
}

fn sweep_raw(tensor: &ObservationTensor, model: &mut TfModel, config: &TfConfig) {
    model.user_factors = mu_update(tensor, model, config, Mode::User);
    model.service_factors = mu_update(tensor, model, config, Mode::Service);
    model.time_factors = mu_update(tensor, model, config, Mode::Time);
}

/// Starting factors, i.i.d. uniform on `(mu_floor, init_scale)`: `U`, then `S`, then `T`.
pub fn initial_model(users: usize, services: usize, times: usize, config: &TfConfig) -> TfModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let span = config.init_scale - config.mu_floor;
    let mut draw = |rows: usize| {
        Array2::from_shape_simple_fn((rows, config.rank), || {
            config.mu_floor + rng.random::<f64>() * span
        })
    };
    let u = draw(users);
    let s = draw(services);
    let t = draw(times);
    TfModel {
        user_factors: u,
        service_factors: s,
        time_factors: t,
        iterations_run: 0,
        final_objective: f64::NAN,
    }
}

pub fn fit(tensor: &ObservationTensor, config: &TfConfig) -> Result<TfModel> {
    config.validate()?;
    if tensor.is_empty() {
        return Err(Error::contract("cannot fit an empty observation tensor"));
    }
    let mut model = initial_model(tensor.users(), tensor.services(), tensor.times(), config);
    let mut prev = objective_raw(tensor, &model, config);
    if !prev.is_finite() {
        return Err(Error::Divergence { sweep: 0 });
    }
    for sweep in 1..=config.max_iters {
        sweep_raw(tensor, &mut model, config);
        let cur = objective_raw(tensor, &model, config);
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
