//! Seeded synthetic QoS data with planted low-rank structure and outliers.
//!
//! Ground-truth factors are drawn uniform on `[0.5, 1.5)`, so every clean
//! value is positive. Observed cells are a uniform sample at the requested
//! density; a fraction of them is then multiplied by `outlier_magnitude`.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{MatrixEntry, ObservationMatrix, ObservationTensor, TensorEntry};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::outlier::removal_count;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub services: usize,
    /// `1` produces a matrix.
    pub times: usize,
    pub true_rank: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_magnitude: f64,
    pub density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 50,
            services: 40,
            times: 1,
            true_rank: 5,
            noise_sigma: 0.0,
            outlier_fraction: 0.1,
            outlier_magnitude: 20.0,
            density: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.services == 0 || self.times == 0 {
            return Err(Error::config("synthetic dimensions must be positive"));
        }
        if self.true_rank == 0 {
            return Err(Error::config("true_rank must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::config("outlier_fraction must lie in [0, 1)"));
        }
        if !(self.outlier_magnitude.is_finite() && self.outlier_magnitude > 1.0) {
            return Err(Error::config("outlier_magnitude must exceed 1"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::config("density must lie in (0, 1]"));
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.users * self.services * self.times
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("users", self.users);
        kv.set("services", self.services);
        kv.set("times", self.times);
        kv.set("true_rank", self.true_rank);
        kv.set("noise_sigma", self.noise_sigma);
        kv.set("outlier_fraction", self.outlier_fraction);
        kv.set("outlier_magnitude", self.outlier_magnitude);
        kv.set("density", self.density);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads the spec keys, falling back to defaults for absent ones.
    pub fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self> {
        let d = Self::default();
        let key = |k: &str| format!("{prefix}{k}");
        let spec = Self {
            users: kv.get_or(&key("users"), d.users)?,
            services: kv.get_or(&key("services"), d.services)?,
            times: kv.get_or(&key("times"), d.times)?,
            true_rank: kv.get_or(&key("true_rank"), d.true_rank)?,
            noise_sigma: kv.get_or(&key("noise_sigma"), d.noise_sigma)?,
            outlier_fraction: kv.get_or(&key("outlier_fraction"), d.outlier_fraction)?,
            outlier_magnitude: kv.get_or(&key("outlier_magnitude"), d.outlier_magnitude)?,
            density: kv.get_or(&key("density"), d.density)?,
            seed: kv.get_or(&key("seed"), d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticObservations {
    Matrix(ObservationMatrix),
    Tensor(ObservationTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub observations: SyntheticObservations,
    /// Positions in the entry list whose values were replaced by outliers, ascending.
    pub planted: Vec<usize>,
    /// `[U, S]` for matrices, `[U, S, T]` for tensors.
    pub factors: Vec<Array2<f64>>,
    /// Noise-free low-rank value of every observed entry.
    pub clean_values: Vec<f64>,
}

impl SyntheticDataset {
    pub fn values(&self) -> Vec<f64> {
        match &self.observations {
            SyntheticObservations::Matrix(m) => m.values(),
            SyntheticObservations::Tensor(t) => t.values(),
        }
    }

    pub fn matrix(&self) -> Option<&ObservationMatrix> {
        match &self.observations {
            SyntheticObservations::Matrix(m) => Some(m),
            SyntheticObservations::Tensor(_) => None,
        }
    }

    pub fn tensor(&self) -> Option<&ObservationTensor> {
        match &self.observations {
            SyntheticObservations::Tensor(t) => Some(t),
            SyntheticObservations::Matrix(_) => None,
        }
    }

    /// Writes the spec echo plus planted indices as `key = value` lines.
    pub fn write_manifest(&self, spec: &SyntheticSpec, mut out: impl Write) -> std::io::Result<()> {
        let mut kv = spec.to_kv();
        let planted: Vec<String> = self.planted.iter().map(usize::to_string).collect();
        kv.set("planted", planted.join(","));
        kv.set("observed", self.values().len());
        out.write_all(kv.render().as_bytes())
    }
}

/// Reads a manifest back into the spec and planted index list.
pub fn parse_manifest(text: &str) -> Result<(SyntheticSpec, Vec<usize>)> {
    let kv = KeyValues::parse(text)?;
    let spec = SyntheticSpec::from_kv(&kv, "")?;
    let planted = kv.get_list("planted")?.unwrap_or_default();
    Ok((spec, planted))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let cells = spec.cells();
    let expected = spec.density * cells as f64;
    if expected < 1.0 {
        return Err(Error::contract(format!(
            "density {} over {cells} cells observes no entries",
            spec.density
        )));
    }
    let observed = (expected.round() as usize).clamp(1, cells);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |rows: usize| {
        Array2::from_shape_simple_fn((rows, spec.true_rank), || 0.5 + rng.random::<f64>())
    };
    let mut factors = vec![draw(spec.users), draw(spec.services)];
    if spec.times > 1 {
        factors.push(draw(spec.times));
    }

    let mut picked = index::sample(&mut rng, cells, observed).into_vec();
    picked.sort_unstable();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut coords = Vec::with_capacity(observed);
    let mut clean_values = Vec::with_capacity(observed);
    let mut values = Vec::with_capacity(observed);
    for cell in picked {
        let k = cell % spec.times;
        let j = (cell / spec.times) % spec.services;
        let i = cell / (spec.times * spec.services);
        let clean: f64 = (0..spec.true_rank)
            .map(|r| {
                let t = if spec.times > 1 { factors[2][[k, r]] } else { 1.0 };
                factors[0][[i, r]] * factors[1][[j, r]] * t
            })
            .sum();
        let v = if spec.noise_sigma > 0.0 {
            clean + noise.sample(&mut rng)
        } else {
            clean
        };
        coords.push((i, j, k));
        clean_values.push(clean);
        values.push(v);
    }

    let n_out = removal_count(spec.outlier_fraction, observed);
    let mut planted = index::sample(&mut rng, observed, n_out).into_vec();
    planted.sort_unstable();
    for &p in &planted {
        values[p] *= spec.outlier_magnitude;
    }

    let observations = if spec.times > 1 {
        let entries = coords
            .iter()
            .zip(&values)
            .map(|(&(user, service, time), &value)| TensorEntry { user, service, time, value })
            .collect();
        SyntheticObservations::Tensor(ObservationTensor::new(
            spec.users,
            spec.services,
            spec.times,
            entries,
        )?)
    } else {
        let entries = coords
            .iter()
            .zip(&values)
            .map(|(&(user, service, _), &value)| MatrixEntry { user, service, value })
            .collect();
        SyntheticObservations::Matrix(ObservationMatrix::new(spec.users, spec.services, entries)?)
    };
    Ok(SyntheticDataset {
        observations,
        planted,
        factors,
        clean_values,
    })
}
