//! Sinusoidal encoding of real-valued timestamps.
//!
//! `p(t)` interleaves `sin(ω_i t), cos(ω_i t)` for `i = 1..=dim/2` with
//! `ω_i = Λ^(−2i/dim)`. The dot product `p(t)·p(t')` equals
//! `Σ_i cos(ω_i (t − t'))`, so attention scores between two encodings only
//! see the time difference.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeConfig {
    pub dim: usize,
    pub lambda: f64,
}

impl PeConfig {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        let cfg = PeConfig { dim, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "encoding dimension must be even and positive, got {}",
                self.dim
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "encoding wavelength scale must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Same wavelength scale at another output dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        PeConfig::new(dim, self.lambda)
    }

    /// Angular frequencies `ω_1 … ω_{dim/2}`.
    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.dim / 2;
        (1..=half)
            .map(|i| self.lambda.powf(-2.0 * i as f64 / self.dim as f64))
            .collect()
    }
}

/// Wavelength scale used when none is configured: ten times the largest timestamp.
pub fn default_lambda(max_timestamp: f64) -> f64 {
    let m = max_timestamp.abs();
    if m > 0.0 {
        10.0 * m
    } else {
        10.0
    }
}

fn fill(t: f64, freqs: &[f64], out: &mut [f64]) {
    for (i, &w) in freqs.iter().enumerate() {
        let (s, c) = (w * t).sin_cos();
        out[2 * i] = s;
        out[2 * i + 1] = c;
    }
}

pub fn encode_time(t: f64, cfg: &PeConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut out = vec![0.0; cfg.dim];
    fill(t, &cfg.frequencies(), &mut out);
    Ok(Tensor::vector(out))
}

/// One encoded row per timestamp; `tau` must be non-decreasing.
pub fn encode_timeline(tau: &[f64], cfg: &PeConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_sorted(tau, "timeline")?;
    let freqs = cfg.frequencies();
    let mut data = vec![0.0; tau.len() * cfg.dim];
    for (row, &t) in data.chunks_mut(cfg.dim).zip(tau) {
        fill(t, &freqs, row);
    }
    Ok(Tensor::matrix(tau.len(), cfg.dim, data)?)
}

pub(crate) fn check_sorted(tau: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = tau.iter().position(|t| !t.is_finite()) {
        return Err(Error::Invalid(format!("{what}: non-finite timestamp at index {bad}")));
    }
    if let Some(i) = tau.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Invalid(format!(
            "{what}: timestamps not sorted at index {} ({} after {})",
            i + 1,
            tau[i + 1],
            tau[i]
        )));
    }
    Ok(())
}
