//! Time grids, sampled control fields, update shapes and initial guesses.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hamiltonian::{ControlDecomposition, Quadrature};

/// Uniform grid on `[0, T]`; controls are constant on `[t_k, t_{k+1})`.
/// Times are in µs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    duration: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(duration: f64, n_steps: usize) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid duration must be positive, got {duration}"
            )));
        }
        if n_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 steps, got {n_steps}"
            )));
        }
        Ok(TimeGrid { duration, n_steps })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.duration * k as f64 / self.n_steps as f64
    }

    /// The `n_steps + 1` grid points.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        self.duration * (k as f64 + 0.5) / self.n_steps as f64
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_steps).map(|k| self.midpoint(k)).collect()
    }
}

/// One real control `χ_l(t)` sampled at step midpoints, in rad/µs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub channel: String,
    pub quadrature: Quadrature,
    pub values: Vec<f64>,
    pub bounds: Option<(f64, f64)>,
}

impl ControlField {
    pub fn new(channel: impl Into<String>, quadrature: Quadrature, values: Vec<f64>) -> Self {
        ControlField {
            channel: channel.into(),
            quadrature,
            values,
            bounds: None,
        }
    }

    pub fn zeros(channel: impl Into<String>, quadrature: Quadrature, grid: &TimeGrid) -> Self {
        Self::new(channel, quadrature, vec![0.0; grid.n_steps()])
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn clamp(&self, v: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.values.len() != grid.n_steps() {
            return Err(Error::GridMismatch(format!(
                "field {}/{} has {} samples, grid has {} steps",
                self.channel,
                self.quadrature,
                self.values.len(),
                grid.n_steps()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "field {}/{} at step {i}",
                self.channel, self.quadrature
            )));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "field {}/{} has empty bounds [{lo}, {hi}]",
                    self.channel, self.quadrature
                )));
            }
        }
        Ok(())
    }
}

/// Checks that `fields` line up one-to-one with the decomposition's control
/// operators and the grid, and returns them as a `[control][step]` table.
pub fn field_table<'a>(
    decomp: &ControlDecomposition,
    fields: &'a [ControlField],
    grid: &TimeGrid,
) -> Result<Vec<&'a [f64]>> {
    if fields.len() != decomp.n_controls() {
        return Err(Error::DimensionMismatch {
            expected: decomp.n_controls(),
            found: fields.len(),
        });
    }
    for (f, op) in fields.iter().zip(decomp.controls()) {
        if f.channel != op.channel || f.quadrature != op.quadrature {
            return Err(Error::InvalidArgument(format!(
                "field {}/{} does not match control {}/{}",
                f.channel, f.quadrature, op.channel, op.quadrature
            )));
        }
        f.validate(grid)?;
    }
    Ok(fields.iter().map(|f| f.values.as_slice()).collect())
}

/// Polar form `(|Ω|, arg Ω)` of a re/im pair.
pub fn to_amplitude_phase(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    re.iter()
        .zip(im)
        .map(|(a, b)| (a.hypot(*b), b.atan2(*a)))
        .unzip()
}

pub fn from_amplitude_phase(amp: &[f64], phase: &[f64]) -> (Vec<f64>, Vec<f64>) {
    amp.iter()
        .zip(phase)
        .map(|(a, p)| (a * p.cos(), a * p.sin()))
        .unzip()
}

/// Update shape `S(t) ∈ [0, 1]` sampled at step midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateShape {
    values: Vec<f64>,
}

impl UpdateShape {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "update shape value {v} outside [0, 1]"
            )));
        }
        Ok(UpdateShape { values })
    }

    pub fn constant(grid: &TimeGrid, value: f64) -> Result<Self> {
        Self::new(vec![value; grid.n_steps()])
    }

    /// Flat top with `sin²` switch-on and switch-off over `ramp_fraction` of
    /// the duration at each end. The first and last samples are exactly 0.
    pub fn flat_top(grid: &TimeGrid, ramp_fraction: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&ramp_fraction) {
            return Err(Error::InvalidArgument(format!(
                "ramp fraction {ramp_fraction} outside [0, 0.5]"
            )));
        }
        let n = grid.n_steps();
        let first = grid.midpoint(0);
        let last = grid.midpoint(n - 1);
        let ramp = ramp_fraction * grid.duration();
        let values = (0..n)
            .map(|k| {
                let t = grid.midpoint(k);
                let edge = (t - first).min(last - t);
                if ramp <= 0.0 {
                    1.0
                } else if edge >= ramp {
                    1.0
                } else {
                    (0.5 * PI * edge / ramp).sin().powi(2)
                }
            })
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gaussian envelope `peak · exp(-(t - t_c)² / 2w²)` with `t_c` and `w`
/// given as fractions of the duration.
pub fn gaussian_envelope(grid: &TimeGrid, peak: f64, center: f64, width: f64) -> Vec<f64> {
    let tc = center * grid.duration();
    let w = width * grid.duration();
    grid.midpoints()
        .iter()
        .map(|t| peak * (-(t - tc).powi(2) / (2.0 * w * w)).exp())
        .collect()
}
