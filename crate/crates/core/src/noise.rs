//! Stochastic error channels and Monte-Carlo fidelity estimation.
//!
//! Frequencies of the noise spectrum are in Hz and the PSD in Hz²/Hz; the
//! resulting detunings are converted to rad/µs when they enter the
//! Hamiltonian.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlField, TimeGrid};
use crate::error::{Error, Result};
use crate::gates::{gate_fidelity, GateTarget};
use crate::hamiltonian::{AtomDetunings, ControlDecomposition, NoisePerturbation};
use crate::linalg::C64;
use crate::propagator::{half_step_propagators, propagate};
use crate::register::{distance, AtomRegister, PhysicalConstants};

/// HWHM of a Gaussian divided by its standard deviation.
pub fn hwhm_to_sigma(hwhm: f64) -> f64 {
    hwhm / (2.0 * 2f64.ln()).sqrt()
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise width {sigma}: {e}")))
}

/// Relative intensity noise: Rabi frequencies scale by `1 + ε`, `ε` Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RinModel {
    /// Relative HWHM of the intensity fluctuation (0.01 = 1 %).
    pub hwhm: f64,
    /// Draw a fresh factor every time step; otherwise once per gate.
    pub per_step: bool,
}

impl RinModel {
    pub fn sigma(&self) -> f64 {
        hwhm_to_sigma(self.hwhm)
    }

    pub fn sample(&self, n_steps: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if !(self.hwhm >= 0.0 && self.hwhm.is_finite()) {
            return Err(Error::InvalidArgument(format!("RIN HWHM {} must be >= 0", self.hwhm)));
        }
        let dist = normal(self.sigma())?;
        Ok(if self.per_step {
            (0..n_steps).map(|_| dist.sample(rng)).collect()
        } else {
            vec![dist.sample(rng); n_steps]
        })
    }
}

/// Gaussian servo bump; contributes
/// `s_g f_g² / (√(8π) σ_g) · (e^{-(f-f_g)²/2σ_g²} + e^{-(f+f_g)²/2σ_g²})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoBump {
    /// Amplitude coefficient, Hz²/Hz.
    pub s_g: f64,
    /// Width, Hz.
    pub sigma: f64,
    /// Center frequency, Hz.
    pub f_g: f64,
}

impl ServoBump {
    /// Bump whose peak value at `f = f_g` (neglecting the mirror term) is
    /// `height` Hz²/Hz.
    pub fn from_peak_height(height: f64, sigma: f64, f_g: f64) -> Self {
        ServoBump {
            s_g: height * (8.0 * PI).sqrt() * sigma / (f_g * f_g),
            sigma,
            f_g,
        }
    }

    pub fn peak_height(&self) -> f64 {
        self.s_g * self.f_g * self.f_g / ((8.0 * PI).sqrt() * self.sigma)
    }

    pub fn eval(&self, f: f64) -> f64 {
        let g = |x: f64| (-(x * x) / (2.0 * self.sigma * self.sigma)).exp();
        self.peak_height() * (g(f - self.f_g) + g(f + self.f_g))
    }
}

/// Laser frequency-noise power spectral density: white floor plus servo bumps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyNoisePsd {
    /// White-noise level, Hz²/Hz.
    pub h0: f64,
    pub bumps: Vec<ServoBump>,
}

impl FrequencyNoisePsd {
    pub fn white(h0: f64) -> Self {
        FrequencyNoisePsd { h0, bumps: Vec::new() }
    }

    /// Stabilized Ti:sapphire spectrum: 13 Hz²/Hz floor with bumps of peak
    /// height 25 Hz²/Hz (σ 18 kHz at 130 kHz) and 2.0e3 Hz²/Hz (σ 1.5 kHz at
    /// 234 kHz).
    pub fn ti_sapphire() -> Self {
        FrequencyNoisePsd {
            h0: 13.0,
            bumps: vec![
                ServoBump::from_peak_height(25.0, 18e3, 130e3),
                ServoBump::from_peak_height(2.0e3, 1.5e3, 234e3),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !ok(self.h0) {
            return Err(Error::InvalidArgument(format!("PSD floor {} must be >= 0", self.h0)));
        }
        for b in &self.bumps {
            if !ok(b.s_g) || !(b.sigma > 0.0 && b.sigma.is_finite()) || !ok(b.f_g) || b.f_g == 0.0 {
                return Err(Error::InvalidArgument(format!("invalid servo bump {b:?}")));
            }
        }
        Ok(())
    }

    /// `S(f)` in Hz²/Hz.
    pub fn eval(&self, f: f64) -> f64 {
        self.h0 + self.bumps.iter().map(|b| b.eval(f)).sum::<f64>()
    }

    /// Smallest cutoff covering every bump to five widths.
    pub fn bump_cutoff(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.f_g + 5.0 * b.sigma)
            .fold(0.0, f64::max)
    }

    /// Variance of the synthesized series, `Σ_j 2 S(f_j) Δf` for
    /// `f_j = jΔf ≤ f_max`.
    pub fn series_variance(&self, f_max: f64, df: f64) -> f64 {
        let n = (f_max / df).floor() as usize;
        (1..=n).map(|j| 2.0 * self.eval(j as f64 * df) * df).sum()
    }
}

/// Frequency-noise channel settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdNoise {
    pub psd: FrequencyNoisePsd,
    /// Highest Fourier component, Hz; `None` picks `max(bump cutoff, 1 MHz)`.
    pub f_max: Option<f64>,
    /// Fourier spacing, Hz.
    pub df: f64,
}

pub const DEFAULT_PSD_DF_HZ: f64 = 1e3;
pub const DEFAULT_PSD_FMAX_FLOOR_HZ: f64 = 1e6;

impl PsdNoise {
    pub fn new(psd: FrequencyNoisePsd) -> Self {
        PsdNoise {
            psd,
            f_max: None,
            df: DEFAULT_PSD_DF_HZ,
        }
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
            .unwrap_or_else(|| self.psd.bump_cutoff().max(DEFAULT_PSD_FMAX_FLOOR_HZ))
    }
}

/// `δν(t_k) = Σ_j δν_j sin(2π f_j t_k + φ_j)` at step midpoints, Hz, with
/// `f_j = jΔf ≤ f_max`, `δν_j = 2√(S(f_j)Δf)` and uniform random `φ_j`.
pub fn synthesize_frequency_noise(
    psd: &FrequencyNoisePsd,
    grid: &TimeGrid,
    f_max: f64,
    df: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    psd.validate()?;
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::InvalidArgument(format!("frequency spacing {df} must be > 0")));
    }
    if !(f_max >= 0.0 && f_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("cutoff {f_max} must be >= 0")));
    }
    let dt_s = grid.dt() * 1e-6;
    let nyquist = 0.5 / dt_s;
    if f_max > nyquist {
        return Err(Error::InvalidArgument(format!(
            "noise cutoff {f_max:.3e} Hz exceeds the grid Nyquist frequency {nyquist:.3e} Hz"
        )));
    }
    let n_terms = (f_max / df).floor() as usize;
    let mut out = vec![0.0; grid.n_steps()];
    let t0 = grid.midpoint(0) * 1e-6;
    for j in 1..=n_terms {
        let f = j as f64 * df;
        let amp = 2.0 * (psd.eval(f) * df).sqrt();
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        if amp == 0.0 {
            continue;
        }
        // phasor recurrence e^{i(2π f t_k + φ)}
        let mut z = C64::from_polar(1.0, 2.0 * PI * f * t0 + phase);
        let rot = C64::from_polar(1.0, 2.0 * PI * f * dt_s);
        for v in out.iter_mut() {
            *v += amp * z.im;
            z *= rot;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resample {
    #[default]
    PerRun,
    PerStep,
}

/// Thermal Doppler shift of the two-photon transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerModel {
    pub temperature_k: f64,
    pub constants: PhysicalConstants,
    pub resample: Resample,
}

impl DopplerModel {
    pub fn cesium(temperature_k: f64) -> Self {
        DopplerModel {
            temperature_k,
            constants: PhysicalConstants::cesium(),
            resample: Resample::PerRun,
        }
    }

    /// Standard deviation of the detuning, rad/µs.
    pub fn sigma(&self) -> f64 {
        self.constants.doppler_sigma(self.temperature_k) * 1e-6
    }
}

/// i.i.d. per-atom detunings, rad/µs.
pub fn sample_doppler(model: &DopplerModel, n_atoms: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(model.temperature_k >= 0.0 && model.temperature_k.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature {} K must be >= 0",
            model.temperature_k
        )));
    }
    let dist = normal(model.sigma())?;
    Ok((0..n_atoms).map(|_| dist.sample(rng)).collect())
}

/// Gaussian trap-position jitter rescaling each pair shift as `R⁻⁶`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionJitter {
    /// Per-coordinate position HWHM, µm.
    pub position_hwhm_um: f64,
}

/// Per-pair factors `(R₀/R)⁶` after displacing every atom coordinate by a
/// Gaussian of the configured width.
pub fn sample_v_scales(
    reg: &AtomRegister,
    jitter: &InteractionJitter,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(jitter.position_hwhm_um >= 0.0 && jitter.position_hwhm_um.is_finite()) {
        return Err(Error::InvalidArgument("position HWHM must be >= 0".into()));
    }
    let Some(pos) = reg.positions() else {
        return Err(Error::InvalidRegister(
            "interaction jitter needs atom positions".into(),
        ));
    };
    let dist = normal(hwhm_to_sigma(jitter.position_hwhm_um))?;
    let moved: Vec<[f64; 3]> = pos
        .iter()
        .map(|p| [p[0] + dist.sample(rng), p[1] + dist.sample(rng), p[2] + dist.sample(rng)])
        .collect();
    Ok(reg
        .pairs()
        .iter()
        .map(|&(i, j)| (distance(&pos[i], &pos[j]) / distance(&moved[i], &moved[j])).powi(6))
        .collect())
}

/// Composite noise description; absent channels are off.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    pub rin: Option<RinModel>,
    pub frequency: Option<PsdNoise>,
    pub doppler: Option<DopplerModel>,
    pub interaction: Option<InteractionJitter>,
}

/// One draw of every active channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub seed: u64,
    pub run: u64,
    pub rin_factors: Option<Vec<f64>>,
    /// Common laser frequency offset at each step, Hz.
    pub frequency_offsets_hz: Option<Vec<f64>>,
    /// Per-atom Doppler detunings, rad/µs.
    pub doppler: AtomDetunings,
    pub v_scales: Option<Vec<f64>>,
}

const STREAM_RIN: u64 = 0;
const STREAM_FREQUENCY: u64 = 1;
const STREAM_DOPPLER: u64 = 2;
const STREAM_INTERACTION: u64 = 3;
const STREAMS_PER_RUN: u64 = 8;

/// Independent generator for one channel of one run. Every channel of every
/// run has its own stream, so changing one channel's parameters leaves the
/// other channels' draws untouched.
pub fn channel_rng(seed: u64, run: u64, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run * STREAMS_PER_RUN + channel);
    rng
}

impl NoiseModel {
    pub fn is_silent(&self) -> bool {
        self.rin.is_none() && self.frequency.is_none() && self.doppler.is_none() && self.interaction.is_none()
    }

    pub fn realize(
        &self,
        reg: &AtomRegister,
        grid: &TimeGrid,
        seed: u64,
        run: u64,
    ) -> Result<NoiseRealization> {
        let n = grid.n_steps();
        let rin_factors = self
            .rin
            .map(|m| m.sample(n, &mut channel_rng(seed, run, STREAM_RIN)))
            .transpose()?;
        let frequency_offsets_hz = self
            .frequency
            .as_ref()
            .map(|p| {
                synthesize_frequency_noise(
                    &p.psd,
                    grid,
                    p.f_max(),
                    p.df,
                    &mut channel_rng(seed, run, STREAM_FREQUENCY),
                )
            })
            .transpose()?;
        let doppler = match &self.doppler {
            None => AtomDetunings::None,
            Some(m) => {
                let mut rng = channel_rng(seed, run, STREAM_DOPPLER);
                match m.resample {
                    Resample::PerRun => AtomDetunings::Static(sample_doppler(m, reg.n_atoms(), &mut rng)?),
                    Resample::PerStep => AtomDetunings::PerStep(
                        (0..n)
                            .map(|_| sample_doppler(m, reg.n_atoms(), &mut rng))
                            .collect::<Result<_>>()?,
                    ),
                }
            }
        };
        let v_scales = self
            .interaction
            .map(|j| sample_v_scales(reg, &j, &mut channel_rng(seed, run, STREAM_INTERACTION)))
            .transpose()?;
        Ok(NoiseRealization {
            seed,
            run,
            rin_factors,
            frequency_offsets_hz,
            doppler,
            v_scales,
        })
    }
}

impl NoiseRealization {
    pub fn to_perturbation(&self) -> NoisePerturbation {
        NoisePerturbation {
            rin_factors: self.rin_factors.clone(),
            atom_detunings: self.doppler.clone(),
            common_detuning: self
                .frequency_offsets_hz
                .as_ref()
                .map(|v| v.iter().map(|f| 2.0 * PI * f * 1e-6).collect()),
            v_scales: self.v_scales.clone(),
        }
    }
}

/// Neumaier-compensated sum, evaluated in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub mean_fidelity: f64,
    pub mean_infidelity: f64,
    pub std_error: f64,
    pub fidelities: Vec<f64>,
    pub n_runs: usize,
    pub seed: u64,
}

/// Gate fidelity under `n_runs` independent noise realizations.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_fidelity(
    reg: &AtomRegister,
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    target: &GateTarget,
    model: &NoiseModel,
    n_runs: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("at least one Monte-Carlo run is required".into()));
    }
    let inputs = target.input_states(reg)?;
    let fidelities: Vec<f64> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let wrap = |e: Error| Error::RunFailed {
                run,
                source: Box::new(e),
            };
            let realization = model.realize(reg, grid, seed, run as u64).map_err(wrap)?;
            let pert = realization.to_perturbation();
            let noise = (!model.is_silent()).then_some(&pert);
            let props = half_step_propagators(decomp, fields, grid, noise).map_err(wrap)?;
            let finals: Vec<_> = inputs
                .iter()
                .map(|p| propagate(&props, p).pop().expect("non-empty"))
                .collect();
            Ok(gate_fidelity(reg, &finals, target).map_err(wrap)?.fidelity)
        })
        .collect::<Result<_>>()?;
    let n = n_runs as f64;
    let mean = compensated_sum(&fidelities) / n;
    let std_error = if n_runs > 1 {
        let dev: Vec<f64> = fidelities.iter().map(|f| (f - mean).powi(2)).collect();
        (compensated_sum(&dev) / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloResult {
        mean_fidelity: mean,
        mean_infidelity: 1.0 - mean,
        std_error,
        fidelities,
        n_runs,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepChannel {
    /// Value: relative RIN HWHM.
    Rin,
    /// Value: white frequency-noise floor, Hz²/Hz (configured bumps kept).
    PsdWhite,
    /// Value: atomic temperature, µK.
    Doppler,
    /// Value: position HWHM, nm.
    Interaction,
}

impl SweepChannel {
    pub fn name(&self) -> &'static str {
        match self {
            SweepChannel::Rin => "rin",
            SweepChannel::PsdWhite => "psd-white",
            SweepChannel::Doppler => "doppler",
            SweepChannel::Interaction => "interaction",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            SweepChannel::Rin => "relative_hwhm",
            SweepChannel::PsdWhite => "h0_hz2_per_hz",
            SweepChannel::Doppler => "temperature_uk",
            SweepChannel::Interaction => "position_hwhm_nm",
        }
    }

    /// Noise model with only this channel active at `value`; settings not
    /// fixed by `value` come from `base` or defaults.
    pub fn model(&self, base: &NoiseModel, value: f64) -> NoiseModel {
        let mut m = NoiseModel::default();
        match self {
            SweepChannel::Rin => {
                let per_step = base.rin.map_or(true, |r| r.per_step);
                m.rin = Some(RinModel { hwhm: value, per_step });
            }
            SweepChannel::PsdWhite => {
                let mut p = base
                    .frequency
                    .clone()
                    .unwrap_or_else(|| PsdNoise::new(FrequencyNoisePsd::default()));
                p.psd.h0 = value;
                m.frequency = Some(p);
            }
            SweepChannel::Doppler => {
                let mut d = base.doppler.unwrap_or_else(|| DopplerModel::cesium(0.0));
                d.temperature_k = value * 1e-6;
                m.doppler = Some(d);
            }
            SweepChannel::Interaction => {
                m.interaction = Some(InteractionJitter {
                    position_hwhm_um: value * 1e-3,
                });
            }
        }
        m
    }
}

impl FromStr for SweepChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rin" => Ok(SweepChannel::Rin),
            "psd-white" => Ok(SweepChannel::PsdWhite),
            "doppler" => Ok(SweepChannel::Doppler),
            "interaction" => Ok(SweepChannel::Interaction),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise channel `{other}` (expected rin, psd-white, doppler, interaction)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_infidelity: f64,
    pub std_error: f64,
    pub n_runs: usize,
    pub seed: u64,
}

/// One Monte-Carlo estimate per value. All values share the seed, so the
/// underlying random draws are common across the sweep.
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep(
    reg: &AtomRegister,
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    target: &GateTarget,
    base: &NoiseModel,
    channel: SweepChannel,
    values: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("noise sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let model = channel.model(base, value);
            let mc = monte_carlo_fidelity(reg, decomp, fields, grid, target, &model, n_runs, seed)?;
            Ok(SweepRow {
                value,
                mean_infidelity: mc.mean_infidelity,
                std_error: mc.std_error,
                n_runs,
                seed,
            })
        })
        .collect()
}
