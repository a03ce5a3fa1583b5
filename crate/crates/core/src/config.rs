//! TOML run configuration.
//!
//! Every physical quantity carries its unit in the key name. Frequencies
//! given in MHz or Hz are cyclic (`ν`, not `2πν`) and are converted to
//! rad/µs when the experiment is built.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::control::{gaussian_envelope, ControlField, TimeGrid, UpdateShape};
use crate::error::{Error, Result};
use crate::gates::{target_by_name, GateTarget, PhaseFreedom};
use crate::hamiltonian::{
    build_decomposition, build_fredkin_hamiltonian, build_two_photon_hamiltonian, ChannelMode,
    ControlDecomposition, DecayConvention, DriftParams, Quadrature, TransitionSpec,
};
use crate::krotov::{FunctionalKind, OptimizationConfig, OptimizationProblem};
use crate::noise::{
    DopplerModel, FrequencyNoisePsd, InteractionJitter, NoiseModel, PsdNoise, Resample, RinModel,
    ServoBump, DEFAULT_PSD_DF_HZ,
};
use crate::register::{equilateral_triangle, AtomRegister, LevelScheme, PairInteraction, Role};

/// `2π · 1 MHz` in rad/µs.
pub const MHZ: f64 = 2.0 * PI;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub register: RegisterConfig,
    pub grid: GridConfig,
    pub gate: GateConfig,
    #[serde(default)]
    pub transitions: Vec<TransitionConfig>,
    pub optimizer: Option<OptimizerConfig>,
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    QubitRydberg,
    Ladder,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterConfig {
    pub n_atoms: usize,
    pub scheme: SchemeName,
    pub roles: Vec<Role>,
    /// Explicit atom positions.
    pub positions_um: Option<Vec<[f64; 3]>>,
    /// Equilateral triangle of this side length (three atoms).
    pub triangle_spacing_um: Option<f64>,
    /// Uniform pair shift `V/2π`.
    pub interaction_mhz: Option<f64>,
    /// One `V/2π` per pair in lexicographic pair order.
    pub interaction_per_pair_mhz: Option<Vec<f64>>,
    /// `C₆/2π` with `V = C₆/R⁶`.
    pub c6_mhz_um6: Option<f64>,
    /// Rydberg decay rate, 1/s.
    #[serde(default)]
    pub gamma_r_hz: f64,
    /// Intermediate-level decay rate, 1/s.
    #[serde(default)]
    pub gamma_p_hz: f64,
    /// Intermediate-level detuning `Δ/2π`.
    #[serde(default)]
    pub delta_mhz: f64,
    /// Static Rydberg-level shift per atom, `δ/2π`.
    pub atom_detunings_mhz: Option<Vec<f64>>,
    #[serde(default = "default_decay")]
    pub decay_convention: DecayConvention,
}

fn default_decay() -> DecayConvention {
    DecayConvention::HalfRate
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub duration_us: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// `fredkin`, `c1z`/`cz`, `c2z`, `c3z`, `cnot` or `x`.
    pub target: String,
    pub phase_freedom: Option<PhaseFreedom>,
    #[serde(default = "default_mode")]
    pub channel_mode: ChannelMode,
}

fn default_mode() -> ChannelMode {
    ChannelMode::AmplitudeOnly
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub channel: String,
    pub atoms: Vec<usize>,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPulse {
    /// Peak of the Gaussian real part, `Ω/2π`.
    pub peak_mhz: f64,
    /// Peak of a Gaussian imaginary part (only with amplitude-phase mode).
    #[serde(default)]
    pub imag_peak_mhz: f64,
    /// Center as a fraction of the duration.
    #[serde(default = "half")]
    pub center: f64,
    /// Standard deviation as a fraction of the duration.
    #[serde(default = "fifth")]
    pub width: f64,
}

fn half() -> f64 {
    0.5
}

fn fifth() -> f64 {
    0.2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Step width per channel; both quadratures of a channel share it.
    pub lambda: BTreeMap<String, f64>,
    pub max_iters: usize,
    #[serde(default)]
    pub stop_delta_jt: f64,
    #[serde(default)]
    pub target_jt: f64,
    #[serde(default)]
    pub functional: FunctionalKind,
    #[serde(default = "yes")]
    pub backoff: bool,
    /// Fraction of the duration used for the update-shape ramps.
    #[serde(default = "ramp")]
    pub ramp_fraction: f64,
    /// Optional per-channel bounds on each quadrature, `Ω/2π`.
    #[serde(default)]
    pub bounds_mhz: BTreeMap<String, [f64; 2]>,
    pub initial: BTreeMap<String, InitialPulse>,
}

fn yes() -> bool {
    true
}

fn ramp() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    pub rin: Option<RinConfig>,
    pub frequency: Option<FrequencyConfig>,
    pub doppler: Option<DopplerConfig>,
    pub interaction: Option<InteractionConfig>,
}

fn default_runs() -> usize {
    50
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RinConfig {
    pub hwhm: f64,
    #[serde(default = "yes")]
    pub per_step: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub h0_hz2_per_hz: f64,
    #[serde(default)]
    pub bumps: Vec<BumpConfig>,
    pub f_max_hz: Option<f64>,
    #[serde(default = "default_df")]
    pub df_hz: f64,
}

fn default_df() -> f64 {
    DEFAULT_PSD_DF_HZ
}

/// Servo bump given by its peak height in Hz²/Hz.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub peak_hz2_per_hz: f64,
    pub sigma_hz: f64,
    pub center_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopplerConfig {
    pub temperature_uk: f64,
    #[serde(default)]
    pub resample: Resample,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionConfig {
    pub position_hwhm_nm: f64,
}

/// Everything a command needs, built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub register: AtomRegister,
    pub decomp: ControlDecomposition,
    pub grid: TimeGrid,
    pub target: GateTarget,
    pub noise: NoiseModel,
    pub n_runs: usize,
    pub seed: u64,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, text))
    }

    fn register(&self) -> Result<AtomRegister> {
        let r = &self.register;
        let scheme = match r.scheme {
            SchemeName::QubitRydberg => LevelScheme::qubit_rydberg(),
            SchemeName::Ladder => LevelScheme::ladder(),
        };
        let positions = match (&r.positions_um, r.triangle_spacing_um) {
            (Some(_), Some(_)) => {
                return Err(cfg_err(
                    "register: give either positions_um or triangle_spacing_um, not both",
                ))
            }
            (Some(p), None) => Some(p.clone()),
            (None, Some(s)) => {
                if r.n_atoms != 3 {
                    return Err(cfg_err("register.triangle_spacing_um needs n_atoms = 3"));
                }
                Some(equilateral_triangle(s))
            }
            (None, None) => None,
        };
        let interaction = match (r.interaction_mhz, &r.interaction_per_pair_mhz, r.c6_mhz_um6) {
            (Some(v), None, None) => PairInteraction::Uniform(v * MHZ),
            (None, Some(v), None) => PairInteraction::PerPair(v.iter().map(|x| x * MHZ).collect()),
            (None, None, Some(c6)) => PairInteraction::VanDerWaals { c6: c6 * MHZ },
            (None, None, None) if r.n_atoms == 1 => PairInteraction::Uniform(1.0),
            _ => {
                return Err(cfg_err(
                    "register: give exactly one of interaction_mhz, interaction_per_pair_mhz, c6_mhz_um6",
                ))
            }
        };
        AtomRegister::new(r.n_atoms, scheme, r.roles.clone(), positions, interaction)
            .map_err(|e| cfg_err(format!("register: {e}")))
    }

    fn drift(&self) -> Result<DriftParams> {
        let r = &self.register;
        for (name, v) in [("gamma_r_hz", r.gamma_r_hz), ("gamma_p_hz", r.gamma_p_hz)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(cfg_err(format!("register.{name} must be >= 0, got {v}")));
            }
        }
        Ok(DriftParams {
            gamma_r: r.gamma_r_hz * 1e-6,
            gamma_p: r.gamma_p_hz * 1e-6,
            delta: r.delta_mhz * MHZ,
            atom_detunings: r
                .atom_detunings_mhz
                .as_ref()
                .map(|v| v.iter().map(|x| x * MHZ).collect())
                .unwrap_or_default(),
            decay_convention: r.decay_convention,
        })
    }

    fn decomposition(&self, reg: &AtomRegister) -> Result<ControlDecomposition> {
        let drift = self.drift()?;
        let mode = self.gate.channel_mode;
        let built = if !self.transitions.is_empty() {
            let specs: Vec<(TransitionSpec, ChannelMode)> = self
                .transitions
                .iter()
                .map(|t| {
                    (
                        TransitionSpec {
                            atoms: t.atoms.clone(),
                            from_level: t.from.clone(),
                            to_level: t.to.clone(),
                            channel: t.channel.clone(),
                        },
                        mode,
                    )
                })
                .collect();
            build_decomposition(reg, &specs, &drift)
        } else if reg.scheme().is_ladder() {
            build_two_photon_hamiltonian(reg, &drift, mode)
        } else {
            build_fredkin_hamiltonian(reg, &drift, mode)
        };
        built.map_err(|e| cfg_err(format!("hamiltonian: {e}")))
    }

    fn target(&self) -> Result<GateTarget> {
        let t = target_by_name(&self.gate.target).map_err(|e| cfg_err(format!("gate.target: {e}")))?;
        Ok(match self.gate.phase_freedom {
            Some(pf) => t.with_phase_freedom(pf),
            None => t,
        })
    }

    fn noise_model(&self) -> Result<NoiseModel> {
        let Some(n) = &self.noise else {
            return Ok(NoiseModel::default());
        };
        let mut m = NoiseModel::default();
        if let Some(r) = &n.rin {
            if !(r.hwhm >= 0.0) {
                return Err(cfg_err("noise.rin.hwhm must be >= 0"));
            }
            m.rin = Some(RinModel {
                hwhm: r.hwhm,
                per_step: r.per_step,
            });
        }
        if let Some(f) = &n.frequency {
            let psd = FrequencyNoisePsd {
                h0: f.h0_hz2_per_hz,
                bumps: f
                    .bumps
                    .iter()
                    .map(|b| ServoBump::from_peak_height(b.peak_hz2_per_hz, b.sigma_hz, b.center_hz))
                    .collect(),
            };
            psd.validate().map_err(|e| cfg_err(format!("noise.frequency: {e}")))?;
            if !(f.df_hz > 0.0) {
                return Err(cfg_err("noise.frequency.df_hz must be > 0"));
            }
            m.frequency = Some(PsdNoise {
                psd,
                f_max: f.f_max_hz,
                df: f.df_hz,
            });
        }
        if let Some(d) = &n.doppler {
            if !(d.temperature_uk >= 0.0) {
                return Err(cfg_err("noise.doppler.temperature_uk must be >= 0"));
            }
            let mut model = DopplerModel::cesium(d.temperature_uk * 1e-6);
            model.resample = d.resample;
            m.doppler = Some(model);
        }
        if let Some(i) = &n.interaction {
            if !(i.position_hwhm_nm >= 0.0) {
                return Err(cfg_err("noise.interaction.position_hwhm_nm must be >= 0"));
            }
            m.interaction = Some(InteractionJitter {
                position_hwhm_um: i.position_hwhm_nm * 1e-3,
            });
        }
        Ok(m)
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let register = self.register()?;
        let decomp = self.decomposition(&register)?;
        let grid = TimeGrid::new(self.grid.duration_us, self.grid.n_steps)
            .map_err(|e| cfg_err(format!("grid: {e}")))?;
        let target = self.target()?;
        if target.n_qubits != register.n_atoms() {
            return Err(cfg_err(format!(
                "gate {} acts on {} qubits but the register has {} atoms",
                target.name,
                target.n_qubits,
                register.n_atoms()
            )));
        }
        let noise = self.noise_model()?;
        let (n_runs, seed) = self.noise.as_ref().map_or((default_runs(), 0), |n| (n.n_runs, n.seed));
        Ok(Experiment {
            register,
            decomp,
            grid,
            target,
            noise,
            n_runs,
            seed,
        })
    }

    pub fn optimizer(&self) -> Result<&OptimizerConfig> {
        self.optimizer
            .as_ref()
            .ok_or_else(|| cfg_err("missing [optimizer] section"))
    }
}

impl OptimizerConfig {
    fn channel_value<'a, T>(map: &'a BTreeMap<String, T>, channel: &str, what: &str) -> Result<&'a T> {
        map.get(channel)
            .ok_or_else(|| cfg_err(format!("optimizer.{what} has no entry for channel {channel}")))
    }

    fn check_channels<T>(map: &BTreeMap<String, T>, exp: &Experiment, what: &str) -> Result<()> {
        let channels = exp.decomp.channels();
        if let Some(k) = map.keys().find(|k| !channels.contains(&k.as_str())) {
            return Err(cfg_err(format!("optimizer.{what}: unknown channel {k}")));
        }
        Ok(())
    }

    pub fn settings(&self, exp: &Experiment) -> Result<OptimizationConfig> {
        if self.max_iters == 0 {
            return Err(cfg_err("optimizer.max_iters: at least one iteration is required"));
        }
        Self::check_channels(&self.lambda, exp, "lambda")?;
        let lambda = exp
            .decomp
            .controls()
            .iter()
            .map(|c| {
                let l = *Self::channel_value(&self.lambda, &c.channel, "lambda")?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(cfg_err(format!(
                        "optimizer.lambda.{}: step width must be > 0, got {l}",
                        c.channel
                    )));
                }
                Ok(l)
            })
            .collect::<Result<Vec<_>>>()?;
        if !(self.stop_delta_jt >= 0.0) || !(self.target_jt >= 0.0) {
            return Err(cfg_err("optimizer stop thresholds must be >= 0"));
        }
        Ok(OptimizationConfig {
            lambda,
            max_iters: self.max_iters,
            stop_delta_jt: self.stop_delta_jt,
            target_jt: self.target_jt,
            functional: self.functional,
            backoff: self.backoff,
            ..Default::default()
        })
    }

    pub fn initial_fields(&self, exp: &Experiment) -> Result<Vec<ControlField>> {
        Self::check_channels(&self.initial, exp, "initial")?;
        Self::check_channels(&self.bounds_mhz, exp, "bounds_mhz")?;
        exp.decomp
            .controls()
            .iter()
            .map(|c| {
                let p = Self::channel_value(&self.initial, &c.channel, "initial")?;
                let peak = match c.quadrature {
                    Quadrature::Re => p.peak_mhz,
                    Quadrature::Im => p.imag_peak_mhz,
                };
                let values = gaussian_envelope(&exp.grid, peak * MHZ, p.center, p.width);
                let mut f = ControlField::new(c.channel.clone(), c.quadrature, values);
                if let Some([lo, hi]) = self.bounds_mhz.get(&c.channel) {
                    if !(lo <= hi) {
                        return Err(cfg_err(format!("optimizer.bounds_mhz.{}: empty range", c.channel)));
                    }
                    f = f.with_bounds(lo * MHZ, hi * MHZ);
                    f.values.iter_mut().for_each(|v| *v = v.clamp(lo * MHZ, hi * MHZ));
                }
                Ok(f)
            })
            .collect()
    }

    pub fn shapes(&self, exp: &Experiment) -> Result<Vec<UpdateShape>> {
        let s = UpdateShape::flat_top(&exp.grid, self.ramp_fraction)
            .map_err(|e| cfg_err(format!("optimizer.ramp_fraction: {e}")))?;
        Ok(vec![s; exp.decomp.n_controls()])
    }

    pub fn problem<'a>(&self, exp: &'a Experiment) -> Result<OptimizationProblem<'a>> {
        Ok(OptimizationProblem {
            decomp: &exp.decomp,
            grid: exp.grid,
            initial_states: exp.target.input_states(&exp.register)?,
            targets: exp.target.target_states(&exp.register)?,
            phase_weights: exp.target.phase_weights(),
            shapes: self.shapes(exp)?,
        })
    }
}

/// Hex SHA-256 of the configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
