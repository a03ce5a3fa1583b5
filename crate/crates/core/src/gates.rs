//! Target gates, truth tables, fidelities and Rydberg-population metrics.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::control::{gaussian_envelope, ControlField, TimeGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_decomposition, ChannelMode, ControlDecomposition, DriftParams, Quadrature,
    TransitionSpec,
};
use crate::linalg::{CMatrix, CVector, C64};
use crate::propagator::{evolve_forward_many, Trajectory};
use crate::register::{AtomRegister, LevelScheme, PairInteraction, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseFreedom {
    None,
    Global,
    /// Equivalence up to `diag(e^{i m φ₁})`, `m` = number of qubits in `|1⟩`.
    PerAtomZ,
}

#[derive(Debug, Clone)]
pub struct GateTarget {
    pub name: String,
    pub n_qubits: usize,
    pub matrix: CMatrix,
    pub phase_freedom: PhaseFreedom,
}

/// Controlled swap with qubit 0 as control: `|1ab⟩ → |1ba⟩`.
pub fn target_fredkin() -> GateTarget {
    let mut m = CMatrix::zeros((8, 8));
    for i in 0..8usize {
        let j = if i & 0b100 != 0 {
            (i & 0b100) | ((i & 0b010) >> 1) | ((i & 0b001) << 1)
        } else {
            i
        };
        m[[j, i]] = C64::from(1.0);
    }
    GateTarget {
        name: "fredkin".into(),
        n_qubits: 3,
        matrix: m,
        phase_freedom: PhaseFreedom::Global,
    }
}

/// `C_k-Z` on `k + 1` qubits: `-1` on `|1…1⟩`, `+1` elsewhere.
pub fn target_ckz(k: usize) -> Result<GateTarget> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "C_k-Z supported for k in 1..=3, got {k}"
        )));
    }
    let n = k + 1;
    let dim = 1 << n;
    let mut m = CMatrix::zeros((dim, dim));
    for i in 0..dim {
        m[[i, i]] = C64::from(if i == dim - 1 { -1.0 } else { 1.0 });
    }
    Ok(GateTarget {
        name: format!("c{k}z"),
        n_qubits: n,
        matrix: m,
        phase_freedom: PhaseFreedom::PerAtomZ,
    })
}

/// CNOT with qubit 0 as control.
pub fn target_cnot() -> GateTarget {
    let mut m = CMatrix::zeros((4, 4));
    for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
        m[[j, i]] = C64::from(1.0);
    }
    GateTarget {
        name: "cnot".into(),
        n_qubits: 2,
        matrix: m,
        phase_freedom: PhaseFreedom::Global,
    }
}

/// Single-qubit NOT, `|0⟩ ↔ |1⟩`.
pub fn target_x() -> GateTarget {
    let mut m = CMatrix::zeros((2, 2));
    m[[0, 1]] = C64::from(1.0);
    m[[1, 0]] = C64::from(1.0);
    GateTarget {
        name: "x".into(),
        n_qubits: 1,
        matrix: m,
        phase_freedom: PhaseFreedom::Global,
    }
}

pub fn target_by_name(name: &str) -> Result<GateTarget> {
    match name {
        "x" => Ok(target_x()),
        "fredkin" => Ok(target_fredkin()),
        "cz" | "c1z" => target_ckz(1),
        "c2z" => target_ckz(2),
        "c3z" => target_ckz(3),
        "cnot" => Ok(target_cnot()),
        other => Err(Error::InvalidArgument(format!("unknown gate `{other}`"))),
    }
}

impl GateTarget {
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn with_phase_freedom(mut self, pf: PhaseFreedom) -> Self {
        self.phase_freedom = pf;
        self
    }

    /// Number of qubits in `|1⟩` for every computational input.
    pub fn excitation_numbers(&self) -> Vec<f64> {
        (0..self.dim()).map(|b: usize| b.count_ones() as f64).collect()
    }

    /// Phase weights used when fitting `φ₁`, or `None` without per-atom freedom.
    pub fn phase_weights(&self) -> Option<Vec<f64>> {
        (self.phase_freedom == PhaseFreedom::PerAtomZ).then(|| self.excitation_numbers())
    }

    fn check_register(&self, reg: &AtomRegister) -> Result<()> {
        if reg.n_atoms() != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                found: reg.n_atoms(),
            });
        }
        Ok(())
    }

    /// Computational basis inputs embedded in the register space.
    pub fn input_states(&self, reg: &AtomRegister) -> Result<Vec<CVector>> {
        self.check_register(reg)?;
        Ok((0..self.dim())
            .map(|b| {
                let mut v = CVector::zeros(reg.dim());
                v[reg.computational_index(b)] = C64::from(1.0);
                v
            })
            .collect())
    }

    /// `U|b⟩` embedded in the register space, for every input `b`.
    pub fn target_states(&self, reg: &AtomRegister) -> Result<Vec<CVector>> {
        self.check_register(reg)?;
        Ok((0..self.dim())
            .map(|b| {
                let mut v = CVector::zeros(reg.dim());
                for f in 0..self.dim() {
                    v[reg.computational_index(f)] = self.matrix[[f, b]];
                }
                v
            })
            .collect())
    }
}

fn check_inputs(reg: &AtomRegister, states: &[CVector]) -> Result<()> {
    let n = reg.n_qubit_states();
    if states.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} evolved computational inputs, got {}",
            states.len()
        )));
    }
    if let Some(s) = states.iter().find(|s| s.len() != reg.dim()) {
        return Err(Error::DimensionMismatch {
            expected: reg.dim(),
            found: s.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthTable {
    pub labels: Vec<String>,
    /// `probs[f][i] = |⟨f|U|i⟩|²`.
    pub probs: Vec<Vec<f64>>,
}

impl TruthTable {
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.labels.len())
            .map(|i| self.probs.iter().map(|row| row[i]).sum())
            .collect()
    }

    /// Population lost from the computational subspace for each input.
    pub fn deficits(&self) -> Vec<f64> {
        self.column_sums().iter().map(|s| 1.0 - s).collect()
    }

    /// Largest entry that is zero for the ideal gate.
    pub fn max_off_target(&self, target: &GateTarget) -> f64 {
        let mut worst: f64 = 0.0;
        for (f, row) in self.probs.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                if target.matrix[[f, i]].norm() < 1e-12 {
                    worst = worst.max(*p);
                }
            }
        }
        worst
    }

    /// Smallest entry that is one for the ideal gate.
    pub fn min_on_target(&self, target: &GateTarget) -> f64 {
        let mut worst: f64 = 1.0;
        for (f, row) in self.probs.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                if target.matrix[[f, i]].norm() > 0.5 {
                    worst = worst.min(*p);
                }
            }
        }
        worst
    }
}

pub fn truth_table(reg: &AtomRegister, final_states: &[CVector]) -> Result<TruthTable> {
    check_inputs(reg, final_states)?;
    let n = reg.n_qubit_states();
    let idx = reg.computational_indices();
    let probs = (0..n)
        .map(|f| (0..n).map(|i| final_states[i][idx[f]].norm_sqr()).collect())
        .collect();
    Ok(TruthTable {
        labels: (0..n).map(|b| reg.bit_label(b)).collect(),
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseObjective {
    /// `|(1/N) Σ e^{-i m_j φ} o_j|²`
    SquareModulus,
    /// `(1/N) Re Σ e^{-i m_j φ} o_j`
    RealPart,
}

fn phase_objective(overlaps: &[C64], weights: &[f64], phi: f64, obj: PhaseObjective) -> f64 {
    let n = overlaps.len() as f64;
    let s: C64 = overlaps
        .iter()
        .zip(weights)
        .map(|(o, m)| o * C64::from_polar(1.0, -m * phi))
        .sum::<C64>()
        / n;
    match obj {
        PhaseObjective::SquareModulus => s.norm_sqr(),
        PhaseObjective::RealPart => s.re,
    }
}

/// Maximizes the objective over `φ ∈ [0, 2π)`: a coarse scan followed by
/// golden-section refinement. Returns `(φ, value)`.
pub fn fit_phase(overlaps: &[C64], weights: &[f64], obj: PhaseObjective) -> (f64, f64) {
    const SCAN: usize = 64;
    let f = |phi: f64| phase_objective(overlaps, weights, phi, obj);
    let h = 2.0 * PI / SCAN as f64;
    let (best_i, _) = (0..SCAN)
        .map(|i| (i, f(i as f64 * h)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let (mut a, mut b) = ((best_i as f64 - 1.0) * h, (best_i as f64 + 1.0) * h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let phi = (0.5 * (a + b)).rem_euclid(2.0 * PI);
    let mut best = (phi, f(phi));
    // the grid point itself may beat a flat refinement
    let grid_phi = best_i as f64 * h;
    if f(grid_phi) > best.1 {
        best = (grid_phi, f(grid_phi));
    }
    if best.1 < f(0.0) {
        best = (0.0, f(0.0));
    }
    best
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Computational-basis phases relative to `|0…0⟩`, averaged over inputs with
/// the same number of excitations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    /// `phases[m]` for `m = 0..=n`; `phases[0] = 0`.
    pub phases: Vec<f64>,
    pub phi_1: f64,
    pub phi_11: f64,
    pub phi_111: Option<f64>,
    /// `wrap(φ₁₁ - 2φ₁)`
    pub dev_11: f64,
    /// `wrap(φ₁₁₁ - 3φ₁ - π)` for three qubits
    pub dev_111: Option<f64>,
}

pub fn phase_report(reg: &AtomRegister, final_states: &[CVector]) -> Result<PhaseReport> {
    check_inputs(reg, final_states)?;
    let n = reg.n_atoms();
    if n < 2 {
        return Err(Error::NotApplicable("phase report needs at least two qubits".into()));
    }
    let diag: Vec<C64> = (0..reg.n_qubit_states())
        .map(|b| final_states[b][reg.computational_index(b)])
        .collect();
    let ref_phase = diag[0].arg();
    let mut sums = vec![C64::from(0.0); n + 1];
    for (b, z) in diag.iter().enumerate() {
        let m = b.count_ones() as usize;
        if z.norm() > 0.0 {
            sums[m] += z / z.norm() * C64::from_polar(1.0, -ref_phase);
        }
    }
    let phases: Vec<f64> = sums.iter().map(|s| s.arg()).collect();
    let phi_1 = phases[1];
    let phi_11 = phases[2];
    let phi_111 = (n >= 3).then(|| phases[3]);
    Ok(PhaseReport {
        dev_11: wrap_angle(phi_11 - 2.0 * phi_1),
        dev_111: phi_111.map(|p| wrap_angle(p - 3.0 * phi_1 - PI)),
        phases,
        phi_1,
        phi_11,
        phi_111,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub fidelity: f64,
    pub infidelity: f64,
    /// Mean of per-input `|⟨target_j|ψ_j⟩|²`.
    pub average_probability: f64,
    pub phi_1: Option<f64>,
    #[serde(serialize_with = "serialize_complex_list")]
    pub overlaps: Vec<C64>,
    pub leakage: Vec<f64>,
    pub rydberg_time_us: Option<f64>,
    pub phases: Option<PhaseReport>,
}

fn serialize_complex_list<S: serde::Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

/// Overlaps `⟨target_j|ψ_j⟩` for all computational inputs.
pub fn overlaps(targets: &[CVector], states: &[CVector]) -> Vec<C64> {
    targets
        .iter()
        .zip(states)
        .map(|(t, s)| t.iter().zip(s).map(|(a, b)| a.conj() * b).sum())
        .collect()
}

pub fn gate_fidelity(
    reg: &AtomRegister,
    final_states: &[CVector],
    target: &GateTarget,
) -> Result<FidelityReport> {
    check_inputs(reg, final_states)?;
    let targets = target.target_states(reg)?;
    let ov = overlaps(&targets, final_states);
    let n = ov.len() as f64;
    let (fidelity, phi_1) = match target.phase_weights() {
        Some(w) => {
            let (phi, f) = fit_phase(&ov, &w, PhaseObjective::SquareModulus);
            (f, Some(phi))
        }
        None => ((ov.iter().sum::<C64>() / n).norm_sqr(), None),
    };
    let fidelity = fidelity.clamp(0.0, 1.0);
    let idx = reg.computational_indices();
    let leakage = final_states
        .iter()
        .map(|s| 1.0 - idx.iter().map(|&i| s[i].norm_sqr()).sum::<f64>())
        .collect();
    let phases = if target.phase_freedom == PhaseFreedom::PerAtomZ && reg.n_atoms() >= 2 {
        Some(phase_report(reg, final_states)?)
    } else {
        None
    };
    Ok(FidelityReport {
        fidelity,
        infidelity: 1.0 - fidelity,
        average_probability: ov.iter().map(|z| z.norm_sqr()).sum::<f64>() / n,
        phi_1,
        overlaps: ov,
        leakage,
        rydberg_time_us: None,
        phases,
    })
}

/// Trapezoidal `∫ P_r(t) dt` of the input-averaged total Rydberg population.
pub fn rydberg_population_integral(reg: &AtomRegister, trajectories: &[Trajectory]) -> Result<f64> {
    let Some(first) = trajectories.first() else {
        return Ok(0.0);
    };
    let times = &first.times;
    if trajectories.iter().any(|t| t.times != *times || t.states.len() != times.len()) {
        return Err(Error::GridMismatch("trajectories do not share one grid".into()));
    }
    let mut avg = vec![0.0; times.len()];
    for tr in trajectories {
        for (a, p) in avg.iter_mut().zip(tr.rydberg_population(reg)) {
            *a += p;
        }
    }
    let n = trajectories.len() as f64;
    Ok(times
        .windows(2)
        .zip(avg.windows(2))
        .map(|(t, p)| 0.5 * (t[1] - t[0]) * (p[0] + p[1]) / n)
        .sum())
}

/// Basis states reachable through the coupling graph from computational
/// states whose control qubit equals `control_value`, restricted to at most
/// one Rydberg excitation.
pub fn closed_subspace(
    reg: &AtomRegister,
    decomp: &ControlDecomposition,
    control_value: usize,
) -> Result<Vec<bool>> {
    let controls = reg.atoms_with_role(Role::Control);
    if controls.len() != 1 {
        return Err(Error::InvalidRegister(
            "closed subspaces need exactly one control atom".into(),
        ));
    }
    if control_value > 1 {
        return Err(Error::InvalidArgument(format!(
            "control value must be 0 or 1, got {control_value}"
        )));
    }
    let c = controls[0];
    let dim = reg.dim();
    let mut adj = vec![Vec::new(); dim];
    for op in decomp.controls() {
        for &(i, j, _) in op.sparse().entries() {
            if i != j {
                adj[i].push(j);
            }
        }
    }
    let mut inside = vec![false; dim];
    let mut queue = VecDeque::new();
    for b in 0..reg.n_qubit_states() {
        let i = reg.computational_index(b);
        if reg.level_of(i, c) == reg.scheme().computational()[control_value] {
            inside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !inside[j] && reg.rydberg_count(j) <= 1 {
                inside[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(inside)
}

/// Population outside the closed subspace of `control_value` at every grid
/// point. Inputs that are not in a definite control state are rejected.
pub fn closed_subspace_leakage(
    reg: &AtomRegister,
    decomp: &ControlDecomposition,
    trajectory: &Trajectory,
    control_value: usize,
) -> Result<Vec<f64>> {
    let inside = closed_subspace(reg, decomp, control_value)?;
    let psi0 = &trajectory.states[0];
    let total: f64 = psi0.iter().map(|z| z.norm_sqr()).sum();
    let c = reg.atoms_with_role(Role::Control)[0];
    let level = reg.scheme().computational()[control_value];
    let matching: f64 = psi0
        .iter()
        .enumerate()
        .filter(|(i, _)| reg.level_of(*i, c) == level)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    if (matching - total).abs() > 1e-9 * total.max(1e-300) {
        return Err(Error::NotApplicable(
            "initial state has no definite control value".into(),
        ));
    }
    Ok(trajectory
        .states
        .iter()
        .map(|s| {
            s.iter()
                .zip(&inside)
                .filter(|(_, &ins)| !ins)
                .map(|(z, _)| z.norm_sqr())
                .sum()
        })
        .collect())
}

/// Blockade CNOT built from Gaussian `π`–`2π`–`π` pulses on a two-atom
/// register, used as a baseline for Rydberg-population comparisons.
#[derive(Debug, Clone)]
pub struct GaussianCnotBaseline {
    pub register: AtomRegister,
    pub decomp: ControlDecomposition,
    pub grid: TimeGrid,
    pub fields: Vec<ControlField>,
}

impl GaussianCnotBaseline {
    /// `peak_omega` in rad/µs, `v` the blockade shift, `n_steps_per_pulse`
    /// samples per Gaussian (each truncated at ±4σ).
    pub fn new(peak_omega: f64, v: f64, gamma_r: f64, n_steps_per_pulse: usize) -> Result<Self> {
        if !(peak_omega > 0.0) {
            return Err(Error::InvalidArgument("peak Rabi frequency must be positive".into()));
        }
        let register = AtomRegister::new(
            2,
            LevelScheme::qubit_rydberg(),
            vec![Role::Control, Role::Target],
            None,
            PairInteraction::Uniform(v),
        )?;
        let tr = |atom: usize, channel: &str| {
            (
                TransitionSpec {
                    atoms: vec![atom],
                    from_level: "1".into(),
                    to_level: "r".into(),
                    channel: channel.into(),
                },
                ChannelMode::AmplitudeOnly,
            )
        };
        let drift = DriftParams {
            gamma_r,
            ..Default::default()
        };
        let decomp =
            build_decomposition(&register, &[tr(0, "Omega_c"), tr(1, "Omega_t")], &drift)?;

        // area ∫Ω dt = θ with Ω = peak · exp(-t²/2σ²) gives σ = θ / (peak √(2π))
        let sigma = |area: f64| area / (peak_omega * (2.0 * PI).sqrt());
        let widths = [8.0 * sigma(PI), 8.0 * sigma(2.0 * PI), 8.0 * sigma(PI)];
        let total: f64 = widths.iter().sum();
        let n = 3 * n_steps_per_pulse.max(2);
        let grid = TimeGrid::new(total, n)?;
        let pulse = |start: f64, area: f64| -> Vec<f64> {
            let s = sigma(area);
            let c = start + 4.0 * s;
            grid.midpoints()
                .iter()
                .map(|t| {
                    if (t - c).abs() <= 4.0 * s {
                        peak_omega * (-(t - c).powi(2) / (2.0 * s * s)).exp()
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let p1 = pulse(0.0, PI);
        let p2 = pulse(widths[0], 2.0 * PI);
        let p3 = pulse(widths[0] + widths[1], PI);
        let control: Vec<f64> = p1.iter().zip(&p3).map(|(a, b)| a + b).collect();
        let fields = vec![
            ControlField::new("Omega_c", Quadrature::Re, control),
            ControlField::new("Omega_t", Quadrature::Re, p2),
        ];
        Ok(GaussianCnotBaseline {
            register,
            decomp,
            grid,
            fields,
        })
    }

    /// Sequence whose total length is `duration`: `σ_π = duration / 32`, so
    /// the `π` pulses span `duration / 4` each and the `2π` pulse half.
    pub fn with_duration(duration: f64, v: f64, gamma_r: f64, n_steps_per_pulse: usize) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidArgument("baseline duration must be positive".into()));
        }
        let sigma_pi = duration / 32.0;
        Self::new(PI / (sigma_pi * (2.0 * PI).sqrt()), v, gamma_r, n_steps_per_pulse)
    }

    pub fn trajectories(&self) -> Result<Vec<Trajectory>> {
        let inputs: Vec<CVector> = (0..4)
            .map(|b| {
                let mut v = CVector::zeros(self.register.dim());
                v[self.register.computational_index(b)] = C64::from(1.0);
                v
            })
            .collect();
        evolve_forward_many(&self.decomp, &self.fields, &self.grid, &inputs, None)
    }

    /// Input-averaged time-integrated Rydberg population, µs.
    pub fn rydberg_time(&self) -> Result<f64> {
        rydberg_population_integral(&self.register, &self.trajectories()?)
    }
}

/// Convenience wrapper: a single Gaussian envelope on one channel.
pub fn gaussian_field(
    channel: &str,
    grid: &TimeGrid,
    peak: f64,
    center: f64,
    width: f64,
) -> ControlField {
    ControlField::new(channel, Quadrature::Re, gaussian_envelope(grid, peak, center, width))
}
