//! Linearized Hamiltonians `H(t) = H0 + Σ χ_i(t) H_i` for the Rydberg gate
//! families, including non-Hermitian decay and per-run noise shifts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, CMatrix, SparseOp, C64, I};
use crate::register::{AtomRegister, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Re,
    Im,
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrature::Re => "re",
            Quadrature::Im => "im",
        })
    }
}

/// Whether a channel is optimized as a real amplitude (fixed phase) or as
/// independent real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    AmplitudeOnly,
    AmplitudePhase,
}

/// A laser or microwave transition driven by one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSpec {
    pub atoms: Vec<usize>,
    /// `from` is the ket side of the Hermitian-conjugate term: the channel
    /// contributes `(Ω/2)|to⟩⟨from| + h.c.`.
    pub from_level: String,
    pub to_level: String,
    pub channel: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayConvention {
    /// `-i γ/2 |r⟩⟨r|`: amplitude decays as `exp(-γt/2)`, population as `exp(-γt)`.
    HalfRate,
    /// `-i γ |r⟩⟨r|`.
    FullRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftParams {
    /// Rydberg decay rate, 1/µs.
    pub gamma_r: f64,
    /// Intermediate-level decay rate, 1/µs (ladder scheme only).
    pub gamma_p: f64,
    /// Intermediate-level detuning, rad/µs (ladder scheme only).
    pub delta: f64,
    /// Static per-atom shift of the Rydberg level, rad/µs.
    pub atom_detunings: Vec<f64>,
    pub decay_convention: DecayConvention,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            gamma_r: 0.0,
            gamma_p: 0.0,
            delta: 0.0,
            atom_detunings: Vec::new(),
            decay_convention: DecayConvention::HalfRate,
        }
    }
}

impl DriftParams {
    fn validate(&self, n_atoms: usize) -> Result<()> {
        if !(self.gamma_r >= 0.0 && self.gamma_r.is_finite()) {
            return Err(Error::InvalidArgument("gamma_r must be finite and >= 0".into()));
        }
        if !(self.gamma_p >= 0.0 && self.gamma_p.is_finite()) {
            return Err(Error::InvalidArgument("gamma_p must be finite and >= 0".into()));
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidArgument("delta must be finite".into()));
        }
        if !self.atom_detunings.is_empty() && self.atom_detunings.len() != n_atoms {
            return Err(Error::DimensionMismatch {
                expected: n_atoms,
                found: self.atom_detunings.len(),
            });
        }
        Ok(())
    }

    fn decay_factor(&self) -> f64 {
        match self.decay_convention {
            DecayConvention::HalfRate => 0.5,
            DecayConvention::FullRate => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlOperator {
    pub channel: String,
    pub quadrature: Quadrature,
    pub op: CMatrix,
    sparse: SparseOp,
}

impl ControlOperator {
    pub fn new(channel: impl Into<String>, quadrature: Quadrature, op: CMatrix) -> Self {
        let sparse = SparseOp::from_dense(&op);
        ControlOperator {
            channel: channel.into(),
            quadrature,
            op,
            sparse,
        }
    }

    pub fn sparse(&self) -> &SparseOp {
        &self.sparse
    }
}

/// `n_i n_j` projector of a Rydberg pair together with its nominal shift.
#[derive(Debug, Clone)]
pub struct PairTerm {
    pub atoms: (usize, usize),
    pub strength: f64,
    pub indicator: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ControlDecomposition {
    dim: usize,
    h0: CMatrix,
    controls: Vec<ControlOperator>,
    rydberg_projectors: Vec<Vec<f64>>,
    pair_terms: Vec<PairTerm>,
    structure: BlockStructure,
    h0_blocks: Vec<CMatrix>,
    control_blocks: Vec<Vec<CMatrix>>,
}

impl ControlDecomposition {
    /// `rydberg_projectors[a]` is the diagonal of `|r_a⟩⟨r_a|` and is used for
    /// per-atom detuning noise and population bookkeeping.
    pub fn new(
        h0: CMatrix,
        controls: Vec<ControlOperator>,
        rydberg_projectors: Vec<Vec<f64>>,
        pair_terms: Vec<PairTerm>,
    ) -> Result<Self> {
        let dim = h0.nrows();
        if h0.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: h0.ncols(),
            });
        }
        for c in &controls {
            if c.op.dim() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.op.nrows(),
                });
            }
        }
        for p in rydberg_projectors
            .iter()
            .chain(pair_terms.iter().map(|t| &t.indicator))
        {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
        }
        let structure =
            BlockStructure::from_operators(dim, std::iter::once(&h0).chain(controls.iter().map(|c| &c.op)));
        let h0_blocks = structure.extract(&h0);
        let control_blocks = controls.iter().map(|c| structure.extract(&c.op)).collect();
        Ok(ControlDecomposition {
            dim,
            h0,
            controls,
            rydberg_projectors,
            pair_terms,
            structure,
            h0_blocks,
            control_blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    pub fn controls(&self) -> &[ControlOperator] {
        &self.controls
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn rydberg_projectors(&self) -> &[Vec<f64>] {
        &self.rydberg_projectors
    }

    pub fn pair_terms(&self) -> &[PairTerm] {
        &self.pair_terms
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn control_index(&self, channel: &str, quadrature: Quadrature) -> Option<usize> {
        self.controls
            .iter()
            .position(|c| c.channel == channel && c.quadrature == quadrature)
    }

    /// Distinct channel names in control order.
    pub fn channels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.controls {
            if !out.contains(&c.channel.as_str()) {
                out.push(&c.channel);
            }
        }
        out
    }

    /// Dense `H0 + Σ c_l H_l + diag(shift)`.
    pub fn assemble(&self, coeffs: &[f64], diag_shift: Option<&[f64]>) -> CMatrix {
        let mut h = self.h0.clone();
        for (c, op) in coeffs.iter().zip(&self.controls) {
            if *c != 0.0 {
                h.scaled_add(C64::from(*c), &op.op);
            }
        }
        if let Some(d) = diag_shift {
            for (i, v) in d.iter().enumerate() {
                h[[i, i]] += v;
            }
        }
        h
    }

    /// Same as [`Self::assemble`] but restricted to each block of
    /// [`Self::structure`].
    pub fn block_generators(&self, coeffs: &[f64], diag_shift: Option<&[f64]>) -> Vec<CMatrix> {
        self.structure
            .blocks()
            .iter()
            .enumerate()
            .map(|(b, idx)| {
                let mut h = self.h0_blocks[b].clone();
                for (l, c) in coeffs.iter().enumerate() {
                    if *c != 0.0 {
                        h.scaled_add(C64::from(*c), &self.control_blocks[l][b]);
                    }
                }
                if let Some(d) = diag_shift {
                    for (r, &gi) in idx.iter().enumerate() {
                        h[[r, r]] += d[gi];
                    }
                }
                h
            })
            .collect()
    }

    /// Control coefficients and diagonal shift for time step `k` under an
    /// optional noise realization.
    pub fn step_terms(
        &self,
        k: usize,
        controls: &[f64],
        noise: Option<&NoisePerturbation>,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let Some(noise) = noise else {
            return (controls.to_vec(), None);
        };
        let scale = noise.rin_factors.as_ref().map_or(1.0, |r| 1.0 + r[k]);
        let coeffs = controls.iter().map(|c| c * scale).collect();

        let mut shift = vec![0.0; self.dim];
        let mut any = false;
        let common = noise.common_detuning.as_ref().map_or(0.0, |c| c[k]);
        for (a, proj) in self.rydberg_projectors.iter().enumerate() {
            let d = noise.atom_detunings.at(k, a) + common;
            if d != 0.0 {
                any = true;
                for (s, p) in shift.iter_mut().zip(proj) {
                    *s += d * p;
                }
            }
        }
        if let Some(scales) = &noise.v_scales {
            for (term, s) in self.pair_terms.iter().zip(scales) {
                let dv = (s - 1.0) * term.strength;
                if dv != 0.0 {
                    any = true;
                    for (x, p) in shift.iter_mut().zip(&term.indicator) {
                        *x += dv * p;
                    }
                }
            }
        }
        (coeffs, any.then_some(shift))
    }
}

/// Per-atom Rydberg-level detunings, rad/µs.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum AtomDetunings {
    #[default]
    None,
    /// One value per atom for the whole gate.
    Static(Vec<f64>),
    /// `values[k][atom]`, resampled at every step.
    PerStep(Vec<Vec<f64>>),
}

impl AtomDetunings {
    pub fn at(&self, k: usize, atom: usize) -> f64 {
        match self {
            AtomDetunings::None => 0.0,
            AtomDetunings::Static(v) => v[atom],
            AtomDetunings::PerStep(v) => v[k][atom],
        }
    }
}

/// Stochastic perturbation of the Hamiltonian for one noise realization.
///
/// Channel amplitudes are scaled by `1 + rin_factors[k]`; every atom's
/// Rydberg level is shifted by its own detuning plus the common laser
/// frequency offset `common_detuning[k]`; pair shifts are scaled by
/// `v_scales`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoisePerturbation {
    pub rin_factors: Option<Vec<f64>>,
    pub atom_detunings: AtomDetunings,
    pub common_detuning: Option<Vec<f64>>,
    pub v_scales: Option<Vec<f64>>,
}

impl NoisePerturbation {
    pub fn validate(&self, n_steps: usize, n_atoms: usize, n_pairs: usize) -> Result<()> {
        let check = |name: &str, len: usize, expected: usize| {
            if len != expected {
                Err(Error::GridMismatch(format!(
                    "{name} has length {len}, expected {expected}"
                )))
            } else {
                Ok(())
            }
        };
        if let Some(r) = &self.rin_factors {
            check("rin_factors", r.len(), n_steps)?;
        }
        if let Some(c) = &self.common_detuning {
            check("common_detuning", c.len(), n_steps)?;
        }
        match &self.atom_detunings {
            AtomDetunings::None => {}
            AtomDetunings::Static(v) => check("atom_detunings", v.len(), n_atoms)?,
            AtomDetunings::PerStep(v) => {
                check("atom_detunings", v.len(), n_steps)?;
                for row in v {
                    check("atom_detunings row", row.len(), n_atoms)?;
                }
            }
        }
        if let Some(s) = &self.v_scales {
            check("v_scales", s.len(), n_pairs)?;
        }
        Ok(())
    }
}

/// A decomposition paired with one validated noise realization.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedDecomposition<'a> {
    pub decomp: &'a ControlDecomposition,
    pub noise: &'a NoisePerturbation,
}

impl PerturbedDecomposition<'_> {
    /// Dense Hamiltonian of time step `k` for unperturbed control values.
    pub fn hamiltonian(&self, k: usize, controls: &[f64]) -> CMatrix {
        let (c, d) = self.decomp.step_terms(k, controls, Some(self.noise));
        self.decomp.assemble(&c, d.as_deref())
    }
}

pub fn apply_noise_perturbation<'a>(
    decomp: &'a ControlDecomposition,
    noise: &'a NoisePerturbation,
    n_steps: usize,
) -> Result<PerturbedDecomposition<'a>> {
    noise.validate(
        n_steps,
        decomp.rydberg_projectors().len(),
        decomp.pair_terms().len(),
    )?;
    Ok(PerturbedDecomposition { decomp, noise })
}

fn single_atom_transition(
    reg: &AtomRegister,
    atom: usize,
    to: usize,
    from: usize,
    coeff: C64,
    out: &mut CMatrix,
) {
    let d = reg.scheme().n_levels();
    let stride = d.pow((reg.n_atoms() - 1 - atom) as u32);
    for idx in 0..reg.dim() {
        if reg.level_of(idx, atom) == from {
            let target = idx + to * stride - from * stride;
            out[[target, idx]] += coeff;
        }
    }
}

fn level_projector(reg: &AtomRegister, atom: usize, level: usize) -> Vec<f64> {
    (0..reg.dim())
        .map(|i| if reg.level_of(i, atom) == level { 1.0 } else { 0.0 })
        .collect()
}

/// Generic builder: drift from `drift` plus the register's pair shifts, and
/// one or two control operators per transition.
pub fn build_decomposition(
    reg: &AtomRegister,
    transitions: &[(TransitionSpec, ChannelMode)],
    drift: &DriftParams,
) -> Result<ControlDecomposition> {
    drift.validate(reg.n_atoms())?;
    let dim = reg.dim();
    let scheme = reg.scheme();
    let r = scheme.rydberg();
    let decay = drift.decay_factor();

    let rydberg_projectors: Vec<Vec<f64>> =
        (0..reg.n_atoms()).map(|a| level_projector(reg, a, r)).collect();

    let mut h0 = CMatrix::zeros((dim, dim));
    for (a, proj) in rydberg_projectors.iter().enumerate() {
        let det = drift.atom_detunings.get(a).copied().unwrap_or(0.0);
        let z = C64::new(det, -decay * drift.gamma_r);
        for (i, p) in proj.iter().enumerate() {
            h0[[i, i]] += z * p;
        }
        if let Some(p_level) = scheme.intermediate() {
            let z = C64::new(drift.delta, -decay * drift.gamma_p);
            for (i, p) in level_projector(reg, a, p_level).iter().enumerate() {
                h0[[i, i]] += z * p;
            }
        }
    }
    let pair_terms: Vec<PairTerm> = reg
        .pairs()
        .iter()
        .zip(reg.pair_strengths())
        .map(|(&(i, j), &v)| PairTerm {
            atoms: (i, j),
            strength: v,
            indicator: rydberg_projectors[i]
                .iter()
                .zip(&rydberg_projectors[j])
                .map(|(a, b)| a * b)
                .collect(),
        })
        .collect();
    for term in &pair_terms {
        for (i, p) in term.indicator.iter().enumerate() {
            h0[[i, i]] += term.strength * p;
        }
    }

    let mut controls = Vec::new();
    let mut seen: Vec<(&str, Vec<usize>, usize, usize)> = Vec::new();
    for (spec, mode) in transitions {
        let from = scheme.index_of(&spec.from_level)?;
        let to = scheme.index_of(&spec.to_level)?;
        if from == to {
            return Err(Error::InvalidArgument(format!(
                "transition on channel {} couples a level to itself",
                spec.channel
            )));
        }
        if let Some(&a) = spec.atoms.iter().find(|&&a| a >= reg.n_atoms()) {
            return Err(Error::InvalidArgument(format!("atom {a} out of range")));
        }
        let mut atoms = spec.atoms.clone();
        atoms.sort_unstable();
        let key = (spec.channel.as_str(), atoms, from.min(to), from.max(to));
        if seen.contains(&key) {
            return Err(Error::InvalidArgument(format!(
                "duplicate transition on channel {}",
                spec.channel
            )));
        }
        seen.push(key);

        let mut re = CMatrix::zeros((dim, dim));
        let mut im = CMatrix::zeros((dim, dim));
        for &a in &spec.atoms {
            single_atom_transition(reg, a, to, from, C64::from(0.5), &mut re);
            single_atom_transition(reg, a, from, to, C64::from(0.5), &mut re);
            single_atom_transition(reg, a, to, from, 0.5 * I, &mut im);
            single_atom_transition(reg, a, from, to, -0.5 * I, &mut im);
        }
        controls.push(ControlOperator::new(&spec.channel, Quadrature::Re, re));
        if *mode == ChannelMode::AmplitudePhase {
            controls.push(ControlOperator::new(&spec.channel, Quadrature::Im, im));
        }
    }
    // group operators by channel in first-appearance order; a channel driving
    // several transitions shares one field per quadrature
    merge_shared_channels(controls)
        .and_then(|c| ControlDecomposition::new(h0, c, rydberg_projectors, pair_terms))
}

fn merge_shared_channels(ops: Vec<ControlOperator>) -> Result<Vec<ControlOperator>> {
    let mut out: Vec<ControlOperator> = Vec::new();
    for op in ops {
        if let Some(existing) = out
            .iter_mut()
            .find(|o| o.channel == op.channel && o.quadrature == op.quadrature)
        {
            let merged = &existing.op + &op.op;
            *existing = ControlOperator::new(op.channel, op.quadrature, merged);
        } else {
            out.push(op);
        }
    }
    Ok(out)
}

pub const CHANNEL_P: &str = "Omega_p";
pub const CHANNEL_R: &str = "Omega_r";
pub const CHANNEL_1: &str = "Omega_1";
pub const CHANNEL_2: &str = "Omega_2";

/// Controlled-swap Hamiltonian: `Omega_p` drives `0 ↔ 1` on the two target
/// atoms, `Omega_r` drives `1 ↔ r` on all atoms, with blockade shifts and
/// Rydberg decay in the drift.
pub fn build_fredkin_hamiltonian(
    reg: &AtomRegister,
    drift: &DriftParams,
    mode: ChannelMode,
) -> Result<ControlDecomposition> {
    if reg.scheme().is_ladder() {
        return Err(Error::InvalidRegister(
            "controlled-swap Hamiltonian needs the {0,1,r} level scheme".into(),
        ));
    }
    let controls = reg.atoms_with_role(Role::Control);
    let targets = reg.atoms_with_role(Role::Target);
    if controls.len() != 1 || targets.len() != 2 {
        return Err(Error::InvalidRegister(format!(
            "controlled-swap needs 1 control and 2 targets, got {} and {}",
            controls.len(),
            targets.len()
        )));
    }
    let labels = reg.scheme().labels();
    let (l0, l1, lr) = (&labels[0], &labels[1], &labels[reg.scheme().rydberg()]);
    let transitions = [
        (
            TransitionSpec {
                atoms: targets,
                from_level: l1.clone(),
                to_level: l0.clone(),
                channel: CHANNEL_P.into(),
            },
            mode,
        ),
        (
            TransitionSpec {
                atoms: (0..reg.n_atoms()).collect(),
                from_level: l1.clone(),
                to_level: lr.clone(),
                channel: CHANNEL_R.into(),
            },
            mode,
        ),
    ];
    build_decomposition(reg, &transitions, drift)
}

/// Two-photon ladder Hamiltonian with global beams: `Omega_1` on `1 ↔ p`,
/// `Omega_2` on `p ↔ r`, detuning `Δ` on `p`.
pub fn build_two_photon_hamiltonian(
    reg: &AtomRegister,
    drift: &DriftParams,
    mode: ChannelMode,
) -> Result<ControlDecomposition> {
    let scheme = reg.scheme();
    let Some(p) = scheme.intermediate() else {
        return Err(Error::InvalidRegister(
            "two-photon Hamiltonian needs an intermediate level".into(),
        ));
    };
    let labels = scheme.labels();
    let all: Vec<usize> = (0..reg.n_atoms()).collect();
    let one = &labels[scheme.computational()[1]];
    let transitions = [
        (
            TransitionSpec {
                atoms: all.clone(),
                from_level: labels[p].clone(),
                to_level: one.clone(),
                channel: CHANNEL_1.into(),
            },
            mode,
        ),
        (
            TransitionSpec {
                atoms: all,
                from_level: labels[p].clone(),
                to_level: labels[scheme.rydberg()].clone(),
                channel: CHANNEL_2.into(),
            },
            mode,
        ),
    ];
    build_decomposition(reg, &transitions, drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{adjoint, expm};
    use crate::register::{equilateral_triangle, LevelScheme, PairInteraction};
    use std::f64::consts::PI;

    fn fredkin_register(v: f64) -> AtomRegister {
        AtomRegister::new(
            3,
            LevelScheme::qubit_rydberg(),
            vec![Role::Control, Role::Target, Role::Target],
            Some(equilateral_triangle(3.0)),
            PairInteraction::Uniform(v),
        )
        .unwrap()
    }

    fn max_abs(a: &CMatrix) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn fredkin_controls_and_hermiticity() {
        let reg = fredkin_register(2.0 * PI * 1000.0);
        let d = build_fredkin_hamiltonian(&reg, &DriftParams::default(), ChannelMode::AmplitudePhase)
            .unwrap();
        assert_eq!(d.n_controls(), 4);
        assert_eq!(d.channels(), vec![CHANNEL_P, CHANNEL_R]);
        for op in std::iter::once(d.h0()).chain(d.controls().iter().map(|c| &c.op)) {
            assert!(max_abs(&(op - &adjoint(op))) < 1e-15);
        }
        // Omega_p never touches the control atom
        let p = &d.controls()[0].op;
        let i100 = reg.basis_index(&["1", "0", "0"]).unwrap();
        let i000 = reg.basis_index(&["0", "0", "0"]).unwrap();
        assert_eq!(p[[i000, i100]], C64::from(0.0));
        let i010 = reg.basis_index(&["0", "1", "0"]).unwrap();
        assert_eq!(p[[i000, i010]], C64::from(0.5));
        // control atom 0 parked in |0> is decoupled: blocks of size 9 and 18
        let mut sizes: Vec<usize> = d.structure().blocks().iter().map(|b| b.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![9, 18]);
    }

    #[test]
    fn im_quadrature_matches_complex_rabi_frequency() {
        // Ω = a + i b on |r><1|: (Ω/2)|r><1| + (Ω*/2)|1><r|
        let reg = AtomRegister::new(
            1,
            LevelScheme::qubit_rydberg(),
            vec![Role::Target],
            None,
            PairInteraction::Uniform(1.0),
        )
        .unwrap();
        let spec = TransitionSpec {
            atoms: vec![0],
            from_level: "1".into(),
            to_level: "r".into(),
            channel: "Omega_r".into(),
        };
        let d = build_decomposition(&reg, &[(spec, ChannelMode::AmplitudePhase)], &DriftParams::default())
            .unwrap();
        let (a, b) = (0.3, -1.1);
        let h = d.assemble(&[a, b], None);
        let omega = C64::new(a, b);
        assert!((h[[2, 1]] - omega / 2.0).norm() < 1e-15);
        assert!((h[[1, 2]] - omega.conj() / 2.0).norm() < 1e-15);
    }

    #[test]
    fn decay_conventions() {
        let reg = fredkin_register(1.0);
        let mut drift = DriftParams {
            gamma_r: 0.2,
            ..Default::default()
        };
        let d = build_fredkin_hamiltonian(&reg, &drift, ChannelMode::AmplitudeOnly).unwrap();
        let i = reg.basis_index(&["r", "0", "0"]).unwrap();
        assert!((d.h0()[[i, i]] - C64::new(0.0, -0.1)).norm() < 1e-15);
        drift.decay_convention = DecayConvention::FullRate;
        let d = build_fredkin_hamiltonian(&reg, &drift, ChannelMode::AmplitudeOnly).unwrap();
        assert!((d.h0()[[i, i]] - C64::new(0.0, -0.2)).norm() < 1e-15);
    }

    #[test]
    fn drift_annihilates_computational_states() {
        let reg = fredkin_register(2.0 * PI * 1000.0);
        let drift = DriftParams {
            gamma_r: 0.01,
            ..Default::default()
        };
        let d = build_fredkin_hamiltonian(&reg, &drift, ChannelMode::AmplitudePhase).unwrap();
        let u = expm(&d.assemble(&[0.0; 4], None).mapv(|z| -I * z * 3.0)).unwrap();
        for idx in reg.computational_indices() {
            assert!((u[[idx, idx]] - C64::from(1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn two_photon_register_has_four_controls() {
        let reg = AtomRegister::new(
            3,
            LevelScheme::ladder(),
            vec![Role::Control, Role::Control, Role::Target],
            Some(equilateral_triangle(3.0)),
            PairInteraction::VanDerWaals {
                c6: 2.0 * PI * 1.5e6,
            },
        )
        .unwrap();
        let drift = DriftParams {
            delta: 2.0 * PI * 1000.0,
            ..Default::default()
        };
        let d = build_two_photon_hamiltonian(&reg, &drift, ChannelMode::AmplitudePhase).unwrap();
        assert_eq!(d.dim(), 64);
        assert_eq!(d.n_controls(), 4);
        let ip = reg.basis_index(&["p", "0", "0"]).unwrap();
        assert!((d.h0()[[ip, ip]].re - 2.0 * PI * 1000.0).abs() < 1e-9);
        assert!(build_two_photon_hamiltonian(&fredkin_register(1.0), &drift, ChannelMode::AmplitudeOnly).is_err());
        assert!(build_fredkin_hamiltonian(&reg, &drift, ChannelMode::AmplitudeOnly).is_err());
    }

    #[test]
    fn fredkin_role_validation() {
        let reg = AtomRegister::new(
            3,
            LevelScheme::qubit_rydberg(),
            vec![Role::Control, Role::Control, Role::Target],
            None,
            PairInteraction::Uniform(1.0),
        )
        .unwrap();
        assert!(build_fredkin_hamiltonian(&reg, &DriftParams::default(), ChannelMode::AmplitudeOnly).is_err());
    }

    #[test]
    fn reassembly_matches_direct_construction() {
        // direct: Ω_r complex on every atom, Ω_p real on targets
        let v = 2.0 * PI * 700.0;
        let reg = fredkin_register(v);
        let gamma = 0.05;
        let drift = DriftParams {
            gamma_r: gamma,
            ..Default::default()
        };
        let d = build_fredkin_hamiltonian(&reg, &drift, ChannelMode::AmplitudePhase).unwrap();
        let (pr, pi, rr, ri) = (1.3, -0.4, 2.2, 0.9);
        let h = d.assemble(&[pr, pi, rr, ri], None);

        let op = C64::new(pr, pi);
        let or = C64::new(rr, ri);
        let mut direct = CMatrix::zeros((27, 27));
        for idx in 0..27 {
            let lv = reg.levels_of(idx);
            let nr = lv.iter().filter(|&&l| l == 2).count() as f64;
            direct[[idx, idx]] += C64::new(0.0, -gamma / 2.0 * nr);
            let pairs = [(0, 1), (0, 2), (1, 2)];
            for (i, j) in pairs {
                if lv[i] == 2 && lv[j] == 2 {
                    direct[[idx, idx]] += v;
                }
            }
            for a in 0..3 {
                let mut to = lv.clone();
                if lv[a] == 1 {
                    to[a] = 2;
                    let t = reg.index_of_levels(&to).unwrap();
                    direct[[t, idx]] += or / 2.0;
                    direct[[idx, t]] += or.conj() / 2.0;
                }
                if a > 0 && lv[a] == 1 {
                    to[a] = 0;
                    let t = reg.index_of_levels(&to).unwrap();
                    direct[[t, idx]] += op / 2.0;
                    direct[[idx, t]] += op.conj() / 2.0;
                }
            }
        }
        let rel = max_abs(&(&h - &direct)) / max_abs(&direct);
        assert!(rel < 1e-14, "{rel}");
    }

    #[test]
    fn noise_view_shifts_and_scales() {
        let reg = fredkin_register(10.0);
        let d = build_fredkin_hamiltonian(&reg, &DriftParams::default(), ChannelMode::AmplitudeOnly).unwrap();
        let noise = NoisePerturbation {
            rin_factors: Some(vec![0.1, -0.2]),
            atom_detunings: AtomDetunings::Static(vec![0.5, 0.0, 0.0]),
            common_detuning: Some(vec![0.25, 0.0]),
            v_scales: Some(vec![2.0, 1.0, 1.0]),
        };
        assert!(apply_noise_perturbation(&d, &noise, 3).is_err());
        let view = apply_noise_perturbation(&d, &noise, 2).unwrap();
        let h = view.hamiltonian(0, &[1.0, 2.0]);
        let base = d.assemble(&[1.1, 2.2], None);
        let rr0 = reg.basis_index(&["r", "r", "0"]).unwrap();
        let r00 = reg.basis_index(&["r", "0", "0"]).unwrap();
        let r0r = reg.basis_index(&["0", "r", "r"]).unwrap();
        assert!((h[[r00, r00]] - base[[r00, r00]] - 0.75).norm() < 1e-14);
        // pair (0,1) doubled, plus detuning 0.5 + 2*0.25
        assert!((h[[rr0, rr0]] - base[[rr0, rr0]] - 10.0 - 1.0).norm() < 1e-12);
        assert!((h[[r0r, r0r]] - base[[r0r, r0r]] - 0.5).norm() < 1e-12);
        let off = reg.basis_index(&["1", "0", "0"]).unwrap();
        assert!((h[[r00, off]] - base[[r00, off]]).norm() < 1e-15);
    }

    #[test]
    fn block_generators_agree_with_dense_assembly() {
        let reg = fredkin_register(33.0);
        let d = build_fredkin_hamiltonian(
            &reg,
            &DriftParams {
                gamma_r: 0.3,
                ..Default::default()
            },
            ChannelMode::AmplitudePhase,
        )
        .unwrap();
        let coeffs = [0.4, -0.2, 1.5, 0.7];
        let shift: Vec<f64> = (0..27).map(|i| i as f64 * 0.01).collect();
        let dense = d.assemble(&coeffs, Some(&shift));
        let blocks = d.block_generators(&coeffs, Some(&shift));
        let from_blocks = d.structure().extract(&dense);
        for (a, b) in blocks.iter().zip(&from_blocks) {
            assert!(max_abs(&(a - b)) < 1e-15);
        }
        // the dense matrix has nothing outside the blocks
        let mut covered = 0.0;
        for (idx, b) in d.structure().blocks().iter().zip(&from_blocks) {
            let _ = idx;
            covered += b.iter().map(|z| z.norm()).sum::<f64>();
        }
        let total: f64 = dense.iter().map(|z| z.norm()).sum();
        assert!((covered - total).abs() < 1e-12);
    }
}
