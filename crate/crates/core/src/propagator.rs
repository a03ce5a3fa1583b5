//! Piecewise-constant propagation of states and co-states.
//!
//! Each step is split into two identical half steps `exp(-i H dt/2)`; the
//! optimizer needs states at step midpoints, and the split is exact.

use rayon::prelude::*;

use crate::control::{field_table, ControlField, TimeGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::{ControlDecomposition, NoisePerturbation};
use crate::linalg::{expm, norm_sqr, BlockPropagator, CMatrix, CVector, C64, I};
use crate::register::AtomRegister;

const NORM_SLACK: f64 = 1e-9;

/// `exp(-i H dt) ψ` for a dense `H`.
pub fn step(h: &CMatrix, dt: f64, psi: &CVector) -> Result<CVector> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size {dt} must be positive")));
    }
    if h.nrows() != psi.len() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: psi.len(),
        });
    }
    check_state(psi)?;
    let u = expm(&h.mapv(|z| -I * z * dt))?;
    Ok(u.dot(psi))
}

fn check_state(psi: &CVector) -> Result<()> {
    if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("state vector".into()));
    }
    let n = norm_sqr(psi).sqrt();
    if n > 1.0 + NORM_SLACK {
        return Err(Error::InvalidArgument(format!("state norm {n} exceeds 1")));
    }
    Ok(())
}

/// `exp(-i H_k dt/2)` for time step `k`.
pub fn half_step_propagator(
    decomp: &ControlDecomposition,
    k: usize,
    controls: &[f64],
    noise: Option<&NoisePerturbation>,
    dt: f64,
) -> Result<BlockPropagator> {
    let (coeffs, shift) = decomp.step_terms(k, controls, noise);
    let gens = decomp.block_generators(&coeffs, shift.as_deref());
    BlockPropagator::from_block_generators(decomp.structure(), gens, -I * C64::from(0.5 * dt))
}

fn check_noise(
    decomp: &ControlDecomposition,
    grid: &TimeGrid,
    noise: Option<&NoisePerturbation>,
) -> Result<()> {
    if let Some(n) = noise {
        n.validate(
            grid.n_steps(),
            decomp.rydberg_projectors().len(),
            decomp.pair_terms().len(),
        )?;
    }
    Ok(())
}

/// All half-step propagators for a set of fields, computed in parallel.
pub fn half_step_propagators(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    noise: Option<&NoisePerturbation>,
) -> Result<Vec<BlockPropagator>> {
    let table = field_table(decomp, fields, grid)?;
    check_noise(decomp, grid, noise)?;
    let dt = grid.dt();
    (0..grid.n_steps())
        .into_par_iter()
        .map(|k| {
            let c: Vec<f64> = table.iter().map(|f| f[k]).collect();
            half_step_propagator(decomp, k, &c, noise, dt)
        })
        .collect()
}

/// Forward sweep with precomputed half-step propagators.
pub fn propagate(props: &[BlockPropagator], psi0: &CVector) -> Vec<CVector> {
    let mut states = Vec::with_capacity(props.len() + 1);
    states.push(psi0.clone());
    for u in props {
        let last = states.last().expect("non-empty");
        let next = u.apply(&u.apply(last));
        states.push(next);
    }
    states
}

/// Backward sweep `χ(t_k) = U_k† χ(t_{k+1})`; returns `χ(t_0) .. χ(t_n)`.
pub fn propagate_adjoint(props: &[BlockPropagator], chi_t: &CVector) -> Vec<CVector> {
    let mut states = vec![CVector::zeros(chi_t.len()); props.len() + 1];
    states[props.len()] = chi_t.clone();
    for k in (0..props.len()).rev() {
        let u = &props[k];
        states[k] = u.apply_adjoint(&u.apply_adjoint(&states[k + 1]));
    }
    states
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
}

impl Trajectory {
    pub fn final_state(&self) -> &CVector {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn norm(&self) -> Vec<f64> {
        self.states.iter().map(|s| norm_sqr(s).sqrt()).collect()
    }

    /// `|⟨i|ψ(t_k)⟩|²` for every basis state `i`, indexed `[k][i]`.
    pub fn basis_populations(&self) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| s.iter().map(|z| z.norm_sqr()).collect())
            .collect()
    }

    /// Single-atom level occupations, indexed `[atom][level][k]`.
    pub fn level_populations(&self, reg: &AtomRegister) -> Vec<Vec<Vec<f64>>> {
        let d = reg.scheme().n_levels();
        let mut out = vec![vec![vec![0.0; self.states.len()]; d]; reg.n_atoms()];
        let levels: Vec<Vec<usize>> = (0..reg.dim()).map(|i| reg.levels_of(i)).collect();
        for (k, s) in self.states.iter().enumerate() {
            for (i, z) in s.iter().enumerate() {
                let p = z.norm_sqr();
                for (a, &l) in levels[i].iter().enumerate() {
                    out[a][l][k] += p;
                }
            }
        }
        out
    }

    /// Total Rydberg population `Σ_a P(r_a)` at every grid point.
    pub fn rydberg_population(&self, reg: &AtomRegister) -> Vec<f64> {
        let counts: Vec<f64> = (0..reg.dim()).map(|i| reg.rydberg_count(i) as f64).collect();
        self.states
            .iter()
            .map(|s| s.iter().zip(&counts).map(|(z, c)| z.norm_sqr() * c).sum())
            .collect()
    }
}

fn check_initial(decomp: &ControlDecomposition, psi0: &CVector) -> Result<()> {
    if psi0.len() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.dim(),
            found: psi0.len(),
        });
    }
    check_state(psi0)
}

pub fn evolve_forward(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    psi0: &CVector,
    noise: Option<&NoisePerturbation>,
) -> Result<Trajectory> {
    Ok(evolve_forward_many(decomp, fields, grid, std::slice::from_ref(psi0), noise)?
        .pop()
        .expect("one trajectory"))
}

/// Evolves several initial states under one set of fields, sharing the
/// step propagators.
pub fn evolve_forward_many(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    psi0: &[CVector],
    noise: Option<&NoisePerturbation>,
) -> Result<Vec<Trajectory>> {
    for p in psi0 {
        check_initial(decomp, p)?;
    }
    let props = half_step_propagators(decomp, fields, grid, noise)?;
    let times = grid.times();
    Ok(psi0
        .par_iter()
        .map(|p| Trajectory {
            times: times.clone(),
            states: propagate(&props, p),
        })
        .collect())
}

/// Propagates a co-state backward from `t = T` under `exp(+i H† dt)`;
/// `states[k]` holds `χ(t_k)`.
pub fn evolve_backward(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    chi_t: &CVector,
    noise: Option<&NoisePerturbation>,
) -> Result<Trajectory> {
    if chi_t.len() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.dim(),
            found: chi_t.len(),
        });
    }
    if chi_t.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("co-state".into()));
    }
    let props = half_step_propagators(decomp, fields, grid, noise)?;
    Ok(Trajectory {
        times: grid.times(),
        states: propagate_adjoint(&props, chi_t),
    })
}
