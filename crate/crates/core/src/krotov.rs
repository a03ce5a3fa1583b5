//! First-order Krotov optimization with sequential (time-local) updates.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::control::{field_table, ControlField, TimeGrid, UpdateShape};
use crate::error::{Error, Result};
use crate::gates::{fit_phase, overlaps, PhaseObjective};
use crate::hamiltonian::ControlDecomposition;
use crate::linalg::{BlockPropagator, CVector, C64};
use crate::propagator::{half_step_propagator, half_step_propagators, propagate, propagate_adjoint};

/// Slack on J_T increases that still counts as monotone.
pub const MONOTONICITY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// `J_T = 1 - |(1/N) Σ ⟨φ_j|ψ_j⟩|²`
    #[default]
    SquareModulus,
    /// `J_T = 1 - (1/N) Σ Re⟨φ_j|ψ_j⟩`
    RealPart,
}

impl FunctionalKind {
    fn objective(self) -> PhaseObjective {
        match self {
            FunctionalKind::SquareModulus => PhaseObjective::SquareModulus,
            FunctionalKind::RealPart => PhaseObjective::RealPart,
        }
    }
}

fn check_pairs(final_states: &[CVector], targets: &[CVector]) -> Result<()> {
    if final_states.is_empty() {
        return Err(Error::InvalidArgument("J_T needs at least one state pair".into()));
    }
    if final_states.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            found: final_states.len(),
        });
    }
    for (s, t) in final_states.iter().zip(targets) {
        if s.len() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                found: s.len(),
            });
        }
    }
    Ok(())
}

fn average_overlap(final_states: &[CVector], targets: &[CVector]) -> C64 {
    overlaps(targets, final_states).iter().sum::<C64>() / final_states.len() as f64
}

pub fn compute_jt(final_states: &[CVector], targets: &[CVector], kind: FunctionalKind) -> Result<f64> {
    check_pairs(final_states, targets)?;
    let tau = average_overlap(final_states, targets);
    Ok(match kind {
        FunctionalKind::SquareModulus => 1.0 - tau.norm_sqr(),
        FunctionalKind::RealPart => 1.0 - tau.re,
    })
}

/// `χ_j(T) = -∂J_T/∂⟨ψ_j(T)|`.
pub fn costate_boundary(
    final_states: &[CVector],
    targets: &[CVector],
    kind: FunctionalKind,
) -> Result<Vec<CVector>> {
    check_pairs(final_states, targets)?;
    let n = final_states.len() as f64;
    let coeff = match kind {
        FunctionalKind::SquareModulus => average_overlap(final_states, targets) / n,
        FunctionalKind::RealPart => C64::from(0.5 / n),
    };
    Ok(targets.iter().map(|t| t.mapv(|z| z * coeff)).collect())
}

/// Targets rotated by the best-fitting `e^{i m_j φ}`, or unchanged without
/// phase weights.
fn phase_adjusted_targets(
    final_states: &[CVector],
    targets: &[CVector],
    weights: Option<&[f64]>,
    kind: FunctionalKind,
) -> (Vec<CVector>, Option<f64>) {
    match weights {
        None => (targets.to_vec(), None),
        Some(w) => {
            let ov = overlaps(targets, final_states);
            let (phi, _) = fit_phase(&ov, w, kind.objective());
            let adj = targets
                .iter()
                .zip(w)
                .map(|(t, m)| t.mapv(|z| z * C64::from_polar(1.0, m * phi)))
                .collect();
            (adj, Some(phi))
        }
    }
}

/// Step-averaged `Im Σ_j ⟨χ_j|H_l|ψ_j⟩` for every control `l` on step `k`,
/// using Simpson's rule on the grid points and the midpoint.
fn step_integrand(
    decomp: &ControlDecomposition,
    u_half: &BlockPropagator,
    psi: &[CVector],
    chi_next: &[CVector],
    chi_now: &[CVector],
) -> Vec<f64> {
    let mut acc = vec![0.0; decomp.n_controls()];
    for j in 0..psi.len() {
        let psi_mid = u_half.apply(&psi[j]);
        let psi_end = u_half.apply(&psi_mid);
        let chi_mid = u_half.apply_adjoint(&chi_next[j]);
        for (l, op) in decomp.controls().iter().enumerate() {
            let s = op.sparse();
            let v = s.expectation(&chi_now[j], &psi[j])
                + 4.0 * s.expectation(&chi_mid, &psi_mid)
                + s.expectation(&chi_next[j], &psi_end);
            acc[l] += v.im / 6.0;
        }
    }
    acc
}

/// Gradient `∂J_T/∂χ_l(t_k)` estimated from the Krotov integrand with
/// frozen forward and backward trajectories, indexed `[control][step]`.
pub fn frozen_gradient(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    initial_states: &[CVector],
    targets: &[CVector],
    kind: FunctionalKind,
) -> Result<Vec<Vec<f64>>> {
    let integrand = frozen_integrand(decomp, fields, grid, initial_states, targets, kind)?;
    let dt = grid.dt();
    Ok(integrand
        .into_iter()
        .map(|row| row.into_iter().map(|v| -2.0 * dt * v).collect())
        .collect())
}

/// `Im Σ_j ⟨χ_j|H_l|ψ_j⟩` averaged over each step, with `ψ` propagated under
/// the given fields (no sequential feedback). Indexed `[control][step]`.
pub fn frozen_integrand(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    initial_states: &[CVector],
    targets: &[CVector],
    kind: FunctionalKind,
) -> Result<Vec<Vec<f64>>> {
    let props = half_step_propagators(decomp, fields, grid, None)?;
    let fw: Vec<Vec<CVector>> = initial_states.iter().map(|p| propagate(&props, p)).collect();
    let finals: Vec<CVector> = fw.iter().map(|t| t.last().unwrap().clone()).collect();
    let chi_t = costate_boundary(&finals, targets, kind)?;
    let bw: Vec<Vec<CVector>> = chi_t.iter().map(|c| propagate_adjoint(&props, c)).collect();
    let n = grid.n_steps();
    let mut out = vec![vec![0.0; n]; decomp.n_controls()];
    for k in 0..n {
        let psi: Vec<CVector> = fw.iter().map(|t| t[k].clone()).collect();
        let chi_now: Vec<CVector> = bw.iter().map(|t| t[k].clone()).collect();
        let chi_next: Vec<CVector> = bw.iter().map(|t| t[k + 1].clone()).collect();
        for (l, v) in step_integrand(decomp, &props[k], &psi, &chi_next, &chi_now)
            .into_iter()
            .enumerate()
        {
            out[l][k] = v;
        }
    }
    Ok(out)
}

/// First-iteration update `ΔΧ = (S/λ)·integrand` in the frozen-state
/// linearization.
pub fn frozen_update(
    integrand: &[Vec<f64>],
    shapes: &[UpdateShape],
    lambda: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_lambda(lambda)?;
    Ok(integrand
        .iter()
        .zip(shapes)
        .zip(lambda)
        .map(|((row, s), l)| row.iter().zip(s.values()).map(|(v, s)| s / l * v).collect())
        .collect())
}

fn check_lambda(lambda: &[f64]) -> Result<()> {
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("step width λ must be > 0, got {l}")));
    }
    Ok(())
}

/// Result of one sequential sweep.
pub struct SweepResult {
    pub fields: Vec<ControlField>,
    pub final_states: Vec<CVector>,
    pub propagators: Vec<BlockPropagator>,
    /// `Σ_l Σ_k λ_l/S_l(t_k) Δχ² dt`
    pub g_a: f64,
}

/// One sequential Krotov sweep.
///
/// `costates[j][k]` is `χ_j(t_k)` propagated backward under the old fields,
/// whose half-step propagators are `old_props`. States are propagated forward
/// with each step's updated field before the next step is touched.
#[allow(clippy::too_many_arguments)]
pub fn krotov_update(
    decomp: &ControlDecomposition,
    fields: &[ControlField],
    grid: &TimeGrid,
    old_props: &[BlockPropagator],
    initial_states: &[CVector],
    costates: &[Vec<CVector>],
    shapes: &[UpdateShape],
    lambda: &[f64],
) -> Result<SweepResult> {
    check_lambda(lambda)?;
    field_table(decomp, fields, grid)?;
    let n = grid.n_steps();
    let nc = decomp.n_controls();
    if shapes.len() != nc || lambda.len() != nc {
        return Err(Error::DimensionMismatch {
            expected: nc,
            found: shapes.len().min(lambda.len()),
        });
    }
    if let Some(s) = shapes.iter().find(|s| s.len() != n) {
        return Err(Error::GridMismatch(format!(
            "update shape has {} samples, grid has {n} steps",
            s.len()
        )));
    }
    if old_props.len() != n || costates.len() != initial_states.len() {
        return Err(Error::GridMismatch("propagator or co-state count mismatch".into()));
    }
    if let Some(c) = costates.iter().find(|c| c.len() != n + 1) {
        return Err(Error::GridMismatch(format!(
            "co-state trajectory has {} points, expected {}",
            c.len(),
            n + 1
        )));
    }

    let dt = grid.dt();
    let mut new_fields = fields.to_vec();
    let mut props = Vec::with_capacity(n);
    let mut psi: Vec<CVector> = initial_states.to_vec();
    let mut g_a = 0.0;
    for k in 0..n {
        let chi_now: Vec<CVector> = costates.iter().map(|c| c[k].clone()).collect();
        let chi_next: Vec<CVector> = costates.iter().map(|c| c[k + 1].clone()).collect();
        let integrand = step_integrand(decomp, &old_props[k], &psi, &chi_next, &chi_now);
        let mut changed = false;
        for l in 0..nc {
            let s = shapes[l].values()[k];
            if s == 0.0 {
                continue;
            }
            let f = &mut new_fields[l];
            let old = f.values[k];
            let new = f.clamp(old + s / lambda[l] * integrand[l]);
            if new != old {
                changed = true;
                g_a += lambda[l] / s * (new - old).powi(2) * dt;
                f.values[k] = new;
            }
        }
        let u = if changed {
            let c: Vec<f64> = new_fields.iter().map(|f| f.values[k]).collect();
            half_step_propagator(decomp, k, &c, None, dt)?
        } else {
            old_props[k].clone()
        };
        for p in psi.iter_mut() {
            *p = u.apply(&u.apply(p));
        }
        props.push(u);
    }
    if new_fields.iter().any(|f| f.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("updated control field".into()));
    }
    Ok(SweepResult {
        fields: new_fields,
        final_states: psi,
        propagators: props,
        g_a,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    /// Step width per control operator.
    pub lambda: Vec<f64>,
    pub max_iters: usize,
    /// Stop once an accepted iteration lowers J_T by less than this.
    pub stop_delta_jt: f64,
    /// Stop once J_T falls below this value.
    pub target_jt: f64,
    pub functional: FunctionalKind,
    /// Double λ and retry when J_T rises; otherwise abort.
    pub backoff: bool,
    pub max_backoffs: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            lambda: Vec::new(),
            max_iters: 100,
            stop_delta_jt: 0.0,
            target_jt: 0.0,
            functional: FunctionalKind::SquareModulus,
            backoff: true,
            max_backoffs: 30,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self, n_controls: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "max_iters must allow at least one iteration".into(),
            ));
        }
        if self.lambda.len() != n_controls {
            return Err(Error::DimensionMismatch {
                expected: n_controls,
                found: self.lambda.len(),
            });
        }
        check_lambda(&self.lambda)?;
        if !(self.stop_delta_jt >= 0.0) || !(self.target_jt >= 0.0) {
            return Err(Error::InvalidArgument("stop thresholds must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationProblem<'a> {
    pub decomp: &'a ControlDecomposition,
    pub grid: TimeGrid,
    pub initial_states: Vec<CVector>,
    pub targets: Vec<CVector>,
    /// Excitation numbers `m_j` when targets are only fixed up to
    /// `e^{i m_j φ}`.
    pub phase_weights: Option<Vec<f64>>,
    pub shapes: Vec<UpdateShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j_t: f64,
    pub g_a: f64,
    pub j: f64,
    /// Multiplier applied to the configured λ in this iteration.
    pub lambda_scale: f64,
    /// Not written to output files; kept for logging.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    DeltaBelowThreshold,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub phi_1: Option<f64>,
}

impl ConvergenceTrace {
    pub fn final_jt(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.j_t)
    }

    /// Number of accepted update iterations (the initial record excluded).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.records.windows(2).all(|w| w[1].j_t <= w[0].j_t + slack)
    }
}

struct Evaluation {
    j_t: f64,
    targets: Vec<CVector>,
    phi: Option<f64>,
}

fn evaluate(problem: &OptimizationProblem, finals: &[CVector], kind: FunctionalKind) -> Result<Evaluation> {
    let (targets, phi) =
        phase_adjusted_targets(finals, &problem.targets, problem.phase_weights.as_deref(), kind);
    let j_t = compute_jt(finals, &targets, kind)?;
    Ok(Evaluation { j_t, targets, phi })
}

/// Runs Krotov iterations until `max_iters`, the J_T target, or the
/// ΔJ_T threshold is reached. Iterations that would raise J_T are rejected
/// and retried with doubled λ when back-off is enabled.
pub fn optimize(
    problem: &OptimizationProblem,
    initial_fields: &[ControlField],
    config: &OptimizationConfig,
) -> Result<(Vec<ControlField>, ConvergenceTrace)> {
    let decomp = problem.decomp;
    let grid = &problem.grid;
    if decomp.n_controls() == 0 {
        return Err(Error::InvalidArgument("no control operators to optimize".into()));
    }
    config.validate(decomp.n_controls())?;
    field_table(decomp, initial_fields, grid)?;
    check_pairs(&problem.initial_states, &problem.targets)?;
    if problem.shapes.len() != decomp.n_controls() {
        return Err(Error::DimensionMismatch {
            expected: decomp.n_controls(),
            found: problem.shapes.len(),
        });
    }
    let kind = config.functional;
    let start = Instant::now();

    let mut fields = initial_fields.to_vec();
    let mut props = half_step_propagators(decomp, &fields, grid, None)?;
    let mut finals: Vec<CVector> = problem
        .initial_states
        .iter()
        .map(|p| propagate(&props, p).pop().unwrap())
        .collect();
    let mut eval = evaluate(problem, &finals, kind)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        j_t: eval.j_t,
        g_a: 0.0,
        j: eval.j_t,
        lambda_scale: 1.0,
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    info!("iteration 0: J_T = {:.6e}", eval.j_t);

    let mut scale = 1.0;
    let mut stop_reason = StopReason::MaxIterations;
    for iteration in 1..=config.max_iters {
        if eval.j_t <= config.target_jt {
            stop_reason = StopReason::TargetReached;
            break;
        }
        let chi_t = costate_boundary(&finals, &eval.targets, kind)?;
        let costates: Vec<Vec<CVector>> = chi_t.iter().map(|c| propagate_adjoint(&props, c)).collect();

        let mut attempts = 0;
        let (sweep, new_eval) = loop {
            let lambda: Vec<f64> = config.lambda.iter().map(|l| l * scale).collect();
            let sweep = krotov_update(
                decomp,
                &fields,
                grid,
                &props,
                &problem.initial_states,
                &costates,
                &problem.shapes,
                &lambda,
            )?;
            let new_eval = evaluate(problem, &sweep.final_states, kind)?;
            if new_eval.j_t <= eval.j_t + MONOTONICITY_SLACK {
                break (sweep, new_eval);
            }
            if !config.backoff || attempts >= config.max_backoffs {
                return Err(Error::Divergence {
                    iteration,
                    previous: eval.j_t,
                    current: new_eval.j_t,
                });
            }
            attempts += 1;
            scale *= 2.0;
            debug!(
                "iteration {iteration}: J_T rose to {:.6e}, λ scale now {scale}",
                new_eval.j_t
            );
        };

        let delta = eval.j_t - new_eval.j_t;
        fields = sweep.fields;
        props = sweep.propagators;
        finals = sweep.final_states;
        eval = new_eval;
        records.push(IterationRecord {
            iteration,
            j_t: eval.j_t,
            g_a: sweep.g_a,
            j: eval.j_t + sweep.g_a,
            lambda_scale: scale,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if iteration % 10 == 0 {
            info!("iteration {iteration}: J_T = {:.6e}", eval.j_t);
        }
        if delta < config.stop_delta_jt {
            stop_reason = StopReason::DeltaBelowThreshold;
            break;
        }
    }
    if stop_reason == StopReason::MaxIterations && eval.j_t <= config.target_jt {
        stop_reason = StopReason::TargetReached;
    }
    Ok((
        fields,
        ConvergenceTrace {
            records,
            stop_reason,
            phi_1: eval.phi,
        },
    ))
}
