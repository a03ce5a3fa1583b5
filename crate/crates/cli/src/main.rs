use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use rydopt::config::{config_hash, Experiment, RunConfig};
use rydopt::control::{field_table, ControlField};
use rydopt::gates::{gate_fidelity, rydberg_population_integral, truth_table, FidelityReport, TruthTable};
use rydopt::io::{
    json_text, populations_text, sweep_text, trace_text, truth_table_text, write_file, Provenance,
    PulseFile,
};
use rydopt::krotov::{optimize, StopReason, MONOTONICITY_SLACK};
use rydopt::noise::{monte_carlo_fidelity, noise_sweep, MonteCarloResult, SweepChannel};
use rydopt::propagator::{evolve_forward_many, Trajectory};
use rydopt::Error;

#[derive(Parser)]
#[command(name = "rydopt", version, about = "Krotov pulse optimization for Rydberg gates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize pulses and write pulses, trace, truth table and report.
    Optimize(Common),
    /// Simulate pulses: truth table, populations, fidelity and noise statistics.
    Simulate(Common),
    /// Write the truth table of the given pulses.
    TruthTable(Common),
    /// Monte-Carlo infidelity over a range of one noise channel.
    NoiseSweep {
        #[command(flatten)]
        common: Common,
        /// rin, psd-white, doppler or interaction.
        #[arg(long)]
        channel: SweepChannel,
        /// Comma-separated values in the channel's unit.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Pulse file; `optimize` starts from it instead of the configured guess.
    #[arg(long)]
    pulses: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the noise seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
}

struct Loaded {
    cfg: RunConfig,
    exp: Experiment,
    prov: Provenance,
}

impl Common {
    fn load(&self) -> Result<Loaded, Error> {
        let (cfg, text) = RunConfig::load(&self.config)?;
        let mut exp = cfg.experiment()?;
        if let Some(s) = self.seed {
            exp.seed = s;
        }
        if let Some(r) = self.runs {
            exp.n_runs = r;
        }
        let prov = Provenance::new(Some(config_hash(&text)), Some(exp.seed));
        Ok(Loaded { cfg, exp, prov })
    }

    fn pulses(&self, exp: &Experiment) -> Result<Option<Vec<ControlField>>, Error> {
        let Some(path) = &self.pulses else {
            return Ok(None);
        };
        let file = PulseFile::load(path)?;
        if file.grid != exp.grid {
            return Err(Error::Config(format!(
                "pulse grid ({} µs, {} steps) differs from the configured grid ({} µs, {} steps)",
                file.grid.duration(),
                file.grid.n_steps(),
                exp.grid.duration(),
                exp.grid.n_steps()
            )));
        }
        field_table(&exp.decomp, &file.fields, &exp.grid)
            .map_err(|e| Error::Config(format!("pulse file does not match the Hamiltonian: {e}")))?;
        Ok(Some(file.fields))
    }

    fn required_pulses(&self, exp: &Experiment) -> Result<Vec<ControlField>, Error> {
        self.pulses(exp)?
            .ok_or_else(|| Error::Config("--pulses is required for this command".into()))
    }
}

#[derive(Serialize)]
struct OptimizationSummary {
    iterations: usize,
    initial_jt: f64,
    final_jt: f64,
    stop_reason: StopReason,
    monotone: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    provenance: &'a Provenance,
    command: &'a str,
    gate: &'a str,
    duration_us: f64,
    n_steps: usize,
    fidelity: &'a FidelityReport,
    truth_table_min_on_target: f64,
    truth_table_max_off_target: f64,
    optimization: Option<OptimizationSummary>,
    noise: Option<&'a MonteCarloResult>,
}

struct Evaluation {
    trajectories: Vec<Trajectory>,
    table: TruthTable,
    fidelity: FidelityReport,
}

fn evaluate(exp: &Experiment, fields: &[ControlField]) -> Result<Evaluation, Error> {
    let inputs = exp.target.input_states(&exp.register)?;
    let trajectories = evolve_forward_many(&exp.decomp, fields, &exp.grid, &inputs, None)?;
    let finals: Vec<_> = trajectories.iter().map(|t| t.final_state().clone()).collect();
    let table = truth_table(&exp.register, &finals)?;
    let mut fidelity = gate_fidelity(&exp.register, &finals, &exp.target)?;
    fidelity.rydberg_time_us = Some(rydberg_population_integral(&exp.register, &trajectories)?);
    Ok(Evaluation {
        trajectories,
        table,
        fidelity,
    })
}

fn report<'a>(
    l: &'a Loaded,
    command: &'a str,
    ev: &'a Evaluation,
    optimization: Option<OptimizationSummary>,
    noise: Option<&'a MonteCarloResult>,
) -> Report<'a> {
    Report {
        provenance: &l.prov,
        command,
        gate: &l.exp.target.name,
        duration_us: l.exp.grid.duration(),
        n_steps: l.exp.grid.n_steps(),
        fidelity: &ev.fidelity,
        truth_table_min_on_target: ev.table.min_on_target(&l.exp.target),
        truth_table_max_off_target: ev.table.max_off_target(&l.exp.target),
        optimization,
        noise,
    }
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn run_optimize(c: &Common) -> Result<(), Error> {
    let l = c.load()?;
    let opt = l.cfg.optimizer()?;
    let settings = opt.settings(&l.exp)?;
    let initial = match c.pulses(&l.exp)? {
        Some(f) => f,
        None => opt.initial_fields(&l.exp)?,
    };
    let problem = opt.problem(&l.exp)?;
    let (fields, trace) = optimize(&problem, &initial, &settings)?;
    info!(
        "{} iterations, J_T {:.6e} -> {:.6e}",
        trace.iterations(),
        trace.records[0].j_t,
        trace.final_jt()
    );
    let ev = evaluate(&l.exp, &fields)?;
    let summary = OptimizationSummary {
        iterations: trace.iterations(),
        initial_jt: trace.records[0].j_t,
        final_jt: trace.final_jt(),
        stop_reason: trace.stop_reason,
        monotone: trace.is_monotone(MONOTONICITY_SLACK),
    };
    let pulses = PulseFile {
        provenance: l.prov.clone(),
        grid: l.exp.grid,
        fields,
    };
    pulses.save(&out_file(&c.out, "pulses.txt"))?;
    write_file(&out_file(&c.out, "trace.txt"), &trace_text(&trace, &l.prov))?;
    write_file(&out_file(&c.out, "truth_table.txt"), &truth_table_text(&ev.table, &l.prov))?;
    let rep = report(&l, "optimize", &ev, Some(summary), None);
    write_file(&out_file(&c.out, "report.json"), &json_text(&rep)?)?;
    println!(
        "{}: infidelity {:.4e}, J_T {:.4e} after {} iterations",
        l.exp.target.name,
        ev.fidelity.infidelity,
        trace.final_jt(),
        trace.iterations()
    );
    Ok(())
}

fn run_simulate(c: &Common) -> Result<(), Error> {
    let l = c.load()?;
    let fields = c.required_pulses(&l.exp)?;
    let ev = evaluate(&l.exp, &fields)?;
    let mc = if l.exp.noise.is_silent() {
        None
    } else {
        let e = &l.exp;
        Some(monte_carlo_fidelity(
            &e.register,
            &e.decomp,
            &fields,
            &e.grid,
            &e.target,
            &e.noise,
            e.n_runs,
            e.seed,
        )?)
    };
    write_file(&out_file(&c.out, "truth_table.txt"), &truth_table_text(&ev.table, &l.prov))?;
    write_file(
        &out_file(&c.out, "populations.txt"),
        &populations_text(&l.exp.register, &ev.table.labels, &ev.trajectories, &l.prov),
    )?;
    let rep = report(&l, "simulate", &ev, None, mc.as_ref());
    write_file(&out_file(&c.out, "report.json"), &json_text(&rep)?)?;
    print!("{}: infidelity {:.4e}", l.exp.target.name, ev.fidelity.infidelity);
    if let Some(m) = &mc {
        print!(
            ", noisy mean infidelity {:.4e} ± {:.1e} ({} runs)",
            m.mean_infidelity, m.std_error, m.n_runs
        );
    }
    println!();
    Ok(())
}

fn run_truth_table(c: &Common) -> Result<(), Error> {
    let l = c.load()?;
    let fields = c.required_pulses(&l.exp)?;
    let ev = evaluate(&l.exp, &fields)?;
    let text = truth_table_text(&ev.table, &l.prov);
    write_file(&out_file(&c.out, "truth_table.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run_sweep(c: &Common, channel: SweepChannel, values: &[f64]) -> Result<(), Error> {
    let l = c.load()?;
    let fields = c.required_pulses(&l.exp)?;
    let e = &l.exp;
    let rows = noise_sweep(
        &e.register,
        &e.decomp,
        &fields,
        &e.grid,
        &e.target,
        &e.noise,
        channel,
        values,
        e.n_runs,
        e.seed,
    )?;
    let text = sweep_text(channel.name(), channel.unit(), &rows, &l.prov);
    write_file(&out_file(&c.out, &format!("sweep_{}.txt", channel.name())), &text)?;
    print!("{text}");
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::InvalidRegister(_)
        | Error::UnknownLevel(_)
        | Error::GridMismatch(_)
        | Error::DimensionMismatch { .. } => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize(c) => run_optimize(c),
        Command::Simulate(c) => run_simulate(c),
        Command::TruthTable(c) => run_truth_table(c),
        Command::NoiseSweep {
            common,
            channel,
            values,
        } => run_sweep(common, *channel, values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
