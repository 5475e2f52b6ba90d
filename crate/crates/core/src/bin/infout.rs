//! Command-line front end: analyze a single operating point, optimize the
//! feature count, sweep the tradeoff, run benchmark comparisons, and build
//! or consume DG lookup tables.
//!
//! Exit codes: 0 success, 2 config error, 3 infeasible, 4 i/o error,
//! 1 anything else.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use infout_core::channel::ChannelLatencyConfig;
use infout_core::cnn::{
    estimate_lookup_table, estimate_lookup_table_keys, feasible_keys, optimize_features_cnn,
    psi_surrogate, DgLookupTable, DgMapping, SyntheticGmmBackend,
};
use infout_core::error::Error;
use infout_core::experiment::{
    emit_csv_path, emit_feature_sweep_csv, feature_sweep, fmt_real, run_scenario, Scenario,
};
use infout_core::numerics::{q_function, Probability, RngStream};
use infout_core::optimizer::{
    brute_force_search, optimize_features, DgFunction, InfoutEstimator, SolvedBy,
};
use infout_core::outage::{
    dg_threshold, infout_empirical, infout_exact, infout_gaussian, OutageReport,
    ReceiveDgDistribution,
};

#[derive(Parser)]
#[command(name = "infout", about = "Inference-outage analysis for latency-constrained edge inference", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario config (TOML with model/channel/latency/target/sweep/trials)
    #[arg(long)]
    config: PathBuf,

    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override [channel] transmit_power (W)
    #[arg(long)]
    transmit_power: Option<f64>,

    /// Override [channel] bandwidth (Hz)
    #[arg(long)]
    bandwidth: Option<f64>,

    /// Override [channel] noise_density (W/Hz)
    #[arg(long)]
    noise_density: Option<f64>,

    /// Override [channel] slot_length (s)
    #[arg(long)]
    slot_length: Option<f64>,

    /// Override [channel] bits_per_feature
    #[arg(long)]
    bits_per_feature: Option<u32>,

    /// Override [channel] bits_per_index
    #[arg(long)]
    bits_per_index: Option<u32>,

    /// Override [latency] compute_speed (FLOPs/s)
    #[arg(long)]
    compute_speed: Option<f64>,

    /// Override [latency] flops_per_observation
    #[arg(long)]
    flops_per_observation: Option<f64>,

    /// Override [latency] deadline (s)
    #[arg(long)]
    deadline: Option<f64>,

    /// Override [latency] max_observations
    #[arg(long)]
    max_observations: Option<usize>,

    /// Set the transmit power so the per-slot channel outage equals this
    #[arg(long)]
    outage: Option<f64>,

    /// Override [target] with an absolute accuracy
    #[arg(long)]
    accuracy: Option<f64>,
}

impl CommonArgs {
    fn scenario(&self) -> Result<Scenario, Error> {
        let mut scenario = Scenario::load(&self.config)?;
        let c = &mut scenario.channel;
        apply(&mut c.transmit_power, self.transmit_power);
        apply(&mut c.bandwidth, self.bandwidth);
        apply(&mut c.noise_density, self.noise_density);
        apply(&mut c.slot_length, self.slot_length);
        apply(&mut c.bits_per_feature, self.bits_per_feature);
        apply(&mut c.bits_per_index, self.bits_per_index);
        apply(&mut c.compute_speed, self.compute_speed);
        apply(&mut c.flops_per_observation, self.flops_per_observation);
        apply(&mut c.deadline, self.deadline);
        apply(&mut c.max_observations, self.max_observations);
        if let Some(outage) = self.outage {
            scenario.channel =
                scenario.channel.clone().with_outage_probability(Probability::new(outage)?)?;
        }
        scenario.channel.validate()?;
        if let Some(a) = self.accuracy {
            scenario.target = infout_core::experiment::TargetSpec::Absolute(a);
        }
        Ok(scenario)
    }
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Subcommand)]
enum Command {
    /// Outage report for a single (k, s) operating point
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Seed for the empirical estimate (overrides [trials] seed)
        #[arg(long)]
        seed: u64,
        /// Observation count (defaults to the optimizer's choice)
        #[arg(long)]
        k: Option<usize>,
        /// Feature count (defaults to the optimizer's choice)
        #[arg(long)]
        s: Option<usize>,
    },
    /// Surrogate optimum and the brute-force comparison, one CSV row
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Per-feature-count rows (s, k_hat, f, outage estimates)
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the configured sweep across all schemes
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        /// Seed for all stochastic evaluation (overrides [trials] seed)
        #[arg(long)]
        seed: u64,
        /// Include the wall_ms column (breaks byte-for-byte determinism)
        #[arg(long)]
        timing: bool,
    },
    /// Estimate the DG lookup table with the synthetic backend
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Seed for table estimation (overrides [trials] seed)
        #[arg(long)]
        seed: u64,
    },
    /// Maximize the table surrogate over the feasible feature range
    OptimizeCnn {
        #[command(flatten)]
        common: CommonArgs,
        /// Lookup table produced by `calibrate`
        #[arg(long)]
        table: PathBuf,
    },
}

fn write_output(out: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(content.as_bytes()).map_err(|e| Error::io(path, e))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_analyze(
    common: &CommonArgs,
    seed: u64,
    k: Option<usize>,
    s: Option<usize>,
) -> Result<(), Error> {
    let scenario = common.scenario()?;
    let cfg = &scenario.channel;
    let a_th = scenario.target.resolve(&scenario.model, cfg)?;
    let g_th = dg_threshold(a_th, scenario.model.class_count())?;
    let p_act = cfg.activation_probability();
    let profile = scenario.model.dg_profile();

    let (k, s) = match (k, s) {
        (Some(k), Some(s)) => (k, s),
        (k, s) => {
            let dgf = DgFunction::from_profile(&profile);
            let sol = optimize_features(&dgf, cfg, p_act, g_th)?;
            (k.unwrap_or(sol.k_star), s.unwrap_or(sol.s_star))
        }
    };
    let dist = ReceiveDgDistribution::new(&profile, s, p_act)?;
    let exact = match infout_exact(&dist, k, g_th) {
        Ok(p) => Some(p),
        Err(Error::Capacity(_)) => None,
        Err(e) => return Err(e),
    };
    let empirical = infout_empirical(
        &scenario.model,
        cfg,
        k,
        s,
        a_th,
        scenario.trials.outer,
        scenario.trials.inner,
        RngStream::new(seed, 0),
    )?;
    let report = OutageReport {
        k,
        s,
        p_act,
        g_threshold: g_th,
        infout_gaussian: infout_gaussian(&dist, k, g_th)?,
        infout_exact: exact,
        infout_empirical: Some(empirical),
    };
    let mut content = OutageReport::CSV_HEADER.join(",");
    content.push('\n');
    content.push_str(&report.csv_row().join(","));
    content.push('\n');
    write_output(common.out.as_ref(), &content)
}

fn cmd_optimize(common: &CommonArgs) -> Result<(), Error> {
    let scenario = common.scenario()?;
    let cfg = &scenario.channel;
    let a_th = scenario.target.resolve(&scenario.model, cfg)?;
    let g_th = dg_threshold(a_th, scenario.model.class_count())?;
    let p_act = cfg.activation_probability();
    let profile = scenario.model.dg_profile();
    let dgf = DgFunction::from_profile(&profile);

    let sol = optimize_features(&dgf, cfg, p_act, g_th)?;
    let brute = brute_force_search(&scenario.model, cfg, a_th, InfoutEstimator::Exact)?;
    let dist = ReceiveDgDistribution::new(&profile, sol.s_star, p_act)?;
    let sol_exact = infout_exact(&dist, sol.k_star, g_th)?;

    let header = [
        "s_star",
        "k_star",
        "x_star",
        "f_value",
        "solved_by",
        "infout_exact",
        "bf_s",
        "bf_k",
        "bf_infout_exact",
    ];
    let row = [
        sol.s_star.to_string(),
        sol.k_star.to_string(),
        sol.x_star.map(fmt_real).unwrap_or_default(),
        fmt_real(sol.f_value),
        match sol.solved_by {
            SolvedBy::InteriorRoot => "interior_root".to_string(),
            SolvedBy::Endpoint => "endpoint".to_string(),
        },
        fmt_real(sol_exact.value()),
        brute.s.to_string(),
        brute.k.to_string(),
        fmt_real(brute.infout_predicted.unwrap_or(f64::NAN)),
    ];
    write_output(common.out.as_ref(), &format!("{}\n{}\n", header.join(","), row.join(",")))
}

fn cmd_sweep(common: &CommonArgs) -> Result<(), Error> {
    let scenario = common.scenario()?;
    let a_th = scenario.target.resolve(&scenario.model, &scenario.channel)?;
    let s_values: Option<Vec<usize>> =
        if scenario.sweep_axis == infout_core::experiment::SweepAxis::Features {
            Some(scenario.grid.iter().map(|&v| v.round() as usize).collect())
        } else {
            None
        };
    let rows = feature_sweep(&scenario.model, &scenario.channel, a_th, s_values.as_deref())?;
    let mut buf = Vec::new();
    emit_feature_sweep_csv(&rows, &mut buf)?;
    write_output(common.out.as_ref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

fn cmd_benchmark(common: &CommonArgs, seed: u64, timing: bool) -> Result<(), Error> {
    let mut scenario = common.scenario()?;
    scenario.trials.seed = seed;
    let table = run_scenario(&scenario)?;
    match &common.out {
        Some(path) => emit_csv_path(&table, path, timing),
        None => {
            let mut buf = Vec::new();
            infout_core::experiment::emit_csv(&table, &mut buf, timing)?;
            print!("{}", String::from_utf8(buf).expect("csv is utf-8"));
            Ok(())
        }
    }
}

fn cnn_spec(scenario: &Scenario) -> Result<&infout_core::experiment::CnnSpec, Error> {
    scenario.cnn.as_ref().ok_or_else(|| {
        Error::config("this command needs a [cnn] section in the scenario config".to_string())
    })
}

fn cmd_calibrate(common: &CommonArgs, seed: u64) -> Result<(), Error> {
    let scenario = common.scenario()?;
    let spec = cnn_spec(&scenario)?;
    let cfg = &scenario.channel;
    let mapping = DgMapping::new(spec.alpha, spec.beta)?;
    let backend = SyntheticGmmBackend::new(
        scenario.model.clone(),
        spec.samples,
        spec.observations_per_sample,
        RngStream::new(seed, 1),
    )?;
    let p_act_grid: Vec<Probability> = match &spec.p_act_grid {
        Some(grid) => grid.iter().map(|&v| Probability::new(v)).collect::<Result<_, _>>()?,
        None => vec![cfg.activation_probability()],
    };
    let table = if spec.pairs_only {
        let mut keys = Vec::new();
        for &p in &p_act_grid {
            keys.extend(feasible_keys(cfg, scenario.model.dimension(), p)?);
        }
        estimate_lookup_table_keys(&backend, &keys, spec.trials, &mapping, RngStream::new(seed, 2))?
    } else {
        let (smin, smax) =
            infout_core::optimizer::feasible_feature_range(cfg, scenario.model.dimension())?;
        let s_grid: Vec<usize> =
            spec.s_grid.clone().unwrap_or_else(|| (smin..=smax).collect());
        let k_grid: Vec<usize> = match &spec.k_grid {
            Some(g) => g.clone(),
            None => {
                let mut ks: Vec<usize> = s_grid.iter().map(|&s| cfg.max_observations_for(s)).collect();
                ks.sort_unstable();
                ks.dedup();
                ks.retain(|&k| k >= 1);
                ks
            }
        };
        estimate_lookup_table(
            &backend,
            &p_act_grid,
            &k_grid,
            &s_grid,
            spec.trials,
            &mapping,
            RngStream::new(seed, 2),
        )?
    };
    match &common.out {
        Some(path) => table.save_csv(path),
        None => {
            let dir = std::env::temp_dir().join("infout_table.csv");
            table.save_csv(&dir)?;
            let text = std::fs::read_to_string(&dir).map_err(|e| Error::io(&dir, e))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_optimize_cnn(common: &CommonArgs, table_path: &PathBuf) -> Result<(), Error> {
    let scenario = common.scenario()?;
    let spec = cnn_spec(&scenario)?;
    let cfg: &ChannelLatencyConfig = &scenario.channel;
    let mapping = DgMapping::new(spec.alpha, spec.beta)?;
    let a_th = scenario.target.resolve(&scenario.model, cfg)?;
    let table = DgLookupTable::load_csv(table_path)?;
    let sol = optimize_features_cnn(&table, cfg, scenario.model.dimension(), a_th, &mapping)?;
    let p_act = cfg.activation_probability();
    let g_th = infout_core::cnn::accuracy_to_dg(&mapping, a_th)?;
    let psi = psi_surrogate(&table, sol.k_star, sol.s_star, p_act, g_th)?;
    let infout = q_function(psi)?.value();
    let header = ["s_star", "k_star", "psi", "infout", "solved_by"];
    let row = [
        sol.s_star.to_string(),
        sol.k_star.to_string(),
        fmt_real(psi),
        fmt_real(infout),
        match sol.solved_by {
            SolvedBy::InteriorRoot => "interior_root".to_string(),
            SolvedBy::Endpoint => "endpoint".to_string(),
        },
    ];
    write_output(common.out.as_ref(), &format!("{}\n{}\n", header.join(","), row.join(",")))
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Infeasible(_) => 3,
        Error::Io { .. } | Error::Csv(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { common, seed, k, s } => cmd_analyze(common, *seed, *k, *s),
        Command::Optimize { common } => cmd_optimize(common),
        Command::Sweep { common } => cmd_sweep(common),
        Command::Benchmark { common, seed, timing } => cmd_benchmark(common, *seed, *timing),
        Command::Calibrate { common, seed } => cmd_calibrate(common, *seed),
        Command::OptimizeCnn { common, table } => cmd_optimize_cnn(common, table),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
