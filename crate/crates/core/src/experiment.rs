//! Batch experiment runner: scenario configs, sweep evaluation across the
//! scheme zoo, and deterministic CSV emission.

use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::channel::{bits_per_index_for_dimension, ChannelLatencyConfig};
use crate::classifier::accuracy_exact_pairwise;
use crate::error::{Error, Result};
use crate::gmm::{DgProfile, GmmModel};
use crate::numerics::{Probability, RngStream};
use crate::optimizer::{
    benchmark_scheme, brute_force_search, feasible_feature_range, optimize_features,
    surrogate_f, BenchmarkScheme, DgFunction, InfoutEstimator, OperatingPoint,
};
use crate::outage::{
    dg_threshold, empirical_accuracy_samples, first_percentile, infout_gaussian,
    ReceiveDgDistribution, ReceiveDgLawBuilder,
};

/// Render a real with 12 significant digits, plain decimal in the middle
/// of the range and scientific notation outside it. Pure function of the
/// bit pattern, so emitted files are byte-stable.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        let prec = (11 - exp).max(0) as usize;
        let s = format!("{x:.prec$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.11e}");
        let (mant, e) = s.split_once('e').expect("exponent marker");
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{e}")
    }
}

/// Accuracy target: either an absolute probability or a fraction of a
/// reference maximum. Without an explicit reference, the full-feature
/// accuracy at `max_observations` is used (binary models only; larger
/// models must state the reference).
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Absolute(f64),
    FractionOfMax { fraction: f64, reference: Option<f64> },
}

impl TargetSpec {
    pub fn resolve(&self, model: &GmmModel, cfg: &ChannelLatencyConfig) -> Result<Probability> {
        match *self {
            TargetSpec::Absolute(a) => Probability::new(a),
            TargetSpec::FractionOfMax { fraction, reference } => {
                let reference = match reference {
                    Some(r) => r,
                    None => {
                        if model.class_count() != 2 {
                            return Err(Error::config(
                                "fraction_of_max needs an explicit reference for more than 2 classes"
                                    .to_string(),
                            ));
                        }
                        let all: Vec<usize> = (0..model.dimension()).collect();
                        accuracy_exact_pairwise(model, cfg.max_observations, &all)?.value
                    }
                };
                Probability::new(fraction * reference)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Features,
    Power,
    ComputeSpeed,
    Deadline,
    ChannelOutage,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "features" => Ok(SweepAxis::Features),
            "power" => Ok(SweepAxis::Power),
            "compute_speed" => Ok(SweepAxis::ComputeSpeed),
            "deadline" => Ok(SweepAxis::Deadline),
            "channel_outage" => Ok(SweepAxis::ChannelOutage),
            other => Err(Error::config(format!("unknown sweep axis '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Features => "features",
            SweepAxis::Power => "power",
            SweepAxis::ComputeSpeed => "compute_speed",
            SweepAxis::Deadline => "deadline",
            SweepAxis::ChannelOutage => "channel_outage",
        }
    }

    fn apply(self, base: &ChannelLatencyConfig, value: f64) -> Result<ChannelLatencyConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Features => {}
            SweepAxis::Power => cfg.transmit_power = value,
            SweepAxis::ComputeSpeed => cfg.compute_speed = value,
            SweepAxis::Deadline => cfg.deadline = value,
            SweepAxis::ChannelOutage => {
                cfg = cfg.with_outage_probability(Probability::new(value)?)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialsSpec {
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
}

/// Calibration settings for the lookup-table pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSpec {
    pub trials: usize,
    pub samples: usize,
    pub observations_per_sample: usize,
    pub alpha: f64,
    pub beta: f64,
    pub p_act_grid: Option<Vec<f64>>,
    pub s_grid: Option<Vec<usize>>,
    pub k_grid: Option<Vec<usize>>,
    /// Estimate only the `(K̂(s), s)` pairs the optimizer needs instead of
    /// the full grid cross product.
    pub pairs_only: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: GmmModel,
    pub channel: ChannelLatencyConfig,
    pub target: TargetSpec,
    pub sweep_axis: SweepAxis,
    pub grid: Vec<f64>,
    pub trials: TrialsSpec,
    pub cnn: Option<CnnSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    model: RawModelSource,
    channel: RawChannel,
    latency: RawLatency,
    target: RawTarget,
    sweep: RawSweep,
    trials: RawTrials,
    cnn: Option<RawCnn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSource {
    file: Option<String>,
    synthetic: Option<RawSynthetic>,
    inline: Option<RawInline>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    dimension: usize,
    centroid_magnitude: f64,
    cov_slope: f64,
    cov_intercept: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInline {
    centroids: Vec<Vec<f64>>,
    covariance_diag: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    transmit_power: f64,
    bandwidth: f64,
    noise_density: f64,
    slot_length: f64,
    bits_per_feature: u32,
    bits_per_index: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLatency {
    compute_speed: f64,
    flops_per_observation: f64,
    deadline: f64,
    max_observations: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    accuracy: Option<f64>,
    fraction_of_max: Option<f64>,
    reference: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: String,
    grid: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrials {
    outer: usize,
    inner: usize,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCnn {
    trials: usize,
    samples: usize,
    observations_per_sample: usize,
    alpha: Option<f64>,
    beta: Option<f64>,
    p_act_grid: Option<Vec<f64>>,
    s_grid: Option<Vec<usize>>,
    k_grid: Option<Vec<usize>>,
    pairs_only: Option<bool>,
}

impl Scenario {
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| Error::config(format!("scenario file: {e}")))?;

        let model = match (&raw.model.file, &raw.model.synthetic, &raw.model.inline) {
            (Some(file), None, None) => {
                let path = match base_dir {
                    Some(dir) => dir.join(file),
                    None => file.into(),
                };
                GmmModel::load(path)?
            }
            (None, Some(syn), None) => GmmModel::synthetic_two_class(
                syn.dimension,
                syn.centroid_magnitude,
                syn.cov_slope,
                syn.cov_intercept,
            )?,
            (None, None, Some(inline)) => {
                GmmModel::new(inline.centroids.clone(), inline.covariance_diag.clone())?
            }
            _ => {
                return Err(Error::config(
                    "model section needs exactly one of: file, synthetic, inline".to_string(),
                ))
            }
        };

        let mut channel = ChannelLatencyConfig {
            transmit_power: raw.channel.transmit_power,
            bandwidth: raw.channel.bandwidth,
            noise_density: raw.channel.noise_density,
            slot_length: raw.channel.slot_length,
            bits_per_feature: raw.channel.bits_per_feature,
            bits_per_index: raw
                .channel
                .bits_per_index
                .unwrap_or_else(|| bits_per_index_for_dimension(model.dimension())),
            compute_speed: raw.latency.compute_speed,
            flops_per_observation: raw.latency.flops_per_observation,
            deadline: raw.latency.deadline,
            max_observations: raw.latency.max_observations.unwrap_or(1),
        };
        if raw.latency.max_observations.is_none() {
            let b0 = channel.b0().floor();
            if b0 < 1.0 {
                return Err(Error::infeasible(
                    "deadline admits no observation at all".to_string(),
                ));
            }
            channel.max_observations = b0 as usize;
        }
        channel.validate()?;

        let target = match (raw.target.accuracy, raw.target.fraction_of_max) {
            (Some(a), None) => TargetSpec::Absolute(a),
            (None, Some(f)) => {
                TargetSpec::FractionOfMax { fraction: f, reference: raw.target.reference }
            }
            _ => {
                return Err(Error::config(
                    "target section needs exactly one of: accuracy, fraction_of_max".to_string(),
                ))
            }
        };

        let sweep_axis = SweepAxis::parse(&raw.sweep.axis)?;
        if raw.sweep.grid.is_empty() {
            return Err(Error::config("sweep grid is empty".to_string()));
        }

        let cnn = raw.cnn.map(|c| CnnSpec {
            trials: c.trials,
            samples: c.samples,
            observations_per_sample: c.observations_per_sample,
            alpha: c.alpha.unwrap_or(1.0),
            beta: c.beta.unwrap_or(1.0),
            p_act_grid: c.p_act_grid,
            s_grid: c.s_grid,
            k_grid: c.k_grid,
            pairs_only: c.pairs_only.unwrap_or(true),
        });

        if raw.trials.outer == 0 || raw.trials.inner == 0 {
            return Err(Error::config("trial counts must be >= 1".to_string()));
        }

        Ok(Scenario {
            model,
            channel,
            target,
            sweep_axis,
            grid: raw.sweep.grid,
            trials: TrialsSpec {
                outer: raw.trials.outer,
                inner: raw.trials.inner,
                seed: raw.trials.seed,
            },
            cnn,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Infeasible,
    AtbFallback,
}

impl RowStatus {
    pub fn name(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Infeasible => "infeasible",
            RowStatus::AtbFallback => "atb_fallback",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(RowStatus::Ok),
            "infeasible" => Ok(RowStatus::Infeasible),
            "atb_fallback" => Ok(RowStatus::AtbFallback),
            other => Err(Error::config(format!("unknown row status '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub scheme: String,
    pub status: RowStatus,
    pub k: usize,
    pub s: usize,
    pub infout_gaussian: Option<f64>,
    pub infout_exact: Option<f64>,
    pub infout_empirical: Option<f64>,
    pub infout_stderr: Option<f64>,
    pub first_percentile: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const RESULT_COLUMNS: [&str; 10] = [
    "sweep_value",
    "scheme",
    "status",
    "k",
    "s",
    "infout_gaussian",
    "infout_exact",
    "infout_empirical",
    "infout_stderr",
    "first_percentile",
];

const SCHEMES: [&str; 6] =
    ["optimal_c2", "brute_force", "max_feat", "max_obs", "atb_max_feat", "atb_max_obs"];

/// Evaluate every scheme at every sweep value. Rows come back in a fixed
/// order (grid order, then scheme order) and are deterministic for a fixed
/// seed apart from the wall-time field.
pub fn run_scenario(scenario: &Scenario) -> Result<ResultTable> {
    let profile = scenario.model.dg_profile();
    let a_th = scenario.target.resolve(&scenario.model, &scenario.channel)?;
    let g_th = dg_threshold(a_th, scenario.model.class_count())?;
    let base_stream = RngStream::new(scenario.trials.seed, 0);

    let point_rows: Vec<Vec<ResultRow>> = scenario
        .grid
        .par_iter()
        .enumerate()
        .map(|(idx, &value)| {
            run_point(scenario, &profile, a_th, g_th, idx, value, base_stream)
        })
        .collect::<Result<_>>()?;

    Ok(ResultTable { rows: point_rows.into_iter().flatten().collect() })
}

fn run_point(
    scenario: &Scenario,
    profile: &DgProfile,
    a_th: Probability,
    g_th: f64,
    idx: usize,
    value: f64,
    base_stream: RngStream,
) -> Result<Vec<ResultRow>> {
    let cfg = scenario.sweep_axis.apply(&scenario.channel, value)?;
    let point_stream = base_stream.substream(idx as u64);

    if scenario.sweep_axis == SweepAxis::Features {
        let s = value.round() as usize;
        if s == 0 || s > profile.dimension() {
            return Err(Error::config(format!("feature sweep value {value} out of range")));
        }
        let k = cfg.max_observations_for(s);
        if k == 0 {
            return Ok(vec![infeasible_row(value, "fixed_s")]);
        }
        let row = evaluate_point(
            scenario, profile, &cfg, a_th, g_th, value, "fixed_s", k, s, false, point_stream,
        )?;
        return Ok(vec![row]);
    }

    let dgf = DgFunction::from_profile(profile);
    let p_act = cfg.activation_probability();
    let mut rows = Vec::with_capacity(SCHEMES.len());
    for (scheme_idx, &scheme) in SCHEMES.iter().enumerate() {
        let scheme_stream = point_stream.substream(scheme_idx as u64);
        let point: Result<OperatingPoint> = match scheme {
            "optimal_c2" => optimize_features(&dgf, &cfg, p_act, g_th).map(|sol| OperatingPoint {
                k: sol.k_star,
                s: sol.s_star,
                latency: cfg.latency_of(sol.k_star, sol.s_star),
                infout_predicted: None,
                atb_fallback: false,
            }),
            "brute_force" => {
                brute_force_search(&scenario.model, &cfg, a_th, InfoutEstimator::Exact)
            }
            "max_feat" => benchmark_scheme(
                BenchmarkScheme::MaxFeat,
                &scenario.model,
                &cfg,
                a_th,
                scheme_stream.substream(0),
            ),
            "max_obs" => benchmark_scheme(
                BenchmarkScheme::MaxObs,
                &scenario.model,
                &cfg,
                a_th,
                scheme_stream.substream(0),
            ),
            "atb_max_feat" => benchmark_scheme(
                BenchmarkScheme::AtbMaxFeat,
                &scenario.model,
                &cfg,
                a_th,
                scheme_stream.substream(0),
            ),
            "atb_max_obs" => benchmark_scheme(
                BenchmarkScheme::AtbMaxObs,
                &scenario.model,
                &cfg,
                a_th,
                scheme_stream.substream(0),
            ),
            _ => unreachable!(),
        };
        let row = match point {
            Ok(op) => evaluate_point(
                scenario,
                profile,
                &cfg,
                a_th,
                g_th,
                value,
                scheme,
                op.k,
                op.s,
                op.atb_fallback,
                scheme_stream.substream(1),
            )?,
            Err(Error::Infeasible(_)) => infeasible_row(value, scheme),
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

fn infeasible_row(value: f64, scheme: &str) -> ResultRow {
    ResultRow {
        sweep_value: value,
        scheme: scheme.to_string(),
        status: RowStatus::Infeasible,
        k: 0,
        s: 0,
        infout_gaussian: None,
        infout_exact: None,
        infout_empirical: None,
        infout_stderr: None,
        first_percentile: None,
        wall_ms: 0.0,
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_point(
    scenario: &Scenario,
    profile: &DgProfile,
    cfg: &ChannelLatencyConfig,
    a_th: Probability,
    g_th: f64,
    value: f64,
    scheme: &str,
    k: usize,
    s: usize,
    atb_fallback: bool,
    stream: RngStream,
) -> Result<ResultRow> {
    let start = Instant::now();
    let p_act = cfg.activation_probability();
    let dist = ReceiveDgDistribution::new(profile, s, p_act)?;
    let gaussian = infout_gaussian(&dist, k, g_th)?.value();
    let exact = match crate::outage::infout_exact(&dist, k, g_th) {
        Ok(p) => Some(p.value()),
        Err(Error::Capacity(_)) => None,
        Err(e) => return Err(e),
    };
    let samples = empirical_accuracy_samples(
        &scenario.model,
        cfg,
        k,
        s,
        scenario.trials.outer,
        scenario.trials.inner,
        stream,
    )?;
    let outages = samples.iter().filter(|&&a| a <= a_th.value()).count();
    let empirical = outages as f64 / samples.len() as f64;
    let stderr = (empirical * (1.0 - empirical) / samples.len() as f64).sqrt();
    let percentile = first_percentile(&samples)?;
    Ok(ResultRow {
        sweep_value: value,
        scheme: scheme.to_string(),
        status: if atb_fallback { RowStatus::AtbFallback } else { RowStatus::Ok },
        k,
        s,
        infout_gaussian: Some(gaussian),
        infout_exact: exact,
        infout_empirical: Some(empirical),
        infout_stderr: Some(stderr),
        first_percentile: Some(percentile),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One row per feature count for the tradeoff plots: the observation
/// budget, the surrogate value on the feasible range, and the analytic
/// outage estimates at `(K̂(s), s)`. Fully deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSweepRow {
    pub s: usize,
    pub k_hat: usize,
    pub f: Option<f64>,
    pub infout_gaussian: f64,
    pub infout_exact: Option<f64>,
}

pub const FEATURE_SWEEP_COLUMNS: [&str; 5] = ["s", "k_hat", "f", "infout_gaussian", "infout_exact"];

pub fn feature_sweep(
    model: &GmmModel,
    cfg: &ChannelLatencyConfig,
    a_th: Probability,
    s_values: Option<&[usize]>,
) -> Result<Vec<FeatureSweepRow>> {
    let profile = model.dg_profile();
    let dgf = DgFunction::from_profile(&profile);
    let g_th = dg_threshold(a_th, model.class_count())?;
    let p_act = cfg.activation_probability();
    let (smin, smax) = feasible_feature_range(cfg, profile.dimension())?;
    let default_range: Vec<usize>;
    let s_list: &[usize] = match s_values {
        Some(v) => v,
        None => {
            default_range = (1..=smax).collect();
            &default_range
        }
    };

    let mut rows = Vec::with_capacity(s_list.len());
    let mut builder = ReceiveDgLawBuilder::new(p_act);
    let mut built = 0usize;
    for &s in s_list {
        if s == 0 || s > profile.dimension() {
            return Err(Error::domain(format!("sweep feature count {s} out of range")));
        }
        let k_hat = cfg.max_observations_for(s);
        if k_hat == 0 {
            continue; // beyond the deadline at any k: skip rather than abort
        }
        let dist = ReceiveDgDistribution::new(&profile, s, p_act)?;
        let f = if (smin..=smax).contains(&s) {
            Some(surrogate_f(&dgf, cfg, p_act, g_th, s as f64)?)
        } else {
            None
        };
        let exact = if s >= built && s <= crate::outage::EXACT_FEATURE_LIMIT {
            while built < s {
                builder.push(profile.gains()[built])?;
                built += 1;
            }
            Some(builder.scaled_cdf(k_hat, g_th))
        } else if s <= crate::outage::EXACT_FEATURE_LIMIT {
            // non-monotone custom grid: rebuild for this prefix
            let mut b = ReceiveDgLawBuilder::new(p_act);
            for &w in &profile.gains()[..s] {
                b.push(w)?;
            }
            Some(b.scaled_cdf(k_hat, g_th))
        } else {
            None
        };
        rows.push(FeatureSweepRow {
            s,
            k_hat,
            f,
            infout_gaussian: infout_gaussian(&dist, k_hat, g_th)?.value(),
            infout_exact: exact,
        });
    }
    Ok(rows)
}

fn opt_real(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

/// Write the result table as RFC-4180 CSV with a fixed column order.
/// Timing is off by default so that equal seeds give byte-identical files.
pub fn emit_csv<W: io::Write>(
    table: &ResultTable,
    writer: W,
    include_timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = RESULT_COLUMNS.to_vec();
    if include_timing {
        header.push("wall_ms");
    }
    w.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![
            fmt_real(row.sweep_value),
            row.scheme.clone(),
            row.status.name().to_string(),
            row.k.to_string(),
            row.s.to_string(),
            opt_real(row.infout_gaussian),
            opt_real(row.infout_exact),
            opt_real(row.infout_empirical),
            opt_real(row.infout_stderr),
            opt_real(row.first_percentile),
        ];
        if include_timing {
            record.push(fmt_real(row.wall_ms));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn emit_csv_path(
    table: &ResultTable,
    path: impl AsRef<Path>,
    include_timing: bool,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    emit_csv(table, file, include_timing)
}

/// Parse a CSV previously produced by [`emit_csv`] (without timing).
pub fn parse_csv<R: io::Read>(reader: R) -> Result<ResultTable> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != RESULT_COLUMNS.len() {
            return Err(Error::config(format!(
                "expected {} csv fields, got {}",
                RESULT_COLUMNS.len(),
                record.len()
            )));
        }
        let field = |i: usize| record.get(i).unwrap();
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::config(format!("bad real '{s}'")))
            }
        };
        rows.push(ResultRow {
            sweep_value: field(0)
                .parse()
                .map_err(|_| Error::config(format!("bad sweep value '{}'", field(0))))?,
            scheme: field(1).to_string(),
            status: RowStatus::parse(field(2))?,
            k: field(3).parse().map_err(|_| Error::config("bad k".to_string()))?,
            s: field(4).parse().map_err(|_| Error::config("bad s".to_string()))?,
            infout_gaussian: opt(5)?,
            infout_exact: opt(6)?,
            infout_empirical: opt(7)?,
            infout_stderr: opt(8)?,
            first_percentile: opt(9)?,
            wall_ms: 0.0,
        });
    }
    Ok(ResultTable { rows })
}

/// Emit feature-sweep rows; same determinism contract as [`emit_csv`].
pub fn emit_feature_sweep_csv<W: io::Write>(rows: &[FeatureSweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FEATURE_SWEEP_COLUMNS)?;
    for row in rows {
        w.write_record(&[
            row.s.to_string(),
            row.k_hat.to_string(),
            opt_real(row.f),
            fmt_real(row.infout_gaussian),
            opt_real(row.infout_exact),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_toml(axis: &str, grid: &str, outage_override: Option<f64>) -> String {
        let power = match outage_override {
            // keep the config power unless a target outage is requested
            Some(_) => String::new(),
            None => String::new(),
        };
        let _ = power;
        format!(
            r#"
[model.synthetic]
dimension = 12
centroid_magnitude = 1.0
cov_slope = 0.6666666666666666
cov_intercept = 10.0

[channel]
transmit_power = 5e-3
bandwidth = 5e6
noise_density = 1e-9
slot_length = 3e-4
bits_per_feature = 16
bits_per_index = 9

[latency]
compute_speed = 1e12
flops_per_observation = 936.2e6
deadline = 6e-3
max_observations = 5

[target]
accuracy = 0.9

[sweep]
axis = "{axis}"
grid = [{grid}]

[trials]
outer = 400
inner = 50
seed = 7
"#
        )
    }

    #[test]
    fn fmt_real_cases() {
        assert_eq!(fmt_real(0.0), "0");
        assert_eq!(fmt_real(0.8), "0.8");
        assert_eq!(fmt_real(-0.8), "-0.8");
        assert_eq!(fmt_real(123.456), "123.456");
        assert_eq!(fmt_real(1e-3), "0.001");
        assert_eq!(fmt_real(2e11), "200000000000");
        assert_eq!(fmt_real(1e12), "1e12");
        assert_eq!(fmt_real(2.5e-13), "2.5e-13");
        assert_eq!(fmt_real(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_real(f64::NAN), "NaN");
    }

    #[test]
    fn scenario_parses_with_defaults() {
        let text = scenario_toml("power", "5e-3", None);
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        assert_eq!(scenario.model.dimension(), 12);
        assert_eq!(scenario.channel.bits_per_index, 9);
        assert_eq!(scenario.trials.seed, 7);
        // default bits_per_index and max_observations
        let text = text
            .replace("bits_per_index = 9\n", "")
            .replace("max_observations = 5\n", "");
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        assert_eq!(scenario.channel.bits_per_index, 4); // ceil(log2 12)
        assert_eq!(scenario.channel.max_observations, scenario.channel.b0() as usize);
    }

    #[test]
    fn scenario_rejects_bad_sections() {
        let text = scenario_toml("power", "", None);
        assert!(Scenario::from_toml_str(&text, None).is_err()); // empty grid
        let text = scenario_toml("sideways", "1.0", None);
        assert!(Scenario::from_toml_str(&text, None).is_err()); // unknown axis
        let text = scenario_toml("power", "5e-3", None).replace("accuracy = 0.9", "");
        assert!(Scenario::from_toml_str(&text, None).is_err()); // no target
    }

    #[test]
    fn fraction_of_max_target_resolves() {
        let text = scenario_toml("power", "5e-3", None)
            .replace("accuracy = 0.9", "fraction_of_max = 0.97");
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let a = scenario.target.resolve(&scenario.model, &scenario.channel).unwrap();
        // reference is the full-feature accuracy at K_max, which is near 1
        assert!(a.value() > 0.93 && a.value() < 0.98, "a_th {a}");
        let explicit = TargetSpec::FractionOfMax { fraction: 0.97, reference: Some(0.998) };
        let a = explicit.resolve(&scenario.model, &scenario.channel).unwrap();
        assert!((a.value() - 0.96806).abs() < 1e-5);
    }

    #[test]
    fn degenerate_single_point_sweep() {
        // p_act ~ 1 via enormous power: empirical InfOut collapses to 0 or 1
        let text = scenario_toml("power", "1e6", None);
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let table = run_scenario(&scenario).unwrap();
        assert_eq!(table.rows.len(), SCHEMES.len());
        for row in &table.rows {
            assert_ne!(row.status, RowStatus::Infeasible);
            let e = row.infout_empirical.unwrap();
            assert!(e == 0.0 || e == 1.0, "scheme {}: {e}", row.scheme);
        }
    }

    #[test]
    fn infeasible_points_do_not_abort() {
        // deadline sweep including a value too tight for any (k, s)
        let text = scenario_toml("deadline", "1e-4, 6e-3", None);
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let table = run_scenario(&scenario).unwrap();
        assert_eq!(table.rows.len(), 2 * SCHEMES.len());
        let infeasible: Vec<_> =
            table.rows.iter().filter(|r| r.status == RowStatus::Infeasible).collect();
        assert_eq!(infeasible.len(), SCHEMES.len());
        assert!(infeasible.iter().all(|r| r.sweep_value == 1e-4));
    }

    #[test]
    fn feature_axis_rows_are_fixed_points() {
        let text = scenario_toml("features", "2, 4, 8", None);
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let table = run_scenario(&scenario).unwrap();
        assert_eq!(table.rows.len(), 3);
        for (row, s) in table.rows.iter().zip([2usize, 4, 8]) {
            assert_eq!(row.scheme, "fixed_s");
            assert_eq!(row.s, s);
            assert_eq!(row.k, scenario.channel.max_observations_for(s));
        }
    }

    #[test]
    fn run_scenario_is_deterministic() {
        let text = scenario_toml("channel_outage", "0.2, 0.35", None);
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let a = run_scenario(&scenario).unwrap();
        let b = run_scenario(&scenario).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        emit_csv(&a, &mut buf_a, false).unwrap();
        emit_csv(&b, &mut buf_b, false).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn csv_round_trip_and_empty_table() {
        let mut buf = Vec::new();
        emit_csv(&ResultTable::default(), &mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1, "header only");

        let text = scenario_toml("channel_outage", "0.25", None);
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let table = run_scenario(&scenario).unwrap();
        let mut buf = Vec::new();
        emit_csv(&table, &mut buf, false).unwrap();
        let parsed = parse_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed.rows.len(), table.rows.len());
        for (a, b) in table.rows.iter().zip(&parsed.rows) {
            assert_eq!(a.scheme, b.scheme);
            assert_eq!((a.k, a.s, a.status), (b.k, b.s, b.status));
            // reals survive the 12-significant-digit round trip
            let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
                (None, None) => true,
                (Some(x), Some(y)) => (x - y).abs() <= 1e-11 * x.abs().max(1.0),
                _ => false,
            };
            assert!(close(a.infout_empirical, b.infout_empirical));
            assert!(close(a.first_percentile, b.first_percentile));
        }
    }

    #[test]
    fn infout_non_decreasing_in_channel_outage_for_every_scheme() {
        let text = scenario_toml("channel_outage", "0.1, 0.2, 0.3, 0.45", None)
            .replace("outer = 400", "outer = 50");
        let scenario = Scenario::from_toml_str(&text, None).unwrap();
        let table = run_scenario(&scenario).unwrap();
        for scheme in SCHEMES {
            let exacts: Vec<f64> = scenario
                .grid
                .iter()
                .map(|&v| {
                    table
                        .rows
                        .iter()
                        .find(|r| r.sweep_value == v && r.scheme == scheme)
                        .and_then(|r| r.infout_exact)
                        .unwrap()
                })
                .collect();
            for w in exacts.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{scheme}: {exacts:?}");
            }
        }
    }

    #[test]
    fn feature_sweep_has_u_shape_on_default_scenario() {
        let model = GmmModel::synthetic_two_class(30, 1.0, 2.0 / 3.0, 10.0).unwrap();
        let cfg = crate::channel::test_support::default_linear_config()
            .with_outage_probability(Probability::new(0.2).unwrap())
            .unwrap();
        let a_th = Probability::new(0.968).unwrap();
        let rows = feature_sweep(&model, &cfg, a_th, None).unwrap();
        assert!(rows.len() >= 10);
        let exact: Vec<f64> = rows.iter().map(|r| r.infout_exact.unwrap()).collect();
        let min_idx =
            exact.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert!(min_idx > 0 && min_idx < exact.len() - 1, "interior minimum");
        assert!(exact[min_idx] < exact[0] && exact[min_idx] < exact[exact.len() - 1]);
        // surrogate defined exactly on the feasible range
        let (smin, smax) = feasible_feature_range(&cfg, 30).unwrap();
        for row in &rows {
            assert_eq!(row.f.is_some(), (smin..=smax).contains(&row.s));
        }
    }
}
