//! General-classifier extension: the accuracy-to-DG mapping, lookup-table
//! estimation of the receive DG distribution over a pluggable inference
//! backend, and the table-driven surrogate optimizer.
//!
//! Ships with a synthetic backend wrapping the GMM model and Mahalanobis
//! classifier, so the whole pipeline is testable against closed forms
//! without any neural network. An external model plugs in by implementing
//! [`InferenceBackend`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::ChannelLatencyConfig;
use crate::classifier::{classify, ReceivedFeatureSet, DEFAULT_CLASS};
use crate::error::{Error, Result};
use crate::experiment::fmt_real;
use crate::gmm::{fuse, GmmModel};
use crate::numerics::{inverse_q, Probability, RngStream};
use crate::optimizer::{feasible_feature_range, SolvedBy, SurrogateSolution};

/// Activation probabilities are quantized to this grid step for table
/// keys; lookups require an exact grid match, never interpolation.
pub const P_ACT_GRID_STEP: f64 = 0.05;

/// Accuracies are clipped so that `beta (1 - a)` stays inside
/// `(SATURATION_MARGIN, 1 - SATURATION_MARGIN)` before the inverse-Q map;
/// a finite-trial accuracy of exactly 1 would otherwise map to infinity.
pub const SATURATION_MARGIN: f64 = 1e-6;

/// A deterministic classifier with a labeled calibration dataset. Each
/// dataset sample owns a pool of observations; a trial draws a batch of
/// `k` of them without replacement.
pub trait InferenceBackend: Sync {
    fn feature_dim(&self) -> usize;
    fn class_count(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn observations_per_sample(&self) -> usize;
    fn label(&self, sample: usize) -> usize;
    /// Fused feature vector of the given observation batch of one sample.
    /// Must be deterministic per `(sample, batch)`.
    fn extract_features(&self, sample: usize, batch: &[usize]) -> Vec<f64>;
    /// Class prediction from a masked feature vector (lost entries zeroed).
    /// Must be deterministic per input.
    fn infer(&self, features: &[f64]) -> usize;
}

/// The strictly increasing map from classifier accuracy to a DG scale:
/// `G = alpha * Q^{-1}(beta * (1 - a))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgMapping {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for DgMapping {
    fn default() -> Self {
        DgMapping { alpha: 1.0, beta: 1.0 }
    }
}

impl DgMapping {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::domain(format!(
                "mapping parameters must be positive, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(DgMapping { alpha, beta })
    }
}

/// `alpha * Q^{-1}(beta (1 - a))`; errors when the argument saturates
/// outside (0, 1).
pub fn accuracy_to_dg(mapping: &DgMapping, a: Probability) -> Result<f64> {
    let arg = mapping.beta * (1.0 - a.value());
    if !(arg > 0.0 && arg < 1.0) {
        return Err(Error::domain(format!(
            "accuracy {a} saturates the DG mapping (beta(1-a) = {arg})"
        )));
    }
    Ok(mapping.alpha * inverse_q(Probability::new(arg)?)?)
}

/// Clipped variant used on finite-trial accuracies: the quantile argument
/// is pinned inside the saturation margins and the clip is reported.
pub fn accuracy_to_dg_clipped(mapping: &DgMapping, a: f64) -> Result<(f64, bool)> {
    let arg = mapping.beta * (1.0 - a);
    let clipped = arg.clamp(SATURATION_MARGIN, 1.0 - SATURATION_MARGIN);
    let saturated = clipped != arg;
    Ok((mapping.alpha * inverse_q(Probability::new(clipped)?)?, saturated))
}

/// Table key: observation count, feature count, and the activation
/// probability snapped to the declared grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TableKey {
    pub k: usize,
    pub s: usize,
    pub p_act_steps: u32,
}

impl TableKey {
    pub fn new(k: usize, s: usize, p_act: Probability) -> Self {
        TableKey {
            k,
            s,
            p_act_steps: (p_act.value() / P_ACT_GRID_STEP).round() as u32,
        }
    }

    pub fn p_act(&self) -> f64 {
        f64::from(self.p_act_steps) * P_ACT_GRID_STEP
    }
}

impl fmt::Display for TableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(k={}, s={}, p_act={})", self.k, self.s, self.p_act())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableEntry {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub trial_count: usize,
    pub saturated_trials: usize,
}

/// The `(k, s, p_act) -> (mu_hat, sigma_hat)` map estimated over a backend.
#[derive(Debug, Clone, Default)]
pub struct DgLookupTable {
    entries: BTreeMap<TableKey, TableEntry>,
}

impl DgLookupTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: TableKey, entry: TableEntry) {
        self.entries.insert(key, entry);
    }

    pub fn get(&self, k: usize, s: usize, p_act: Probability) -> Result<&TableEntry> {
        let key = TableKey::new(k, s, p_act);
        self.entries
            .get(&key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TableKey, &TableEntry)> {
        self.entries.iter()
    }

    pub const CSV_HEADER: [&'static str; 7] =
        ["k", "s", "p_act", "mu_hat", "sigma_hat", "n", "saturated_trials"];

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(&Self::CSV_HEADER.join(","));
        out.push('\n');
        for (key, e) in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                key.k,
                key.s,
                fmt_real(key.p_act()),
                fmt_real(e.mu_hat),
                fmt_real(e.sigma_hat),
                e.trial_count,
                e.saturated_trials
            ));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = DgLookupTable::default();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != Self::CSV_HEADER.len() {
                return Err(Error::config(format!(
                    "{}: line {} has {} fields, expected {}",
                    path.display(),
                    lineno + 1,
                    fields.len(),
                    Self::CSV_HEADER.len()
                )));
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::config(format!("{}: bad {what} on line {}", path.display(), lineno + 1))
                })
            };
            let parse_u = |s: &str, what: &str| -> Result<usize> {
                s.parse::<usize>().map_err(|_| {
                    Error::config(format!("{}: bad {what} on line {}", path.display(), lineno + 1))
                })
            };
            let key = TableKey::new(
                parse_u(fields[0], "k")?,
                parse_u(fields[1], "s")?,
                Probability::new(parse_f(fields[2], "p_act")?)?,
            );
            table.insert(
                key,
                TableEntry {
                    mu_hat: parse_f(fields[3], "mu_hat")?,
                    sigma_hat: parse_f(fields[4], "sigma_hat")?,
                    trial_count: parse_u(fields[5], "n")?,
                    saturated_trials: parse_u(fields[6], "saturated_trials")?,
                },
            );
        }
        Ok(table)
    }
}

/// One estimation trial: run the whole calibration set through masked
/// inference at `(k, s, p_act)` and map the resulting accuracy to a DG.
fn run_trial<B: InferenceBackend + ?Sized>(
    backend: &B,
    mapping: &DgMapping,
    k: usize,
    s: usize,
    p_act: f64,
    stream: RngStream,
) -> Result<(f64, bool)> {
    let mut rng = stream.rng();
    let dim = backend.feature_dim();
    let pool = backend.observations_per_sample();
    let mut correct = 0usize;
    let mut order: Vec<usize> = (0..dim).collect();
    for sample in 0..backend.num_samples() {
        let batch = sample_indices(&mut rng, pool, k).into_vec();
        let features = backend.extract_features(sample, &batch);
        debug_assert_eq!(features.len(), dim);
        // top-s magnitudes of this vector, random Bernoulli mask on those,
        // everything else zeroed
        order.sort_by(|&a, &b| {
            features[b].abs().partial_cmp(&features[a].abs()).unwrap().then(a.cmp(&b))
        });
        let mut masked = vec![0.0; dim];
        for &d in order.iter().take(s) {
            if rng.random::<f64>() < p_act {
                masked[d] = features[d];
            }
        }
        if backend.infer(&masked) == backend.label(sample) {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / backend.num_samples() as f64;
    accuracy_to_dg_clipped(mapping, accuracy)
}

/// Estimate the DG lookup table over the given key list with `trials`
/// trials per key, reporting the unbiased sample standard deviation.
pub fn estimate_lookup_table_keys<B: InferenceBackend + ?Sized>(
    backend: &B,
    keys: &[(usize, usize, Probability)],
    trials: usize,
    mapping: &DgMapping,
    stream: RngStream,
) -> Result<DgLookupTable> {
    if trials < 2 {
        return Err(Error::domain("need at least 2 trials for a variance estimate".to_string()));
    }
    if keys.is_empty() {
        return Err(Error::domain("key list is empty".to_string()));
    }
    if backend.num_samples() == 0 {
        return Err(Error::domain("backend calibration dataset is empty".to_string()));
    }
    for &(k, s, _) in keys {
        if k == 0 || k > backend.observations_per_sample() {
            return Err(Error::domain(format!(
                "k = {k} outside the backend's observation pool (1..={})",
                backend.observations_per_sample()
            )));
        }
        if s == 0 || s > backend.feature_dim() {
            return Err(Error::domain(format!(
                "s = {s} outside the backend's feature dimension (1..={})",
                backend.feature_dim()
            )));
        }
    }

    let results: Vec<Result<(TableKey, TableEntry)>> = keys
        .par_iter()
        .enumerate()
        .map(|(key_idx, &(k, s, p_act))| {
            let key = TableKey::new(k, s, p_act);
            let key_stream = stream.substream(key_idx as u64);
            let draws: Vec<(f64, bool)> = (0..trials)
                .into_par_iter()
                .map(|trial| {
                    run_trial(backend, mapping, k, s, key.p_act(), key_stream.substream(trial as u64))
                })
                .collect::<Result<_>>()?;
            let n = trials as f64;
            let mu = draws.iter().map(|d| d.0).sum::<f64>() / n;
            let ss = draws.iter().map(|d| (d.0 - mu) * (d.0 - mu)).sum::<f64>();
            let entry = TableEntry {
                mu_hat: mu,
                sigma_hat: (ss / (n - 1.0)).sqrt(),
                trial_count: trials,
                saturated_trials: draws.iter().filter(|d| d.1).count(),
            };
            Ok((key, entry))
        })
        .collect();

    let mut table = DgLookupTable::default();
    for r in results {
        let (key, entry) = r?;
        table.insert(key, entry);
    }
    Ok(table)
}

/// Estimate over the full cross product of the three grids.
pub fn estimate_lookup_table<B: InferenceBackend + ?Sized>(
    backend: &B,
    p_act_grid: &[Probability],
    k_grid: &[usize],
    s_grid: &[usize],
    trials: usize,
    mapping: &DgMapping,
    stream: RngStream,
) -> Result<DgLookupTable> {
    if p_act_grid.is_empty() || k_grid.is_empty() || s_grid.is_empty() {
        return Err(Error::domain("grids must be non-empty".to_string()));
    }
    let mut keys = Vec::with_capacity(p_act_grid.len() * k_grid.len() * s_grid.len());
    for &p in p_act_grid {
        for &k in k_grid {
            for &s in s_grid {
                keys.push((k, s, p));
            }
        }
    }
    estimate_lookup_table_keys(backend, &keys, trials, mapping, stream)
}

/// The feasible `(K̂(s), s, p_act)` keys a table must cover for the
/// optimizer at this configuration.
pub fn feasible_keys(
    cfg: &ChannelLatencyConfig,
    dimension: usize,
    p_act: Probability,
) -> Result<Vec<(usize, usize, Probability)>> {
    let (smin, smax) = feasible_feature_range(cfg, dimension)?;
    Ok((smin..=smax)
        .map(|s| (cfg.max_observations_for(s), s, p_act))
        .collect())
}

/// The table-driven surrogate `(mu_hat - g_th) / sigma_hat`; the CNN-case
/// InfOut estimate is `Q` of this value.
pub fn psi_surrogate(
    table: &DgLookupTable,
    k: usize,
    s: usize,
    p_act: Probability,
    g_th: f64,
) -> Result<f64> {
    let entry = table.get(k, s, p_act)?;
    if !(entry.sigma_hat > 0.0) {
        return Err(Error::domain(format!(
            "degenerate table entry at {}: sigma_hat = {}",
            TableKey::new(k, s, p_act),
            entry.sigma_hat
        )));
    }
    Ok((entry.mu_hat - g_th) / entry.sigma_hat)
}

/// Maximize the table surrogate over the feasible feature range at
/// `k = K̂(s)`. A discrete bisection on the difference sign locates the
/// peak of the (unimodal) sequence; the result is verified against an
/// exhaustive scan of the table, which wins if simulation noise ever made
/// the sequence multimodal.
pub fn optimize_features_cnn(
    table: &DgLookupTable,
    cfg: &ChannelLatencyConfig,
    dimension: usize,
    a_th: Probability,
    mapping: &DgMapping,
) -> Result<SurrogateSolution> {
    let p_act = cfg.activation_probability();
    let g_th = accuracy_to_dg(mapping, a_th)?;
    let (smin, smax) = feasible_feature_range(cfg, dimension)?;
    let psi_of = |s: usize| -> Result<f64> {
        psi_surrogate(table, cfg.max_observations_for(s), s, p_act, g_th)
    };
    // preflight the coverage so any missing key is named
    let psis: Vec<f64> = (smin..=smax).map(psi_of).collect::<Result<_>>()?;

    let (mut lo, mut hi) = (0usize, psis.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if psis[mid] < psis[mid + 1] {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let bisected = lo;
    let scanned = psis
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let idx = if psis[bisected] >= psis[scanned] { bisected } else { scanned };
    let s_star = smin + idx;
    Ok(SurrogateSolution {
        s_star,
        k_star: cfg.max_observations_for(s_star),
        x_star: None,
        f_value: psis[idx],
        solved_by: if s_star == smin || s_star == smax {
            SolvedBy::Endpoint
        } else {
            SolvedBy::InteriorRoot
        },
    })
}

/// The shipped synthetic backend: labeled samples with pre-generated GMM
/// observation pools, fused features, and Mahalanobis inference over the
/// nonzero entries of the masked vector.
pub struct SyntheticGmmBackend {
    model: GmmModel,
    labels: Vec<usize>,
    pools: Vec<Vec<Vec<f64>>>,
}

impl SyntheticGmmBackend {
    pub fn new(
        model: GmmModel,
        num_samples: usize,
        observations_per_sample: usize,
        stream: RngStream,
    ) -> Result<Self> {
        if num_samples == 0 || observations_per_sample == 0 {
            return Err(Error::domain(
                "need at least one sample and one observation per sample".to_string(),
            ));
        }
        let mut rng = stream.rng();
        let l = model.class_count();
        let mut labels = Vec::with_capacity(num_samples);
        let mut pools = Vec::with_capacity(num_samples);
        for i in 0..num_samples {
            let label = i % l; // balanced classes
            labels.push(label);
            pools.push(model.sample_observations(label, observations_per_sample, &mut rng)?);
        }
        Ok(SyntheticGmmBackend { model, labels, pools })
    }

    pub fn model(&self) -> &GmmModel {
        &self.model
    }
}

impl InferenceBackend for SyntheticGmmBackend {
    fn feature_dim(&self) -> usize {
        self.model.dimension()
    }

    fn class_count(&self) -> usize {
        self.model.class_count()
    }

    fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn observations_per_sample(&self) -> usize {
        self.pools[0].len()
    }

    fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    fn extract_features(&self, sample: usize, batch: &[usize]) -> Vec<f64> {
        let pool = &self.pools[sample];
        let observations: Vec<Vec<f64>> = batch.iter().map(|&i| pool[i].clone()).collect();
        fuse(&observations, self.labels[sample]).expect("non-empty batch").values
    }

    fn infer(&self, features: &[f64]) -> usize {
        // zeroed entries are the lost ones; a surviving exact 0.0 is a
        // measure-zero event for continuous features
        let indices: Vec<usize> =
            (0..features.len()).filter(|&d| features[d] != 0.0).collect();
        if indices.is_empty() {
            return DEFAULT_CLASS;
        }
        let values: Vec<f64> = indices.iter().map(|&d| features[d]).collect();
        let received = ReceivedFeatureSet::new(indices, values, 1)
            .expect("distinct indices by construction");
        classify(&self.model, &received).expect("non-empty received set")
    }
}

/// Least-squares fit of the mapping scale `alpha` (at fixed `beta`)
/// between observed accuracies and reference DG values: the calibration
/// helper for plugging in measured scales. Fitted values are config, not
/// hidden state.
pub fn fit_mapping_alpha(
    accuracies: &[f64],
    reference_dgs: &[f64],
    beta: f64,
) -> Result<DgMapping> {
    if accuracies.len() != reference_dgs.len() || accuracies.is_empty() {
        return Err(Error::domain("need equal-length, non-empty calibration arrays".to_string()));
    }
    let mapping = DgMapping::new(1.0, beta)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&a, &g) in accuracies.iter().zip(reference_dgs) {
        let (q, _) = accuracy_to_dg_clipped(&mapping, a)?;
        num += q * g;
        den += q * q;
    }
    if den == 0.0 {
        return Err(Error::domain("calibration accuracies are all at the mapping zero".to_string()));
    }
    DgMapping::new(num / den, beta)
}
