//! Distribution of the receive discriminant gain and everything derived
//! from it: Gaussian approximation, inference-outage probabilities (bound,
//! exact law, empirical), the Lindeberg diagnostic, and percentile metrics.

use rayon::prelude::*;

use crate::channel::{ChannelLatencyConfig, ErasurePattern};
use crate::classifier::{accuracy_monte_carlo, binary_accuracy_from_receive_dg};
use crate::error::{Error, Result};
use crate::gmm::{DgProfile, GmmModel};
use crate::numerics::{inverse_q, q_function, Probability, RngStream};

/// Base tolerance for merging equal subset-sum atoms.
pub const EXACT_MERGE_TOLERANCE: f64 = 1e-12;
/// Atom budget of the exact law. When a convolution step exceeds it, the
/// merge tolerance doubles until the list fits [`EXACT_COARSEN_TARGET`];
/// the achieved tolerance is reported on the law.
pub const EXACT_MAX_ATOMS: usize = 1 << 20;
/// Working size after a coarsening fallback, keeping long sweeps at
/// additive per-step cost while the value resolution stays orders of
/// magnitude below every outage tolerance in use.
pub const EXACT_COARSEN_TARGET: usize = 1 << 17;
/// Feature-count limit of the exact enumeration.
pub const EXACT_FEATURE_LIMIT: usize = 2048;

/// Required receive DG to reach accuracy `a_th` with `l` classes:
/// `4 (Q^{-1}((1 - a_th) / (l - 1)))^2`.
///
/// The argument must lie in (0, 0.5): targets at or below chance level, or
/// so extreme the quantile is undefined, are infeasible.
pub fn dg_threshold(a_th: Probability, l: usize) -> Result<f64> {
    if l < 2 {
        return Err(Error::domain("need at least 2 classes".to_string()));
    }
    let arg = (1.0 - a_th.value()) / (l - 1) as f64;
    if !(arg > 0.0 && arg < 0.5) {
        return Err(Error::infeasible(format!(
            "accuracy target {a_th} maps to quantile argument {arg} outside (0, 0.5)"
        )));
    }
    let z = inverse_q(Probability::new(arg)?)?;
    Ok(4.0 * z * z)
}

/// The random receive DG `G_R = sum_d W_d I_d` over the top-`s` gains, with
/// `I_d ~ Bernoulli(p_act)` i.i.d.:
/// mean `p_act G1`, variance `p_act (1 - p_act) G2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveDgDistribution {
    gains: Vec<f64>,
    p_act: Probability,
    mean: f64,
    variance: f64,
    g1: f64,
    g2: f64,
}

impl ReceiveDgDistribution {
    pub fn new(profile: &DgProfile, s: usize, p_act: Probability) -> Result<Self> {
        if s == 0 || s > profile.dimension() {
            return Err(Error::domain(format!(
                "selection size {s} out of range [1, {}]",
                profile.dimension()
            )));
        }
        Ok(Self::from_gains(profile.gains()[..s].to_vec(), p_act))
    }

    /// Build directly from a gain list (already selected).
    pub fn from_gains(gains: Vec<f64>, p_act: Probability) -> Self {
        let g1: f64 = gains.iter().sum();
        let g2: f64 = gains.iter().map(|w| w * w).sum();
        let p = p_act.value();
        ReceiveDgDistribution {
            gains,
            p_act,
            mean: p * g1,
            variance: p * (1.0 - p) * g2,
            g1,
            g2,
        }
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn p_act(&self) -> Probability {
        self.p_act
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Transmit DG `G1`.
    pub fn g1(&self) -> f64 {
        self.g1
    }

    /// Transmit DG power `G2`.
    pub fn g2(&self) -> f64 {
        self.g2
    }

    /// Exact law of `G_R` as a list of value atoms.
    pub fn exact_law(&self) -> Result<ReceiveDgLaw> {
        let mut builder = ReceiveDgLawBuilder::new(self.p_act);
        for &w in &self.gains {
            builder.push(w)?;
        }
        Ok(builder.law())
    }
}

/// Gaussian-approximation upper bound on the InfOut probability,
/// `Q((p_act G1/sqrt(G2) - g_th/(k sqrt(G2))) / sqrt(p_act (1 - p_act)))`.
///
/// Degenerate channels (`p_act` of exactly 0 or 1) bypass the formula and
/// return the exact step value.
pub fn infout_gaussian(dist: &ReceiveDgDistribution, k: usize, g_th: f64) -> Result<Probability> {
    if k == 0 {
        return Err(Error::domain("observation count must be >= 1".to_string()));
    }
    let p = dist.p_act.value();
    if p == 0.0 {
        return Ok(if g_th >= 0.0 { Probability::ONE } else { Probability::ZERO });
    }
    if p == 1.0 {
        return Ok(if k as f64 * dist.g1 > g_th { Probability::ZERO } else { Probability::ONE });
    }
    if !(dist.g2 > 0.0) {
        return Err(Error::domain("transmit DG power must be positive".to_string()));
    }
    let sqrt_g2 = dist.g2.sqrt();
    let numerator = p * dist.g1 / sqrt_g2 - g_th / (k as f64 * sqrt_g2);
    q_function(numerator / (p * (1.0 - p)).sqrt())
}

/// Exact law of a weighted sum of independent Bernoulli variables, stored
/// as sorted `(value, probability)` atoms with cumulative probabilities.
#[derive(Debug, Clone)]
pub struct ReceiveDgLaw {
    atoms: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
    merge_tolerance: f64,
}

impl ReceiveDgLaw {
    fn from_atoms(atoms: Vec<(f64, f64)>, merge_tolerance: f64) -> Self {
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for &(_, p) in &atoms {
            acc += p;
            cumulative.push(acc);
        }
        ReceiveDgLaw { atoms, cumulative, merge_tolerance }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// The achieved merge tolerance; equal to [`EXACT_MERGE_TOLERANCE`]
    /// unless the atom budget forced coarsening.
    pub fn merge_tolerance(&self) -> f64 {
        self.merge_tolerance
    }

    /// `P(G_R <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let idx = self.atoms.partition_point(|&(v, _)| v <= x);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// `P(k G_R <= g_th)`, evaluated without dividing the threshold so that
    /// atom boundaries are compared in the same arithmetic as callers use.
    pub fn scaled_cdf(&self, k: usize, g_th: f64) -> f64 {
        let kf = k as f64;
        let idx = self.atoms.partition_point(|&(v, _)| kf * v <= g_th);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// Kolmogorov-Smirnov distance to `N(mean, variance)`.
    pub fn ks_distance_to_normal(&self, mean: f64, variance: f64) -> Result<f64> {
        if !(variance > 0.0) {
            return Err(Error::domain("variance must be positive".to_string()));
        }
        let sd = variance.sqrt();
        let mut worst: f64 = 0.0;
        let mut before = 0.0;
        for (i, &(v, _)) in self.atoms.iter().enumerate() {
            let normal = 1.0 - q_function((v - mean) / sd)?.value();
            let after = self.cumulative[i];
            worst = worst.max((after - normal).abs()).max((before - normal).abs());
            before = after;
        }
        Ok(worst)
    }
}

/// Weighted-mean merge of two adjacent atoms; the mean is guarded against
/// subnormal-weight overflow so values stay finite.
fn merge_into(last: &mut (f64, f64), next: (f64, f64)) {
    let w = last.1 + next.1;
    if w > 0.0 {
        let mean = (last.0 * last.1 + next.0 * next.1) / w;
        if mean.is_finite() {
            last.0 = mean;
        }
    }
    last.1 = w;
}

/// Incremental convolution of Bernoulli terms into the exact law. Pushing
/// gains in profile order makes a whole `s`-sweep cost a single pass.
#[derive(Debug, Clone)]
pub struct ReceiveDgLawBuilder {
    p_act: f64,
    atoms: Vec<(f64, f64)>,
    scratch: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
    cumulative_fresh: bool,
    tolerance: f64,
    pushed: usize,
}

impl ReceiveDgLawBuilder {
    pub fn new(p_act: Probability) -> Self {
        ReceiveDgLawBuilder {
            p_act: p_act.value(),
            atoms: vec![(0.0, 1.0)],
            scratch: Vec::new(),
            cumulative: Vec::new(),
            cumulative_fresh: false,
            tolerance: EXACT_MERGE_TOLERANCE,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Convolve one `gain * Bernoulli(p_act)` term into the law.
    pub fn push(&mut self, gain: f64) -> Result<()> {
        if !(gain >= 0.0) || !gain.is_finite() {
            return Err(Error::domain(format!("gain must be finite and >= 0, got {gain}")));
        }
        if self.pushed >= EXACT_FEATURE_LIMIT {
            return Err(Error::Capacity(format!(
                "exact law limited to {EXACT_FEATURE_LIMIT} features (use the gaussian or empirical estimator)"
            )));
        }
        self.pushed += 1;
        self.cumulative_fresh = false;
        let (p, q) = (self.p_act, 1.0 - self.p_act);
        if p == 0.0 || gain == 0.0 {
            return Ok(()); // the term contributes nothing
        }
        if p == 1.0 {
            for atom in &mut self.atoms {
                atom.0 += gain;
            }
            return Ok(());
        }
        // Merge the kept stream (value v, weight q) with the shifted stream
        // (value v + gain, weight p); both are sorted, so this is a single
        // two-pointer pass. Atoms closer than the tolerance coalesce into a
        // probability-weighted mean, which keeps E[G_R] exact. Atoms whose
        // probability underflowed to zero carry no mass and are dropped;
        // keeping them would poison mean updates with 0/0.
        self.scratch.clear();
        self.scratch.reserve(self.atoms.len() * 2);
        let (mut i, mut j) = (0usize, 0usize);
        let n = self.atoms.len();
        while i < n || j < n {
            let next = if j >= n {
                let a = (self.atoms[i].0, self.atoms[i].1 * q);
                i += 1;
                a
            } else if i >= n {
                let a = (self.atoms[j].0 + gain, self.atoms[j].1 * p);
                j += 1;
                a
            } else if self.atoms[i].0 <= self.atoms[j].0 + gain {
                let a = (self.atoms[i].0, self.atoms[i].1 * q);
                i += 1;
                a
            } else {
                let a = (self.atoms[j].0 + gain, self.atoms[j].1 * p);
                j += 1;
                a
            };
            if next.1 == 0.0 {
                continue;
            }
            match self.scratch.last_mut() {
                Some(last) if next.0 - last.0 <= self.tolerance => merge_into(last, next),
                _ => self.scratch.push(next),
            }
        }
        std::mem::swap(&mut self.atoms, &mut self.scratch);
        if self.atoms.len() > EXACT_MAX_ATOMS {
            while self.atoms.len() > EXACT_COARSEN_TARGET {
                self.tolerance *= 2.0;
                self.coalesce();
            }
        }
        Ok(())
    }

    fn coalesce(&mut self) {
        self.scratch.clear();
        for &(v, p) in &self.atoms {
            if p == 0.0 {
                continue;
            }
            match self.scratch.last_mut() {
                Some(last) if v - last.0 <= self.tolerance => merge_into(last, (v, p)),
                _ => self.scratch.push((v, p)),
            }
        }
        std::mem::swap(&mut self.atoms, &mut self.scratch);
    }

    fn refresh_cumulative(&mut self) {
        if !self.cumulative_fresh {
            self.cumulative.clear();
            let mut acc = 0.0;
            for &(_, p) in &self.atoms {
                acc += p;
                self.cumulative.push(acc);
            }
            self.cumulative_fresh = true;
        }
    }

    /// `P(k G_R <= g_th)` for the law built so far.
    pub fn scaled_cdf(&mut self, k: usize, g_th: f64) -> f64 {
        self.refresh_cumulative();
        let kf = k as f64;
        let idx = self.atoms.partition_point(|&(v, _)| kf * v <= g_th);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// Snapshot the current law.
    pub fn law(&self) -> ReceiveDgLaw {
        ReceiveDgLaw::from_atoms(self.atoms.clone(), self.tolerance)
    }
}

/// Exact InfOut upper bound `P(k G_R <= g_th)` from the enumerated law.
pub fn infout_exact(dist: &ReceiveDgDistribution, k: usize, g_th: f64) -> Result<Probability> {
    if k == 0 {
        return Err(Error::domain("observation count must be >= 1".to_string()));
    }
    if dist.gains.len() > EXACT_FEATURE_LIMIT {
        return Err(Error::Capacity(format!(
            "{} features exceeds the exact enumeration limit {EXACT_FEATURE_LIMIT}",
            dist.gains.len()
        )));
    }
    let law = dist.exact_law()?;
    Probability::new(law.scaled_cdf(k, g_th))
}

/// Fraction of channel draws whose conditional accuracy misses `a_th`,
/// estimated over `trials` independent erasure patterns on the top-`s`
/// features. Binary models use the exact conditional accuracy; larger
/// models estimate it with `inner_trials` Monte-Carlo draws per pattern.
///
/// Returns the outage fraction and its binomial standard error.
#[allow(clippy::too_many_arguments)]
pub fn infout_empirical(
    model: &GmmModel,
    cfg: &ChannelLatencyConfig,
    k: usize,
    s: usize,
    a_th: Probability,
    trials: usize,
    inner_trials: usize,
    stream: RngStream,
) -> Result<(Probability, f64)> {
    let samples = empirical_accuracy_samples(model, cfg, k, s, trials, inner_trials, stream)?;
    let outages = samples.iter().filter(|&&a| a <= a_th.value()).count();
    let fraction = outages as f64 / trials as f64;
    let stderr = (fraction * (1.0 - fraction) / trials as f64).sqrt();
    Ok((Probability::new(fraction)?, stderr))
}

/// One conditional accuracy per erasure draw; the sample list behind
/// [`infout_empirical`] and the percentile metrics.
pub fn empirical_accuracy_samples(
    model: &GmmModel,
    cfg: &ChannelLatencyConfig,
    k: usize,
    s: usize,
    trials: usize,
    inner_trials: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if trials == 0 || inner_trials == 0 {
        return Err(Error::domain("trial counts must be >= 1".to_string()));
    }
    if k == 0 {
        return Err(Error::domain("observation count must be >= 1".to_string()));
    }
    let profile = model.dg_profile();
    let sent = profile.select_top_features(s)?;
    let p_act = cfg.activation_probability();
    let binary = model.class_count() == 2;
    // Gain of sent slot i, aligned with the erasure mask.
    let sent_gains: Vec<f64> = profile.gains()[..s].to_vec();

    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let sub = stream.substream(trial as u64);
            let mut rng = sub.rng();
            let pattern = ErasurePattern::simulate(sent.clone(), p_act, &mut rng);
            if binary {
                let g_r: f64 = pattern
                    .received_mask()
                    .iter()
                    .zip(&sent_gains)
                    .filter_map(|(&ok, &w)| ok.then_some(w))
                    .sum();
                binary_accuracy_from_receive_dg(k, g_r)
            } else {
                let received = pattern.received_indices();
                Ok(accuracy_monte_carlo(model, k, &received, inner_trials, sub.substream(u64::MAX))?
                    .value)
            }
        })
        .collect()
}

/// The Lindeberg ratio of the weighted Bernoulli sum at cutoff `epsilon`:
/// `(1/sigma^2) sum_d E[(X_d - mu_d)^2 1(|X_d - mu_d| > eps sigma)]`,
/// evaluated exactly over each term's two atoms. Lies in `[0, 1]`.
pub fn lindeberg_diagnostic(dist: &ReceiveDgDistribution, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(dist.variance > 0.0) {
        return Err(Error::domain(
            "lindeberg diagnostic undefined for a zero-variance sum".to_string(),
        ));
    }
    let p = dist.p_act.value();
    let q = 1.0 - p;
    let cutoff = epsilon * dist.variance.sqrt();
    let mut sum = 0.0;
    for &w in &dist.gains {
        // X = w I: deviation p*w with prob q (I=0), q*w with prob p (I=1)
        let dev0 = p * w;
        let dev1 = q * w;
        if dev0 > cutoff {
            sum += q * dev0 * dev0;
        }
        if dev1 > cutoff {
            sum += p * dev1 * dev1;
        }
    }
    Ok(sum / dist.variance)
}

/// First-percentile order statistic with lower interpolation: the sorted
/// sample at index `floor(0.01 (n - 1))`.
pub fn first_percentile(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("percentile of an empty sample list".to_string()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = (0.01 * (sorted.len() - 1) as f64).floor() as usize;
    Ok(sorted[idx])
}

/// One analyzed operating point, serializable as a CSV row.
#[derive(Debug, Clone)]
pub struct OutageReport {
    pub k: usize,
    pub s: usize,
    pub p_act: Probability,
    pub g_threshold: f64,
    pub infout_gaussian: Probability,
    pub infout_exact: Option<Probability>,
    pub infout_empirical: Option<(Probability, f64)>,
}

impl OutageReport {
    pub const CSV_HEADER: [&'static str; 8] = [
        "k",
        "s",
        "p_act",
        "g_th",
        "infout_gaussian",
        "infout_exact",
        "infout_empirical",
        "stderr",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        use crate::experiment::fmt_real;
        vec![
            self.k.to_string(),
            self.s.to_string(),
            fmt_real(self.p_act.value()),
            fmt_real(self.g_threshold),
            fmt_real(self.infout_gaussian.value()),
            self.infout_exact.map(|p| fmt_real(p.value())).unwrap_or_default(),
            self.infout_empirical.map(|(p, _)| fmt_real(p.value())).unwrap_or_default(),
            self.infout_empirical.map(|(_, se)| fmt_real(se)).unwrap_or_default(),
        ]
    }
}
