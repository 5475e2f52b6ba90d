//! Communication-computation tradeoff optimizer: the continuous DG
//! function with its closed-form integral lower bounds, the concave
//! surrogate of the Gaussian outage bound, the bisection-plus-rounding
//! solver, the brute-force baseline, and the benchmark schemes.

use std::f64::consts::PI;

use crate::channel::{ChannelLatencyConfig, ErasurePattern};
use crate::classifier::{accuracy_monte_carlo, binary_accuracy_from_receive_dg};
use crate::error::{Error, Result};
use crate::gmm::{DgProfile, GmmModel};
use crate::numerics::{bisect_root, q_function, Probability, RngStream};
use crate::outage::{dg_threshold, infout_gaussian, ReceiveDgDistribution, ReceiveDgLawBuilder};

/// Bisection tolerance on the continuous feature index; the surrogate
/// varies on O(1) scales per index, so integer rounding dominates.
pub const FEATURE_BISECTION_TOLERANCE: f64 = 1e-6;

/// Monte-Carlo draws behind one ATB filter evaluation when the conditional
/// accuracy has no closed form (more than two classes).
pub const ATB_ONE_SHOT_TRIALS: usize = 256;

/// Cosine interpolation of a sorted gain profile: a continuous,
/// non-increasing `g(t)` on `[0, D]` with `g(d-1) = W_d` and `g(d) = W_{d+1}`
/// on each unit interval, zero outside. The boundary gain `W_{D+1}` is
/// extended as `W_D` so the last interval is flat.
#[derive(Debug, Clone)]
pub struct DgFunction {
    gains: Vec<f64>,
    prefix_int1: Vec<f64>,
    prefix_int2: Vec<f64>,
}

impl DgFunction {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::domain("gain profile is empty".to_string()));
        }
        if gains.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain("gains must be finite and >= 0".to_string()));
        }
        if gains.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::domain("gains must be sorted non-increasing".to_string()));
        }
        let d = gains.len();
        let mut prefix_int1 = Vec::with_capacity(d + 1);
        let mut prefix_int2 = Vec::with_capacity(d + 1);
        prefix_int1.push(0.0);
        prefix_int2.push(0.0);
        for i in 1..=d {
            let (a, b) = interval_coefficients(&gains, i);
            prefix_int1.push(prefix_int1[i - 1] + b);
            prefix_int2.push(prefix_int2[i - 1] + 0.5 * a * a + b * b);
        }
        Ok(DgFunction { gains, prefix_int1, prefix_int2 })
    }

    pub fn from_profile(profile: &DgProfile) -> Self {
        DgFunction::new(profile.gains().to_vec()).expect("profiles are sorted and non-negative")
    }

    pub fn dimension(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// `g(t)`, zero outside `[0, D]`.
    pub fn value(&self, t: f64) -> f64 {
        let d_max = self.gains.len();
        if !(0.0..=d_max as f64).contains(&t) {
            return 0.0;
        }
        let interval = (t.floor() as usize + 1).min(d_max);
        let tau = t - (interval - 1) as f64;
        let (a, b) = interval_coefficients(&self.gains, interval);
        a * (PI * tau).cos() + b
    }

    /// `∫_0^x g(t) dt`, clamped to the support.
    pub fn g_hat_1(&self, x: f64) -> f64 {
        let d_max = self.gains.len();
        if x <= 0.0 {
            return 0.0;
        }
        if x >= d_max as f64 {
            return self.prefix_int1[d_max];
        }
        let full = x.floor() as usize;
        let tau = x - full as f64;
        let (a, b) = interval_coefficients(&self.gains, full + 1);
        self.prefix_int1[full] + a * (PI * tau).sin() / PI + b * tau
    }

    /// `∫_0^x g²(t) dt`, clamped to the support.
    pub fn g_hat_2(&self, x: f64) -> f64 {
        let d_max = self.gains.len();
        if x <= 0.0 {
            return 0.0;
        }
        if x >= d_max as f64 {
            return self.prefix_int2[d_max];
        }
        let full = x.floor() as usize;
        let tau = x - full as f64;
        let (a, b) = interval_coefficients(&self.gains, full + 1);
        self.prefix_int2[full]
            + a * a * (0.5 * tau + (2.0 * PI * tau).sin() / (4.0 * PI))
            + 2.0 * a * b * (PI * tau).sin() / PI
            + b * b * tau
    }
}

/// Amplitude and offset of the cosine arc on interval `d` (1-based):
/// `a = (W_d - W_{d+1})/2`, `b = (W_d + W_{d+1})/2` with `W_{D+1} = W_D`.
fn interval_coefficients(gains: &[f64], d: usize) -> (f64, f64) {
    let w_d = gains[d - 1];
    let w_next = if d < gains.len() { gains[d] } else { gains[gains.len() - 1] };
    (0.5 * (w_d - w_next), 0.5 * (w_d + w_next))
}

struct SurrogateContext<'a> {
    dgf: &'a DgFunction,
    b0: f64,
    b1: f64,
    p_act: f64,
    g_th: f64,
}

impl SurrogateContext<'_> {
    fn f(&self, x: f64) -> f64 {
        let g2 = self.dgf.g_hat_2(x);
        let sqrt_g2 = g2.sqrt();
        self.p_act * self.dgf.g_hat_1(x) / sqrt_g2
            - self.g_th / ((self.b0 - self.b1 * x) * sqrt_g2)
    }

    fn nu(&self, x: f64) -> f64 {
        // Carries the sign of f'(x): f' = G2^(-3/2) nu. The threshold term
        // needs the B1 factor on 2*G2 for the product rule on
        // (B0 - B1 x)^{-1} to come out right.
        let g = self.dgf.value(x);
        let g1 = self.dgf.g_hat_1(x);
        let g2 = self.dgf.g_hat_2(x);
        let budget = self.b0 - self.b1 * x;
        self.p_act * g * (g2 - 0.5 * g1 * g)
            + self.g_th * (budget * g * g - 2.0 * self.b1 * g2) / (2.0 * budget * budget)
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.b0 - self.b1 * x <= 0.0 {
            return Err(Error::domain(format!(
                "observation budget exhausted at x = {x} (B0 - B1 x <= 0)"
            )));
        }
        if !(self.dgf.g_hat_2(x) > 0.0) {
            return Err(Error::domain(format!("transmit DG power vanishes at x = {x}")));
        }
        Ok(())
    }
}

fn context<'a>(
    dgf: &'a DgFunction,
    cfg: &ChannelLatencyConfig,
    p_act: Probability,
    g_th: f64,
) -> SurrogateContext<'a> {
    SurrogateContext { dgf, b0: cfg.b0(), b1: cfg.b1(), p_act: p_act.value(), g_th }
}

/// The concave surrogate
/// `f(x) = p_act Ĝ1(x)/sqrt(Ĝ2(x)) - g_th / ((B0 - B1 x) sqrt(Ĝ2(x)))`.
pub fn surrogate_f(
    dgf: &DgFunction,
    cfg: &ChannelLatencyConfig,
    p_act: Probability,
    g_th: f64,
    x: f64,
) -> Result<f64> {
    let ctx = context(dgf, cfg, p_act, g_th);
    ctx.check(x)?;
    Ok(ctx.f(x))
}

/// The InfOut value the surrogate stands for: `Q(f(x) / sqrt(p(1-p)))`,
/// collapsing to a step for degenerate channels.
pub fn surrogate_infout(
    dgf: &DgFunction,
    cfg: &ChannelLatencyConfig,
    p_act: Probability,
    g_th: f64,
    x: f64,
) -> Result<Probability> {
    let f = surrogate_f(dgf, cfg, p_act, g_th, x)?;
    let p = p_act.value();
    if p == 0.0 || p == 1.0 {
        return Ok(match f.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => Probability::ZERO,
            Some(std::cmp::Ordering::Equal) => Probability::HALF,
            _ => Probability::ONE,
        });
    }
    q_function(f / (p * (1.0 - p)).sqrt())
}

/// `ν(x)`, which carries the sign of `f'(x)` (`f' = Ĝ2^{-3/2} ν`).
pub fn nu(
    dgf: &DgFunction,
    cfg: &ChannelLatencyConfig,
    p_act: Probability,
    g_th: f64,
    x: f64,
) -> Result<f64> {
    let ctx = context(dgf, cfg, p_act, g_th);
    ctx.check(x)?;
    Ok(ctx.nu(x))
}

/// Feasible feature counts under the latency budget:
/// `S_min = max(1, ceil((B0 - K_max)/B1))`, `S_max = min(floor((B0-1)/B1), D)`.
pub fn feasible_feature_range(
    cfg: &ChannelLatencyConfig,
    dimension: usize,
) -> Result<(usize, usize)> {
    let b0 = cfg.b0();
    let b1 = cfg.b1();
    let smin = (((b0 - cfg.max_observations as f64) / b1).ceil()).max(1.0) as usize;
    let smax_budget = ((b0 - 1.0) / b1).floor();
    if smax_budget < 1.0 {
        return Err(Error::infeasible(
            "deadline too tight for one feature plus one observation".to_string(),
        ));
    }
    let smax = (smax_budget as usize).min(dimension);
    if smin > smax {
        return Err(Error::infeasible(format!(
            "empty feasible feature range: S_min {smin} > S_max {smax}"
        )));
    }
    Ok((smin, smax))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvedBy {
    InteriorRoot,
    Endpoint,
}

/// Output of the surrogate maximization: the integer feature count, its
/// observation budget, and the continuous root when one existed.
#[derive(Debug, Clone)]
pub struct SurrogateSolution {
    pub s_star: usize,
    pub k_star: usize,
    pub x_star: Option<f64>,
    pub f_value: f64,
    pub solved_by: SolvedBy,
}

/// Maximize the surrogate over the feasible integer range: bisect `ν` when
/// it changes sign across the range, then round to the better of the two
/// neighboring integers; otherwise take the better endpoint.
pub fn optimize_features(
    dgf: &DgFunction,
    cfg: &ChannelLatencyConfig,
    p_act: Probability,
    g_th: f64,
) -> Result<SurrogateSolution> {
    let (smin, smax) = feasible_feature_range(cfg, dgf.dimension())?;
    let ctx = context(dgf, cfg, p_act, g_th);
    ctx.check(smin as f64)?;
    ctx.check(smax as f64)?;

    let endpoint_solution = |ctx: &SurrogateContext| {
        let f_lo = ctx.f(smin as f64);
        let f_hi = ctx.f(smax as f64);
        let (s, f) = if f_lo >= f_hi { (smin, f_lo) } else { (smax, f_hi) };
        SurrogateSolution {
            s_star: s,
            k_star: cfg.max_observations_for(s),
            x_star: None,
            f_value: f,
            solved_by: SolvedBy::Endpoint,
        }
    };

    if smin == smax {
        return Ok(endpoint_solution(&ctx));
    }
    let nu_lo = ctx.nu(smin as f64);
    let nu_hi = ctx.nu(smax as f64);
    if nu_lo * nu_hi >= 0.0 {
        return Ok(endpoint_solution(&ctx));
    }
    let x_star = bisect_root(
        |x| ctx.nu(x),
        smin as f64,
        smax as f64,
        FEATURE_BISECTION_TOLERANCE,
    )?;
    let lo = (x_star.floor() as usize).clamp(smin, smax);
    let hi = (x_star.ceil() as usize).clamp(smin, smax);
    let f_lo = ctx.f(lo as f64);
    let f_hi = ctx.f(hi as f64);
    let (s, f) = if f_lo >= f_hi { (lo, f_lo) } else { (hi, f_hi) };
    Ok(SurrogateSolution {
        s_star: s,
        k_star: cfg.max_observations_for(s),
        x_star: Some(x_star),
        f_value: f,
        solved_by: SolvedBy::InteriorRoot,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoutEstimator {
    Exact,
    Gaussian,
}

/// A `(K, S)` operating point with its latency usage and, when an
/// estimator produced one, the predicted InfOut probability.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub k: usize,
    pub s: usize,
    pub latency: f64,
    pub infout_predicted: Option<f64>,
    /// Set when an ATB filter emptied the candidate set and the scheme
    /// fell back to its unfiltered rule.
    pub atb_fallback: bool,
}

/// Feasible `(k_max, s)` pairs: every `s` whose observation budget admits
/// at least one observation.
fn feasible_budgets(cfg: &ChannelLatencyConfig, dimension: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 1..=dimension {
        let kmax = cfg.max_observations_for(s);
        if kmax == 0 {
            break; // the budget only shrinks with s
        }
        out.push((s, kmax));
    }
    out
}

/// Exhaustive minimization of the chosen InfOut estimator over every
/// feasible `(k, s)` pair. Ties break to smaller `s`, then larger `k`.
pub fn brute_force_search(
    model: &GmmModel,
    cfg: &ChannelLatencyConfig,
    a_th: Probability,
    estimator: InfoutEstimator,
) -> Result<OperatingPoint> {
    let profile = model.dg_profile();
    let g_th = dg_threshold(a_th, model.class_count())?;
    let p_act = cfg.activation_probability();
    let budgets = feasible_budgets(cfg, profile.dimension());
    if budgets.is_empty() {
        return Err(Error::infeasible("no (k, s) pair satisfies the deadline".to_string()));
    }

    let mut best: Option<(f64, usize, usize)> = None;
    let consider = |val: f64, k: usize, s: usize, best: &mut Option<(f64, usize, usize)>| {
        let better = match best {
            None => true,
            Some((bv, bs, bk)) => {
                val < *bv || (val == *bv && (s < *bs || (s == *bs && k > *bk)))
            }
        };
        if better {
            *best = Some((val, s, k));
        }
    };

    match estimator {
        InfoutEstimator::Exact => {
            let mut builder = ReceiveDgLawBuilder::new(p_act);
            for &(s, kmax) in &budgets {
                builder.push(profile.gains()[s - 1])?;
                for k in 1..=kmax {
                    consider(builder.scaled_cdf(k, g_th), k, s, &mut best);
                }
            }
        }
        InfoutEstimator::Gaussian => {
            for &(s, kmax) in &budgets {
                let dist = ReceiveDgDistribution::new(&profile, s, p_act)?;
                for k in 1..=kmax {
                    consider(infout_gaussian(&dist, k, g_th)?.value(), k, s, &mut best);
                }
            }
        }
    }
    let (val, s, k) = best.expect("non-empty feasible set");
    Ok(OperatingPoint {
        k,
        s,
        latency: cfg.latency_of(k, s),
        infout_predicted: Some(val),
        atb_fallback: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkScheme {
    MaxFeat,
    MaxObs,
    AtbMaxFeat,
    AtbMaxObs,
}

impl BenchmarkScheme {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkScheme::MaxFeat => "max_feat",
            BenchmarkScheme::MaxObs => "max_obs",
            BenchmarkScheme::AtbMaxFeat => "atb_max_feat",
            BenchmarkScheme::AtbMaxObs => "atb_max_obs",
        }
    }
}

/// Conventional baselines. MaxFeat takes the lexicographic maximum on
/// `(s, k)`, MaxObs on `(k, s)`. The ATB variants first drop pairs whose
/// one-shot accuracy estimate (a single erasure draw on calibration data)
/// misses the target, falling back to the unfiltered rule when the filter
/// empties the set.
pub fn benchmark_scheme(
    scheme: BenchmarkScheme,
    model: &GmmModel,
    cfg: &ChannelLatencyConfig,
    a_th: Probability,
    calibration: RngStream,
) -> Result<OperatingPoint> {
    let profile = model.dg_profile();
    let budgets = feasible_budgets(cfg, profile.dimension());
    if budgets.is_empty() {
        return Err(Error::infeasible("no (k, s) pair satisfies the deadline".to_string()));
    }
    let pairs: Vec<(usize, usize)> = budgets
        .iter()
        .flat_map(|&(s, kmax)| (1..=kmax).map(move |k| (k, s)))
        .collect();

    let pick = |candidates: &[(usize, usize)]| -> (usize, usize) {
        *match scheme {
            BenchmarkScheme::MaxFeat | BenchmarkScheme::AtbMaxFeat => {
                candidates.iter().max_by_key(|&&(k, s)| (s, k)).unwrap()
            }
            BenchmarkScheme::MaxObs | BenchmarkScheme::AtbMaxObs => {
                candidates.iter().max_by_key(|&&(k, s)| (k, s)).unwrap()
            }
        }
    };

    let (chosen, fallback) = match scheme {
        BenchmarkScheme::MaxFeat | BenchmarkScheme::MaxObs => (pick(&pairs), false),
        BenchmarkScheme::AtbMaxFeat | BenchmarkScheme::AtbMaxObs => {
            let p_act = cfg.activation_probability();
            let mut kept = Vec::new();
            for (idx, &(k, s)) in pairs.iter().enumerate() {
                let acc =
                    one_shot_accuracy(model, &profile, k, s, p_act, calibration.substream(idx as u64))?;
                if acc > a_th.value() {
                    kept.push((k, s));
                }
            }
            if kept.is_empty() {
                (pick(&pairs), true)
            } else {
                (pick(&kept), false)
            }
        }
    };
    let (k, s) = chosen;
    Ok(OperatingPoint {
        k,
        s,
        latency: cfg.latency_of(k, s),
        infout_predicted: None,
        atb_fallback: fallback,
    })
}

/// A single erasure draw followed by the conditional accuracy of whatever
/// survived; the deliberately noisy filter behind the ATB baselines.
fn one_shot_accuracy(
    model: &GmmModel,
    profile: &DgProfile,
    k: usize,
    s: usize,
    p_act: Probability,
    stream: RngStream,
) -> Result<f64> {
    let sent = profile.select_top_features(s)?;
    let mut rng = stream.rng();
    let pattern = ErasurePattern::simulate(sent, p_act, &mut rng);
    if model.class_count() == 2 {
        let g_r: f64 = pattern
            .received_mask()
            .iter()
            .zip(profile.gains())
            .filter_map(|(&ok, &w)| ok.then_some(w))
            .sum();
        binary_accuracy_from_receive_dg(k, g_r)
    } else {
        let received = pattern.received_indices();
        Ok(accuracy_monte_carlo(model, k, &received, ATB_ONE_SHOT_TRIALS, stream.substream(u64::MAX))?
            .value)
    }
}
