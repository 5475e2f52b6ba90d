//! Rayleigh block-fading erasure channel for per-slot feature transmission,
//! plus the end-to-end latency budget that couples computation with
//! communication.
//!
//! The hot path simulates the channel at the erasure level (one Bernoulli
//! per slot); fading gains are drawn only by the Monte-Carlo validation
//! oracle, since the received-set law depends on the channel solely through
//! the activation probability under i.i.d. block fading.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{Probability, RngStream};

/// Physical-layer and latency parameters of one link configuration.
/// All quantities in SI units (watts, hertz, seconds, bits, FLOPs).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLatencyConfig {
    pub transmit_power: f64,
    pub bandwidth: f64,
    pub noise_density: f64,
    pub slot_length: f64,
    pub bits_per_feature: u32,
    pub bits_per_index: u32,
    pub compute_speed: f64,
    pub flops_per_observation: f64,
    pub deadline: f64,
    pub max_observations: usize,
}

/// `ceil(log2(dimension))` bits to index one of `dimension` features.
pub fn bits_per_index_for_dimension(dimension: usize) -> u32 {
    usize::BITS - dimension.next_power_of_two().leading_zeros() - 1
}

impl ChannelLatencyConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("transmit_power", self.transmit_power),
            ("bandwidth", self.bandwidth),
            ("noise_density", self.noise_density),
            ("slot_length", self.slot_length),
            ("compute_speed", self.compute_speed),
            ("flops_per_observation", self.flops_per_observation),
            ("deadline", self.deadline),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if self.bits_per_feature == 0 || self.bits_per_index == 0 {
            return Err(Error::config("bit widths must be strictly positive".to_string()));
        }
        if self.max_observations == 0 {
            return Err(Error::config("max_observations must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Payload of one slot: feature bits plus index bits.
    pub fn payload_bits(&self) -> f64 {
        f64::from(self.bits_per_feature + self.bits_per_index)
    }

    /// `B0 = f_c T / N_F`: observation budget when nothing is transmitted.
    pub fn b0(&self) -> f64 {
        self.compute_speed * self.deadline / self.flops_per_observation
    }

    /// `B1 = f_c T_delta / N_F`: observations traded per transmitted feature.
    pub fn b1(&self) -> f64 {
        self.compute_speed * self.slot_length / self.flops_per_observation
    }

    /// Per-slot outage probability of the Rayleigh fading link:
    /// `1 - exp(-(N0 B_W / p) (2^(Q/(T_delta B_W)) - 1))`.
    pub fn outage_probability(&self) -> Probability {
        let snr_scale = self.noise_density * self.bandwidth / self.transmit_power;
        let rate_threshold =
            (2f64.powf(self.payload_bits() / (self.slot_length * self.bandwidth))) - 1.0;
        Probability::new(1.0 - (-snr_scale * rate_threshold).exp())
            .expect("outage expression lies in [0, 1]")
    }

    /// Per-slot activation probability, the complement of the outage.
    pub fn activation_probability(&self) -> Probability {
        self.outage_probability().complement()
    }

    /// Adjust the transmit power so the per-slot outage equals `target`.
    pub fn with_outage_probability(mut self, target: Probability) -> Result<Self> {
        let p = target.value();
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!(
                "target outage must lie strictly inside (0, 1), got {p}"
            )));
        }
        let rate_threshold =
            (2f64.powf(self.payload_bits() / (self.slot_length * self.bandwidth))) - 1.0;
        self.transmit_power =
            -self.noise_density * self.bandwidth * rate_threshold / (1.0 - p).ln();
        Ok(self)
    }

    /// End-to-end latency of `k` observations and `s` transmitted features.
    pub fn latency_of(&self, k: usize, s: usize) -> f64 {
        self.slot_length * s as f64
            + k as f64 * self.flops_per_observation / self.compute_speed
    }

    /// Largest observation count that fits the deadline alongside `s`
    /// features: `floor(B0 - B1 s)` clamped to `[0, max_observations]`.
    /// Zero means `s` is infeasible at any `k >= 1`.
    pub fn max_observations_for(&self, s: usize) -> usize {
        let budget = (self.b0() - self.b1() * s as f64).floor();
        if budget < 1.0 {
            0
        } else {
            (budget as usize).min(self.max_observations)
        }
    }
}

/// Which of the sent feature slots survived the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasurePattern {
    sent: Vec<usize>,
    received_mask: Vec<bool>,
}

impl ErasurePattern {
    /// Draw an i.i.d. Bernoulli mask over the given sent feature indices.
    pub fn simulate<R: Rng + ?Sized>(sent: Vec<usize>, p_act: Probability, rng: &mut R) -> Self {
        let p = p_act.value();
        let received_mask = sent.iter().map(|_| rng.random::<f64>() < p).collect();
        ErasurePattern { sent, received_mask }
    }

    pub fn sent(&self) -> &[usize] {
        &self.sent
    }

    pub fn received_mask(&self) -> &[bool] {
        &self.received_mask
    }

    pub fn received_indices(&self) -> Vec<usize> {
        self.sent
            .iter()
            .zip(&self.received_mask)
            .filter_map(|(&d, &ok)| ok.then_some(d))
            .collect()
    }

    pub fn received_count(&self) -> usize {
        self.received_mask.iter().filter(|&&ok| ok).count()
    }
}

/// Erasure draw over `s` slots carrying features `0..s`.
pub fn simulate_erasures<R: Rng + ?Sized>(
    s: usize,
    p_act: Probability,
    rng: &mut R,
) -> Result<ErasurePattern> {
    if s == 0 {
        return Err(Error::domain("sent count must be >= 1".to_string()));
    }
    Ok(ErasurePattern::simulate((0..s).collect(), p_act, rng))
}

/// Validation oracle: draw `slots` Rayleigh fading gains `h ~ CN(0, 1)` and
/// count slots whose Shannon rate cannot carry one feature payload.
pub fn outage_probability_monte_carlo(
    cfg: &ChannelLatencyConfig,
    slots: usize,
    stream: RngStream,
) -> Result<Probability> {
    if slots == 0 {
        return Err(Error::domain("slot count must be >= 1".to_string()));
    }
    let mut rng = stream.rng();
    let payload = cfg.payload_bits();
    let mut failures = 0usize;
    for _ in 0..slots {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let gain = 0.5 * (re * re + im * im); // |h|^2 with h ~ CN(0, 1)
        let rate = cfg.bandwidth
            * (1.0 + cfg.transmit_power * gain / (cfg.noise_density * cfg.bandwidth)).log2();
        if cfg.slot_length * rate < payload {
            failures += 1;
        }
    }
    Probability::new(failures as f64 / slots as f64)
}
