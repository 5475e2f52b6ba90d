//! Maximum-likelihood (Mahalanobis) classification on a received feature
//! subset, with exact, lower-bound, and Monte-Carlo accuracy evaluation.

use crate::error::{Error, Result};
use crate::gmm::{fuse, GmmModel};
use crate::numerics::{q_function, RngStream};

/// Convention for a completely lost feature set: predict the first class.
/// Under uniform priors this scores correct with probability 1/L.
pub const DEFAULT_CLASS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyMethod {
    ExactPairwise,
    MonteCarlo,
    LowerBound,
}

/// An accuracy value with its standard error. `LowerBound` estimates may be
/// negative for small gains and many classes; they are returned as-is and
/// are then not probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub method: AccuracyMethod,
}

impl AccuracyEstimate {
    pub fn is_probability(&self) -> bool {
        (0.0..=1.0).contains(&self.value)
    }
}

/// The feature subset that survived the channel, with fused values aligned
/// to the retained original dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFeatureSet {
    indices: Vec<usize>,
    values: Vec<f64>,
    observation_count: usize,
}

impl ReceivedFeatureSet {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, observation_count: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::domain(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if observation_count == 0 {
            return Err(Error::domain("observation count must be >= 1".to_string()));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("received indices must be distinct".to_string()));
        }
        Ok(ReceivedFeatureSet { indices, values, observation_count })
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observation_count(&self) -> usize {
        self.observation_count
    }
}

/// Minimum-Mahalanobis-distance classification over the received subset,
/// with the fused covariance `C/K`. Ties break to the lowest class index.
///
/// An empty received set is a total-feature-loss error; pipelines score it
/// with the [`DEFAULT_CLASS`] convention.
pub fn classify(model: &GmmModel, received: &ReceivedFeatureSet) -> Result<usize> {
    if received.is_empty() {
        return Err(Error::domain("total feature loss: received set is empty".to_string()));
    }
    if let Some(&bad) = received.indices.iter().find(|&&d| d >= model.dimension()) {
        return Err(Error::domain(format!("received index {bad} out of range")));
    }
    let k = received.observation_count as f64;
    let cov = model.covariance_diag();
    let mut best = DEFAULT_CLASS;
    let mut best_dist = f64::INFINITY;
    for label in 0..model.class_count() {
        let centroid = model.centroid(label);
        let mut dist = 0.0;
        for (&d, &x) in received.indices.iter().zip(&received.values) {
            let delta = x - centroid[d];
            dist += delta * delta / (cov[d] / k);
        }
        if dist < best_dist {
            best_dist = dist;
            best = label;
        }
    }
    Ok(best)
}

/// Exact accuracy for the binary case: `1 - Q(sqrt(K * G_R) / 2)` with
/// `G_R` the gain sum over the received subset. An empty subset is chance
/// level, 0.5.
pub fn accuracy_exact_pairwise(
    model: &GmmModel,
    k: usize,
    subset: &[usize],
) -> Result<AccuracyEstimate> {
    if model.class_count() != 2 {
        return Err(Error::domain(format!(
            "exact pairwise accuracy requires 2 classes, got {} (use monte carlo)",
            model.class_count()
        )));
    }
    if k == 0 {
        return Err(Error::domain("observation count must be >= 1".to_string()));
    }
    let mut g_r = 0.0;
    for &d in subset {
        g_r += model.pairwise_dg(d, 0, 1)?;
    }
    Ok(AccuracyEstimate {
        value: binary_accuracy_from_receive_dg(k, g_r)?,
        standard_error: 0.0,
        method: AccuracyMethod::ExactPairwise,
    })
}

/// `1 - Q(sqrt(k * g_r) / 2)` for a binary classifier given a receive DG.
pub fn binary_accuracy_from_receive_dg(k: usize, g_r: f64) -> Result<f64> {
    Ok(1.0 - q_function((k as f64 * g_r).sqrt() / 2.0)?.value())
}

/// Union-bound accuracy lower bound `1 - (L-1) Q(sqrt(K g_r) / 2)`.
pub fn accuracy_lower_bound(class_count: usize, k: usize, g_r: f64) -> Result<AccuracyEstimate> {
    if class_count < 2 {
        return Err(Error::domain("need at least 2 classes".to_string()));
    }
    if k == 0 {
        return Err(Error::domain("observation count must be >= 1".to_string()));
    }
    if !(g_r >= 0.0) {
        return Err(Error::domain(format!("receive DG must be >= 0, got {g_r}")));
    }
    let q = q_function((k as f64 * g_r).sqrt() / 2.0)?.value();
    Ok(AccuracyEstimate {
        value: 1.0 - (class_count - 1) as f64 * q,
        standard_error: 0.0,
        method: AccuracyMethod::LowerBound,
    })
}

/// Monte-Carlo accuracy: draw a uniform label, sample `k` observations,
/// fuse, classify on `subset`. Empty subsets fall back to [`DEFAULT_CLASS`].
pub fn accuracy_monte_carlo(
    model: &GmmModel,
    k: usize,
    subset: &[usize],
    trials: usize,
    stream: RngStream,
) -> Result<AccuracyEstimate> {
    if trials == 0 {
        return Err(Error::domain("trial count must be >= 1".to_string()));
    }
    if k == 0 {
        return Err(Error::domain("observation count must be >= 1".to_string()));
    }
    let mut rng = stream.rng();
    let l = model.class_count();
    let mut correct = 0usize;
    for _ in 0..trials {
        let label = rand::Rng::random_range(&mut rng, 0..l);
        let predicted = if subset.is_empty() {
            DEFAULT_CLASS
        } else {
            let observations = model.sample_observations(label, k, &mut rng)?;
            let fused = fuse(&observations, label)?;
            let values: Vec<f64> = subset.iter().map(|&d| fused.values[d]).collect();
            let received = ReceivedFeatureSet::new(subset.to_vec(), values, k)?;
            classify(model, &received)?
        };
        if predicted == label {
            correct += 1;
        }
    }
    let value = correct as f64 / trials as f64;
    Ok(AccuracyEstimate {
        value,
        standard_error: (value * (1.0 - value) / trials as f64).sqrt(),
        method: AccuracyMethod::MonteCarlo,
    })
}

/// The receive DG of a subset under a model profile: sum of minimum
/// pairwise gains over the received dimensions.
pub fn receive_dg_of_subset(model: &GmmModel, subset: &[usize]) -> Result<f64> {
    let l = model.class_count();
    let mut g_r = 0.0;
    for &d in subset {
        let mut min = f64::INFINITY;
        for l1 in 0..l {
            for l2 in (l1 + 1)..l {
                min = min.min(model.pairwise_dg(d, l1, l2)?);
            }
        }
        g_r += min;
    }
    Ok(g_r)
}
