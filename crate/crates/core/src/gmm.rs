//! Gaussian-mixture data model: sample generation, observation fusion, and
//! the per-dimension discriminant-gain profile that drives feature selection.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Covariance entries below this signal a modeling error, not physics.
pub const MIN_COVARIANCE: f64 = 1e-12;

/// A Gaussian mixture with class-independent diagonal covariance and
/// uniform class priors. Callers with full covariance must pre-whiten.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    centroids: Vec<Vec<f64>>,
    covariance_diag: Vec<f64>,
}

#[derive(Deserialize)]
struct RawModel {
    centroids: Vec<Vec<f64>>,
    covariance_diag: Vec<f64>,
}

impl GmmModel {
    pub fn new(centroids: Vec<Vec<f64>>, covariance_diag: Vec<f64>) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                centroids.len()
            )));
        }
        let dim = covariance_diag.len();
        if dim == 0 {
            return Err(Error::config("covariance_diag is empty".to_string()));
        }
        for (row, c) in centroids.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::config(format!(
                    "centroids row {row} has length {}, expected {dim}",
                    c.len()
                )));
            }
            if let Some(col) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "centroids[{row}][{col}] is not finite"
                )));
            }
        }
        if let Some(col) = covariance_diag
            .iter()
            .position(|&v| !v.is_finite() || v < MIN_COVARIANCE)
        {
            return Err(Error::config(format!(
                "covariance_diag[{col}] = {} must be finite and >= {MIN_COVARIANCE}",
                covariance_diag[col]
            )));
        }
        Ok(GmmModel { centroids, covariance_diag })
    }

    /// The two-class model with centroids `+m`/`-m` on every dimension and
    /// covariance `slope * d + intercept` for `d = 1..=dimension`.
    pub fn synthetic_two_class(
        dimension: usize,
        centroid_magnitude: f64,
        cov_slope: f64,
        cov_intercept: f64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::config("dimension must be >= 1".to_string()));
        }
        let plus = vec![centroid_magnitude; dimension];
        let minus = vec![-centroid_magnitude; dimension];
        let cov = (1..=dimension)
            .map(|d| cov_slope * d as f64 + cov_intercept)
            .collect();
        GmmModel::new(vec![plus, minus], cov)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawModel =
            toml::from_str(s).map_err(|e| Error::config(format!("model file: {e}")))?;
        GmmModel::new(raw.centroids, raw.covariance_diag)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn class_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn dimension(&self) -> usize {
        self.covariance_diag.len()
    }

    pub fn centroid(&self, label: usize) -> &[f64] {
        &self.centroids[label]
    }

    pub fn covariance_diag(&self) -> &[f64] {
        &self.covariance_diag
    }

    /// Draw `k` independent observations of class `label`, each
    /// `N(centroid, C)` with the model's diagonal covariance.
    pub fn sample_observations<R: Rng + ?Sized>(
        &self,
        label: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if label >= self.class_count() {
            return Err(Error::domain(format!(
                "label {label} out of range (class count {})",
                self.class_count()
            )));
        }
        if k == 0 {
            return Err(Error::domain("observation count must be >= 1".to_string()));
        }
        let mean = &self.centroids[label];
        let sd: Vec<f64> = self.covariance_diag.iter().map(|c| c.sqrt()).collect();
        Ok((0..k)
            .map(|_| {
                mean.iter()
                    .zip(&sd)
                    .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect())
    }

    /// Pair-wise discriminant gain of dimension `dim` between two classes:
    /// `(mu_l1(d) - mu_l2(d))^2 / C_dd`.
    pub fn pairwise_dg(&self, dim: usize, l1: usize, l2: usize) -> Result<f64> {
        if dim >= self.dimension() {
            return Err(Error::domain(format!("dimension {dim} out of range")));
        }
        if l1 >= self.class_count() || l2 >= self.class_count() {
            return Err(Error::domain(format!("class pair ({l1}, {l2}) out of range")));
        }
        if l1 == l2 {
            return Err(Error::domain("pairwise gain requires two distinct classes".to_string()));
        }
        let delta = self.centroids[l1][dim] - self.centroids[l2][dim];
        Ok(delta * delta / self.covariance_diag[dim])
    }

    /// Per-dimension minimum gain over all class pairs, sorted non-increasing.
    pub fn dg_profile(&self) -> DgProfile {
        let l = self.class_count();
        let gains: Vec<f64> = (0..self.dimension())
            .map(|d| {
                let mut min = f64::INFINITY;
                for l1 in 0..l {
                    for l2 in (l1 + 1)..l {
                        let delta = self.centroids[l1][d] - self.centroids[l2][d];
                        let w = delta * delta / self.covariance_diag[d];
                        if w < min {
                            min = w;
                        }
                    }
                }
                min
            })
            .collect();
        DgProfile::from_gains(gains)
    }
}

/// A fused (average-pooled) feature vector; fusing `k` observations shrinks
/// the per-dimension variance to `C_dd / k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub values: Vec<f64>,
    pub observation_count: usize,
    pub true_label: usize,
}

/// Element-wise mean of a non-empty list of equal-length vectors.
pub fn fuse(observations: &[Vec<f64>], true_label: usize) -> Result<FusedFeature> {
    let Some(first) = observations.first() else {
        return Err(Error::domain("cannot fuse an empty observation list".to_string()));
    };
    let dim = first.len();
    let mut values = vec![0.0; dim];
    for (i, obs) in observations.iter().enumerate() {
        if obs.len() != dim {
            return Err(Error::domain(format!(
                "observation {i} has length {}, expected {dim}",
                obs.len()
            )));
        }
        for (acc, &v) in values.iter_mut().zip(obs) {
            *acc += v;
        }
    }
    let k = observations.len();
    for v in &mut values {
        *v /= k as f64;
    }
    Ok(FusedFeature { values, observation_count: k, true_label })
}

/// The sorted discriminant-gain profile: gains in non-increasing order with
/// the permutation back to original dimension indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DgProfile {
    gains: Vec<f64>,
    dims: Vec<usize>,
    prefix_g1: Vec<f64>,
    prefix_g2: Vec<f64>,
}

impl DgProfile {
    /// Sort gains non-increasing; ties broken by ascending original index.
    pub fn from_gains(per_dim_gains: Vec<f64>) -> DgProfile {
        let mut order: Vec<usize> = (0..per_dim_gains.len()).collect();
        order.sort_by(|&a, &b| {
            per_dim_gains[b]
                .partial_cmp(&per_dim_gains[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let gains: Vec<f64> = order.iter().map(|&d| per_dim_gains[d]).collect();
        let mut prefix_g1 = Vec::with_capacity(gains.len() + 1);
        let mut prefix_g2 = Vec::with_capacity(gains.len() + 1);
        prefix_g1.push(0.0);
        prefix_g2.push(0.0);
        for &w in &gains {
            prefix_g1.push(prefix_g1.last().unwrap() + w);
            prefix_g2.push(prefix_g2.last().unwrap() + w * w);
        }
        DgProfile { gains, dims: order, prefix_g1, prefix_g2 }
    }

    pub fn dimension(&self) -> usize {
        self.gains.len()
    }

    /// Gains in non-increasing order.
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    /// Original dimension of the gain at sorted rank `rank`.
    pub fn original_dim(&self, rank: usize) -> usize {
        self.dims[rank]
    }

    /// Original-dimension indices of the `s` largest gains, in rank order.
    pub fn select_top_features(&self, s: usize) -> Result<Vec<usize>> {
        if s == 0 || s > self.dimension() {
            return Err(Error::domain(format!(
                "selection size {s} out of range [1, {}]",
                self.dimension()
            )));
        }
        Ok(self.dims[..s].to_vec())
    }

    /// Transmit DG `G1(s)`: sum of the top-`s` gains.
    pub fn g1(&self, s: usize) -> f64 {
        self.prefix_g1[s]
    }

    /// Transmit DG power `G2(s)`: sum of squares of the top-`s` gains.
    pub fn g2(&self, s: usize) -> f64 {
        self.prefix_g2[s]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn default_linear_model() -> GmmModel {
        GmmModel::synthetic_two_class(30, 1.0, 2.0 / 3.0, 10.0).unwrap()
    }

    #[test]
    fn rejects_degenerate_covariance() {
        let err = GmmModel::new(vec![vec![0.0], vec![1.0]], vec![0.0]).unwrap_err();
        assert!(err.to_string().contains("covariance_diag[0]"));
        assert!(GmmModel::new(vec![vec![0.0], vec![1.0]], vec![1e-13]).is_err());
    }

    #[test]
    fn rejects_ragged_centroids() {
        let err = GmmModel::new(vec![vec![0.0, 1.0], vec![1.0]], vec![1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn sample_rejects_bad_label() {
        let model = default_linear_model();
        let mut rng = RngStream::new(1, 0).rng();
        assert!(model.sample_observations(2, 3, &mut rng).is_err());
        assert!(model.sample_observations(0, 0, &mut rng).is_err());
    }

    #[test]
    fn sample_mean_converges() {
        // k=3 draws per call, C=I, mu=0: mean over many draws within 4 sigma/sqrt(n).
        let model = GmmModel::new(vec![vec![0.0; 4], vec![10.0; 4]], vec![1.0; 4]).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let n = 200_000;
        let mut sums = [0.0; 4];
        for _ in 0..n / 3 {
            for obs in model.sample_observations(0, 3, &mut rng).unwrap() {
                for (s, v) in sums.iter_mut().zip(&obs) {
                    *s += v;
                }
            }
        }
        let draws = (n / 3) * 3;
        let bound = 4.0 / (draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64).abs() < bound);
        }
    }

    #[test]
    fn sample_median_split() {
        // D=1, mu=0, C=1: fraction above zero ~ 0.5 within 3 binomial sigma.
        let model = GmmModel::new(vec![vec![0.0], vec![5.0]], vec![1.0]).unwrap();
        let mut rng = RngStream::new(5, 1).rng();
        let n = 100_000;
        let positives = model
            .sample_observations(0, n, &mut rng)
            .unwrap()
            .iter()
            .filter(|o| o[0] > 0.0)
            .count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((positives as f64 - n as f64 * 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn fuse_examples() {
        let v = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        assert_eq!(fuse(&v, 0).unwrap().values, vec![1.0, 2.0]);
        let v = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        let fused = fuse(&v, 1).unwrap();
        assert_eq!(fused.values, vec![1.0, 1.0]);
        assert_eq!(fused.observation_count, 2);
        assert!(fuse(&[], 0).is_err());
        assert!(fuse(&[vec![1.0], vec![1.0, 2.0]], 0).is_err());
    }

    #[test]
    fn fused_variance_shrinks_by_k() {
        // K=10, C=diag(10): fused-dimension sample variance -> 1.0 within 5%.
        let model = GmmModel::new(vec![vec![0.0], vec![1.0]], vec![10.0]).unwrap();
        let mut rng = RngStream::new(3, 7).rng();
        let n = 40_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let obs = model.sample_observations(0, 10, &mut rng).unwrap();
            let f = fuse(&obs, 0).unwrap().values[0];
            sum += f;
            sum_sq += f * f;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "fused variance {var}");
    }

    #[test]
    fn pairwise_dg_reference_value() {
        // centroids +1/-1, C_11 = 2/3 + 10: W_1 = 4 / (32/3) = 0.375
        let model = default_linear_model();
        let w = model.pairwise_dg(0, 0, 1).unwrap();
        assert!((w - 0.375).abs() < 1e-15);
        assert_eq!(w, model.pairwise_dg(0, 1, 0).unwrap());
        assert!(model.pairwise_dg(0, 1, 1).is_err());
    }

    #[test]
    fn pairwise_dg_scales_inversely_with_covariance() {
        let a = GmmModel::new(vec![vec![1.0], vec![-1.0]], vec![2.0]).unwrap();
        let b = GmmModel::new(vec![vec![1.0], vec![-1.0]], vec![8.0]).unwrap();
        let wa = a.pairwise_dg(0, 0, 1).unwrap();
        let wb = b.pairwise_dg(0, 0, 1).unwrap();
        assert!((wb - wa / 4.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_dg_zero_when_centroids_agree() {
        let model = GmmModel::new(vec![vec![3.0, 1.0], vec![3.0, -1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(model.pairwise_dg(0, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn profile_matches_closed_form_and_exhaustive_pairs() {
        let model = default_linear_model();
        let profile = model.dg_profile();
        // closed form 4 / ((2/3) d + 10) is already decreasing in d
        for d in 0..30 {
            let expect = 4.0 / (2.0 / 3.0 * (d + 1) as f64 + 10.0);
            assert!((profile.gains()[d] - expect).abs() < 1e-14);
            assert_eq!(profile.original_dim(d), d);
        }
        // exhaustive pair enumeration oracle on a 3-class model
        let m3 = GmmModel::new(
            vec![vec![0.0, 1.0, 4.0], vec![1.0, 1.0, -2.0], vec![-2.0, 5.0, 0.0]],
            vec![2.0, 1.5, 4.0],
        )
        .unwrap();
        let profile = m3.dg_profile();
        for rank in 0..3 {
            let d = profile.original_dim(rank);
            let mut min = f64::INFINITY;
            for (l1, l2) in [(0, 1), (0, 2), (1, 2)] {
                min = min.min(m3.pairwise_dg(d, l1, l2).unwrap());
            }
            assert_eq!(profile.gains()[rank], min);
        }
        // one coincident centroid pair on dimension 1 gives a zero gain
        assert_eq!(profile.gains()[2], 0.0);
        assert_eq!(profile.original_dim(2), 1);
    }

    #[test]
    fn profile_sorted_with_tie_break() {
        let profile = DgProfile::from_gains(vec![1.0, 3.0, 1.0, 3.0]);
        assert_eq!(profile.gains(), &[3.0, 3.0, 1.0, 1.0]);
        assert_eq!(profile.select_top_features(2).unwrap(), vec![1, 3]);
        assert_eq!(profile.select_top_features(4).unwrap(), vec![1, 3, 0, 2]);
        assert!(profile.select_top_features(0).is_err());
        assert!(profile.select_top_features(5).is_err());
    }

    #[test]
    fn top_one_feature_on_default_linear_model() {
        let profile = default_linear_model().dg_profile();
        assert_eq!(profile.select_top_features(1).unwrap(), vec![0]);
    }

    #[test]
    fn profile_invariant_under_dimension_permutation() {
        let gains = vec![0.5, 2.0, 0.1, 1.0];
        let permuted = vec![1.0, 0.5, 2.0, 0.1];
        let a = DgProfile::from_gains(gains);
        let b = DgProfile::from_gains(permuted);
        assert_eq!(a.gains(), b.gains());
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let text = "centroids = [[1.0, 1.0], [-1.0, -1.0]]\ncovariance_diag = [1.0, 2.0]\n";
        let model = GmmModel::from_toml_str(text).unwrap();
        assert_eq!(model.class_count(), 2);
        assert_eq!(model.dimension(), 2);
        let bad = "centroids = [[1.0], [-1.0]]\ncovariance_diag = [0.0]\n";
        assert!(GmmModel::from_toml_str(bad).is_err());
    }

    #[test]
    fn symmetric_kl_between_fused_classes_matches_k_times_gain_sum() {
        // For an L=2 GMM the symmetric KL between the fused class-conditional
        // Gaussians is K * sum_d W_d. Fit diagonal Gaussians to fused samples
        // and evaluate the closed-form symmetric KL of the fits.
        let model =
            GmmModel::new(vec![vec![1.0, 0.5, -0.3], vec![-1.0, 0.0, 0.7]], vec![2.0, 1.0, 3.0])
                .unwrap();
        let k = 4;
        let expect = (0..3).map(|d| model.pairwise_dg(d, 0, 1).unwrap()).sum::<f64>() * k as f64;

        let n = 500_000;
        let mut rng = RngStream::new(99, 0).rng();
        let mut stats = [[(0.0f64, 0.0f64); 3]; 2]; // per class, per dim: (sum, sum_sq)
        for (label, class_stats) in stats.iter_mut().enumerate() {
            for _ in 0..n {
                let obs = model.sample_observations(label, k, &mut rng).unwrap();
                let fused = fuse(&obs, label).unwrap();
                for (d, &v) in fused.values.iter().enumerate() {
                    class_stats[d].0 += v;
                    class_stats[d].1 += v * v;
                }
            }
        }
        let nf = n as f64;
        let mut kl = 0.0;
        for d in 0..3 {
            let (m0, v0) = {
                let (s, ss) = stats[0][d];
                (s / nf, ss / nf - (s / nf) * (s / nf))
            };
            let (m1, v1) = {
                let (s, ss) = stats[1][d];
                (s / nf, ss / nf - (s / nf) * (s / nf))
            };
            let dm = m0 - m1;
            // symmetric KL of two diagonal Gaussians, per dimension
            kl += 0.5 * (v0 / v1 + v1 / v0 - 2.0) + 0.5 * dm * dm * (1.0 / v0 + 1.0 / v1);
        }
        assert!(
            (kl - expect).abs() < 0.05 * expect,
            "empirical symmetric KL {kl}, expected {expect}"
        );
    }

    #[test]
    fn top_s_gain_sum_has_non_increasing_increments() {
        let profile = default_linear_model().dg_profile();
        for s in 1..profile.dimension() {
            let inc_prev = profile.g1(s) - profile.g1(s - 1);
            let inc_next = profile.g1(s + 1) - profile.g1(s);
            assert!(inc_next <= inc_prev + 1e-15);
        }
    }
}
