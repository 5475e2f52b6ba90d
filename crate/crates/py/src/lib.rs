//! Python extension module exposing the main types and operations of the
//! edge-inference outage toolkit.
//!
//! Probabilities cross the boundary as plain floats and are validated on
//! the Rust side; domain violations raise `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use infout_core::channel::ChannelLatencyConfig;
use infout_core::classifier;
use infout_core::error::Error;
use infout_core::experiment;
use infout_core::gmm;
use infout_core::numerics::{self, Probability, RngStream};
use infout_core::optimizer;
use infout_core::outage;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn prob(value: f64) -> PyResult<Probability> {
    Probability::new(value).map_err(err)
}

/// Gaussian tail function Q(x).
#[pyfunction]
fn q_function(x: f64) -> PyResult<f64> {
    Ok(numerics::q_function(x).map_err(err)?.value())
}

/// Inverse of the Gaussian tail function on (0, 1).
#[pyfunction]
fn inverse_q(p: f64) -> PyResult<f64> {
    numerics::inverse_q(prob(p)?).map_err(err)
}

/// Receive-DG threshold for accuracy `a_th` with `classes` classes.
#[pyfunction]
fn dg_threshold(a_th: f64, classes: usize) -> PyResult<f64> {
    outage::dg_threshold(prob(a_th)?, classes).map_err(err)
}

/// Union-bound accuracy lower bound `1 - (L-1) Q(sqrt(K g_r)/2)`.
#[pyfunction]
fn accuracy_lower_bound(classes: usize, k: usize, g_r: f64) -> PyResult<f64> {
    Ok(classifier::accuracy_lower_bound(classes, k, g_r).map_err(err)?.value)
}

/// First-percentile order statistic (lower interpolation).
#[pyfunction]
fn first_percentile(samples: Vec<f64>) -> PyResult<f64> {
    outage::first_percentile(&samples).map_err(err)
}

#[pyclass(name = "DgProfile", from_py_object)]
#[derive(Clone)]
struct PyDgProfile {
    inner: gmm::DgProfile,
}

#[pymethods]
impl PyDgProfile {
    /// Sorted gains, non-increasing.
    fn gains(&self) -> Vec<f64> {
        self.inner.gains().to_vec()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    /// Original dimension indices of the top-`s` gains.
    fn select_top_features(&self, s: usize) -> PyResult<Vec<usize>> {
        self.inner.select_top_features(s).map_err(err)
    }

    /// Transmit DG: sum of the top-`s` gains.
    fn g1(&self, s: usize) -> f64 {
        self.inner.g1(s)
    }

    /// Transmit DG power: sum of squared top-`s` gains.
    fn g2(&self, s: usize) -> f64 {
        self.inner.g2(s)
    }
}

#[pyclass(name = "GmmModel", from_py_object)]
#[derive(Clone)]
struct PyGmmModel {
    inner: gmm::GmmModel,
}

#[pymethods]
impl PyGmmModel {
    #[new]
    fn new(centroids: Vec<Vec<f64>>, covariance_diag: Vec<f64>) -> PyResult<Self> {
        Ok(PyGmmModel { inner: gmm::GmmModel::new(centroids, covariance_diag).map_err(err)? })
    }

    /// Two-class model with centroids +-magnitude and covariance
    /// `slope * d + intercept`.
    #[staticmethod]
    fn synthetic_two_class(
        dimension: usize,
        centroid_magnitude: f64,
        cov_slope: f64,
        cov_intercept: f64,
    ) -> PyResult<Self> {
        Ok(PyGmmModel {
            inner: gmm::GmmModel::synthetic_two_class(
                dimension,
                centroid_magnitude,
                cov_slope,
                cov_intercept,
            )
            .map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: String) -> PyResult<Self> {
        Ok(PyGmmModel { inner: gmm::GmmModel::load(path).map_err(err)? })
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    /// Pairwise discriminant gain of one dimension between two classes.
    fn pairwise_dg(&self, dim: usize, l1: usize, l2: usize) -> PyResult<f64> {
        self.inner.pairwise_dg(dim, l1, l2).map_err(err)
    }

    fn dg_profile(&self) -> PyDgProfile {
        PyDgProfile { inner: self.inner.dg_profile() }
    }

    /// Exact binary accuracy over a feature subset with `k` observations.
    fn accuracy_exact_pairwise(&self, k: usize, subset: Vec<usize>) -> PyResult<f64> {
        Ok(classifier::accuracy_exact_pairwise(&self.inner, k, &subset).map_err(err)?.value)
    }

    /// Monte-Carlo accuracy over a feature subset; returns (value, stderr).
    fn accuracy_monte_carlo(
        &self,
        k: usize,
        subset: Vec<usize>,
        trials: usize,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        let est =
            classifier::accuracy_monte_carlo(&self.inner, k, &subset, trials, RngStream::new(seed, 0))
                .map_err(err)?;
        Ok((est.value, est.standard_error))
    }
}

#[pyclass(name = "ChannelLatencyConfig", from_py_object)]
#[derive(Clone)]
struct PyChannelConfig {
    inner: ChannelLatencyConfig,
}

#[pymethods]
impl PyChannelConfig {
    #[new]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (transmit_power, bandwidth, noise_density, slot_length,
                        bits_per_feature, bits_per_index, compute_speed,
                        flops_per_observation, deadline, max_observations))]
    fn new(
        transmit_power: f64,
        bandwidth: f64,
        noise_density: f64,
        slot_length: f64,
        bits_per_feature: u32,
        bits_per_index: u32,
        compute_speed: f64,
        flops_per_observation: f64,
        deadline: f64,
        max_observations: usize,
    ) -> PyResult<Self> {
        let inner = ChannelLatencyConfig {
            transmit_power,
            bandwidth,
            noise_density,
            slot_length,
            bits_per_feature,
            bits_per_index,
            compute_speed,
            flops_per_observation,
            deadline,
            max_observations,
        };
        inner.validate().map_err(err)?;
        Ok(PyChannelConfig { inner })
    }

    /// Per-slot Rayleigh outage probability (closed form).
    fn outage_probability(&self) -> f64 {
        self.inner.outage_probability().value()
    }

    fn activation_probability(&self) -> f64 {
        self.inner.activation_probability().value()
    }

    /// Copy with the transmit power set to hit a target outage.
    fn with_outage_probability(&self, target: f64) -> PyResult<Self> {
        Ok(PyChannelConfig {
            inner: self.inner.clone().with_outage_probability(prob(target)?).map_err(err)?,
        })
    }

    fn latency_of(&self, k: usize, s: usize) -> f64 {
        self.inner.latency_of(k, s)
    }

    fn max_observations_for(&self, s: usize) -> usize {
        self.inner.max_observations_for(s)
    }

    fn b0(&self) -> f64 {
        self.inner.b0()
    }

    fn b1(&self) -> f64 {
        self.inner.b1()
    }
}

#[pyclass(name = "ReceiveDgDistribution")]
struct PyReceiveDgDistribution {
    inner: outage::ReceiveDgDistribution,
}

#[pymethods]
impl PyReceiveDgDistribution {
    #[new]
    fn new(profile: PyDgProfile, s: usize, p_act: f64) -> PyResult<Self> {
        Ok(PyReceiveDgDistribution {
            inner: outage::ReceiveDgDistribution::new(&profile.inner, s, prob(p_act)?)
                .map_err(err)?,
        })
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn g1(&self) -> f64 {
        self.inner.g1()
    }

    fn g2(&self) -> f64 {
        self.inner.g2()
    }

    /// Gaussian-approximation InfOut bound at `(k, g_th)`.
    fn infout_gaussian(&self, k: usize, g_th: f64) -> PyResult<f64> {
        Ok(outage::infout_gaussian(&self.inner, k, g_th).map_err(err)?.value())
    }

    /// Exact InfOut bound from the enumerated receive-DG law.
    fn infout_exact(&self, k: usize, g_th: f64) -> PyResult<f64> {
        Ok(outage::infout_exact(&self.inner, k, g_th).map_err(err)?.value())
    }

    /// The exact law as (value, probability) atoms.
    fn exact_atoms(&self) -> PyResult<Vec<(f64, f64)>> {
        Ok(self.inner.exact_law().map_err(err)?.atoms().to_vec())
    }

    /// Kolmogorov-Smirnov distance between the exact law and its
    /// moment-matched normal approximation.
    fn ks_distance_to_normal(&self) -> PyResult<f64> {
        self.inner
            .exact_law()
            .map_err(err)?
            .ks_distance_to_normal(self.inner.mean(), self.inner.variance())
            .map_err(err)
    }

    /// Lindeberg ratio at cutoff `epsilon`.
    fn lindeberg_diagnostic(&self, epsilon: f64) -> PyResult<f64> {
        outage::lindeberg_diagnostic(&self.inner, epsilon).map_err(err)
    }
}

#[pyclass(name = "SurrogateSolution")]
struct PySurrogateSolution {
    #[pyo3(get)]
    s_star: usize,
    #[pyo3(get)]
    k_star: usize,
    #[pyo3(get)]
    x_star: Option<f64>,
    #[pyo3(get)]
    f_value: f64,
    #[pyo3(get)]
    solved_by: String,
}

impl From<optimizer::SurrogateSolution> for PySurrogateSolution {
    fn from(sol: optimizer::SurrogateSolution) -> Self {
        PySurrogateSolution {
            s_star: sol.s_star,
            k_star: sol.k_star,
            x_star: sol.x_star,
            f_value: sol.f_value,
            solved_by: match sol.solved_by {
                optimizer::SolvedBy::InteriorRoot => "interior_root".to_string(),
                optimizer::SolvedBy::Endpoint => "endpoint".to_string(),
            },
        }
    }
}

/// Concave surrogate `f(x)` of the Gaussian outage bound.
#[pyfunction]
fn surrogate_f(
    profile: PyDgProfile,
    cfg: PyChannelConfig,
    p_act: f64,
    g_th: f64,
    x: f64,
) -> PyResult<f64> {
    let dgf = optimizer::DgFunction::from_profile(&profile.inner);
    optimizer::surrogate_f(&dgf, &cfg.inner, prob(p_act)?, g_th, x).map_err(err)
}

/// Maximize the surrogate over the feasible feature range.
#[pyfunction]
fn optimize_features(
    profile: PyDgProfile,
    cfg: PyChannelConfig,
    p_act: f64,
    g_th: f64,
) -> PyResult<PySurrogateSolution> {
    let dgf = optimizer::DgFunction::from_profile(&profile.inner);
    Ok(optimizer::optimize_features(&dgf, &cfg.inner, prob(p_act)?, g_th).map_err(err)?.into())
}

/// Exhaustive `(k, s)` search minimizing the exact InfOut; returns
/// `(k, s, infout)`.
#[pyfunction]
fn brute_force_search(
    model: PyGmmModel,
    cfg: PyChannelConfig,
    a_th: f64,
) -> PyResult<(usize, usize, f64)> {
    let point = optimizer::brute_force_search(
        &model.inner,
        &cfg.inner,
        prob(a_th)?,
        optimizer::InfoutEstimator::Exact,
    )
    .map_err(err)?;
    Ok((point.k, point.s, point.infout_predicted.unwrap_or(f64::NAN)))
}

/// Empirical InfOut over erasure draws; returns `(fraction, stderr)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn infout_empirical(
    model: PyGmmModel,
    cfg: PyChannelConfig,
    k: usize,
    s: usize,
    a_th: f64,
    trials: usize,
    inner_trials: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let (p, se) = outage::infout_empirical(
        &model.inner,
        &cfg.inner,
        k,
        s,
        prob(a_th)?,
        trials,
        inner_trials,
        RngStream::new(seed, 0),
    )
    .map_err(err)?;
    Ok((p.value(), se))
}

/// Feature sweep rows as dicts: s, k_hat, f, infout_gaussian, infout_exact.
#[pyfunction]
fn feature_sweep(
    py: Python<'_>,
    model: PyGmmModel,
    cfg: PyChannelConfig,
    a_th: f64,
) -> PyResult<Vec<Py<PyAny>>> {
    let rows = experiment::feature_sweep(&model.inner, &cfg.inner, prob(a_th)?, None).map_err(err)?;
    rows.into_iter()
        .map(|r| {
            let dict = pyo3::types::PyDict::new(py);
            dict.set_item("s", r.s)?;
            dict.set_item("k_hat", r.k_hat)?;
            dict.set_item("f", r.f)?;
            dict.set_item("infout_gaussian", r.infout_gaussian)?;
            dict.set_item("infout_exact", r.infout_exact)?;
            Ok(dict.into_any().unbind())
        })
        .collect()
}

#[pymodule]
fn infout_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(q_function, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_q, m)?)?;
    m.add_function(wrap_pyfunction!(dg_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(first_percentile, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_f, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_features, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_search, m)?)?;
    m.add_function(wrap_pyfunction!(infout_empirical, m)?)?;
    m.add_function(wrap_pyfunction!(feature_sweep, m)?)?;
    m.add_class::<PyGmmModel>()?;
    m.add_class::<PyDgProfile>()?;
    m.add_class::<PyChannelConfig>()?;
    m.add_class::<PyReceiveDgDistribution>()?;
    m.add_class::<PySurrogateSolution>()?;
    Ok(())
}
