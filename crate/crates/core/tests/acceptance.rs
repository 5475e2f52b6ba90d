//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Every tolerance is pinned here, in code.

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::Instant;

use rand::Rng;

use infout_core::channel::{outage_probability_monte_carlo, ChannelLatencyConfig};
use infout_core::classifier::{
    accuracy_exact_pairwise, accuracy_lower_bound, accuracy_monte_carlo, receive_dg_of_subset,
};
use infout_core::cnn::{
    accuracy_to_dg, accuracy_to_dg_clipped,estimate_lookup_table_keys, feasible_keys,
    optimize_features_cnn, psi_surrogate, DgMapping, SyntheticGmmBackend,
};
use infout_core::experiment::{
    emit_csv, feature_sweep, run_scenario, Scenario, SweepAxis, TargetSpec,
};
use infout_core::gmm::{DgProfile, GmmModel};
use infout_core::numerics::{Probability, RngStream};
use infout_core::optimizer::{
    brute_force_search, feasible_feature_range, nu, optimize_features, surrogate_f, DgFunction,
    InfoutEstimator,
};
use infout_core::outage::{dg_threshold, infout_exact, ReceiveDgDistribution};

fn criterion<F: FnOnce() + UnwindSafe>(id: u32, name: &str, body: F) {
    let start = Instant::now();
    match catch_unwind(body) {
        Ok(()) => println!(
            "[acceptance] criterion {id:02} {name}: PASS ({:.2} s)",
            start.elapsed().as_secs_f64()
        ),
        Err(panic) => {
            println!("[acceptance] criterion {id:02} {name}: FAIL");
            resume_unwind(panic);
        }
    }
}

fn p(v: f64) -> Probability {
    Probability::new(v).unwrap()
}

/// The two-class linear scenario: D = 30, centroids +-1, C = (2/3)d + 10,
/// 10 ms deadline, 1 TFLOPs/s, 936.2 MFLOPs per observation.
fn default_linear_model() -> GmmModel {
    GmmModel::synthetic_two_class(30, 1.0, 2.0 / 3.0, 10.0).unwrap()
}

fn default_linear_config() -> ChannelLatencyConfig {
    ChannelLatencyConfig {
        transmit_power: 5e-3,
        bandwidth: 5e6,
        noise_density: 1e-9,
        slot_length: 3e-4,
        bits_per_feature: 16,
        bits_per_index: 9,
        compute_speed: 1e12,
        flops_per_observation: 936.2e6,
        deadline: 10e-3,
        max_observations: 10,
    }
}

/// The D = 1000 variant: 10 us slots, 10 ms deadline, 2.5 GFLOPs/s,
/// 2.3 MFLOPs per observation, accuracy target 99.99%.
fn fig3_config() -> ChannelLatencyConfig {
    ChannelLatencyConfig {
        transmit_power: 5e-3,
        bandwidth: 5e6,
        noise_density: 1e-9,
        slot_length: 10e-6,
        bits_per_feature: 16,
        bits_per_index: 10,
        compute_speed: 2.5e9,
        flops_per_observation: 2.3e6,
        deadline: 10e-3,
        max_observations: 10,
    }
}

/// Random non-increasing, non-negative gain profile with occasional ties
/// and zero tails.
fn random_profile(rng: &mut impl Rng, min_dim: usize, max_dim: usize) -> Vec<f64> {
    let d = rng.random_range(min_dim..=max_dim);
    let mut gains: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..10.0)).collect();
    if rng.random_range(0.0..1.0) < 0.3 {
        for g in &mut gains {
            *g = (*g * 10.0).round() / 10.0; // induce ties
        }
    }
    gains.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if rng.random_range(0.0..1.0) < 0.2 {
        let cut = rng.random_range(1..=d);
        for g in &mut gains[cut..] {
            *g = 0.0;
        }
    }
    gains
}

/// Random tradeoff setting with a usable feasible range; B0 and B1 map
/// directly onto deadline and slot length at unit compute cost.
fn random_tradeoff(
    rng: &mut impl Rng,
    dimension: usize,
) -> (ChannelLatencyConfig, Probability, f64) {
    loop {
        let b1 = rng.random_range(0.05..1.5);
        let b0 = rng.random_range(2.0..40.0);
        let kmax = rng.random_range(1..=12);
        let cfg = ChannelLatencyConfig {
            transmit_power: 5e-3,
            bandwidth: 5e6,
            noise_density: 1e-9,
            slot_length: b1,
            bits_per_feature: 16,
            bits_per_index: 9,
            compute_speed: 1e9,
            flops_per_observation: 1e9,
            deadline: b0,
            max_observations: kmax,
        };
        if let Ok((smin, smax)) = feasible_feature_range(&cfg, dimension) {
            if smax >= smin + 2 {
                let p_act = p(rng.random_range(0.1..0.9));
                let g_th = rng.random_range(0.0..50.0);
                return (cfg, p_act, g_th);
            }
        }
    }
}

#[test]
fn c01_gaussian_approximation_of_receive_dg() {
    criterion(1, "gaussian approximation (KS <= 0.05 at S = 100, p_act = 0.8)", || {
        let start = Instant::now();
        // 100-dimension decreasing profile on a lattice, so the exact law
        // is enumerable at full density
        let gains: Vec<f64> = (0..100).map(|d| (100 - d) as f64 / 100.0).collect();
        let dist = ReceiveDgDistribution::from_gains(gains, p(0.8));
        let law = dist.exact_law().unwrap();
        let ks = law.ks_distance_to_normal(dist.mean(), dist.variance()).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert!(ks <= 0.05, "KS distance {ks}");
        assert!(elapsed < 1.0, "took {elapsed} s");
        println!("    KS distance {ks:.4} over {} atoms", law.atoms().len());
    });
}

#[test]
fn c02_accuracy_lower_bound_statistics() {
    criterion(2, "accuracy lower bound over 50 random configurations", || {
        let start = Instant::now();
        let mut rng = RngStream::new(0xACC2, 0).rng();
        let trials = 100_000;
        for case in 0..50u64 {
            let l = [2usize, 3, 5][case as usize % 3];
            let d = rng.random_range(2..=10);
            let k = rng.random_range(1..=5);
            let centroids: Vec<Vec<f64>> = (0..l)
                .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let cov: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..4.0)).collect();
            let model = GmmModel::new(centroids, cov).unwrap();
            let subset: Vec<usize> = {
                let take = rng.random_range(1..=d);
                let mut dims: Vec<usize> = (0..d).collect();
                for i in (1..dims.len()).rev() {
                    dims.swap(i, rng.random_range(0..=i));
                }
                dims.truncate(take);
                dims
            };
            let mc = accuracy_monte_carlo(
                &model,
                k,
                &subset,
                trials,
                RngStream::new(0xACC2, 1000 + case),
            )
            .unwrap();
            let g_r = receive_dg_of_subset(&model, &subset).unwrap();
            let bound = accuracy_lower_bound(l, k, g_r).unwrap().value;
            assert!(
                mc.value >= bound - 3.0 * mc.standard_error,
                "case {case} (L={l}): mc {} < bound {bound} - 3se",
                mc.value
            );
            if l == 2 {
                let exact = accuracy_exact_pairwise(&model, k, &subset).unwrap().value;
                let se = mc
                    .standard_error
                    .max((exact * (1.0 - exact) / trials as f64).sqrt());
                assert!(
                    (mc.value - exact).abs() <= 3.0 * se,
                    "case {case}: mc {} vs exact {exact}",
                    mc.value
                );
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 120.0, "took {elapsed} s");
    });
}

#[test]
fn c03_g_f_monotonicity_property() {
    criterion(3, "G_f non-decreasing over 10^4 random profiles", || {
        let mut rng = RngStream::new(0xF00D, 0).rng();
        let mut violations = 0usize;
        for _ in 0..10_000 {
            let gains = random_profile(&mut rng, 2, 40);
            let profile = DgProfile::from_gains(gains);
            let mut prev = 0.0;
            for s in 1..=profile.dimension() {
                let g2 = profile.g2(s);
                if g2 == 0.0 {
                    continue; // all-zero prefix: G_f undefined
                }
                let gf = profile.g1(s) / g2.sqrt();
                if gf < prev {
                    violations += 1;
                }
                prev = gf;
            }
        }
        assert_eq!(violations, 0, "{violations} monotonicity violations");
    });
}

#[test]
fn c04_surrogate_concavity_and_nu_sign() {
    criterion(4, "f concave and sign(f') = sign(nu) on 100 random profiles", || {
        let mut rng = RngStream::new(0xC4C4, 0).rng();
        for case in 0..100 {
            let mut gains = random_profile(&mut rng, 3, 40);
            if gains[0] == 0.0 {
                gains[0] = 1.0;
            }
            let dgf = DgFunction::new(gains).unwrap();
            let (cfg, p_act, g_th) = random_tradeoff(&mut rng, dgf.dimension());
            let (smin, smax) = feasible_feature_range(&cfg, dgf.dimension()).unwrap();
            let n = 200;
            let h = (smax - smin) as f64 / (n + 2) as f64;
            for i in 1..=n {
                let x = smin as f64 + i as f64 * h;
                let f = |x: f64| surrogate_f(&dgf, &cfg, p_act, g_th, x).unwrap();
                let second = f(x - h) - 2.0 * f(x) + f(x + h);
                assert!(second <= 1e-8, "case {case}: second difference {second} at x={x}");
                let slope = f(x + h) - f(x - h);
                let v = nu(&dgf, &cfg, p_act, g_th, x).unwrap();
                // when the bracket straddles the peak, the sign of the
                // vanishing central difference is meaningless: for a
                // parabola |x - x*| <= h iff |slope| <= 2 |second|
                if slope.abs() <= 2.0 * second.abs() + 1e-12 * (1.0 + f(x).abs())
                    || v.abs() <= 1e-12
                {
                    continue;
                }
                assert_eq!(
                    v.signum(),
                    slope.signum(),
                    "case {case}: nu {v} vs slope {slope} at x={x}"
                );
            }
        }
    });
}

#[test]
fn c05_proposition_optimality() {
    criterion(5, "surrogate optimum = integer grid max; near brute force", || {
        // part 1: f-value equality on 100 random scenarios
        let mut rng = RngStream::new(0x0C5, 0).rng();
        for case in 0..100 {
            let mut gains = random_profile(&mut rng, 3, 40);
            if gains[0] == 0.0 {
                gains[0] = 1.0;
            }
            let dgf = DgFunction::new(gains).unwrap();
            let (cfg, p_act, g_th) = random_tradeoff(&mut rng, dgf.dimension());
            let (smin, smax) = feasible_feature_range(&cfg, dgf.dimension()).unwrap();
            let sol = optimize_features(&dgf, &cfg, p_act, g_th).unwrap();
            let grid_max = (smin..=smax)
                .map(|s| surrogate_f(&dgf, &cfg, p_act, g_th, s as f64).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(sol.f_value, grid_max, "case {case}");
        }
        // part 2: exact-oracle InfOut within brute force + 0.02 on the
        // linear default scenario
        let model = default_linear_model();
        let cfg = default_linear_config();
        let a_th = p(0.968);
        let g_th = dg_threshold(a_th, 2).unwrap();
        let p_act = cfg.activation_probability();
        let dgf = DgFunction::from_profile(&model.dg_profile());
        let sol = optimize_features(&dgf, &cfg, p_act, g_th).unwrap();
        let brute = brute_force_search(&model, &cfg, a_th, InfoutEstimator::Exact).unwrap();
        let profile = model.dg_profile();
        let dist = ReceiveDgDistribution::new(&profile, sol.s_star, p_act).unwrap();
        let opt_infout = infout_exact(&dist, sol.k_star, g_th).unwrap().value();
        let brute_infout = brute.infout_predicted.unwrap();
        assert!(
            opt_infout <= brute_infout + 0.02,
            "optimizer {opt_infout} vs brute force {brute_infout}"
        );
        println!(
            "    optimizer (k={}, s={}) infout {opt_infout:.3e}; brute (k={}, s={}) {brute_infout:.3e}",
            sol.k_star, sol.s_star, brute.k, brute.s
        );
    });
}

#[test]
fn c06_u_shaped_tradeoff() {
    criterion(6, "U-shaped exact InfOut over S on both linear scenarios", || {
        let start = Instant::now();
        let scenarios: [(GmmModel, ChannelLatencyConfig, f64); 2] = [
            (default_linear_model(), default_linear_config(), 0.968),
            (
                GmmModel::synthetic_two_class(1000, 1.0, 2.0 / 3.0, 10.0).unwrap(),
                fig3_config(),
                0.9999,
            ),
        ];
        for (model, base_cfg, a_th) in scenarios {
            let d = model.dimension();
            for pa in [0.7, 0.8, 0.9] {
                let cfg = base_cfg
                    .clone()
                    .with_outage_probability(p(pa).complement())
                    .unwrap();
                let rows = feature_sweep(&model, &cfg, p(a_th), None).unwrap();
                let curve: Vec<f64> =
                    rows.iter().map(|r| r.infout_exact.expect("within exact limit")).collect();
                let (min_idx, &min_val) = curve
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                assert!(
                    min_idx > 0 && min_idx < curve.len() - 1,
                    "D={d}, p_act={pa}: minimum at the boundary (idx {min_idx})"
                );
                assert!(
                    min_val < curve[0] && min_val < curve[curve.len() - 1],
                    "D={d}, p_act={pa}: interior minimum not strict"
                );
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 60.0, "took {elapsed} s");
    });
}

#[test]
fn c07_channel_closed_form_monte_carlo() {
    criterion(7, "Rayleigh closed form vs 10^6-draw Monte-Carlo, 10 powers", || {
        let mut rng = RngStream::new(0xC7, 0).rng();
        for i in 0..10u64 {
            let mut cfg = default_linear_config();
            cfg.transmit_power = 10f64.powf(rng.random_range(-3.0..-1.0));
            let expect = cfg.outage_probability().value();
            let slots = 1_000_000;
            let mc = outage_probability_monte_carlo(&cfg, slots, RngStream::new(0xC7, 1 + i))
                .unwrap()
                .value();
            let sigma = (expect * (1.0 - expect) / slots as f64).sqrt();
            assert!(
                (mc - expect).abs() <= 3.0 * sigma,
                "power {}: mc {mc} vs closed form {expect}",
                cfg.transmit_power
            );
        }
    });
}

fn ordering_scenario(axis: SweepAxis, grid: Vec<f64>) -> Scenario {
    Scenario {
        model: default_linear_model(),
        channel: default_linear_config(),
        target: TargetSpec::Absolute(0.968),
        sweep_axis: axis,
        grid,
        trials: infout_core::experiment::TrialsSpec { outer: 2000, inner: 200, seed: 0xC8 },
        cnn: None,
    }
}

#[test]
fn c08_scheme_ordering_across_sweeps() {
    criterion(8, "optimal C2 dominates benchmarks across three sweeps", || {
        let sweeps = [
            ordering_scenario(
                SweepAxis::ChannelOutage,
                vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.45],
            ),
            ordering_scenario(
                SweepAxis::ComputeSpeed,
                vec![2e11, 5e11, 8e11, 1e12, 2e12, 4e12],
            ),
            ordering_scenario(
                SweepAxis::Deadline,
                vec![2e-3, 4e-3, 6e-3, 9e-3, 10e-3, 14e-3],
            ),
        ];
        const BENCHMARKS: [&str; 4] = ["max_feat", "max_obs", "atb_max_feat", "atb_max_obs"];
        const PCT_TOLERANCE: f64 = 0.02;
        for scenario in sweeps {
            let table = run_scenario(&scenario).unwrap();
            for &value in &scenario.grid {
                let at = |scheme: &str| {
                    table
                        .rows
                        .iter()
                        .find(|r| r.sweep_value == value && r.scheme == scheme)
                        .unwrap()
                };
                let opt = at("optimal_c2");
                let opt_infout = opt.infout_empirical.unwrap();
                let opt_se = opt.infout_stderr.unwrap();
                for bench in BENCHMARKS {
                    let b = at(bench);
                    let b_infout = b.infout_empirical.unwrap();
                    let b_se = b.infout_stderr.unwrap();
                    assert!(
                        opt_infout <= b_infout + 3.0 * opt_se.max(b_se),
                        "{} @ {value}: optimal {opt_infout} vs {bench} {b_infout}",
                        scenario.sweep_axis.name()
                    );
                    // percentile ordering applies where the optimal scheme
                    // operates at all; in full saturation every scheme
                    // fails and the percentile ranking is arbitrary
                    if opt_infout < 0.999 {
                        let opt_pct = opt.first_percentile.unwrap();
                        let b_pct = b.first_percentile.unwrap();
                        assert!(
                            opt_pct >= b_pct - PCT_TOLERANCE,
                            "{} @ {value}: percentile {opt_pct} vs {bench} {b_pct}",
                            scenario.sweep_axis.name()
                        );
                    }
                }
            }
        }
    });
}

#[test]
fn c09_lookup_table_pipeline() {
    criterion(9, "Algorithm-1 table matches exact oracle; optimizer = scan", || {
        let start = Instant::now();
        let trials = 200;
        let mapping = DgMapping::default();
        let model = GmmModel::synthetic_two_class(16, 0.6, 0.5, 10.0).unwrap();
        let backend =
            SyntheticGmmBackend::new(model.clone(), 300, 6, RngStream::new(0xC9, 0)).unwrap();

        // part 1: mu_hat vs the mapped exact expected accuracy per key
        let keys: Vec<(usize, usize, Probability)> = [0.6, 0.8]
            .into_iter()
            .flat_map(|pa| [4usize, 6, 8, 10].map(|s| (2usize, s, p(pa))))
            .collect();
        let table =
            estimate_lookup_table_keys(&backend, &keys, trials, &mapping, RngStream::new(0xC9, 1))
                .unwrap();
        for &(k, s, pa) in &keys {
            let entry = table.get(k, s, pa).unwrap();
            let exact = exact_expected_accuracy(&backend, k, s, pa.value());
            let (expect, _) = accuracy_to_dg_clipped(&mapping, exact).unwrap();
            let tol = 3.0 * entry.sigma_hat / (trials as f64).sqrt();
            assert!(
                (entry.mu_hat - expect).abs() <= tol,
                "(k={k}, s={s}, p={}): mu_hat {} vs mapped exact {expect} (tol {tol})",
                pa.value(),
                entry.mu_hat
            );
        }

        // part 2: the table optimizer equals an independent exhaustive scan
        let mut cfg = default_linear_config();
        cfg.deadline = 4e-3;
        cfg.max_observations = 4;
        let p_act = p(0.8);
        let cfg = cfg.with_outage_probability(p_act.complement()).unwrap();
        let opt_keys = feasible_keys(&cfg, model.dimension(), p_act).unwrap();
        let opt_table = estimate_lookup_table_keys(
            &backend,
            &opt_keys,
            trials,
            &mapping,
            RngStream::new(0xC9, 2),
        )
        .unwrap();
        let a_th = p(0.8);
        let sol = optimize_features_cnn(&opt_table, &cfg, model.dimension(), a_th, &mapping)
            .unwrap();
        let g_th = accuracy_to_dg(&mapping, a_th).unwrap();
        let (smin, smax) = feasible_feature_range(&cfg, model.dimension()).unwrap();
        let scan = (smin..=smax)
            .max_by(|&a, &b| {
                let pa = psi_surrogate(&opt_table, cfg.max_observations_for(a), a, p_act, g_th)
                    .unwrap();
                let pb = psi_surrogate(&opt_table, cfg.max_observations_for(b), b, p_act, g_th)
                    .unwrap();
                pa.partial_cmp(&pb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(sol.s_star, scan, "optimizer vs exhaustive scan");
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 300.0, "took {elapsed} s");
    });
}

/// Exact E[accuracy] of the synthetic backend at one key: enumerate every
/// observation batch and every erasure mask of the per-batch top-s set.
fn exact_expected_accuracy(backend: &SyntheticGmmBackend, k: usize, s: usize, p_act: f64) -> f64 {
    use infout_core::cnn::InferenceBackend;
    let pool = backend.observations_per_sample();
    let dim = backend.feature_dim();
    let batches = combinations(pool, k);
    let mut total = 0.0;
    for sample in 0..backend.num_samples() {
        let mut q_sample = 0.0;
        for batch in &batches {
            let features = backend.extract_features(sample, batch);
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| {
                features[b].abs().partial_cmp(&features[a].abs()).unwrap().then(a.cmp(&b))
            });
            let top: Vec<usize> = order[..s].to_vec();
            let mut q_batch = 0.0;
            for mask in 0u32..(1 << s) {
                let mut prob = 1.0;
                let mut masked = vec![0.0; dim];
                for (bit, &d) in top.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        prob *= p_act;
                        masked[d] = features[d];
                    } else {
                        prob *= 1.0 - p_act;
                    }
                }
                if backend.infer(&masked) == backend.label(sample) {
                    q_batch += prob;
                }
            }
            q_sample += q_batch;
        }
        total += q_sample / batches.len() as f64;
    }
    total / backend.num_samples() as f64
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

#[test]
fn c10_byte_identical_determinism() {
    criterion(10, "equal seeds produce byte-identical CSVs", || {
        // scheme sweep
        let scenario = ordering_scenario(SweepAxis::ChannelOutage, vec![0.2, 0.35]);
        let mut runs = Vec::new();
        for _ in 0..2 {
            let table = run_scenario(&scenario).unwrap();
            let mut buf = Vec::new();
            emit_csv(&table, &mut buf, false).unwrap();
            runs.push(buf);
        }
        assert_eq!(runs[0], runs[1], "benchmark CSV differs between runs");

        // lookup-table calibration
        let model = GmmModel::synthetic_two_class(8, 0.5, 0.5, 5.0).unwrap();
        let backend =
            SyntheticGmmBackend::new(model, 30, 5, RngStream::new(0xD10, 0)).unwrap();
        let keys = [(2usize, 4usize, p(0.8)), (3, 6, p(0.8))];
        let mut tables = Vec::new();
        let dir = tempfile::tempdir().unwrap();
        for run in 0..2 {
            let table = estimate_lookup_table_keys(
                &backend,
                &keys,
                16,
                &DgMapping::default(),
                RngStream::new(0xD10, 1),
            )
            .unwrap();
            let path = dir.path().join(format!("table{run}.csv"));
            table.save_csv(&path).unwrap();
            tables.push(std::fs::read(path).unwrap());
        }
        assert_eq!(tables[0], tables[1], "lookup-table CSV differs between runs");
    });
}
