//! The acceptance gate: ten end-to-end criteria, one test per criterion.
//! Every test prints a single `criterion NN <label>: PASS|FAIL` line (run
//! with `cargo test --test acceptance -- --nocapture` to see all ten), then
//! panics with the failing subchecks if the verdict is FAIL.

use std::f64::consts::{FRAC_PI_6, TAU};
use std::path::Path;
use std::sync::LazyLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elastonet::autodiff::{
    central_difference_gradient, central_difference_hessian, evaluate_with_hessian,
};
use elastonet::invariants::{
    principal_from_pi_plane, stress_invariants, PiPlaneCoords, StrainInvariants, SymTensor3,
};
use elastonet::levelset::SignedDistanceField;
use elastonet::matlib::{
    hardening_transform, j2_radial_return_oracle, mcc_eval, mcc_graph, synthetic_surface_radius,
    HardeningTransform, J2Params, LinearElasticParams, MccParams, SyntheticSurfaceParams,
};
use elastonet::network::{Activation, NetworkModel};
use elastonet::pipeline::baseline::{step_samples, StepDenseBaseline};
use elastonet::pipeline::data::{
    gen_elastic_dataset, gen_yield_dataset_driver, gen_yield_dataset_synthetic,
    ElasticDatasetSpec, SdfSource, YieldGenSpec,
};
use elastonet::pipeline::driver::{
    rms_q_error, rms_q_error_vs, run_path_driver, unloading_slope, PathRecord,
    StressPathProtocol,
};
use elastonet::pipeline::{run_preset, PRESETS};
use elastonet::returnmap::{
    integrate_step, j2_model, lode_chain, ChainedYield, CompositeModel, EnergyFunction, FlowRule,
    J2Chart, LodeChart, MaterialState, NetworkChart, NetworkEnergy,
};
use elastonet::training::{
    fit_energy, fit_flow, fit_yield, EnergyLossSpec, FlowLossSpec, TrainConfig, TrainReport,
    YieldLossSpec,
};

/// Criterion 1: largest tolerated stiffness-loss reduction of the plain
/// dense architecture (its input Hessian vanishes, so it cannot improve)
const DDD_MAX_STIFFNESS_REDUCTION: f64 = 0.05;
/// Criterion 1: smallest required stiffness-loss reduction factor of the
/// multiply-layer architecture
const DMMDMD_MIN_STIFFNESS_FACTOR: f64 = 10.0;
/// Criterion 1: CPU budget in seconds for both trainings
const STIFFNESS_BUDGET_SECONDS: f64 = 600.0;
/// Criterion 2: the Sobolev ordering must hold for at least this many of
/// the five shared seeds
const SOBOLEV_MIN_SEED_WINS: usize = 4;
/// Criterion 3: tolerance on |ad - fd| / (1 + |fd|); the mixed form reads
/// as a relative error at the kPa-scale magnitudes of the targets and
/// degrades gracefully to an absolute one when an entry crosses zero
const AD_FD_TOL: f64 = 1e-5;
/// Criterion 4: greatest tolerated distance error of the fast-marched
/// circle, in units of the coarser grid spacing at the interface
const FMM_MAX_SPACINGS: f64 = 2.0;
/// Criterion 4: bound on the median | |grad phi| - 1 | after reinitialization
const EIKONAL_MEDIAN_TOL: f64 = 1e-2;
/// Criterion 4: bound on the final (weighted) Eikonal loss component
const EIKONAL_LOSS_TOL: f64 = 1e-3;
/// Criterion 4: tolerated relative value-loss degradation from the penalty
const VALUE_DEGRADATION_TOL: f64 = 0.10;
/// Criterion 5: relative stress tolerance against closed-form radial return
const RADIAL_RETURN_TOL: f64 = 1e-8;
/// Criterion 6: RMS q error bound as a fraction of the initial yield stress
const RMS_Q_FRACTION: f64 = 0.03;
/// Criteria 6 and 7: relative unloading-slope tolerance of the framework
const FRAMEWORK_SLOPE_TOL: f64 = 0.05;
/// Criterion 7: the baseline must miss the unloading slope by more than this
const BASELINE_SLOPE_ERR: f64 = 0.20;
/// Criterion 6: CPU budget in seconds including all trainings
const FRAMEWORK_BUDGET_SECONDS: f64 = 1800.0;
/// Criteria 6 and 7: slope fits keep only the window above this fraction of
/// the leg's peak |s|, which ends before the deviatoric stress reverses
/// (q folds at zero and a fit across the fold would straddle a V shape)
const SLOPE_FIT_FLOOR: f64 = 0.6;
/// Criterion 8: required fraction of admissible states with sigma . grad f >= 0
const THERMO_MIN_FRACTION: f64 = 0.99;
/// Criterion 8: dissipation floor for every accepted plastic step
const DISSIPATION_FLOOR: f64 = -1e-10;

/// Evaluation protocols shared by criteria 6 and 7
const EVAL_THETA: f64 = 0.35;
const EVAL_EPS_S_MAX: f64 = 0.12;
const EVAL_INCREMENTS: usize = 300;

fn appendix_material() -> (LinearElasticParams, J2Params) {
    (
        LinearElasticParams { young: 2079.9, poisson: 0.3 },
        J2Params { sigma_y0: 100.0, hardening: 207.99 },
    )
}

/// Prints the verdict line for one criterion and panics on failed subchecks
fn settle(number: usize, label: &str, checks: Vec<(String, bool)>) {
    let ok = checks.iter().all(|c| c.1);
    println!("criterion {number:02} {label}: {}", if ok { "PASS" } else { "FAIL" });
    let bad: Vec<&str> =
        checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    assert!(ok, "criterion {number:02} {label} failed:\n  {}", bad.join("\n  "));
}

fn mixed_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (1.0 + fd.abs())
}

/// Returns the per-epoch training series of one named loss component
fn component_series(report: &TrainReport, name: &str) -> Vec<f64> {
    let idx = report
        .component_names
        .iter()
        .position(|c| c == name)
        .expect("unknown loss component");
    report.history.iter().map(|r| r.train_components[idx]).collect()
}

fn random_sym(rng: &mut ChaCha8Rng, scale: f64) -> SymTensor3 {
    SymTensor3::new(
        scale * rng.gen_range(-1.0..1.0),
        scale * rng.gen_range(-1.0..1.0),
        scale * rng.gen_range(-1.0..1.0),
        scale * rng.gen_range(-1.0..1.0),
        scale * rng.gen_range(-1.0..1.0),
        scale * rng.gen_range(-1.0..1.0),
    )
}

/// Clones a record with its stresses (and stress invariants) replaced by a
/// predicted series, keeping the strain schedule and leg bookkeeping
fn with_stresses(record: &PathRecord, stresses: &[SymTensor3]) -> PathRecord {
    assert_eq!(record.steps.len(), stresses.len());
    let mut out = record.clone();
    for (step, s) in out.steps.iter_mut().zip(stresses) {
        step.stress = *s;
        let si = stress_invariants(s);
        step.p = si.p;
        step.q = si.q;
    }
    out
}

fn eval_protocols() -> Vec<(&'static str, StressPathProtocol)> {
    vec![
        (
            "monotonic",
            StressPathProtocol::MonotonicRadial {
                theta: EVAL_THETA,
                eps_s_max: EVAL_EPS_S_MAX,
                increments: EVAL_INCREMENTS,
            },
        ),
        (
            "unload",
            StressPathProtocol::LoadUnload {
                theta: EVAL_THETA,
                eps_s_max: EVAL_EPS_S_MAX,
                increments: EVAL_INCREMENTS,
                unloads: vec![(0.55, 0.2), (0.85, 0.45)],
            },
        ),
        (
            "cyclic",
            StressPathProtocol::Cyclic {
                theta: EVAL_THETA,
                eps_s_max: EVAL_EPS_S_MAX,
                increments: EVAL_INCREMENTS,
                amplitudes: vec![0.6, 0.12, 0.85, 0.2, 1.0],
            },
        ),
    ]
}

/// Holds the trained J2 surrogate evaluated against the oracle paths,
/// shared by criteria 6, 7, and 8
struct J2Fixture {
    elastic: LinearElasticParams,
    plastic: J2Params,
    /// (protocol label, oracle record, framework record)
    records: Vec<(&'static str, PathRecord, PathRecord)>,
    build_seconds: f64,
}

static J2_FRAMEWORK: LazyLock<J2Fixture> = LazyLock::new(build_j2_framework);

fn build_j2_framework() -> J2Fixture {
    let t0 = Instant::now();
    let (elastic, plastic) = appendix_material();
    let oracle = j2_model(elastic, plastic);

    // energy network, H2-trained on an invariant grid covering the elastic
    // strains the paths visit (|q| stays below ~116 kPa, eps_s_e < 0.05)
    let grid = ElasticDatasetSpec {
        eps_v_min: -0.02,
        eps_v_max: 0.02,
        eps_s_min: 0.0,
        eps_s_max: 0.06,
        n_v: 50,
        n_s: 50,
    };
    let energy_data = gen_elastic_dataset(&grid, &EnergyFunction::Linear(elastic));
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut energy_net =
        NetworkModel::from_code("dmmdmd", 2, 1, 100, Activation::Relu, &mut rng).unwrap();
    let ecfg = TrainConfig {
        epochs: 400,
        batch_size: 32,
        seed: 61,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let er = fit_energy(&mut energy_net, &energy_data, &EnergyLossSpec::h2(), &ecfg);
    assert!(!er.diverged, "energy training diverged");

    // yield and flow data come from monotonic radial exploration only
    let yspec = YieldGenSpec {
        n_angles: 64,
        n_snapshots: 8,
        xi_max: 0.12,
        sdf: SdfSource::Polyline,
    };
    let generated = gen_yield_dataset_driver(&oracle, &yspec).expect("yield exploration");
    let amplitude = 0.3 * generated.dataset.rho_bar;
    let mut yield_net =
        NetworkModel::from_code("dmmdd", 3, 1, 100, Activation::Relu, &mut rng).unwrap();
    let yls = YieldLossSpec { helper_amplitude: amplitude, ..YieldLossSpec::default() };
    let ycfg = TrainConfig {
        epochs: 500,
        batch_size: 128,
        seed: 62,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let yr = fit_yield(&mut yield_net, &generated.dataset, &yls, &ycfg);
    assert!(!yr.diverged, "yield training diverged");

    let mut flow_net =
        NetworkModel::from_code("ddd", 3, 3, 100, Activation::Relu, &mut rng).unwrap();
    let fcfg = TrainConfig {
        epochs: 300,
        batch_size: 32,
        seed: 63,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let fr = fit_flow(&mut flow_net, &generated.flow, &FlowLossSpec::default(), &fcfg);
    assert!(!fr.diverged, "flow training diverged");

    let framework = CompositeModel {
        energy: Box::new(NetworkEnergy { net: energy_net }),
        chart: Box::new(NetworkChart::new(yield_net, amplitude)),
        flow: FlowRule::Network(flow_net),
    };

    let mut records = Vec::new();
    for (label, protocol) in eval_protocols() {
        let reference = run_path_driver(&oracle, &protocol).expect("oracle path");
        let predicted = run_path_driver(&framework, &protocol).expect("framework path");
        records.push((label, reference, predicted));
    }
    J2Fixture { elastic, plastic, records, build_seconds: t0.elapsed().as_secs_f64() }
}

////////////////////////////////////////////////////////////////////////////////

#[test]
fn criterion_01_multiply_layers_unlock_stiffness_training() {
    let t0 = Instant::now();
    let (elastic, _) = appendix_material();
    let data = gen_elastic_dataset(&ElasticDatasetSpec::default(), &EnergyFunction::Linear(elastic));
    assert_eq!(data.len(), 2500);
    let mut checks = Vec::new();
    let mut outcome = Vec::new();
    for code in ["ddd", "dmmdmd"] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = NetworkModel::from_code(code, 2, 1, 100, Activation::Relu, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 1000,
            batch_size: 32,
            seed: 11,
            validation_fraction: 0.1,
            ..TrainConfig::default()
        };
        let report = fit_energy(&mut net, &data, &EnergyLossSpec::h2(), &cfg);
        let series = component_series(&report, "stiffness");
        checks.push((format!("{code}: training stayed finite"), !report.diverged));
        outcome.push((code, series[0], *series.last().unwrap()));
    }
    let (_, first, last) = outcome[0];
    checks.push((
        format!("ddd stiffness loss reduction {:.4} < {DDD_MAX_STIFFNESS_REDUCTION}", 1.0 - last / first),
        last >= (1.0 - DDD_MAX_STIFFNESS_REDUCTION) * first,
    ));
    let (_, first, last) = outcome[1];
    checks.push((
        format!("dmmdmd stiffness loss factor {:.1} >= {DMMDMD_MIN_STIFFNESS_FACTOR}", first / last),
        last <= first / DMMDMD_MIN_STIFFNESS_FACTOR,
    ));
    let elapsed = t0.elapsed().as_secs_f64();
    checks.push((
        format!("runtime {elapsed:.0} s < {STIFFNESS_BUDGET_SECONDS} s"),
        elapsed < STIFFNESS_BUDGET_SECONDS,
    ));
    settle(1, "multiply layers unlock stiffness training", checks);
}

#[test]
fn criterion_02_sobolev_ordering_on_held_out_mcc_data() {
    let data =
        gen_elastic_dataset(&ElasticDatasetSpec::default(), &EnergyFunction::Mcc(MccParams::benchmark()));
    let n = data.len();
    let mut wins = 0;
    let mut detail = String::new();
    for seed in 0..5_u64 {
        // shared split and shared initial weights for the three objectives
        let mut split_rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, split_rng.gen_range(0..=i));
        }
        let cut = n * 4 / 5;
        let train: Vec<_> = order[..cut].iter().map(|&i| data[i]).collect();
        let test: Vec<_> = order[cut..].iter().map(|&i| data[i]).collect();
        let mut init_rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let init =
            NetworkModel::from_code("dmmdmd", 2, 1, 100, Activation::Relu, &mut init_rng).unwrap();
        let cfg = TrainConfig {
            epochs: 250,
            batch_size: 32,
            seed: 1000 + seed,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let mut errors = Vec::new();
        for spec in [EnergyLossSpec::l2(), EnergyLossSpec::h1(), EnergyLossSpec::h2()] {
            let mut net = init.clone();
            let report = fit_energy(&mut net, &train, &spec, &cfg);
            assert!(!report.diverged, "seed {seed}: training diverged");
            // held-out stress and stiffness errors in physical units
            let mut stress = 0.0;
            let mut stiff = 0.0;
            for d in &test {
                let t = net.taylor_eval(&[d.eps_v, d.eps_s], 2);
                let h = t.hessian.as_ref().unwrap();
                let rp = t.jacobian[0][0] - d.p;
                let rq = t.jacobian[0][1] - d.q;
                stress += rp * rp + rq * rq;
                let rvv = h[0][0][0] - d.d_vv;
                let rvs = h[0][0][1] - d.d_vs;
                let rss = h[0][1][1] - d.d_ss;
                stiff += rvv * rvv + 2.0 * rvs * rvs + rss * rss;
            }
            let m = test.len() as f64;
            errors.push(((stress / m).sqrt(), (stiff / m).sqrt()));
        }
        let (l2, h1, h2) = (errors[0], errors[1], errors[2]);
        let ordered = h2.0 < h1.0 && h1.0 < l2.0 && h2.1 < h1.1 && h1.1 < l2.1;
        if ordered {
            wins += 1;
        }
        detail.push_str(&format!(
            "\n    seed {seed}: stress (l2 {:.3}, h1 {:.3}, h2 {:.3}) stiffness (l2 {:.0}, h1 {:.0}, h2 {:.0}) ordered: {ordered}",
            l2.0, h1.0, h2.0, l2.1, h1.1, h2.1
        ));
    }
    let checks = vec![(
        format!("H2 < H1 < L2 on held-out stress and stiffness for {wins}/5 seeds (need {SOBOLEV_MIN_SEED_WINS}):{detail}"),
        wins >= SOBOLEV_MIN_SEED_WINS,
    )];
    settle(2, "sobolev ordering on held-out mcc data", checks);
}

#[test]
fn criterion_03_autodiff_matches_finite_differences() {
    let mut checks = Vec::new();
    // (a) the MCC energy graph against the closed-form implementation
    let par = MccParams::benchmark();
    let (graph, out) = mcc_graph(&par);
    let psi = |x: &[f64]| mcc_eval(&StrainInvariants { eps_v: x[0], eps_s: x[1] }, &par).psi;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_g = 0.0_f64;
    let mut worst_h = 0.0_f64;
    for _ in 0..100 {
        let x = [rng.gen_range(-0.015..0.015), rng.gen_range(0.0..0.02)];
        let bundle = evaluate_with_hessian(&graph, out, &x);
        let hess = bundle.hessian.as_ref().unwrap();
        let fg = central_difference_gradient(psi, &x, 1e-6);
        let fh = central_difference_hessian(psi, &x, 1e-5);
        for i in 0..2 {
            worst_g = worst_g.max(mixed_err(bundle.gradient[i], fg[i]));
            for j in 0..2 {
                worst_h = worst_h.max(mixed_err(hess[i][j], fh[i][j]));
            }
        }
    }
    checks.push((format!("mcc gradients: worst error {worst_g:.2e} < {AD_FD_TOL}"), worst_g < AD_FD_TOL));
    checks.push((format!("mcc hessians: worst error {worst_h:.2e} < {AD_FD_TOL}"), worst_h < AD_FD_TOL));
    // (b) random multiply-layer networks; tanh keeps the function twice
    // differentiable so central differences are valid at every point
    let mut worst_g = 0.0_f64;
    let mut worst_h = 0.0_f64;
    for net_seed in 0..4_u64 {
        let mut nrng = ChaCha8Rng::seed_from_u64(300 + net_seed);
        let net = NetworkModel::from_code("dmmdmd", 3, 2, 16, Activation::Tanh, &mut nrng).unwrap();
        for _ in 0..25 {
            let x = [
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            ];
            let jac = net.input_jacobian(&x);
            for o in 0..2 {
                let f = |y: &[f64]| net.forward(y)[o];
                let fg = central_difference_gradient(f, &x, 1e-6);
                let fh = central_difference_hessian(f, &x, 1e-5);
                let hess = net.input_hessian(&x, o);
                for i in 0..3 {
                    worst_g = worst_g.max(mixed_err(jac[o][i], fg[i]));
                    for j in 0..3 {
                        worst_h = worst_h.max(mixed_err(hess[i][j], fh[i][j]));
                    }
                }
            }
        }
    }
    checks.push((format!("network gradients: worst error {worst_g:.2e} < {AD_FD_TOL}"), worst_g < AD_FD_TOL));
    checks.push((format!("network hessians: worst error {worst_h:.2e} < {AD_FD_TOL}"), worst_h < AD_FD_TOL));
    settle(3, "autodiff matches finite differences", checks);
}

#[test]
fn criterion_04_level_set_fidelity() {
    let mut checks = Vec::new();
    // (i) reinitialize a distorted circle level set and compare distances
    let (n_rho, n_theta, rho_max, r) = (128_usize, 256_usize, 2.2_f64, 1.0_f64);
    let seed_field =
        SignedDistanceField::from_fn(n_rho, n_theta, rho_max, |rho, _| rho * rho - r * r);
    let sdf = seed_field.fast_march_reinitialize();
    let h_rho = rho_max / n_rho as f64;
    let h_theta = TAU / n_theta as f64;
    let spacing = h_rho.max(r * h_theta);
    let mut max_err = 0.0_f64;
    for i in 0..n_rho {
        let rho = ((i + 1) as f64 * h_rho).min(rho_max - 1e-9);
        for j in 0..n_theta {
            let theta = j as f64 * h_theta;
            max_err = max_err.max((sdf.sample(rho, theta) - (rho - r)).abs());
        }
    }
    checks.push((
        format!("circle distance: max error {:.3} spacings < {FMM_MAX_SPACINGS}", max_err / spacing),
        max_err < FMM_MAX_SPACINGS * spacing,
    ));
    // (ii) median Eikonal residual over random interior probes
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dr = 0.5 * h_rho;
    let dt = 0.5 * h_theta;
    let mut residuals: Vec<f64> = (0..20_000)
        .map(|_| {
            let rho = rng.gen_range(0.3..1.9);
            let theta = rng.gen_range(0.0..TAU);
            let grad_r = (sdf.sample(rho + dr, theta) - sdf.sample(rho - dr, theta)) / (2.0 * dr);
            let grad_t = (sdf.sample(rho, theta + dt) - sdf.sample(rho, theta - dt)) / (2.0 * dt);
            (grad_r.hypot(grad_t / rho) - 1.0).abs()
        })
        .collect();
    residuals.sort_by(f64::total_cmp);
    let median = residuals[residuals.len() / 2];
    checks.push((
        format!("median eikonal residual {median:.2e} < {EIKONAL_MEDIAN_TOL}"),
        median < EIKONAL_MEDIAN_TOL,
    ));
    // (iii) the Eikonal penalty converges without hurting the value loss
    let par = SyntheticSurfaceParams::benchmark();
    let spec = YieldGenSpec {
        n_angles: 64,
        n_snapshots: 4,
        xi_max: 0.12,
        sdf: SdfSource::Polyline,
    };
    let generated = gen_yield_dataset_synthetic(&par, &spec);
    let amplitude = 0.3 * generated.dataset.rho_bar;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let init = NetworkModel::from_code("dmmdd", 3, 1, 100, Activation::Relu, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 128,
        seed: 42,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let mut plain_net = init.clone();
    let plain_spec =
        YieldLossSpec { eikonal_weight: 0.0, helper_amplitude: amplitude, ..YieldLossSpec::default() };
    let plain = fit_yield(&mut plain_net, &generated.dataset, &plain_spec, &cfg);
    let mut penalized_net = init;
    let pen_spec = YieldLossSpec { helper_amplitude: amplitude, ..YieldLossSpec::default() };
    let penalized = fit_yield(&mut penalized_net, &generated.dataset, &pen_spec, &cfg);
    let value_plain = *component_series(&plain, "value").last().unwrap();
    let value_pen = *component_series(&penalized, "value").last().unwrap();
    let eikonal_pen = *component_series(&penalized, "eikonal").last().unwrap();
    checks.push((
        format!("penalized eikonal loss {eikonal_pen:.2e} < {EIKONAL_LOSS_TOL}"),
        eikonal_pen < EIKONAL_LOSS_TOL,
    ));
    checks.push((
        format!(
            "value loss {value_pen:.2e} within {:.0}% of the unpenalized {value_plain:.2e}",
            100.0 * VALUE_DEGRADATION_TOL
        ),
        value_pen <= (1.0 + VALUE_DEGRADATION_TOL) * value_plain,
    ));
    settle(4, "level set fidelity", checks);
}

#[test]
fn criterion_05_return_mapping_matches_radial_return() {
    let (elastic, plastic) = appendix_material();
    let model = j2_model(elastic, plastic);
    let g = elastic.shear();
    let k = elastic.bulk();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst = 0.0_f64;
    let mut n_plastic = 0;
    let mut n_elastic = 0;
    for _ in 0..1000 {
        // admissible prior state: random history and an elastic strain
        // whose shear measure sits strictly inside the current surface
        let eps_bar_p = rng.gen_range(0.0..0.15);
        let xi = (1.5_f64).sqrt() * eps_bar_p;
        let sigma_y = plastic.sigma_y0 + plastic.hardening * eps_bar_p;
        let dir = random_sym(&mut rng, 1.0).dev();
        let alpha = rng.gen_range(0.0..0.999) * sigma_y / (6.0_f64.sqrt() * g);
        let vol = rng.gen_range(-0.01..0.01) / 3.0;
        let eps_e = dir
            .scale(alpha / dir.norm())
            .add(&SymTensor3::diagonal(vol, vol, vol));
        let state = MaterialState { eps_e, xi };
        let deps = random_sym(&mut rng, 0.02);
        let res = integrate_step(&model, &state, &deps).expect("j2 step");
        // closed-form radial return from the same trial state
        let trial = eps_e.add(&deps);
        let s_trial = trial.dev().scale(2.0 * g);
        let q_trial = (1.5_f64).sqrt() * s_trial.norm();
        let rr = j2_radial_return_oracle(q_trial, eps_bar_p, &elastic, &plastic).expect("oracle");
        let factor = if q_trial > 0.0 { rr.q / q_trial } else { 1.0 };
        let p = k * trial.trace();
        let sigma = s_trial.scale(factor).add(&SymTensor3::diagonal(p, p, p));
        let denom = sigma.norm().max(plastic.sigma_y0);
        worst = worst.max(res.stress.sub(&sigma).norm() / denom);
        if rr.yielded {
            n_plastic += 1;
        } else {
            n_elastic += 1;
        }
    }
    let checks = vec![
        (
            format!("worst relative stress deviation {worst:.2e} <= {RADIAL_RETURN_TOL}"),
            worst <= RADIAL_RETURN_TOL,
        ),
        (format!("both branches exercised ({n_plastic} plastic, {n_elastic} elastic)"),
         n_plastic > 100 && n_elastic > 100),
    ];
    settle(5, "return mapping matches radial return", checks);
}

#[test]
fn criterion_06_trained_framework_reproduces_j2_paths() {
    let fx = &*J2_FRAMEWORK;
    let three_g = 3.0 * fx.elastic.shear();
    let q_tol = RMS_Q_FRACTION * fx.plastic.sigma_y0;
    let mut checks = Vec::new();
    for (label, reference, predicted) in &fx.records {
        let rms = rms_q_error(reference, predicted);
        checks.push((format!("{label}: rms q error {rms:.3} kPa < {q_tol:.1}"), rms < q_tol));
    }
    let (_, reference, predicted) =
        fx.records.iter().find(|r| r.0 == "unload").expect("unload record");
    let leg = reference.legs[1];
    let slope_ref = unloading_slope(reference, leg, SLOPE_FIT_FLOOR).expect("oracle slope");
    checks.push((
        format!("measurement window sanity: oracle slope {slope_ref:.1} within 1% of 3G {three_g:.1}"),
        (slope_ref - three_g).abs() / three_g < 0.01,
    ));
    let slope = unloading_slope(predicted, leg, SLOPE_FIT_FLOOR).expect("framework slope");
    let err = (slope - three_g).abs() / three_g;
    checks.push((
        format!("framework unloading slope {slope:.1}, error {:.2}% < {:.0}%", 100.0 * err, 100.0 * FRAMEWORK_SLOPE_TOL),
        err < FRAMEWORK_SLOPE_TOL,
    ));
    checks.push((
        format!("runtime {:.0} s < {FRAMEWORK_BUDGET_SECONDS} s including training", fx.build_seconds),
        fx.build_seconds < FRAMEWORK_BUDGET_SECONDS,
    ));
    settle(6, "trained framework reproduces j2 paths", checks);
}

#[test]
fn criterion_07_step_dense_baseline_misses_unloading() {
    let fx = &*J2_FRAMEWORK;
    let three_g = 3.0 * fx.elastic.shear();
    let oracle = j2_model(fx.elastic, fx.plastic);
    // the baseline sees exactly the same information: monotonic rays only
    let mut train = Vec::new();
    for i in 0..24 {
        let protocol = StressPathProtocol::MonotonicRadial {
            theta: TAU * i as f64 / 24.0,
            eps_s_max: EVAL_EPS_S_MAX,
            increments: EVAL_INCREMENTS,
        };
        train.push(run_path_driver(&oracle, &protocol).expect("training ray"));
    }
    let samples = step_samples(&train);
    let mut baseline = StepDenseBaseline::new(100, 71);
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 64,
        seed: 71,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let report = baseline.fit(&samples, &cfg);
    assert!(!report.diverged, "baseline training diverged");
    let mut checks = Vec::new();
    let (_, unload_ref, unload_pred) =
        fx.records.iter().find(|r| r.0 == "unload").expect("unload record");
    let leg = unload_ref.legs[1];
    let rolled = with_stresses(unload_ref, &baseline.rollout(unload_ref));
    let slope_b = unloading_slope(&rolled, leg, SLOPE_FIT_FLOOR).expect("baseline slope");
    let err_b = (slope_b - three_g).abs() / three_g;
    checks.push((
        format!("baseline unloading slope {slope_b:.1}, error {:.0}% > {:.0}%", 100.0 * err_b, 100.0 * BASELINE_SLOPE_ERR),
        err_b > BASELINE_SLOPE_ERR,
    ));
    let slope_f = unloading_slope(unload_pred, leg, SLOPE_FIT_FLOOR).expect("framework slope");
    let err_f = (slope_f - three_g).abs() / three_g;
    checks.push((
        format!("framework unloading slope error {:.2}% < {:.0}%", 100.0 * err_f, 100.0 * FRAMEWORK_SLOPE_TOL),
        err_f < FRAMEWORK_SLOPE_TOL,
    ));
    let (_, cyclic_ref, cyclic_pred) =
        fx.records.iter().find(|r| r.0 == "cyclic").expect("cyclic record");
    let rms_b = rms_q_error_vs(cyclic_ref, &baseline.rollout(cyclic_ref));
    let rms_f = rms_q_error(cyclic_ref, cyclic_pred);
    checks.push((
        format!("cyclic rms q: framework {rms_f:.3} kPa < baseline {rms_b:.3} kPa"),
        rms_f < rms_b,
    ));
    settle(7, "step dense baseline misses unloading", checks);
}

#[test]
fn criterion_08_thermodynamic_consistency() {
    // train the synthetic-polycrystal yield network
    let par = SyntheticSurfaceParams::benchmark();
    let spec = YieldGenSpec {
        n_angles: 96,
        n_snapshots: 8,
        xi_max: 0.2,
        sdf: SdfSource::Polyline,
    };
    let generated = gen_yield_dataset_synthetic(&par, &spec);
    let amplitude = 0.3 * generated.dataset.rho_bar;
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut net = NetworkModel::from_code("dmmdd", 3, 1, 100, Activation::Relu, &mut rng).unwrap();
    let yls = YieldLossSpec { helper_amplitude: amplitude, ..YieldLossSpec::default() };
    let cfg = TrainConfig {
        epochs: 350,
        batch_size: 128,
        seed: 81,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let report = fit_yield(&mut net, &generated.dataset, &yls, &cfg);
    assert!(!report.diverged, "yield training diverged");
    let chart = NetworkChart::new(net, amplitude);
    // (a) sigma . grad f at sampled admissible states, drawn well inside
    // the true surface and away from the polar apex
    let mut srng = ChaCha8Rng::seed_from_u64(83);
    let n_states = 10_000;
    let mut nonnegative = 0_usize;
    for _ in 0..n_states {
        let theta = srng.gen_range(0.0..TAU);
        let xi = srng.gen_range(0.0..0.2);
        let rho = (0.2 + 0.78 * srng.gen::<f64>()) * synthetic_surface_radius(theta, xi, &par);
        let sigma = principal_from_pi_plane(&PiPlaneCoords {
            s1: rho * theta.cos(),
            s2: rho * theta.sin(),
            s3: 0.0,
        });
        let ld = chart.eval(rho, theta, xi).expect("chart evaluation");
        let ye = lode_chain(&ld, sigma);
        let dot: f64 = (0..3).map(|a| sigma[a] * ye.grad[a]).sum();
        if dot >= 0.0 {
            nonnegative += 1;
        }
    }
    let fraction = nonnegative as f64 / n_states as f64;
    let mut checks = vec![(
        format!("sigma . grad f >= 0 at {:.2}% of {n_states} admissible states (need {:.0}%)",
            100.0 * fraction, 100.0 * THERMO_MIN_FRACTION),
        fraction >= THERMO_MIN_FRACTION,
    )];
    // (b) dissipation of every accepted plastic step in every driver run:
    // the J2 oracle and framework paths plus fresh rays through the
    // trained polycrystal chart itself
    let mut worst = f64::INFINITY;
    let mut n_plastic = 0_usize;
    let fx = &*J2_FRAMEWORK;
    for (_, reference, predicted) in &fx.records {
        for rec in [reference, predicted] {
            for st in rec.steps.iter().filter(|s| s.plastic) {
                worst = worst.min(st.dissipation);
                n_plastic += 1;
            }
        }
    }
    let mut flow_net =
        NetworkModel::from_code("ddd", 3, 3, 100, Activation::Relu, &mut rng).unwrap();
    let fcfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        seed: 82,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let fr = fit_flow(&mut flow_net, &generated.flow, &FlowLossSpec::default(), &fcfg);
    assert!(!fr.diverged, "flow training diverged");
    let (elastic, _) = appendix_material();
    let model = CompositeModel {
        energy: Box::new(EnergyFunction::Linear(elastic)),
        chart: Box::new(chart),
        flow: FlowRule::Network(flow_net),
    };
    for theta in [0.2, 1.2, 2.5] {
        let protocol =
            StressPathProtocol::MonotonicRadial { theta, eps_s_max: 0.1, increments: 150 };
        let rec = run_path_driver(&model, &protocol).expect("polycrystal ray");
        for st in rec.steps.iter().filter(|s| s.plastic) {
            worst = worst.min(st.dissipation);
            n_plastic += 1;
        }
    }
    checks.push((
        format!("worst plastic dissipation {worst:.2e} >= {DISSIPATION_FLOOR:.0e} over {n_plastic} steps"),
        n_plastic > 0 && worst >= DISSIPATION_FLOOR,
    ));
    settle(8, "thermodynamic consistency", checks);
}

#[test]
fn criterion_09_hardening_transforms_and_fictitious_driver() {
    let mut checks = Vec::new();
    // isotropic transform at zero plastic strain is the exact identity
    let h = 150.0;
    let rho = 87.3;
    let iso0 = hardening_transform(rho, 0.9, 0.0, &HardeningTransform::Isotropic { h }).unwrap();
    checks.push((
        // the internal-variable sensitivity d[2] stays -sqrt(2/3) h; the
        // identity claim is about the value map and its rho and theta slopes
        "isotropic transform at eps_bar_p = 0 is the exact identity".into(),
        iso0.rho_bar == rho && iso0.d[0] == 1.0 && iso0.d[1] == 0.0 && iso0.dd == [[0.0; 3]; 3],
    ));
    // the mixed transform at theta = pi/6 doubles the radial shift exactly
    let e = 0.04;
    let shift = (2.0 / 3.0_f64).sqrt() * h * e;
    let iso = hardening_transform(rho, FRAC_PI_6, e, &HardeningTransform::Isotropic { h }).unwrap();
    let mixed = hardening_transform(rho, FRAC_PI_6, e, &HardeningTransform::Mixed { h }).unwrap();
    checks.push((
        "mixed transform at theta = pi/6 doubles the isotropic radial shift bit for bit".into(),
        iso.rho_bar == rho - shift
            && mixed.rho_bar == rho - shift * 2.0
            && mixed.d[2] == 2.0 * iso.d[2],
    ));
    // the fictitious-law driver completes without Newton failures
    let (elastic, _) = appendix_material();
    let model = CompositeModel {
        energy: Box::new(EnergyFunction::Linear(elastic)),
        chart: Box::new(ChainedYield {
            base: J2Chart { par: J2Params { sigma_y0: 100.0, hardening: 0.0 } },
            transform: HardeningTransform::Fictitious,
        }),
        flow: FlowRule::Associative,
    };
    let protocols = [
        StressPathProtocol::MonotonicRadial { theta: 0.0, eps_s_max: 0.3, increments: 300 },
        StressPathProtocol::Cyclic {
            theta: FRAC_PI_6,
            eps_s_max: 0.3,
            increments: 300,
            amplitudes: vec![0.6, 0.15, 1.0],
        },
    ];
    for protocol in protocols {
        match run_path_driver(&model, &protocol) {
            Ok(rec) => {
                let n_plastic = rec.steps.iter().filter(|s| s.plastic).count();
                checks.push((
                    format!("fictitious {} run converged with {n_plastic} plastic steps", protocol.name()),
                    n_plastic > 0,
                ));
            }
            Err(err) => checks.push((format!("fictitious {} run failed: {err}", protocol.name()), false)),
        }
    }
    settle(9, "hardening transforms and fictitious driver", checks);
}

/// Collects the paths of all CSV files below a directory, relative to it
fn csv_files(root: &Path) -> Vec<std::path::PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<std::path::PathBuf>) {
        for entry in std::fs::read_dir(dir).expect("readable directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn criterion_10_presets_are_deterministic() {
    let mut checks = Vec::new();
    for preset in PRESETS {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_preset(preset, 11, true, dir_a.path()).expect("first run");
        run_preset(preset, 11, true, dir_b.path()).expect("second run");
        let files_a = csv_files(dir_a.path());
        let files_b = csv_files(dir_b.path());
        let mut identical = files_a == files_b && !files_a.is_empty();
        for rel in &files_a {
            let a = std::fs::read(dir_a.path().join(rel)).expect("first csv");
            let b = std::fs::read(dir_b.path().join(rel));
            if b.map(|b| b != a).unwrap_or(true) {
                identical = false;
            }
        }
        checks.push((
            format!("{preset}: {} csv files byte-identical on rerun", files_a.len()),
            identical,
        ));
    }
    settle(10, "presets are deterministic", checks);
}
