//! Criterion benchmarks of the hot kernels: network evaluation with
//! derivatives, level-set reinitialization, and the implicit stress update.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use elastonet::invariants::SymTensor3;
use elastonet::levelset::SignedDistanceField;
use elastonet::matlib::{J2Params, LinearElasticParams};
use elastonet::network::{Activation, NetworkModel};
use elastonet::returnmap::{integrate_step, j2_model, MaterialState};

fn energy_net() -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    NetworkModel::from_code("dmmdmd", 2, 1, 100, Activation::Relu, &mut rng).unwrap()
}

fn yield_net() -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    NetworkModel::from_code("dmmdd", 3, 1, 100, Activation::Relu, &mut rng).unwrap()
}

fn network_kernels(c: &mut Criterion) {
    let net = energy_net();
    let x = [0.004, 0.021];
    c.bench_function("network forward dmmdmd w100", |b| {
        b.iter(|| black_box(net.forward(black_box(&x))))
    });
    c.bench_function("network taylor order 2 dmmdmd w100", |b| {
        b.iter(|| black_box(net.taylor_eval(black_box(&x), 2)))
    });
    let ynet = yield_net();
    let y = [80.0, 1.3, 0.05];
    c.bench_function("network input hessian dmmdd w100", |b| {
        b.iter(|| black_box(ynet.input_hessian(black_box(&y), 0)))
    });
}

fn levelset_kernels(c: &mut Criterion) {
    let seed = SignedDistanceField::from_fn(64, 128, 2.0, |rho, theta| {
        rho - 1.0 - 0.2 * (3.0 * theta).cos()
    });
    c.bench_function("fast march reinitialize 64x128", |b| {
        b.iter(|| black_box(seed.fast_march_reinitialize()))
    });
    c.bench_function("sdf bilinear sample", |b| {
        b.iter(|| black_box(seed.sample(black_box(1.17), black_box(2.4))))
    });
}

fn returnmap_kernels(c: &mut Criterion) {
    let elastic = LinearElasticParams { young: 2079.9, poisson: 0.3 };
    let plastic = J2Params { sigma_y0: 100.0, hardening: 207.99 };
    let model = j2_model(elastic, plastic);
    let state = MaterialState::initial();
    // small shear increment: stays elastic
    let elastic_step = SymTensor3::new(0.0, 0.0, 0.0, 0.01, 0.0, 0.0);
    // large shear increment: drives the Newton return
    let plastic_step = SymTensor3::new(0.0, 0.0, 0.0, 0.06, 0.0, 0.0);
    c.bench_function("integrate step elastic", |b| {
        b.iter(|| black_box(integrate_step(&model, black_box(&state), black_box(&elastic_step))))
    });
    c.bench_function("integrate step plastic", |b| {
        b.iter(|| black_box(integrate_step(&model, black_box(&state), black_box(&plastic_step))))
    });
}

criterion_group!(benches, network_kernels, levelset_kernels, returnmap_kernels);
criterion_main!(benches);
