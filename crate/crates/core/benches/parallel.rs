//! Data-parallel kernels under different worker counts.
//!
//! With the default `parallel` feature each kernel runs in a one-thread rayon
//! pool and in the default pool (one thread per core). Built with `--no-default-features` the same
//! benchmark ids run on the sequential fallback, so criterion compares the
//! three configurations across runs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fairkan::kan::KanConfig;
use fairkan::net_model::{FairnessSpec, SystemParams, Topology};
use fairkan::oracle::solve_grid;
use fairkan::pipeline::{features, generate_dataset, new_network, Scenario, SolverChoice};
use fairkan::seed;

fn modes() -> Vec<(String, Box<dyn Fn(&mut (dyn FnMut() + Send))>)> {
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let all = rayon::ThreadPoolBuilder::new().build().unwrap();
        vec![
            ("rayon_1".to_string(), Box::new(move |f: &mut (dyn FnMut() + Send)| one.install(|| f()))),
            ("rayon_default".to_string(), Box::new(move |f: &mut (dyn FnMut() + Send)| all.install(|| f()))),
        ]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![("sequential".to_string(), Box::new(|f: &mut (dyn FnMut() + Send)| f()))]
    }
}

fn grid(c: &mut Criterion) {
    let params = SystemParams::default();
    let topo = Topology::sample(&mut seed::rng(1, seed::TOPOLOGY, 0), 4, 2, &params).unwrap();
    let spec = FairnessSpec::new(0.5).unwrap();
    let mut g = c.benchmark_group("grid_solve_4ue_16");
    g.sample_size(10);
    for (name, run) in modes() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| run(&mut || {
                black_box(solve_grid(&topo, &params, &spec, 16).unwrap());
            }))
        });
    }
    g.finish();
}

fn dataset(c: &mut Criterion) {
    let params = SystemParams::default();
    let mut g = c.benchmark_group("generate_3ue_60");
    g.sample_size(10);
    for (name, run) in modes() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| run(&mut || {
                black_box(
                    generate_dataset(&params, Scenario { n_ue: 3, n_bs: 1 }, 60, 1, SolverChoice::Auto).unwrap(),
                );
            }))
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let params = SystemParams::default();
    let ds = generate_dataset(&params, Scenario { n_ue: 4, n_bs: 1 }, 400, 1, SolverChoice::Grid { levels: 6 }).unwrap();
    let xs: Vec<Vec<f64>> = ds.records.iter().map(features).collect();
    let cfg = KanConfig::default();
    let mut net = new_network(xs[0].len(), 4, &params, &cfg, 0).unwrap();
    net.initialize_from_data(&xs, cfg.hidden_margin).unwrap();
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| net.normalize_input(x)).collect();
    let ts: Vec<Vec<f64>> =
        ds.records.iter().map(|r| r.powers.as_slice().iter().map(|&p| net.output_norm.normalize(p)).collect()).collect();
    let batch: Vec<usize> = (0..zs.len()).collect();
    let mut g = c.benchmark_group("kan_loss_and_grad_400");
    for (name, run) in modes() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| run(&mut || {
                black_box(net.loss_and_grad(&zs, &ts, &batch));
            }))
        });
    }
    g.finish();
}

criterion_group!(benches, grid, dataset, gradient);
criterion_main!(benches);
