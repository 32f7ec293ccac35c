//! Data-parallel core vs the sequential path.
//!
//! With default features each workload runs twice: on rayon's global pool
//! and inside a one-thread pool. `cargo bench --no-default-features`
//! benchmarks the plain-iterator fallback; compare builds with
//! criterion baselines:
//!
//! ```text
//! cargo bench -p irkit-core --no-default-features -- --save-baseline sequential
//! cargo bench -p irkit-core -- --baseline sequential
//! ```

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use irkit_core::dataset::synth::{generate, SynthConfig};
use irkit_core::dataset::{FeatureEncoder, FeatureMask, FeatureVector, Source};
use irkit_core::explain::{explain_instances, FnPredictor, ShapleyConfig};
use irkit_core::harness::index_value;
use irkit_core::indices::IndexKind;
use irkit_core::numcore::{Matrix, Rng};
use irkit_core::par;
use irkit_core::trees::{fit_forest, ForestConfig, Table};

struct Workload {
    table: Table,
    y: Vec<f64>,
    vectors: Vec<FeatureVector>,
    a: Matrix,
    b: Matrix,
}

fn workload() -> Workload {
    let recs = generate(&SynthConfig::new(2000, Source::Nhanes, 1));
    let mask = FeatureMask::full();
    let vectors = FeatureEncoder::fit(&recs, mask)
        .and_then(|e| e.encode_all(&recs))
        .expect("synthetic records encode");
    let y = recs
        .iter()
        .map(|r| index_value(r, IndexKind::MetsIr).unwrap_or(0.0))
        .collect();
    let mut rng = Rng::new(2);
    let mut random = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap();
    Workload {
        table: Table::from_vectors(&vectors, mask),
        y,
        vectors,
        a: random(512, 256),
        b: random(256, 256),
    }
}

fn run_all(c: &mut Criterion, mode: &str, w: &Workload, wrap: &dyn Fn(&mut (dyn FnMut() + Send))) {
    let mut g = c.benchmark_group("core");
    g.sample_size(10);

    let forest = ForestConfig {
        n_trees: 32,
        max_depth: 6,
        ..ForestConfig::default()
    };
    g.bench_function(BenchmarkId::new("forest_fit", mode), |bch| {
        bch.iter(|| wrap(&mut || drop(black_box(fit_forest(&w.table, &w.y, &forest).unwrap()))))
    });

    let model = FnPredictor(|x: &FeatureVector| {
        let v = &x.values;
        (v[1] * v[2]).ln_1p().abs() + 0.01 * v[3] * v[6] + v[4].sqrt()
    });
    let background = &w.vectors[..128];
    let instances: Vec<(String, FeatureVector)> = w.vectors[128..160]
        .iter()
        .enumerate()
        .map(|(i, v)| (i.to_string(), *v))
        .collect();
    let cfg = ShapleyConfig {
        n_permutations: 256,
        ..ShapleyConfig::default()
    };
    g.bench_function(BenchmarkId::new("shapley_32_instances", mode), |bch| {
        bch.iter(|| {
            wrap(&mut || {
                drop(black_box(
                    explain_instances(&model, background, &instances, &cfg).unwrap(),
                ))
            })
        })
    });

    g.bench_function(BenchmarkId::new("matmul_512x256x256", mode), |bch| {
        bch.iter(|| wrap(&mut || drop(black_box(w.a.matmul(&w.b).unwrap()))))
    });
    g.finish();
}

fn benches(c: &mut Criterion) {
    let w = workload();
    if par::is_parallel() {
        run_all(c, "rayon", &w, &|f| f());
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            run_all(c, "rayon_1_thread", &w, &|f| pool.install(f));
        }
    } else {
        run_all(c, "sequential", &w, &|f| f());
    }
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
