//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails. `ACCEPTANCE_ONLY=1,4` restricts
//! the run to the listed criteria.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ectonas_cli::runner::{CURVES_FILE, LOG_FILE, MODEL_FILE};
use ectonas_cli::{run_command, DatasetConfig, RunConfig, RunSummary};
use ectonas_core::data::{load_idx, split, Splits};
use ectonas_core::evolution::{score, Event, Phase, SearchMode};
use ectonas_core::linalg::{svd, truncate, Matrix};
use ectonas_core::morph::{
    add_dense_layer, dense_slots, insert_pool, pool_dense_weights, prune_channels, remove_pool, unpool_dense_weights,
    widen_conv, widen_dense, FlatLayout, PoolAdaptation,
};
use ectonas_core::net::gradcheck::{check_gradients, kink_margin};
use ectonas_core::net::{evaluate, train_epochs, Layer, LayerKind, LayerSpec, Mode, Network, PoolKind, Scalar, Shape, Tensor, Trace, TrainOptions};
use ectonas_core::rng::rng_from;
use ectonas_core::topology::Topology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mnist_config() -> DatasetConfig {
    let dir = data_dir();
    DatasetConfig::Idx {
        images: dir.join("mnist10k-images-idx3-ubyte.gz"),
        labels: dir.join("mnist10k-labels-idx1-ubyte.gz"),
        test_images: None,
        test_labels: None,
        limit: Some(5000),
    }
}

fn mnist_splits(seed: u64) -> Splits {
    let dir = data_dir();
    let pool = load_idx(&dir.join("mnist10k-images-idx3-ubyte.gz"), &dir.join("mnist10k-labels-idx1-ubyte.gz"))
        .expect("MNIST subset")
        .head(5000);
    split(&pool, seed).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One-sided paired t-test that `a` exceeds `b`; returns (t, critical value).
fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = if sd > 0.0 { m / (sd / n.sqrt()) } else { m.signum() * f64::INFINITY };
    let crit = StudentsT::new(0.0, 1.0, n - 1.0).unwrap().inverse_cdf(0.95);
    (t, crit)
}

// ---------------------------------------------------------------- networks

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randomise<T: Scalar + From<f32>>(net: &mut Network<T>, r: &mut ChaCha8Rng) {
    let mut u = |lo: f32, hi: f32| <T as From<f32>>::from(r.random_range(lo..hi));
    for layer in net.layers.iter_mut() {
        match layer {
            Layer::Dense(d) => d.bias.iter_mut().for_each(|b| *b = u(-0.3, 0.3)),
            Layer::Conv2d(c) => c.bias.iter_mut().for_each(|b| *b = u(-0.3, 0.3)),
            Layer::BatchNorm(bn) => {
                for c in 0..bn.gamma.len() {
                    bn.gamma[c] = u(0.5, 1.5);
                    bn.beta[c] = u(-0.5, 0.5);
                    bn.running_mean[c] = u(-0.5, 0.5);
                    bn.running_var[c] = u(0.5, 2.0);
                }
            }
            _ => {}
        }
    }
}

fn random_net(r: &mut ChaCha8Rng, cells: usize) -> Network {
    let shape = if cells > 0 {
        Shape::image(r.random_range(4..=8), r.random_range(4..=8), r.random_range(1..=3))
    } else if r.random_bool(0.5) {
        Shape::image(r.random_range(2..=5), r.random_range(2..=5), r.random_range(1..=2))
    } else {
        Shape::flat(r.random_range(1..=12))
    };
    let mut specs = Vec::new();
    for _ in 0..cells {
        let pool = if r.random_bool(0.5) { LayerSpec::AvgPool } else { LayerSpec::MaxPool };
        specs.extend([
            LayerSpec::Conv2d { out_channels: r.random_range(2..=4) },
            pool,
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
        ]);
    }
    specs.push(LayerSpec::Flatten);
    for _ in 0..r.random_range(1..=2) {
        specs.extend([LayerSpec::Dense { units: r.random_range(1..=6) }, LayerSpec::Relu]);
    }
    let classes = r.random_range(2..=4);
    specs.extend([LayerSpec::Dense { units: classes }, LayerSpec::SoftmaxOutput]);
    let mut net = Network::from_specs(shape, classes, &specs, r).unwrap();
    randomise(&mut net, r);
    net
}

fn batch(net: &Network, n: usize, r: &mut ChaCha8Rng) -> Tensor {
    let mut shape = vec![n];
    shape.extend(net.input_shape.dims());
    Tensor::new(shape, (0..n * net.input_shape.size()).map(|_| r.random::<f32>()).collect()).unwrap()
}

fn infer(net: &Network, x: &Tensor) -> Vec<f32> {
    let mut trace = Trace::new();
    net.forward_into(x.data(), x.shape()[0], Mode::Infer, &mut trace).unwrap();
    trace.output().to_vec()
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

// ---------------------------------------------------------------- 1-4

fn function_preservation() -> Outcome {
    let mut worst = [0.0f32; 4];
    for i in 0..100u64 {
        let mut r = rng(1000 + i);
        let cells = r.random_range(0..=2);
        let net = random_net(&mut r, cells);
        let x = batch(&net, 5, &mut r);
        let slots = dense_slots(&net);
        let child = add_dense_layer(&net, slots[r.random_range(0..slots.len())]).unwrap();
        worst[0] = worst[0].max(max_diff(&infer(&net, &x), &infer(&child, &x)));

        let hidden = net.hidden_dense_indices();
        let site = hidden[r.random_range(0..hidden.len())];
        let q = net.dense(site).unwrap().units + r.random_range(1..=6);
        let child = widen_dense(&net, site, q, &mut r).unwrap();
        worst[1] = worst[1].max(max_diff(&infer(&net, &x), &infer(&child, &x)));

        let mut r = rng(2000 + i);
        let cells = r.random_range(1..=2);
        let mut net = random_net(&mut r, cells);
        let x = batch(&net, 5, &mut r);
        let starts = net.cell_starts();
        let site = starts[r.random_range(0..starts.len())];
        let child = widen_conv(&net, site, r.random_range(1..=4), &mut r).unwrap();
        worst[2] = worst[2].max(max_diff(&infer(&net, &x), &infer(&child, &x)));

        // dead channels of the cell feeding the dense head
        let site = *starts.last().unwrap();
        let n = net.conv(site).unwrap().out_channels;
        let k = r.random_range(1..n);
        let Layer::BatchNorm(bn) = &mut net.layers[site + 2] else { unreachable!() };
        let mut order: Vec<usize> = (0..n).collect();
        for j in 0..k {
            let pick = r.random_range(j..n);
            order.swap(j, pick);
            bn.gamma[order[j]] = 0.0;
        }
        let child = prune_channels(&net, site, k).unwrap();
        worst[3] = worst[3].max(max_diff(&infer(&net, &x), &infer(&child, &x)));
    }
    ensure(
        worst.iter().all(|&w| w <= 1e-4),
        format!(
            "max |dy| add_dense {:.1e}, widen_dense {:.1e}, widen_conv {:.1e}, prune {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn gaussian(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn orthonormality_defect(q: &Matrix) -> f64 {
    let g = q.transpose().matmul(q).unwrap();
    let i = Matrix::identity(g.rows());
    g.data().iter().zip(i.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn svd_suite() -> Outcome {
    let mut r = rng(7);
    let (mut recon, mut ortho, mut eckart, mut beaten) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut sorted = true;
    for _ in 0..20 {
        let (m, n) = (r.random_range(2..=24), r.random_range(2..=24));
        let a = gaussian(m, n, &mut r);
        let norm = a.frobenius_norm();
        let s = svd(&a).unwrap();
        recon = recon.max(s.reconstruct().frobenius_distance(&a) / norm);
        sorted &= s.sigma.windows(2).all(|w| w[0] >= w[1]);
        ortho = ortho.max(orthonormality_defect(&s.u)).max(orthonormality_defect(&s.v));
        let rank = r.random_range(1..s.sigma.len());
        let (a_tilde, v_t) = truncate(&s, rank).unwrap();
        let best = a_tilde.matmul(&v_t).unwrap().frobenius_distance(&a);
        let tail = s.sigma[rank..].iter().map(|x| x * x).sum::<f64>().sqrt();
        eckart = eckart.max((best - tail).abs() / norm);
        for _ in 0..1000 {
            let err = gaussian(m, rank, &mut r).matmul(&gaussian(rank, n, &mut r)).unwrap().frobenius_distance(&a);
            if err < best {
                beaten += 1;
            }
        }
    }
    ensure(
        recon <= 1e-8 && sorted && ortho <= 1e-9 && eckart <= 1e-8 && beaten == 0,
        format!(
            "reconstruction {recon:.1e}·‖A‖, orthonormality {ortho:.1e}, Eckart-Young {eckart:.1e}, sorted {sorted}, beaten {beaten}/20000"
        ),
    )
}

fn gradient_checks() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut kinds = Vec::new();
    for i in 0..50 {
        let (shape, specs) = if i % 5 == 4 {
            let d = r.random_range(1..=6);
            (
                Shape::flat(d),
                vec![
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: r.random_range(1..=5) },
                    LayerSpec::Relu,
                    LayerSpec::Dense { units: 3 },
                    LayerSpec::SoftmaxOutput,
                ],
            )
        } else {
            let pool = if i % 2 == 0 { LayerSpec::AvgPool } else { LayerSpec::MaxPool };
            (
                Shape::image(r.random_range(3..=6), r.random_range(3..=6), r.random_range(1..=3)),
                vec![
                    LayerSpec::Conv2d { out_channels: r.random_range(1..=4) },
                    pool,
                    LayerSpec::batch_norm(),
                    LayerSpec::Relu,
                    LayerSpec::Conv2d { out_channels: 2 },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 5 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { units: 3 },
                    LayerSpec::SoftmaxOutput,
                ],
            )
        };
        let mut net: Network<f64> = Network::from_specs(shape, 3, &specs, &mut r).unwrap();
        randomise(&mut net, &mut r);
        kinds.extend(net.layers.iter().map(|l| l.kind()));
        let n = 4;
        let y: Vec<u32> = (0..n).map(|_| r.random_range(0..3)).collect();
        for mode in [Mode::Train, Mode::Infer] {
            let x = loop {
                let x: Vec<f64> = (0..n * shape.size()).map(|_| r.sample(StandardNormal)).collect();
                if kink_margin(&net, &x, n, mode).unwrap() > 1e-3 {
                    break x;
                }
            };
            let report = check_gradients(&net, &x, &y, mode, 1e-4).unwrap();
            worst = worst.max(report.max_relative_error());
        }
    }
    let all = [
        LayerKind::Dense,
        LayerKind::Conv2D,
        LayerKind::AvgPool,
        LayerKind::MaxPool,
        LayerKind::BatchNorm,
        LayerKind::ReLU,
        LayerKind::Flatten,
        LayerKind::SoftmaxOutput,
    ];
    let covered = all.iter().all(|k| kinds.contains(k));
    ensure(worst <= 1e-3 && covered, format!("max relative error {worst:.1e} over 50 configs, all kinds covered {covered}"))
}

fn pooling_round_trips() -> Outcome {
    let mut r = rng(4);
    let mut failures = 0;
    for _ in 0..50 {
        let full = FlatLayout {
            h: r.random_range(1..=9),
            w: r.random_range(1..=9),
            c: r.random_range(1..=4),
        };
        let units = r.random_range(1..=5);
        let pooled: Vec<f32> = (0..full.pooled().rows() * units).map(|_| r.sample(StandardNormal)).collect();
        for kind in [PoolKind::Avg, PoolKind::Max] {
            let grown = unpool_dense_weights(&pooled, units, full);
            let back = pool_dense_weights(&grown, units, full, kind);
            let again = unpool_dense_weights(&back, units, full);
            let bitwise = |a: &[f32], b: &[f32]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
            if !bitwise(&back, &pooled) || !bitwise(&again, &grown) {
                failures += 1;
            }
        }
    }
    // the same identities through the layer-level morphisms
    let net = Network::<f32>::from_specs(
        Shape::image(7, 6, 2),
        3,
        &[
            LayerSpec::Conv2d { out_channels: 3 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 5 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 3 },
            LayerSpec::SoftmaxOutput,
        ],
        &mut r,
    )
    .unwrap();
    for kind in [PoolKind::Avg, PoolKind::Max] {
        let pooled = insert_pool(&net, 2, kind, PoolAdaptation::Structured).unwrap();
        let again = insert_pool(&remove_pool(&pooled, 2).unwrap(), 2, kind, PoolAdaptation::Structured).unwrap();
        if again.layers != pooled.layers {
            failures += 1;
        }
    }
    ensure(failures == 0, format!("{failures} of 102 round trips not bitwise"))
}

// ---------------------------------------------------------------- 5

fn pooling_trials() -> (Outcome, Outcome) {
    let (mut avg_s, mut avg_r, mut max_s, mut max_r) = (vec![], vec![], vec![], vec![]);
    let specs = [
        LayerSpec::Conv2d { out_channels: 4 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { out_channels: 4 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 32 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 10 },
        LayerSpec::SoftmaxOutput,
    ];
    for seed in 0..20u64 {
        let s = mnist_splits(seed);
        let mut net = Network::from_specs(s.train.sample_shape(), 10, &specs, &mut rng_from(seed, &[1])).unwrap();
        train_epochs(&mut net, &s.train, &s.val, 10, &TrainOptions::default(), &mut rng_from(seed, &[2]), 0).unwrap();
        let acc = |kind, adaptation| {
            let child = insert_pool(&net, 2, kind, adaptation).unwrap();
            evaluate(&child, &s.test).unwrap().accuracy
        };
        avg_s.push(acc(PoolKind::Avg, PoolAdaptation::Structured));
        avg_r.push(acc(PoolKind::Avg, PoolAdaptation::RandomCut { seed }));
        max_s.push(acc(PoolKind::Max, PoolAdaptation::Structured));
        max_r.push(acc(PoolKind::Max, PoolAdaptation::RandomCut { seed }));
    }
    let (ta, crit) = paired_t(&avg_s, &avg_r);
    let (tb, _) = paired_t(&max_r, &max_s);
    let a = ensure(
        ta > crit,
        format!("avg structured {:.3} vs random cut {:.3}, paired t {ta:.2} (critical {crit:.2})", mean(&avg_s), mean(&avg_r)),
    );
    let b = ensure(
        tb > crit,
        format!("max structured {:.3} vs random cut {:.3}, paired t {tb:.2} (critical {crit:.2})", mean(&max_s), mean(&max_r)),
    );
    (a, b)
}

// ---------------------------------------------------------------- runs

struct Logged {
    summary: RunSummary,
    dir: PathBuf,
    mode: SearchMode,
    alpha: f64,
    seed: u64,
    budget: usize,
}

fn events(dir: &Path) -> Vec<Event> {
    std::fs::read_to_string(dir.join(LOG_FILE))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with(r#"{"event":"data""#) && !l.starts_with(r#"{"event":"start""#))
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("bad log line {l}: {e}")))
        .collect()
}

fn launch(root: &Path, name: &str, dataset: DatasetConfig, start: Topology, mode: SearchMode, alpha: f64, seed: u64) -> Logged {
    let mut cfg = RunConfig::new(dataset, start);
    cfg.mode = mode;
    cfg.alpha = alpha;
    cfg.budget_epochs = 300;
    cfg.seed = seed;
    let dir = root.join(name);
    cfg.out_dir = Some(dir.clone());
    let summary = run_command(&cfg).unwrap_or_else(|e| panic!("run {name} failed: {e}"));
    Logged {
        summary,
        dir,
        mode,
        alpha,
        seed,
        budget: cfg.budget_epochs,
    }
}

fn greedy_vs_baseline(greedy: &[Logged], baseline: &[Logged]) -> Outcome {
    let g: Vec<f64> = greedy.iter().map(|l| l.summary.test_accuracy).collect();
    let b: Vec<f64> = baseline.iter().map(|l| l.summary.test_accuracy).collect();
    ensure(
        mean(&g) >= mean(&b),
        format!("mean test accuracy search {:.4} vs baseline {:.4} ({g:.3?} vs {b:.3?})", mean(&g), mean(&b)),
    )
}

fn compression(greedy: &[Logged], frugal: &[Logged]) -> Outcome {
    let p = |ls: &[Logged]| mean(&ls.iter().map(|l| l.summary.param_count as f64).collect::<Vec<_>>());
    let a = |ls: &[Logged]| mean(&ls.iter().map(|l| l.summary.test_accuracy).collect::<Vec<_>>());
    let ratio = p(frugal) / p(greedy);
    let gap = a(greedy) - a(frugal);
    ensure(
        ratio <= 0.35 && gap <= 0.10,
        format!(
            "mean params {:.0} vs {:.0} (ratio {ratio:.3}), test accuracy {:.4} vs {:.4}",
            p(frugal),
            p(greedy),
            a(frugal),
            a(greedy)
        ),
    )
}

fn fitness_arithmetic(greedy: &[Logged], frugal: &[Logged]) -> Outcome {
    let ex1 = score(0.8, 100, 0.7, 100, 1.0).s == 0.8;
    let s2 = score(0.52, 70, 0.5, 100, 0.5).s;
    let ex2 = (s2 - 0.16).abs() <= 1e-15;
    let ex3 = score(0.7, 100, 0.6, 100, 0.0).s == 0.0;
    let mut pairs = 0;
    let mut violations = 0;
    for l in greedy.iter().chain(frugal) {
        for e in events(&l.dir) {
            let Event::Pair(p) = e else { continue };
            pairs += 1;
            let ok = match p.phase {
                Phase::Phase1 => {
                    Some(p.winner_kind) == p.kind
                        && Some(p.loser_kind) == p.kind
                        && [p.winner_score, p.loser_score].iter().all(|s| s.alpha == 1.0 && s.s == s.v)
                        && p.winner_score.s >= p.loser_score.s
                }
                Phase::Phase2 => p.winner_score.alpha == l.alpha && p.winner_score.s >= p.loser_score.s,
                _ => false,
            };
            violations += usize::from(!ok);
        }
    }
    ensure(
        ex1 && ex2 && ex3 && violations == 0 && pairs > 0,
        format!("examples {ex1}/{ex2}/{ex3}, {violations} scoring violations over {pairs} logged pairs"),
    )
}

fn determinism(root: &Path, first: &Logged) -> Outcome {
    let again = launch(root, "repeat", mnist_config(), Topology::SmallFfnn, first.mode, first.alpha, first.seed);
    let same = |f: &str| std::fs::read(first.dir.join(f)).unwrap() == std::fs::read(again.dir.join(f)).unwrap();
    let (log, curves, model) = (same(LOG_FILE), same(CURVES_FILE), same(MODEL_FILE));
    let bytes = std::fs::metadata(first.dir.join(LOG_FILE)).unwrap().len();
    ensure(log && curves && model, format!("log identical {log} ({bytes} bytes), curves {curves}, model {model}"))
}

fn budget_ledger(runs: &[&Logged]) -> Outcome {
    let mut bad = Vec::new();
    for l in runs {
        let trained: usize = events(&l.dir)
            .iter()
            .map(|e| match e {
                Event::Train { epochs, .. } => *epochs,
                _ => 0,
            })
            .sum();
        let s = &l.summary;
        let limit = if l.mode == SearchMode::Baseline { 200 } else { l.budget };
        let exact_baseline = l.mode != SearchMode::Baseline || (trained == 200 && s.budget_epochs == 200);
        if trained != s.spent_epochs || s.spent_epochs > limit || s.budget_epochs != limit || !exact_baseline {
            bad.push(l.dir.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    ensure(bad.is_empty(), format!("{} logged runs checked, inconsistent: {bad:?}", runs.len()))
}

fn topology_crossing(root: &Path) -> (Outcome, Vec<Logged>) {
    let dataset = DatasetConfig::SynthTabular {
        rows: 5000,
        informative: 6,
        class_balance: 0.76,
        image: [10, 10],
    };
    let mut runs = Vec::new();
    let mut conv = [0usize; 3];
    for (g, (start, alpha)) in [(Topology::SmallFfnn, 1.0), (Topology::SmallFfnn, 0.0), (Topology::SmallCnn, 0.0)]
        .into_iter()
        .enumerate()
    {
        for seed in 0..10 {
            let l = launch(root, &format!("tab-{}-{alpha}-{seed}", start.name()), dataset.clone(), start, SearchMode::Ectonas, alpha, seed);
            conv[g] += usize::from(l.summary.has_conv);
            runs.push(l);
        }
    }
    let outcome = ensure(
        conv[0] <= 1 && conv[1] >= 7 && conv[2] == 10,
        format!(
            "runs ending with a conv cell: greedy from FFNN {}/10, frugal from FFNN {}/10, frugal from CNN {}/10",
            conv[0], conv[1], conv[2]
        ),
    );
    (outcome, runs)
}

// ---------------------------------------------------------------- driver

fn attempt<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn report(results: &mut Vec<(String, bool)>, label: &str, started: Instant, outcome: Result<Outcome, String>) {
    let secs = started.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(panic) => (false, format!("panicked: {panic}")),
    };
    let line = format!("criterion {label:<3} {} ({secs:.1}s) {detail}", if ok { "PASS" } else { "FAIL" });
    println!("{line}");
    results.push((line, ok));
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut results = Vec::new();

    let quick: [(u32, fn() -> Outcome); 4] =
        [(1, function_preservation), (2, svd_suite), (3, gradient_checks), (4, pooling_round_trips)];
    for (n, f) in quick {
        if wanted(n) {
            let t = Instant::now();
            report(&mut results, &n.to_string(), t, attempt(f));
        }
    }

    let root = tempfile::tempdir().expect("scratch directory");
    let mut logged: Vec<Logged> = Vec::new();
    if [6, 7, 9, 10, 11].into_iter().any(wanted) {
        let t = Instant::now();
        let runs = attempt(|| {
            let mut greedy = Vec::new();
            let mut frugal = Vec::new();
            let mut baseline = Vec::new();
            for seed in 0..5 {
                let m = mnist_config;
                greedy.push(launch(root.path(), &format!("greedy-{seed}"), m(), Topology::SmallFfnn, SearchMode::Ectonas, 1.0, seed));
                frugal.push(launch(root.path(), &format!("frugal-{seed}"), m(), Topology::SmallFfnn, SearchMode::Ectonas, 0.0, seed));
                baseline.push(launch(root.path(), &format!("baseline-{seed}"), m(), Topology::SmallFfnn, SearchMode::Baseline, 1.0, seed));
            }
            (greedy, frugal, baseline)
        });
        match runs {
            Ok((greedy, frugal, baseline)) => {
                if wanted(6) {
                    report(&mut results, "6", t, attempt(|| greedy_vs_baseline(&greedy, &baseline)));
                }
                if wanted(7) {
                    report(&mut results, "7", t, attempt(|| compression(&greedy, &frugal)));
                }
                if wanted(9) {
                    report(&mut results, "9", Instant::now(), attempt(|| fitness_arithmetic(&greedy, &frugal)));
                }
                if wanted(10) {
                    report(&mut results, "10", Instant::now(), attempt(|| determinism(root.path(), &greedy[0])));
                }
                logged.extend(greedy);
                logged.extend(frugal);
                logged.extend(baseline);
            }
            Err(e) => {
                for n in [6, 7, 9, 10] {
                    if wanted(n) {
                        report(&mut results, &n.to_string(), t, Err(e.clone()));
                    }
                }
            }
        }
    }

    if wanted(5) {
        let t = Instant::now();
        match attempt(pooling_trials) {
            Ok((a, b)) => {
                report(&mut results, "5a", t, Ok(a));
                report(&mut results, "5b", t, Ok(b));
            }
            Err(e) => report(&mut results, "5", t, Err(e)),
        }
    }

    if wanted(8) || wanted(11) {
        let t = Instant::now();
        match attempt(|| topology_crossing(root.path())) {
            Ok((outcome, runs)) => {
                if wanted(8) {
                    report(&mut results, "8", t, Ok(outcome));
                }
                logged.extend(runs);
            }
            Err(e) => report(&mut results, "8", t, Err(e)),
        }
    }

    if wanted(11) {
        let t = Instant::now();
        let runs: Vec<&Logged> = logged.iter().collect();
        report(&mut results, "11", t, attempt(|| budget_ledger(&runs)));
    }

    println!("\nacceptance summary");
    for (line, _) in &results {
        println!("  {line}");
    }
    if results.iter().all(|(_, ok)| *ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
