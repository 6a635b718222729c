//! Acceptance criteria, one line of output each.
//!
//! Runs as a plain binary (no libtest harness) so every PASS/FAIL line is
//! printed even when nothing fails. Criteria that need the German, Bail or
//! Credit files read them from `$GMMD_DATA_DIR/<name>` (default: `data/` at
//! the workspace root) and fail when the files are absent.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gmmd::data::{load_dataset, load_or_make_splits, mean_std, DatasetDescriptor};
use gmmd::graph::{build_normalized_adjacency, homophily_ratio, sensitive_homophily_ratio, AttributedGraph, GroupPartition, Split};
use gmmd::kernel::{build_coupling, build_coupling_full, build_coupling_simplified, mmd, FairnessCoupling, KernelConfig};
use gmmd::metrics::spearman;
use gmmd::model::{
    ablation_variant, loss_and_gradients, record_forward, train, Ablation, ModelContext, ModelParams, TrainConfig,
    TrainOutcome,
};
use gmmd::propagation::{gmmd_layer, gmmd_s_layer, objective, objective_gradient, sampled_layer, Backbone, PropagationConfig, Variant};
use gmmd::synth::theorem_instance;
use gmmd::tensor::{DenseMatrix, KernelGrad, Tape, Var};
use gmmd::theory::{check_bound_thm1, check_bound_thm2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn within(elapsed: Duration, budget_secs: u64, detail: String) -> Verdict {
    if elapsed.as_secs_f64() < budget_secs as f64 {
        Ok(format!("{detail}; {:.2}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.1}s, budget {budget_secs}s", elapsed.as_secs_f64()))
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("GMMD_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn dataset(name: &str) -> Result<AttributedGraph, String> {
    let desc = DatasetDescriptor::new(data_root().join(name));
    if !desc.dir.join("nodes.csv").exists() {
        return Err(format!("dataset not found: {}", desc.dir.display()));
    }
    let g = load_dataset(&desc).map_err(|e| format!("{name}: {e}"))?;
    let split = load_or_make_splits(&desc, &g, 0).map_err(|e| format!("{name}: {e}"))?;
    g.with_split(split).map_err(|e| e.to_string())
}

/// Per-group sample sizes used for each benchmark.
fn sample_size(name: &str) -> usize {
    match name {
        "german" => 100,
        "bail" => 200,
        _ => 6000,
    }
}

fn base_config(name: &str, variant: Variant) -> TrainConfig {
    let ns = sample_size(name);
    TrainConfig {
        propagation: PropagationConfig {
            variant,
            backbone: Backbone::Gcn,
            layers: 2,
            lambda_f: (ns * ns) as f64,
            sample_size: ns,
            ..PropagationConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct Aggregate {
    acc: f64,
    auc: f64,
    dp: f64,
    val_score: f64,
}

/// Mean test metrics (percent) over seeds `0..seeds`.
fn run_seeds(g: &AttributedGraph, cfg: &TrainConfig, seeds: u64) -> Result<(Aggregate, Vec<TrainOutcome>), String> {
    let outs: Vec<TrainOutcome> = (0..seeds)
        .map(|seed| train(g, &TrainConfig { seed, ..*cfg }).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mean = |f: &dyn Fn(&TrainOutcome) -> f64| mean_std(&outs.iter().map(|o| 100.0 * f(o)).collect::<Vec<_>>()).0;
    let agg = Aggregate {
        acc: mean(&|o| o.best().test.accuracy),
        auc: mean(&|o| o.best().test.auc),
        dp: mean(&|o| o.best().test.delta_dp),
        val_score: mean(&|o| o.best().val.accuracy - o.best().val.delta_dp),
    };
    Ok((agg, outs))
}

/// Grid over the smoothness and fairness weights, selected on validation
/// accuracy minus validation parity gap, then rerun over five seeds.
fn tuned(g: &AttributedGraph, name: &str, variant: Variant) -> Result<(TrainConfig, Aggregate, Duration), String> {
    let base = base_config(name, variant);
    let ns2 = (sample_size(name) * sample_size(name)) as f64;
    let mut best: Option<(f64, TrainConfig)> = None;
    for lambda_s in [0.0, 0.1, 0.5, 1.0, 2.0] {
        for lambda_f in [0.0, 0.1, 0.5, 1.0, 5.0, 10.0] {
            let mut cfg = base;
            cfg.propagation.lambda_s = lambda_s;
            cfg.propagation.lambda_f = lambda_f * ns2;
            let (agg, _) = run_seeds(g, &cfg, 1)?;
            if best.as_ref().map_or(true, |(s, _)| agg.val_score > *s) {
                best = Some((agg.val_score, cfg));
            }
        }
    }
    let cfg = best.expect("non-empty grid").1;
    let start = Instant::now();
    let (agg, _) = run_seeds(g, &cfg, 5)?;
    Ok((cfg, agg, start.elapsed()))
}

fn criterion_1() -> Verdict {
    let targets = [
        ("german", Variant::GmmdS, "acc", 71.87, 0.90 + f64::max(2.0 * 0.44, 2.0)),
        ("bail", Variant::GmmdS, "auc", 89.12, 1.68 + f64::max(2.0 * 1.34, 2.0)),
        ("credit", Variant::Gmmd, "acc", 78.11, 1.55 + f64::max(2.0 * 1.99, 2.0)),
    ];
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (name, variant, metric, target, dp_cap) in targets {
        let g = match dataset(name) {
            Ok(g) => g,
            Err(e) => {
                failures.push(e);
                continue;
            }
        };
        let (cfg, agg, batch_time) = tuned(&g, name, variant)?;
        let value = if metric == "acc" { agg.acc } else { agg.auc };
        if (value - target).abs() > 3.0 {
            failures.push(format!("{name} {metric} {value:.2} vs {target}"));
        }
        if agg.dp > dp_cap {
            failures.push(format!("{name} dp {:.2} > {dp_cap:.2}", agg.dp));
        }
        let full = TrainConfig {
            propagation: PropagationConfig {
                variant: Variant::Gmmd,
                ..cfg.propagation
            },
            ..cfg
        };
        let (fair, _) = run_seeds(&g, &full, 5)?;
        let vanilla = TrainConfig {
            propagation: PropagationConfig {
                variant: Variant::Vanilla,
                ..cfg.propagation
            },
            ..cfg
        };
        let (plain, _) = run_seeds(&g, &vanilla, 5)?;
        if !(fair.dp < 0.5 * plain.dp) {
            failures.push(format!("{name} paired dp {:.2} vs vanilla {:.2}", fair.dp, plain.dp));
        }
        if batch_time > Duration::from_secs(600) {
            failures.push(format!("{name} 5-seed batch took {:.0}s", batch_time.as_secs_f64()));
        }
        notes.push(format!("{name} {metric} {value:.2} dp {:.2}", agg.dp));
    }
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_2() -> Verdict {
    let g = dataset("german")?;
    let base = base_config("german", Variant::Gmmd);
    let run = |ablation| run_seeds(&g, &TrainConfig { ablation, ..base }, 5).map(|r| r.0);
    let (full, no_fair, no_smooth) = (run(Ablation::None)?, run(Ablation::NoFair)?, run(Ablation::NoSmooth)?);
    let detail = format!(
        "dp w/o fair {:.2} vs full {:.2}; auc w/o smooth {:.2} vs full {:.2}",
        no_fair.dp, full.dp, no_smooth.auc, full.auc
    );
    if no_fair.dp > full.dp && no_smooth.auc < full.auc {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3() -> Verdict {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (name, h, hf) in [("german", "0.59", "0.81"), ("bail", "0.81", "0.52")] {
        match dataset(name) {
            Err(e) => failures.push(e),
            Ok(g) => {
                let got_h = format!("{:.2}", homophily_ratio(&g).map_err(|e| e.to_string())?);
                let got_hf = format!("{:.2}", sensitive_homophily_ratio(&g).map_err(|e| e.to_string())?);
                let line = format!("{name} H {got_h} H_f {got_hf}");
                if got_h == h && got_hf == hf {
                    notes.push(line);
                } else {
                    failures.push(format!("{line}, expected {h} / {hf}"));
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(failures.join("; "))
    }
}

fn fixture_graph(seed: u64) -> AttributedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    edges.extend([(0, 5), (2, 7), (3, 8)]);
    let features = DenseMatrix::from_fn(n, 4, |_, _| rng.gen_range(0.0..1.0));
    let labels = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let sensitive = (0..n).map(|i| (i % 2) as u8).collect();
    let split = (0..n).map(|i| if i < 6 { Split::Train } else if i < 8 { Split::Val } else { Split::Test }).collect();
    AttributedGraph::new(n, edges, features, labels, sensitive, split).unwrap()
}

/// Loss with each layer's coupling held fixed at the given matrices.
fn frozen_loss(ctx: &ModelContext, params: &ModelParams, cfg: &TrainConfig, frozen: &[Arc<FairnessCoupling>]) -> f64 {
    let prop = ablation_variant(cfg);
    let mut tape = Tape::new();
    let handles: Vec<Var> = params.tensors().iter().map(|t| tape.constant((*t).clone()).unwrap()).collect();
    let m = params.weights.len();
    let mut h = tape.constant(ctx.features.clone()).unwrap();
    for l in 0..m {
        h = tape.matmul(h, handles[l]).unwrap();
        h = tape.add_row_bias(h, handles[m + l]).unwrap();
        if l + 1 < m {
            h = tape.relu(h).unwrap();
        }
    }
    let x_in = h;
    let gamma = prop.gamma();
    let mut f = x_in;
    for coupling in frozen {
        let smoothed = match prop.backbone {
            Backbone::Gat => tape.attention(f, handles[2 * m], ctx.graph.neighbors.clone(), prop.gat_slope).unwrap(),
            _ => tape.sparse_apply(ctx.graph.smoother.clone(), f).unwrap(),
        };
        let a = tape.scale(smoothed, 1.0 - gamma).unwrap();
        let pf = tape.coupling_apply(f, coupling.clone(), prop.alpha, KernelGrad::Detached).unwrap();
        let b = tape.scale(pf, prop.coupling_scale()).unwrap();
        let c = tape.scale(x_in, gamma).unwrap();
        let s = tape.add(a, b).unwrap();
        f = tape.add(s, c).unwrap();
    }
    let probs = tape.row_softmax(f).unwrap();
    let loss = tape.cross_entropy(probs, ctx.labels.clone(), ctx.train.clone(), cfg.reduction).unwrap();
    tape.value(loss)[(0, 0)]
}

fn couplings_at(ctx: &ModelContext, params: &ModelParams, prop: &PropagationConfig) -> Vec<Arc<FairnessCoupling>> {
    let mut tape = Tape::new();
    let fwd = record_forward(&mut tape, ctx, params, prop, None).unwrap();
    let variant = prop.variant.coupling().unwrap();
    fwd.reps[..fwd.reps.len() - 1]
        .iter()
        .map(|&v| Arc::new(build_coupling(tape.value(v), ctx.partition(), &prop.kernel().unwrap(), variant).unwrap()))
        .collect()
}

/// Worst relative error `‖g - g_fd‖ / max(‖g‖, ‖g_fd‖)` over the parameter tensors.
fn gradient_error(cfg: &TrainConfig, seed: u64) -> f64 {
    let g = fixture_graph(seed);
    let prop = ablation_variant(cfg);
    let ctx = ModelContext::new(&g, &prop).unwrap();
    let gat = (prop.backbone == Backbone::Gat).then_some(prop.gat_slope);
    let params = ModelParams::init(4, 6, 2, 2, gat, &mut ChaCha8Rng::seed_from_u64(seed + 100)).unwrap();
    let (_, grads) = loss_and_gradients(&ctx, &params, cfg, None).unwrap();
    let frozen = couplings_at(&ctx, &params, &prop);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (t, gr) in grads.iter().enumerate() {
        let (mut num, mut den_a, mut den_b) = (0.0, 0.0, 0.0);
        for k in 0..gr.as_slice().len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].as_mut_slice()[k] += delta;
                match prop.kernel_grad {
                    KernelGrad::Full => loss_and_gradients(&ctx, &p, cfg, None).unwrap().0,
                    KernelGrad::Detached => frozen_loss(&ctx, &p, cfg, &frozen),
                }
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = gr.as_slice()[k];
            num += (an - fd).powi(2);
            den_a += an * an;
            den_b += fd * fd;
        }
        let den = den_a.max(den_b).sqrt();
        if den > 1e-9 {
            worst = worst.max(num.sqrt() / den);
        }
    }
    worst
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for backbone in [Backbone::Gcn, Backbone::Gin, Backbone::Gat] {
        for variant in [Variant::Gmmd, Variant::GmmdS] {
            for kernel_grad in [KernelGrad::Full, KernelGrad::Detached] {
                let cfg = TrainConfig {
                    mlp_layers: 2,
                    propagation: PropagationConfig {
                        backbone,
                        variant,
                        kernel_grad,
                        layers: 2,
                        lambda_f: 2.0,
                        alpha: 0.7,
                        ..PropagationConfig::default()
                    },
                    ..TrainConfig::default()
                };
                let err = gradient_error(&cfg, 7 + cases);
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    let detail = format!("{cases} configurations, worst relative error {worst:.2e}");
    if worst < 1e-4 {
        within(start.elapsed(), 10, detail)
    } else {
        Err(detail)
    }
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DenseMatrix, GroupPartition) {
    let f = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    let mut s: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    s[0] = 0;
    s[1] = 1;
    (f, GroupPartition::from_sensitive(&s).unwrap())
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, d) = (rng.gen_range(4..12), rng.gen_range(1..4));
        let (f, part) = random_instance(&mut rng, n, d);
        let alpha = rng.gen_range(0.2..1.5);
        let kernel = KernelConfig::new(alpha).unwrap();
        let pf = build_coupling_full(&f, &part, &kernel).unwrap().apply(&f).unwrap().scale(4.0 * alpha);
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..d {
                let shifted = |delta: f64| {
                    let mut g = f.clone();
                    g.row_mut(i)[j] += delta;
                    mmd(&g, &part, &kernel).unwrap()
                };
                let neg_grad = -(shifted(h) - shifted(-h)) / (2.0 * h);
                num += (pf[(i, j)] - neg_grad).powi(2);
                den += neg_grad * neg_grad;
            }
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-300));
    }
    let detail = format!("20 instances, worst relative error {worst:.2e}");
    if worst < 1e-6 {
        within(start.elapsed(), 5, detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut smallest = f64::INFINITY;
    for _ in 0..100 {
        let g = theorem_instance(12, 3, 0.3, &mut rng).unwrap();
        let op = build_normalized_adjacency(&g).unwrap();
        let part = g.partition();
        let cfg = PropagationConfig {
            lambda_s: rng.gen_range(0.0..2.0),
            lambda_f: rng.gen_range(0.0..5.0),
            alpha: rng.gen_range(0.1..1.0),
            ..PropagationConfig::default()
        };
        let x = g.features();
        let f = DenseMatrix::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
        let before = objective(&f, x, &op, &part, &cfg).unwrap();
        let grad = objective_gradient(&f, x, &op, &part, &cfg).unwrap();
        let after = objective(&f.sub(&grad.scale(1e-3)).unwrap(), x, &op, &part, &cfg).unwrap();
        smallest = smallest.min(before - after);
    }
    let detail = format!("100 instances, smallest decrease {smallest:.3e}");
    if smallest > 1e-10 {
        within(start.elapsed(), 10, detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let kernel = KernelConfig::new(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut fail1, mut fail2) = (0, 0);
    for _ in 0..100 {
        let g = theorem_instance(20, 4, 0.3, &mut rng).unwrap();
        let w = DenseMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        if !check_bound_thm1(&g, &w, &kernel).unwrap().holds {
            fail1 += 1;
        }
    }
    for _ in 0..100 {
        let g = theorem_instance(20, 4, 0.3, &mut rng).unwrap();
        if !check_bound_thm2(&g, &kernel).unwrap().holds {
            fail2 += 1;
        }
    }
    let detail = format!("parity bound violations {fail1}/100, representation bound violations {fail2}/100");
    if fail1 == 0 && fail2 == 0 {
        within(start.elapsed(), 30, detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut e1, mut e2, mut e3): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let g = theorem_instance(14, 3, 0.3, &mut rng).unwrap();
        let op = build_normalized_adjacency(&g).unwrap();
        let part = g.partition();
        let n = g.num_nodes();
        let cfg = PropagationConfig {
            lambda_s: rng.gen_range(0.1..3.0),
            lambda_f: rng.gen_range(0.5..5.0),
            alpha: rng.gen_range(0.2..1.0),
            ..PropagationConfig::default()
        };
        let kernel = cfg.kernel().unwrap();
        let x = g.features();
        let f = DenseMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));

        let full = build_coupling_full(&f, &part, &kernel).unwrap();
        let reference = gmmd_layer(&f, x, &op, &full, &cfg).unwrap();
        let sampled = sampled_layer(&f, x, &op, &part.group0, &part.group1, &cfg).unwrap();
        e1 = e1.max(sampled.max_abs_diff(&reference));

        // full coupling with same-group entries removed and the diagonal rebalanced
        let mut masked = full.to_dense(n);
        let s = g.sensitive();
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j && s[i] == s[j] {
                    masked.row_mut(i)[j] = 0.0;
                }
                if i != j {
                    off += masked[(i, j)];
                }
            }
            masked.row_mut(i)[i] = -off;
        }
        let gamma = cfg.gamma();
        let expect = op
            .apply(&f)
            .unwrap()
            .scale(1.0 - gamma)
            .add(&masked.matmul(&f).unwrap().scale(4.0 * gamma * cfg.lambda_f * cfg.alpha))
            .unwrap()
            .add(&x.scale(gamma))
            .unwrap();
        let simplified = build_coupling_simplified(&f, &part, &kernel).unwrap();
        e2 = e2.max(gmmd_s_layer(&f, x, &op, &simplified, &cfg).unwrap().max_abs_diff(&expect));

        let a = op.matrix().to_dense();
        let lap = DenseMatrix::identity(n).sub(&a).unwrap();
        let left = DenseMatrix::identity(n).scale(1.0 - gamma).sub(&lap.scale(gamma * cfg.lambda_s)).unwrap();
        let right = DenseMatrix::identity(n).sub(&lap).unwrap().scale(1.0 - gamma);
        e3 = e3.max(left.max_abs_diff(&right));
    }
    let detail = format!("sampled vs full {e1:.1e}, simplified vs masked {e2:.1e}, operator identity {e3:.1e}");
    if e1 < 1e-12 && e2 < 1e-12 && e3 < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Verdict {
    let g = dataset("bail")?;
    let base = base_config("bail", Variant::Gmmd);
    let mut dps = Vec::new();
    for layers in [2, 3, 4] {
        let mut cfg = base;
        cfg.propagation.layers = layers;
        dps.push(run_seeds(&g, &cfg, 5)?.0.dp);
    }
    let monotone = dps.windows(2).all(|w| w[1] <= w[0]);
    let (_, outs) = run_seeds(&g, &base, 5)?;
    let mut rhos = Vec::new();
    for o in &outs {
        let sim: Vec<f64> = o.records.iter().map(|r| r.sim).collect();
        let dp: Vec<f64> = o.records.iter().map(|r| r.test.delta_dp).collect();
        if let Some(rho) = spearman(&sim, &dp).map_err(|e| e.to_string())? {
            rhos.push(rho);
        }
    }
    let rho = mean_std(&rhos).0;
    let detail = format!("dp by K {dps:.2?}; mean Spearman(sim, dp) {rho:.3} over {} seeds", rhos.len());
    if monotone && rho < 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_force_mmd(f: &DenseMatrix, part: &GroupPartition, alpha: f64) -> f64 {
    let k = |a: usize, b: usize| {
        let d: f64 = f.row(a).iter().zip(f.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
        (-alpha * d).exp()
    };
    let mean = |ga: &[usize], gb: &[usize]| {
        let mut s = 0.0;
        for &a in ga {
            for &b in gb {
                s += k(a, b);
            }
        }
        s / (ga.len() * gb.len()) as f64
    };
    mean(&part.group0, &part.group0) + mean(&part.group1, &part.group1) - 2.0 * mean(&part.group0, &part.group1)
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut most_negative = f64::INFINITY;
    for _ in 0..1000 {
        let (n, d) = (rng.gen_range(2..10), rng.gen_range(1..4));
        let (f, part) = random_instance(&mut rng, n, d);
        let kernel = KernelConfig::new(rng.gen_range(0.05..3.0)).unwrap();
        most_negative = most_negative.min(mmd(&f, &part, &kernel).unwrap());
    }
    let mut identical: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.gen_range(1..6);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        // group 1 holds the same multiset in reverse order
        let all: Vec<Vec<f64>> = rows.iter().cloned().chain(rows.iter().rev().cloned()).collect();
        let f = DenseMatrix::from_rows(&all).unwrap();
        let part = GroupPartition::from_groups((0..m).collect(), (m..2 * m).collect()).unwrap();
        identical = identical.max(mmd(&f, &part, &KernelConfig::new(0.7).unwrap()).unwrap().abs());
    }
    let mut oracle: f64 = 0.0;
    for _ in 0..50 {
        let (n, d) = (rng.gen_range(2..8), rng.gen_range(1..4));
        let (f, part) = random_instance(&mut rng, n, d);
        let alpha = rng.gen_range(0.1..2.0);
        let got = mmd(&f, &part, &KernelConfig::new(alpha).unwrap()).unwrap();
        oracle = oracle.max((got - brute_force_mmd(&f, &part, alpha)).abs());
    }
    let detail = format!("min over 1000 inputs {most_negative:.1e}; identical groups {identical:.1e}; oracle gap {oracle:.1e}");
    if most_negative >= 0.0 && identical < 1e-12 && oracle < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("benchmark accuracy and parity", criterion_1),
        ("ablation ordering on German", criterion_2),
        ("dataset homophily audit", criterion_3),
        ("end-to-end gradients vs finite differences", criterion_4),
        ("coupling equals negative MMD gradient", criterion_5),
        ("objective descent", criterion_6),
        ("parity and representation bounds", criterion_7),
        ("structural layer equivalences", criterion_8),
        ("depth and similarity trends on Bail", criterion_9),
        ("MMD properties", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
