use std::fs;
use std::path::Path;

use gmmd::data::{
    load_model, save_model, summarize, write_metrics_csv, write_summary, write_table, RunConfig, SavedModel,
    SummaryRow,
};
use gmmd::graph::{homophily_ratio, sensitive_homophily_ratio, AttributedGraph};
use gmmd::kernel::{mmd, KernelConfig};
use gmmd::metrics::EvalReport;
use gmmd::model::{ablation_variant, epoch_samples, forward_all, train as train_model, ModelContext, TrainConfig, TrainOutcome};
use gmmd::synth::theorem_instance;
use gmmd::tensor::DenseMatrix;
use gmmd::theory::theory_report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::CliError;

type CmdResult = Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("i/o error on {}: {e}", path.display()))
}

/// Resolved config plus command-specific facts; enough to reproduce the output.
fn write_manifest(cfg: &RunConfig, command: &str, extra: &[(&str, String)]) -> CmdResult {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let mut text = format!("# gmmd {command}\n# version {}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&cfg.to_text());
    let path = cfg.output_dir.join("manifest.txt");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.repetitions as u64).map(|r| cfg.train.seed.wrapping_add(r)).collect()
}

/// Independent seeded runs, fanned out across threads.
fn run_seeds(graph: &AttributedGraph, train: &TrainConfig, seeds: &[u64]) -> Result<Vec<TrainOutcome>, CliError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..*train };
            train_model(graph, &cfg).map_err(CliError::from)
        })
        .collect()
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn print_summary(rows: &[SummaryRow]) {
    for r in rows {
        println!("{:>4}  {:>7.2} ± {:.2}  (n = {})", r.metric, r.mean, r.std, r.runs);
    }
}

fn test_reports(outcomes: &[TrainOutcome]) -> Vec<EvalReport> {
    outcomes.iter().map(|o| o.best().test).collect()
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    let graph = cfg.load_graph()?;
    let seeds = seeds(cfg);
    let outcomes = run_seeds(&graph, &cfg.train, &seeds)?;
    for (rep, (outcome, &seed)) in outcomes.iter().zip(&seeds).enumerate() {
        let dir = cfg.output_dir.join(format!("run_{rep}"));
        write_metrics_csv(&outcome.records, &dir.join("metrics.csv"))?;
        let model = SavedModel {
            seed,
            best_epoch: outcome.best_epoch,
            params: outcome.params.clone(),
        };
        save_model(&model, &dir.join("model.json"))?;
    }
    let rows = summarize(&test_reports(&outcomes));
    write_summary(&rows, &cfg.output_dir.join("summary.csv"))?;
    let best: Vec<String> = outcomes.iter().map(|o| o.best_epoch.to_string()).collect();
    write_manifest(
        cfg,
        "train",
        &[
            ("seeds", format!("{seeds:?}")),
            ("best epochs", best.join(", ")),
            ("features min-max normalized", cfg.dataset.normalize.to_string()),
        ],
    )?;
    println!("{} runs on {} (test split, percent):", outcomes.len(), cfg.dataset.dir.display());
    print_summary(&rows);
    Ok(())
}

fn model_context(cfg: &RunConfig, graph: &AttributedGraph) -> Result<ModelContext, CliError> {
    Ok(ModelContext::new(graph, &ablation_variant(&cfg.train))?)
}

/// Re-runs the forward pass of the saved model's selected epoch.
fn replay(cfg: &RunConfig, graph: &AttributedGraph, model: &SavedModel) -> Result<(Vec<DenseMatrix>, DenseMatrix), CliError> {
    let train = TrainConfig {
        seed: model.seed,
        ..cfg.train
    };
    let prop = ablation_variant(&train);
    let ctx = model_context(cfg, graph)?;
    if model.params.weights.first().map(|w| w.rows()) != Some(graph.feature_dim()) {
        return Err(CliError::Data("saved model does not match the dataset's feature width".into()));
    }
    let samples = epoch_samples(ctx.partition(), &train, model.best_epoch)?;
    Ok(forward_all(&ctx, &model.params, &prop, samples.as_ref())?)
}

pub fn eval(cfg: &RunConfig, model_path: &Path) -> CmdResult {
    let graph = cfg.load_graph()?;
    let model = load_model(model_path)?;
    let (_, probs) = replay(cfg, &graph, &model)?;
    let ctx = model_context(cfg, &graph)?;
    let mut rows = Vec::new();
    for (name, mask) in [("val", &ctx.val), ("test", &ctx.test)] {
        let r = EvalReport::evaluate(&probs, &ctx.labels, &ctx.sensitive, mask)?;
        println!(
            "{name:>4}: acc {} f1 {} auc {} dp {} eo {}",
            pct(r.accuracy),
            pct(r.f1),
            pct(r.auc),
            pct(r.delta_dp),
            pct(r.delta_eo)
        );
        rows.push(vec![
            name.to_string(),
            r.accuracy.to_string(),
            r.f1.to_string(),
            r.auc.to_string(),
            r.delta_dp.to_string(),
            r.delta_eo.to_string(),
        ]);
    }
    write_table(&cfg.output_dir.join("eval.csv"), &["split", "acc", "f1", "auc", "dp", "eo"], rows)?;
    write_manifest(cfg, "eval", &[("model", model_path.display().to_string())])
}

pub fn audit(cfg: &RunConfig) -> CmdResult {
    let graph = cfg.load_graph()?;
    let part = graph.partition();
    let kernel = KernelConfig::new(cfg.train.propagation.alpha)?;
    let stats: Vec<(&str, String)> = vec![
        ("nodes", graph.num_nodes().to_string()),
        ("edges", graph.num_edges().to_string()),
        ("features", graph.feature_dim().to_string()),
        ("group0", part.n0().to_string()),
        ("group1", part.n1().to_string()),
        ("homophily", format!("{:.4}", homophily_ratio(&graph)?)),
        ("sensitive_homophily", format!("{:.4}", sensitive_homophily_ratio(&graph)?)),
        ("feature_mmd", format!("{:.6}", mmd(graph.features(), &part, &kernel)?)),
    ];
    for (k, v) in &stats {
        println!("{k:>20}  {v}");
    }
    let rows = stats.iter().map(|(k, v)| vec![k.to_string(), v.clone()]);
    write_table(&cfg.output_dir.join("audit.csv"), &["quantity", "value"], rows)?;
    write_manifest(cfg, "audit", &[])
}

pub fn theory_check(cfg: &RunConfig) -> CmdResult {
    let th = cfg.theory;
    if th.instances == 0 {
        return Err(CliError::Usage("nothing checked: theory.instances is 0".into()));
    }
    let kernel = KernelConfig::new(th.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(th.seed);
    let mut rows = Vec::with_capacity(th.instances);
    let mut violations = 0;
    for instance in 0..th.instances {
        let graph = theorem_instance(th.nodes, th.features, th.edge_prob, &mut rng)?;
        let head = DenseMatrix::from_fn(th.features, 2, |_, _| rng.gen_range(-1.0..1.0));
        let r = theory_report(&graph, &head, &kernel)?;
        if !r.holds() {
            violations += 1;
        }
        rows.push(vec![
            instance.to_string(),
            r.parity.lhs.to_string(),
            r.parity.rhs.to_string(),
            r.parity.holds.to_string(),
            r.representation.lhs.to_string(),
            r.representation.rhs.to_string(),
            r.representation.holds.to_string(),
            r.sim.to_string(),
            r.holds().to_string(),
        ]);
    }
    let header = [
        "instance",
        "dp_soft",
        "dp_soft_bound",
        "dp_soft_holds",
        "dp_rep",
        "dp_rep_bound",
        "dp_rep_holds",
        "sim",
        "holds",
    ];
    write_table(&cfg.output_dir.join("theory.csv"), &header, rows)?;
    write_manifest(cfg, "theory-check", &[("violations", violations.to_string())])?;
    println!("{} instances checked, {violations} violations", th.instances);
    if violations > 0 {
        return Err(CliError::Violation(format!("{violations} of {} instances violate a bound", th.instances)));
    }
    Ok(())
}

struct PointResult {
    assignment: Vec<(String, String)>,
    val_acc: f64,
    val_dp: f64,
    summary: Vec<SummaryRow>,
}

fn stat<'a>(rows: &'a [SummaryRow], metric: &str) -> &'a SummaryRow {
    rows.iter().find(|r| r.metric == metric).expect("summary has every metric")
}

/// Trains every (grid point, seed) pair in parallel and aggregates per point.
fn run_grid(cfg: &RunConfig, graph: &AttributedGraph, points: &[Vec<(String, String)>]) -> Result<Vec<PointResult>, CliError> {
    let mut configs = Vec::with_capacity(points.len());
    for point in points {
        let mut c = cfg.clone();
        for (k, v) in point {
            c.set(k, v)?;
        }
        c.validate()?;
        configs.push(c);
    }
    let jobs: Vec<(usize, TrainConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(p, c)| seeds(c).into_iter().map(move |seed| (p, TrainConfig { seed, ..c.train })))
        .collect();
    let outcomes: Vec<(usize, TrainOutcome)> = jobs
        .par_iter()
        .map(|(p, t)| train_model(graph, t).map(|o| (*p, o)).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(p, assignment)| {
            let mine: Vec<&TrainOutcome> = outcomes.iter().filter(|(q, _)| *q == p).map(|(_, o)| o).collect();
            let val: Vec<EvalReport> = mine.iter().map(|o| o.best().val).collect();
            let test: Vec<EvalReport> = mine.iter().map(|o| o.best().test).collect();
            let val_summary = summarize(&val);
            PointResult {
                assignment: assignment.clone(),
                val_acc: stat(&val_summary, "acc").mean,
                val_dp: stat(&val_summary, "dp").mean,
                summary: summarize(&test),
            }
        })
        .collect())
}

/// Highest validation accuracy, ties to the lower validation parity gap.
fn best_index(results: &[PointResult]) -> usize {
    let key = |r: &PointResult| (r.val_acc, -r.val_dp);
    (0..results.len())
        .max_by(|&a, &b| {
            key(&results[a])
                .partial_cmp(&key(&results[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.cmp(&a))
        })
        .expect("non-empty grid")
}

const RESULT_COLUMNS: [&str; 9] = ["acc", "acc_std", "f1", "auc", "auc_std", "dp", "dp_std", "eo", "eo_std"];

fn result_cells(summary: &[SummaryRow]) -> Vec<String> {
    let s = |m: &str| stat(summary, m);
    vec![
        s("acc").mean,
        s("acc").std,
        s("f1").mean,
        s("auc").mean,
        s("auc").std,
        s("dp").mean,
        s("dp").std,
        s("eo").mean,
        s("eo").std,
    ]
    .into_iter()
    .map(|v| format!("{v:.4}"))
    .collect()
}

/// Whether `values` never increases when ordered by `keys`.
pub fn non_increasing_by(keys: &[f64], values: &[f64]) -> bool {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    order.windows(2).all(|w| values[w[1]] <= values[w[0]])
}

pub fn sweep(cfg: &RunConfig) -> CmdResult {
    if cfg.sweep.is_empty() {
        return Err(CliError::Usage("empty grid: add at least one `sweep.<key> = v1, v2` line".into()));
    }
    let graph = cfg.load_graph()?;
    let points = cfg.grid_points();
    let results = run_grid(cfg, &graph, &points)?;
    let best = best_index(&results);

    let keys: Vec<String> = cfg.sweep.keys().cloned().collect();
    let mut header: Vec<String> = keys.clone();
    header.push("val_acc".into());
    header.extend(RESULT_COLUMNS.iter().map(|c| c.to_string()));
    header.push("best".into());
    let rows = results.iter().enumerate().map(|(i, r)| {
        let mut row: Vec<String> = r.assignment.iter().map(|(_, v)| v.clone()).collect();
        row.push(format!("{:.4}", r.val_acc));
        row.extend(result_cells(&r.summary));
        row.push((i == best).to_string());
        row
    });
    write_table(&cfg.output_dir.join("sweep.csv"), &header, rows)?;

    let mut extra = vec![("grid points", results.len().to_string())];
    if keys.len() == 1 {
        let parsed: Option<Vec<f64>> = results.iter().map(|r| r.assignment[0].1.parse().ok()).collect();
        if let Some(xs) = parsed {
            let dp: Vec<f64> = results.iter().map(|r| stat(&r.summary, "dp").mean).collect();
            let eo: Vec<f64> = results.iter().map(|r| stat(&r.summary, "eo").mean).collect();
            let (dp_flag, eo_flag) = (non_increasing_by(&xs, &dp), non_increasing_by(&xs, &eo));
            let trend = format!("key = {}\ndp_non_increasing = {dp_flag}\neo_non_increasing = {eo_flag}\n", keys[0]);
            let path = cfg.output_dir.join("trend.txt");
            fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
            fs::write(&path, &trend).map_err(|e| io_err(&path, e))?;
            print!("{trend}");
            extra.push(("dp non-increasing", dp_flag.to_string()));
        }
    }
    let chosen: Vec<String> = results[best].assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
    extra.push(("best point", chosen.join(" ")));
    write_manifest(cfg, "sweep", &extra)?;
    println!("{} grid points; best by validation: {}", results.len(), chosen.join(" "));
    Ok(())
}

pub fn ablate(cfg: &RunConfig, variants: &[String]) -> CmdResult {
    if variants.is_empty() {
        return Err(CliError::Usage("no ablations requested".into()));
    }
    let graph = cfg.load_graph()?;
    let points: Vec<Vec<(String, String)>> = variants
        .iter()
        .map(|v| vec![("train.ablation".to_string(), v.trim().to_string())])
        .collect();
    let results = run_grid(cfg, &graph, &points)?;
    let mut header = vec!["ablation".to_string()];
    header.extend(RESULT_COLUMNS.iter().map(|c| c.to_string()));
    let rows = results.iter().map(|r| {
        let mut row = vec![r.assignment[0].1.clone()];
        row.extend(result_cells(&r.summary));
        row
    });
    write_table(&cfg.output_dir.join("ablation.csv"), &header, rows)?;
    write_manifest(cfg, "ablate", &[("ablations", variants.join(","))])?;
    for r in &results {
        let s = |m: &str| stat(&r.summary, m).mean;
        println!(
            "{:>10}  acc {:.2}  auc {:.2}  dp {:.2}  eo {:.2}",
            r.assignment[0].1,
            s("acc"),
            s("auc"),
            s("dp"),
            s("eo")
        );
    }
    Ok(())
}

pub fn dump_sim(cfg: &RunConfig, model_path: Option<&Path>) -> CmdResult {
    if cfg.dump_pairs == 0 {
        return Err(CliError::Usage("dump.pairs must be >= 1".into()));
    }
    let graph = cfg.load_graph()?;
    let model = match model_path {
        Some(path) => load_model(path)?,
        None => {
            let out = train_model(&graph, &cfg.train)?;
            SavedModel {
                seed: cfg.train.seed,
                best_epoch: out.best_epoch,
                params: out.params,
            }
        }
    };
    let (reps, _) = replay(cfg, &graph, &model)?;
    let hidden = &reps[reps.len().saturating_sub(2)];
    let kernel = KernelConfig::new(cfg.train.propagation.alpha)?;
    let part = graph.partition();
    let labels = graph.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut rows = Vec::with_capacity(cfg.dump_pairs);
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for _ in 0..cfg.dump_pairs {
        let i = part.group0[rng.gen_range(0..part.n0())];
        let j = part.group1[rng.gen_range(0..part.n1())];
        let k = kernel.eval(hidden.row(i), hidden.row(j));
        let same_label = labels[i] == labels[j];
        if same_label { &mut same } else { &mut diff }.push(k);
        rows.push(vec![i.to_string(), j.to_string(), (same_label as u8).to_string(), k.to_string()]);
    }
    write_table(&cfg.output_dir.join("similarity.csv"), &["i", "j", "same_label", "similarity"], rows)?;
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (ms, md) = (mean(&same), mean(&diff));
    write_manifest(
        cfg,
        "dump-sim",
        &[
            ("model", model_path.map_or("trained in place".into(), |p| p.display().to_string())),
            ("mean same-label similarity", ms.to_string()),
            ("mean different-label similarity", md.to_string()),
        ],
    )?;
    println!("{} pairs; mean similarity same label {ms:.4}, different label {md:.4}", cfg.dump_pairs);
    Ok(())
}
