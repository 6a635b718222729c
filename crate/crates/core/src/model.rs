//! Node classifier: an MLP encoder, `K` fairness-aware propagation layers and
//! a softmax head, trained with Adam on masked cross-entropy.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, GroupPartition, Split};
use crate::kernel::{build_coupling, build_coupling_sampled, inter_group_similarity, CouplingVariant};
use crate::metrics::EvalReport;
use crate::propagation::{
    record_propagation, GATParams, GraphContext, PropagationConfig, Samples, Variant,
};
use crate::tensor::{AdamConfig, AdamState, DenseMatrix, Gradients, Reduction, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Cross-entropy through fairness-aware propagation.
    Gmmd,
    /// Plain propagation with an MMD penalty on the output representation.
    MmdRegBaseline,
    /// Plain propagation, no fairness term.
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    /// Graph smoothing replaced by the identity; fidelity and coupling kept.
    NoSmooth,
    NoFair,
    /// MLP only.
    NoBoth,
    /// Couple every node instead of a per-epoch sample.
    NoSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    /// MLP depth `M`.
    pub mlp_layers: usize,
    pub propagation: PropagationConfig,
    pub loss: LossVariant,
    pub ablation: Ablation,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 1e-5,
            epochs: 500,
            seed: 0,
            hidden: 16,
            mlp_layers: 2,
            propagation: PropagationConfig::default(),
            loss: LossVariant::Gmmd,
            ablation: Ablation::None,
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.mlp_layers == 0 {
            return Err(Error::Config("mlp_layers must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        if self.propagation.layers == 0 && self.ablation != Ablation::NoBoth {
            return Err(Error::Config("propagation layers must be >= 1".into()));
        }
        self.propagation.validate()
    }
}

/// Propagation actually run once the loss variant and ablation are applied.
pub fn ablation_variant(cfg: &TrainConfig) -> PropagationConfig {
    let mut p = cfg.propagation;
    if cfg.loss != LossVariant::Gmmd {
        p.variant = Variant::Vanilla;
    }
    match cfg.ablation {
        Ablation::None => {}
        Ablation::NoSmooth => p.smooth = false,
        Ablation::NoFair => p.lambda_f = 0.0,
        Ablation::NoBoth => p.layers = 0,
        Ablation::NoSample => p.sample_size = 0,
    }
    p
}

/// MLP weights and biases plus the optional attention vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseMatrix>,
    pub gat: Option<GATParams>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases; `M` layers `d → hidden → … → classes`.
    pub fn init(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        layers: usize,
        gat_slope: Option<f64>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layers == 0 || input_dim == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "invalid model shape: {layers} layers, input {input_dim}, {classes} classes"
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden).take(layers - 1));
        dims.push(classes);
        let weights: Vec<DenseMatrix> = dims.windows(2).map(|w| glorot(rng, w[0], w[1])).collect();
        let biases = dims[1..].iter().map(|&c| DenseMatrix::zeros(1, c)).collect();
        let gat = gat_slope.map(|slope| GATParams {
            att: glorot(rng, 1, 2 * classes),
            slope,
        });
        Ok(Self { weights, biases, gat })
    }

    pub fn classes(&self) -> usize {
        self.weights.last().map_or(0, DenseMatrix::cols)
    }

    /// Every trainable matrix in a fixed order.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out: Vec<&DenseMatrix> = self.weights.iter().chain(&self.biases).collect();
        if let Some(g) = &self.gat {
            out.push(&g.att);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = self.weights.iter_mut().chain(self.biases.iter_mut()).collect();
        if let Some(g) = &mut self.gat {
            out.push(&mut g.att);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Graph-level data shared by every epoch of a run.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub graph: GraphContext,
    pub features: DenseMatrix,
    pub labels: Arc<Vec<u8>>,
    pub sensitive: Vec<u8>,
    pub train: Arc<Vec<usize>>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ModelContext {
    pub fn new(graph: &AttributedGraph, prop: &PropagationConfig) -> Result<Self> {
        Ok(Self {
            graph: GraphContext::new(graph, prop)?,
            features: graph.features().clone(),
            labels: Arc::new(graph.labels().to_vec()),
            sensitive: graph.sensitive().to_vec(),
            train: Arc::new(graph.mask(Split::Train)),
            val: graph.mask(Split::Val),
            test: graph.mask(Split::Test),
        })
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.graph.partition
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: Vec<Var>,
    /// `F^(0) = X_in`, then one entry per layer.
    pub reps: Vec<Var>,
    pub probs: Var,
}

/// Records `softmax(propagate(MLP(X)))` on `tape`.
pub fn record_forward(
    tape: &mut Tape,
    ctx: &ModelContext,
    params: &ModelParams,
    prop: &PropagationConfig,
    samples: Option<&Samples>,
) -> Result<Forward> {
    let mut handles = Vec::new();
    for t in params.tensors() {
        handles.push(tape.param(t.clone())?);
    }
    let m = params.weights.len();
    let mut h = tape.constant(ctx.features.clone())?;
    for l in 0..m {
        h = tape.matmul(h, handles[l])?;
        h = tape.add_row_bias(h, handles[m + l])?;
        if l + 1 < m {
            h = tape.relu(h)?;
        }
    }
    let att = params.gat.as_ref().map(|_| handles[2 * m]);
    let reps = record_propagation(tape, &ctx.graph, prop, h, att, samples)?;
    let probs = tape.row_softmax(*reps.last().expect("non-empty"))?;
    Ok(Forward {
        params: handles,
        reps,
        probs,
    })
}

/// Class probabilities for every node.
pub fn forward_model(
    ctx: &ModelContext,
    params: &ModelParams,
    prop: &PropagationConfig,
    samples: Option<&Samples>,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let fwd = record_forward(&mut tape, ctx, params, prop, samples)?;
    Ok(tape.value(fwd.probs).clone())
}

/// `-Σ_{i∈mask} log Ŷ[i, y_i]` (summed or averaged), with probabilities floored at `1e-12`.
pub fn cross_entropy_masked(probs: &DenseMatrix, labels: &[u8], mask: &[usize], reduction: Reduction) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone())?;
    let loss = tape.cross_entropy(p, Arc::new(labels.to_vec()), Arc::new(mask.to_vec()), reduction)?;
    Ok(tape.value(loss)[(0, 0)])
}

/// Records the training loss for the configured variant and returns its handle.
fn record_loss(
    tape: &mut Tape,
    fwd: &Forward,
    ctx: &ModelContext,
    cfg: &TrainConfig,
    samples: Option<&Samples>,
) -> Result<Var> {
    let loss = tape.cross_entropy(fwd.probs, ctx.labels.clone(), ctx.train.clone(), cfg.reduction)?;
    let lambda = cfg.propagation.lambda_f;
    if cfg.loss != LossVariant::MmdRegBaseline || lambda == 0.0 || cfg.ablation == Ablation::NoFair {
        return Ok(loss);
    }
    let out = *fwd.reps.last().expect("non-empty");
    let kernel = cfg.propagation.kernel()?;
    let coupling = match samples {
        Some(s) => build_coupling_sampled(tape.value(out), &s.group0, &s.group1, &kernel, CouplingVariant::Full)?,
        None => build_coupling(tape.value(out), ctx.partition(), &kernel, CouplingVariant::Full)?,
    };
    let reg = tape.mmd(out, Arc::new(coupling), cfg.propagation.alpha)?;
    let reg = tape.scale(reg, lambda)?;
    tape.add(loss, reg)
}

/// Training loss and its gradient for every tensor of `params`, in [`ModelParams::tensors`] order.
pub fn loss_and_gradients(
    ctx: &ModelContext,
    params: &ModelParams,
    cfg: &TrainConfig,
    samples: Option<&Samples>,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let prop = ablation_variant(cfg);
    let mut tape = Tape::new();
    let fwd = record_forward(&mut tape, ctx, params, &prop, samples)?;
    let loss = record_loss(&mut tape, &fwd, ctx, cfg, samples)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss)[(0, 0)], collect(&grads, &fwd.params)))
}

fn collect(grads: &Gradients, handles: &[Var]) -> Vec<DenseMatrix> {
    handles.iter().map(|&v| grads.wrt(v).clone()).collect()
}

/// Cross-entropy plus `λ_f · MMD²(F^(K))` under plain propagation.
pub fn mmd_reg_baseline_loss(
    ctx: &ModelContext,
    params: &ModelParams,
    cfg: &TrainConfig,
    samples: Option<&Samples>,
) -> Result<f64> {
    let cfg = TrainConfig {
        loss: LossVariant::MmdRegBaseline,
        ..*cfg
    };
    loss_and_gradients(ctx, params, &cfg, samples).map(|(l, _)| l)
}

/// Metrics for one epoch, computed from that epoch's forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val: EvalReport,
    pub test: EvalReport,
    /// Mean cross-group kernel value of the last hidden representation.
    pub sim: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch (before that epoch's update).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }
}

/// Deterministic sample stream for `(seed, epoch)`.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    rng
}

/// Whether training draws a fresh coupling sample every epoch.
pub fn uses_sampling(cfg: &TrainConfig) -> bool {
    let prop = ablation_variant(cfg);
    let needs_coupling = prop.is_fair() || (cfg.loss == LossVariant::MmdRegBaseline && cfg.ablation != Ablation::NoFair);
    prop.sample_size > 0 && needs_coupling
}

/// The coupling sample training used at `epoch`, or `None` when it couples every node.
pub fn epoch_samples(part: &GroupPartition, cfg: &TrainConfig, epoch: usize) -> Result<Option<Samples>> {
    if !uses_sampling(cfg) {
        return Ok(None);
    }
    let size = ablation_variant(cfg).sample_size;
    Samples::draw(part, size, &mut epoch_rng(cfg.seed, epoch as u64)).map(Some)
}

/// Every representation `F^(0) … F^(K)` and the class probabilities.
pub fn forward_all(
    ctx: &ModelContext,
    params: &ModelParams,
    prop: &PropagationConfig,
    samples: Option<&Samples>,
) -> Result<(Vec<DenseMatrix>, DenseMatrix)> {
    let mut tape = Tape::new();
    let fwd = record_forward(&mut tape, ctx, params, prop, samples)?;
    let reps = fwd.reps.iter().map(|&v| tape.value(v).clone()).collect();
    Ok((reps, tape.value(fwd.probs).clone()))
}

fn nan_last(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Higher validation accuracy wins; ties go to the lower validation ΔDP.
fn improves(candidate: &EpochRecord, best: &EpochRecord) -> bool {
    let (a, b) = (candidate.val.accuracy, best.val.accuracy);
    a > b || (a == b && nan_last(candidate.val.delta_dp) < nan_last(best.val.delta_dp))
}

pub fn train(graph: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prop = ablation_variant(cfg);
    let ctx = ModelContext::new(graph, &prop)?;
    if ctx.train.is_empty() {
        return Err(Error::Config("training mask is empty".into()));
    }
    if ctx.val.is_empty() || ctx.test.is_empty() {
        return Err(Error::Config("validation and test masks must be non-empty".into()));
    }
    let part = ctx.partition().clone();
    let sampling = uses_sampling(cfg);
    if sampling && prop.sample_size > part.n0().min(part.n1()) {
        return Err(Error::Sample(format!(
            "sample size {} exceeds smaller group ({} / {})",
            prop.sample_size,
            part.n0(),
            part.n1()
        )));
    }
    let classes = ctx.labels.iter().copied().max().unwrap_or(0).max(1) as usize + 1;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gat_slope = (prop.backbone == crate::propagation::Backbone::Gat).then_some(prop.gat_slope);
    let mut params = ModelParams::init(
        ctx.features.cols(),
        cfg.hidden,
        classes,
        cfg.mlp_layers,
        gat_slope,
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(AdamConfig::new(cfg.lr, cfg.weight_decay), &params.tensors());
    let kernel = prop.kernel()?;

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ModelParams)> = None;
    for epoch in 0..cfg.epochs {
        let samples = epoch_samples(&part, cfg, epoch)?;
        let mut tape = Tape::new();
        let fwd = record_forward(&mut tape, &ctx, &params, &prop, samples.as_ref())?;
        let loss = record_loss(&mut tape, &fwd, &ctx, cfg, samples.as_ref())?;
        let grads = tape.backward(loss)?;

        let probs = tape.value(fwd.probs);
        let hidden = fwd.reps[fwd.reps.len().saturating_sub(2)];
        let sim_part = match &samples {
            Some(s) => GroupPartition::from_groups(s.group0.clone(), s.group1.clone())?,
            None => part.clone(),
        };
        let train_eval = EvalReport::evaluate(probs, &ctx.labels, &ctx.sensitive, &ctx.train)?;
        let record = EpochRecord {
            epoch,
            loss: tape.value(loss)[(0, 0)],
            train_accuracy: train_eval.accuracy,
            val: EvalReport::evaluate(probs, &ctx.labels, &ctx.sensitive, &ctx.val)?,
            test: EvalReport::evaluate(probs, &ctx.labels, &ctx.sensitive, &ctx.test)?,
            sim: inter_group_similarity(tape.value(hidden), &sim_part, &kernel)?,
        };
        let better = match &best {
            None => true,
            Some((b, _)) => improves(&record, &records[*b]),
        };
        if better {
            best = Some((epoch, params.clone()));
        }
        records.push(record);

        let g = collect(&grads, &fwd.params);
        let grefs: Vec<&DenseMatrix> = g.iter().collect();
        adam.step(&mut params.tensors_mut(), &grefs)?;
    }
    let (best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        records,
    })
}
