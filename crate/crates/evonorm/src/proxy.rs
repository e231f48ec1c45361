//! Desk-scale proxy benchmark: a deterministic synthetic classification
//! task, three structurally distinct anchor CNNs that host candidate
//! layers, the training/evaluation harness, and top-K reranking.
//!
//! The synthetic set keeps everything network-free; a loader for the
//! standard CIFAR-10 binary format is provided for locally supplied files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{
    forward_on_tape, EmaStore, EvalMode, LayerGraph, SiteParamIds,
};
use crate::nn::{self, he_normal, lr_at, sgd_step, LrSchedule, OptState, Padding};
use crate::seed::mix_seed;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};

pub const NUM_CLASSES: usize = 10;

// ---------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub train: usize,
    pub val: usize,
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 16,
            train: 2048,
            val: 512,
            noise_sigma: 0.3,
        }
    }
}

/// Train/validation splits of (image, label) pairs; bit-identical for a
/// given (seed, config).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_images: Vec<Tensor>,
    pub train_labels: Vec<usize>,
    pub val_images: Vec<Tensor>,
    pub val_labels: Vec<usize>,
    pub seed: u64,
}

/// Ten classes of oriented sinusoid textures (class k at angle k·pi/10,
/// wavelength 4 px) under per-pixel Gaussian noise.
pub fn make_dataset(seed: u64, cfg: &DatasetConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("valid sigma");
    let mut gen_split = |count: usize| {
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % NUM_CLASSES;
            let theta = class as f64 * std::f64::consts::PI / NUM_CLASSES as f64;
            let (ct, st) = (theta.cos(), theta.sin());
            let freq = 2.0 * std::f64::consts::PI / 4.0;
            let shape = Shape::new(1, cfg.image_size, cfg.image_size, 3);
            let img = Tensor::from_fn(shape, |_, y, x, _| {
                let base = (freq * (x as f64 * ct + y as f64 * st)).sin();
                if cfg.noise_sigma > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                }
            });
            images.push(img);
            labels.push(class);
        }
        (images, labels)
    };
    let (train_images, train_labels) = gen_split(cfg.train);
    let (val_images, val_labels) = gen_split(cfg.val);
    Dataset {
        train_images,
        train_labels,
        val_images,
        val_labels,
        seed,
    }
}

impl Dataset {
    /// Fixed probe batch for stress testing: the first `size` training
    /// samples, reused across candidates for comparability.
    pub fn probe_batch(&self, size: usize) -> (Tensor, Vec<usize>) {
        let size = size.min(self.train_images.len());
        let batch = Tensor::stack(&self.train_images[..size]).expect("probe stack");
        (batch, self.train_labels[..size].to_vec())
    }
}

/// Standard CIFAR-10 binary format: records of 1 label byte followed by
/// 3072 pixel bytes (three 32x32 planes). Train batches 1-5 plus the test
/// batch; pixel values scale to [0, 1].
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let path = dir.join(format!("data_batch_{i}.bin"));
        read_cifar_file(&path, &mut train_images, &mut train_labels)?;
    }
    let mut val_images = Vec::new();
    let mut val_labels = Vec::new();
    read_cifar_file(&dir.join("test_batch.bin"), &mut val_images, &mut val_labels)?;
    Ok(Dataset {
        train_images,
        train_labels,
        val_images,
        val_labels,
        seed: 0,
    })
}

pub(crate) fn read_cifar_file(
    path: &Path,
    images: &mut Vec<Tensor>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    const RECORD: usize = 1 + 3 * 1024;
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Parse(format!(
            "{}: length {} is not a multiple of the {RECORD}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    for rec in bytes.chunks_exact(RECORD) {
        let label = rec[0] as usize;
        if label >= NUM_CLASSES {
            return Err(Error::LabelRange {
                label,
                classes: NUM_CLASSES,
            });
        }
        let planes = &rec[1..];
        let img = Tensor::from_fn(Shape::new(1, 32, 32, 3), |_, y, x, c| {
            planes[c * 1024 + y * 32 + x] as f64 / 255.0
        });
        images.push(img);
        labels.push(label);
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Anchor architectures
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum AnchorKind {
    /// Pre-activation residual blocks.
    AnchorR,
    /// Inverted bottlenecks, expansion 4.
    AnchorM,
    /// Inverted bottlenecks, expansion 6, extra layer after projection.
    AnchorE,
}

impl AnchorKind {
    pub fn name(&self) -> &'static str {
        match self {
            AnchorKind::AnchorR => "anchor_r",
            AnchorKind::AnchorM => "anchor_m",
            AnchorKind::AnchorE => "anchor_e",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "anchor_r" | "r" => Ok(AnchorKind::AnchorR),
            "anchor_m" | "m" => Ok(AnchorKind::AnchorM),
            "anchor_e" | "e" => Ok(AnchorKind::AnchorE),
            other => Err(Error::Config(format!(
                "unknown anchor `{other}`; valid: anchor_r, anchor_m, anchor_e"
            ))),
        }
    }

    pub fn all() -> [AnchorKind; 3] {
        [AnchorKind::AnchorR, AnchorKind::AnchorM, AnchorKind::AnchorE]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnchorSpec {
    pub kind: AnchorKind,
    pub width_multiplier: f64,
}

/// Base stage widths and strides shared by the three anchors.
const STAGE_WIDTHS: [usize; 3] = [8, 16, 16];
const STAGE_STRIDES: [usize; 3] = [1, 2, 1];
const STEM_WIDTH: usize = 8;

impl AnchorSpec {
    pub fn new(kind: AnchorKind) -> Self {
        AnchorSpec {
            kind,
            width_multiplier: 1.0,
        }
    }

    pub fn with_multiplier(kind: AnchorKind, m: f64) -> Self {
        AnchorSpec {
            kind,
            width_multiplier: m,
        }
    }

    fn scale(&self, w: usize) -> usize {
        ((w as f64) * self.width_multiplier).round().max(1.0) as usize
    }

    pub fn stem_width(&self) -> usize {
        self.scale(STEM_WIDTH)
    }

    pub fn stage_widths(&self) -> [usize; 3] {
        [
            self.scale(STAGE_WIDTHS[0]),
            self.scale(STAGE_WIDTHS[1]),
            self.scale(STAGE_WIDTHS[2]),
        ]
    }

    fn expansion(&self) -> usize {
        match self.kind {
            AnchorKind::AnchorM => 4,
            AnchorKind::AnchorE => 6,
            AnchorKind::AnchorR => 1,
        }
    }
}

/// One architecture walk, shared between parameter allocation and the tape
/// forward pass so the two can never drift apart.
trait NetCtx {
    type Val: Copy;
    fn input(&self) -> Self::Val;
    fn conv(
        &mut self,
        x: Self::Val,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self::Val>;
    fn custom(&mut self, x: Self::Val, channels: usize) -> Result<Self::Val>;
    fn add(&mut self, a: Self::Val, b: Self::Val) -> Result<Self::Val>;
    fn head(&mut self, x: Self::Val, c_in: usize) -> Result<Self::Val>;
}

fn anchor_body<C: NetCtx>(ctx: &mut C, spec: &AnchorSpec) -> Result<C::Val> {
    let widths = spec.stage_widths();
    let mut h = ctx.conv(ctx.input(), 3, 3, spec.stem_width(), 1, 1)?;
    let mut c_in = spec.stem_width();
    for (&c_out, &stride) in widths.iter().zip(STAGE_STRIDES.iter()) {
        match spec.kind {
            AnchorKind::AnchorR => {
                let mut t = ctx.custom(h, c_in)?;
                t = ctx.conv(t, 3, c_in, c_out, stride, 1)?;
                t = ctx.custom(t, c_out)?;
                t = ctx.conv(t, 3, c_out, c_out, 1, 1)?;
                let skip = if c_in == c_out && stride == 1 {
                    h
                } else {
                    ctx.conv(h, 1, c_in, c_out, stride, 1)?
                };
                h = ctx.add(t, skip)?;
            }
            AnchorKind::AnchorM | AnchorKind::AnchorE => {
                let mid = c_in * spec.expansion();
                let mut t = ctx.conv(h, 1, c_in, mid, 1, 1)?;
                t = ctx.custom(t, mid)?;
                t = ctx.conv(t, 3, mid, mid, stride, mid)?;
                t = ctx.custom(t, mid)?;
                t = ctx.conv(t, 1, mid, c_out, 1, 1)?;
                if spec.kind == AnchorKind::AnchorE {
                    t = ctx.custom(t, c_out)?;
                }
                h = if c_in == c_out && stride == 1 {
                    ctx.add(t, h)?
                } else {
                    t
                };
            }
        }
        c_in = c_out;
    }
    ctx.head(h, c_in)
}

/// Allocation pass: creates parameter tensors and EMA stores in walk order.
struct InitCtx<'a> {
    rng: &'a mut ChaCha8Rng,
    graph: &'a LayerGraph,
    params: Vec<Tensor>,
    sites: Vec<EmaStore>,
    site_channels: Vec<usize>,
}

impl NetCtx for InitCtx<'_> {
    type Val = ();

    fn input(&self) -> Self::Val {}

    fn conv(
        &mut self,
        _x: (),
        k: usize,
        c_in: usize,
        c_out: usize,
        _stride: usize,
        groups: usize,
    ) -> Result<()> {
        let cig = c_in / groups;
        let fan_in = k * k * cig;
        self.params
            .push(he_normal(Shape::new(k, k, cig, c_out), fan_in, self.rng));
        Ok(())
    }

    fn custom(&mut self, _x: (), channels: usize) -> Result<()> {
        self.params.push(Tensor::channel_vector(vec![1.0; channels])); // gamma
        self.params.push(Tensor::channel_vector(vec![0.0; channels])); // beta
        self.params.push(Tensor::channel_vector(vec![0.0; channels])); // v0
        self.params.push(Tensor::channel_vector(vec![1.0; channels])); // v1
        self.sites
            .push(EmaStore::for_graph(self.graph, channels, EmaStore::DEFAULT_RHO));
        self.site_channels.push(channels);
        Ok(())
    }

    fn add(&mut self, _a: (), _b: ()) -> Result<()> {
        Ok(())
    }

    fn head(&mut self, _x: (), c_in: usize) -> Result<()> {
        let fan_in = c_in;
        self.params
            .push(he_normal(Shape::new(1, 1, c_in, NUM_CLASSES), fan_in, self.rng));
        self.params
            .push(Tensor::channel_vector(vec![0.0; NUM_CLASSES]));
        Ok(())
    }
}

/// Forward pass: consumes parameter leaf ids in the same walk order.
struct TapeCtx<'a> {
    tape: &'a mut Tape,
    graph: &'a LayerGraph,
    param_ids: &'a [crate::tape::ValueId],
    sites: &'a mut [EmaStore],
    mode: EvalMode,
    next_param: usize,
    next_site: usize,
    x: crate::tape::ValueId,
}

impl TapeCtx<'_> {
    fn take_param(&mut self) -> crate::tape::ValueId {
        let id = self.param_ids[self.next_param];
        self.next_param += 1;
        id
    }
}

impl NetCtx for TapeCtx<'_> {
    type Val = crate::tape::ValueId;

    fn input(&self) -> Self::Val {
        self.x
    }

    fn conv(
        &mut self,
        x: Self::Val,
        _k: usize,
        _c_in: usize,
        _c_out: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self::Val> {
        let w = self.take_param();
        self.tape.conv2d(x, w, stride, Padding::Same, groups)
    }

    fn custom(&mut self, x: Self::Val, _channels: usize) -> Result<Self::Val> {
        let site = SiteParamIds {
            gamma: self.take_param(),
            beta: self.take_param(),
            v0: self.take_param(),
            v1: self.take_param(),
        };
        let ema = &mut self.sites[self.next_site];
        self.next_site += 1;
        forward_on_tape(self.tape, self.graph, x, &site, ema, self.mode)
    }

    fn add(&mut self, a: Self::Val, b: Self::Val) -> Result<Self::Val> {
        self.tape.binary(crate::ops::OpKind::Add, a, b)
    }

    fn head(&mut self, x: Self::Val, _c_in: usize) -> Result<Self::Val> {
        let pooled = self.tape.global_avg_pool(x);
        let w = self.take_param();
        let b = self.take_param();
        self.tape.dense(pooled, w, b)
    }
}

/// An anchor CNN instantiated with a candidate layer: parameters, per-site
/// moving averages, and the walk that evaluates it.
#[derive(Clone)]
pub struct AnchorModel {
    pub spec: AnchorSpec,
    pub graph: LayerGraph,
    params: Vec<Tensor>,
    sites: Vec<EmaStore>,
}

impl AnchorModel {
    /// Fresh He-initialized model hosting `graph` at every custom site.
    pub fn build(spec: &AnchorSpec, graph: &LayerGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ctx = InitCtx {
            rng: &mut rng,
            graph,
            params: Vec::new(),
            sites: Vec::new(),
            site_channels: Vec::new(),
        };
        anchor_body(&mut ctx, spec)?;
        Ok(AnchorModel {
            spec: *spec,
            graph: graph.clone(),
            params: ctx.params,
            sites: ctx.sites,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) {
        debug_assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    /// Logits for a batch; Training mode also folds batch statistics into
    /// the per-site moving averages.
    pub fn logits(&mut self, images: &Tensor, mode: EvalMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let param_ids: Vec<_> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let mut ctx = TapeCtx {
            tape: &mut tape,
            graph: &self.graph,
            param_ids: &param_ids,
            sites: &mut self.sites,
            mode,
            next_param: 0,
            next_site: 0,
            x,
        };
        let out = anchor_body(&mut ctx, &self.spec)?;
        Ok(tape.value(out).clone())
    }

    /// Loss and exact gradients for every parameter, evaluated at
    /// `params_at` (usually the stored parameters).
    pub fn loss_and_grads_at(
        &mut self,
        params_at: &[Tensor],
        images: &Tensor,
        labels: &[usize],
        mode: EvalMode,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let param_ids: Vec<_> = params_at.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut ctx = TapeCtx {
            tape: &mut tape,
            graph: &self.graph,
            param_ids: &param_ids,
            sites: &mut self.sites,
            mode,
            next_param: 0,
            next_site: 0,
            x,
        };
        let logits = anchor_body(&mut ctx, &self.spec)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = tape.value(loss).scalar_value();
        let grads = tape.backward(loss)?;
        let out = param_ids
            .iter()
            .zip(params_at)
            .map(|(&id, p)| grads.of(id, p.shape()))
            .collect();
        Ok((loss_value, out))
    }

    pub fn loss_and_grads(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        mode: EvalMode,
    ) -> Result<(f64, Vec<Tensor>)> {
        let params = self.params.clone();
        self.loss_and_grads_at(&params, images, labels, mode)
    }
}

// ---------------------------------------------------------------------
// Training harness
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub schedule: LrScheduleConfig,
    pub warmup: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    /// Random square crop size for training batches (CIFAR-style); the
    /// synthetic set leaves this off.
    pub crop: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduleConfig {
    Constant,
    Cosine,
}

impl From<LrScheduleConfig> for LrSchedule {
    fn from(c: LrScheduleConfig) -> Self {
        match c {
            LrScheduleConfig::Constant => LrSchedule::Constant,
            LrScheduleConfig::Cosine => LrSchedule::Cosine,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 128,
            lr: 0.1,
            schedule: LrScheduleConfig::Constant,
            warmup: 0,
            momentum: 0.9,
            weight_decay: 1e-4,
            nesterov: true,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub accuracy: f64,
    pub loss_trace: Vec<f64>,
    pub steps_run: usize,
    pub non_finite: bool,
}

fn gather_batch(
    images: &[Tensor],
    labels: &[usize],
    indices: &[usize],
    crop: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (Tensor, Vec<usize>) {
    let samples: Vec<Tensor> = indices
        .iter()
        .map(|&i| match crop {
            None => images[i].clone(),
            Some(size) => {
                let s = images[i].shape();
                let oy = rng.random_range(0..=s.h - size);
                let ox = rng.random_range(0..=s.w - size);
                Tensor::from_fn(Shape::new(1, size, size, s.c), |_, y, x, c| {
                    images[i].at(0, y + oy, x + ox, c)
                })
            }
        })
        .collect();
    let batch = Tensor::stack(&samples).expect("batch stack");
    let lab = indices.iter().map(|&i| labels[i]).collect();
    (batch, lab)
}

/// Accuracy over an evaluation split in inference mode, batched.
pub fn evaluate_accuracy(
    model: &mut AnchorModel,
    images: &[Tensor],
    labels: &[usize],
    batch: usize,
) -> Result<f64> {
    let mut hits = 0.0;
    let mut count = 0usize;
    let mut i = 0;
    while i < images.len() {
        let end = (i + batch).min(images.len());
        let x = Tensor::stack(&images[i..end])?;
        let logits = model.logits(&x, EvalMode::Inference)?;
        if !logits.all_finite() {
            return Ok(0.0);
        }
        hits += nn::accuracy(&logits, &labels[i..end]) * (end - i) as f64;
        count += end - i;
        i = end;
    }
    Ok(hits / count.max(1) as f64)
}

/// Train a fresh anchor hosting `g` and evaluate on the given split.
/// Non-finite training loss aborts immediately with accuracy 0.
pub fn train_eval_on(
    spec: &AnchorSpec,
    g: &LayerGraph,
    train_images: &[Tensor],
    train_labels: &[usize],
    eval_images: &[Tensor],
    eval_labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let mut model = AnchorModel::build(spec, g, mix_seed(seed, 1))?;
    let mut opt = OptState::new(
        model.params(),
        cfg.momentum,
        cfg.weight_decay,
        cfg.nesterov,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let indices: Vec<usize> = (0..cfg.batch)
            .map(|_| rng.random_range(0..train_images.len()))
            .collect();
        let (batch, labels) = gather_batch(train_images, train_labels, &indices, cfg.crop, &mut rng);
        let (loss, grads) = model.loss_and_grads(&batch, &labels, EvalMode::Training)?;
        trace.push(loss);
        if !loss.is_finite() {
            return Ok(TrainReport {
                accuracy: 0.0,
                loss_trace: trace,
                steps_run: step + 1,
                non_finite: true,
            });
        }
        let lr = lr_at(cfg.schedule.into(), cfg.lr, step, cfg.steps, cfg.warmup);
        sgd_step(model.params_mut(), &grads, &mut opt, lr);
    }
    let accuracy = evaluate_accuracy(&mut model, eval_images, eval_labels, cfg.batch.max(1))?;
    Ok(TrainReport {
        accuracy,
        loss_trace: trace,
        steps_run: cfg.steps,
        non_finite: false,
    })
}

/// Train on the dataset's training split, evaluate on its validation split.
pub fn train_eval(
    spec: &AnchorSpec,
    g: &LayerGraph,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    train_eval_on(
        spec,
        g,
        &data.train_images,
        &data.train_labels,
        &data.val_images,
        &data.val_labels,
        cfg,
        seed,
    )
}

// ---------------------------------------------------------------------
// Reranking
// ---------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RerankConfig {
    /// Enlarged anchors for the rerank pass.
    pub width_multiplier: f64,
    /// Training-step multiplier relative to the base config.
    pub steps_multiplier: f64,
    pub base: TrainConfig,
    /// Fraction of the training split used for training; the rest is the
    /// held-out evaluation set. The validation split is never read.
    pub train_fraction: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            width_multiplier: 2.0,
            steps_multiplier: 2.0,
            base: TrainConfig::default(),
            train_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RerankResult {
    pub id: u64,
    pub mean_accuracy: f64,
    pub per_anchor: Vec<f64>,
}

/// Retrain candidates on enlarged anchors over 90% of the training split,
/// score on the held-out 10%, and rank by mean accuracy (stable order on
/// ties).
pub fn rerank(
    candidates: &[(u64, LayerGraph)],
    data: &Dataset,
    cfg: &RerankConfig,
    master_seed: u64,
) -> Result<Vec<RerankResult>> {
    let cut = ((data.train_images.len() as f64) * cfg.train_fraction).round() as usize;
    let cut = cut.clamp(1, data.train_images.len().saturating_sub(1));
    let (train_i, held_i) = data.train_images.split_at(cut);
    let (train_l, held_l) = data.train_labels.split_at(cut);
    let mut train_cfg = cfg.base;
    train_cfg.steps = ((cfg.base.steps as f64) * cfg.steps_multiplier).round() as usize;
    let mut results = Vec::with_capacity(candidates.len());
    for (slot, (id, graph)) in candidates.iter().enumerate() {
        let mut per_anchor = Vec::new();
        for (ai, kind) in AnchorKind::all().into_iter().enumerate() {
            let spec = AnchorSpec::with_multiplier(kind, cfg.width_multiplier);
            let report = train_eval_on(
                &spec,
                graph,
                train_i,
                train_l,
                held_i,
                held_l,
                &train_cfg,
                mix_seed(master_seed, (slot * 31 + ai) as u64),
            )?;
            per_anchor.push(report.accuracy);
        }
        let mean = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
        results.push(RerankResult {
            id: *id,
            mean_accuracy: mean,
            per_anchor,
        });
    }
    results.sort_by(|a, b| {
        b.mean_accuracy
            .partial_cmp(&a.mean_accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(results)
}
