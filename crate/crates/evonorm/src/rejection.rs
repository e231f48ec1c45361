//! Candidate rejection filters: a short-training quality test and an
//! adversarial gradient-norm stability test. A layer must pass both to be
//! considered by evolution; the quality test runs first because it is the
//! cheaper of the two at desk scale.

use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::graph::{EvalMode, LayerGraph};
use crate::proxy::{AnchorModel, AnchorSpec, Dataset, TrainConfig};
use crate::seed::mix_seed;
use crate::tape::{finite_diff_hvp, global_l2_norm};
use crate::tensor::Tensor;

/// Short-training accuracy filter. The default threshold is twice the
/// chance rate of the ten-class proxy task.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QualityConfig {
    pub train_steps: usize,
    pub accuracy_threshold: f64,
    pub batch: usize,
    pub lr: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            train_steps: 100,
            accuracy_threshold: 0.2,
            batch: 128,
            lr: 0.1,
        }
    }
}

/// Adversarial ascent on the parameters toward larger gradient norms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StabilityConfig {
    pub max_ascent_steps: usize,
    pub norm_threshold: f64,
    pub step_size: f64,
    pub probe_batch: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            max_ascent_steps: 100,
            norm_threshold: 1e8,
            step_size: 0.1,
            probe_batch: 32,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QualityOutcome {
    pub passed: bool,
    pub accuracy: f64,
    pub non_finite: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StabilityOutcome {
    pub passed: bool,
    /// Maximum gradient norm over the recorded ascent trace.
    pub peak_grad_norm: f64,
    /// First ascent step whose norm exceeded the threshold, if any.
    pub steps_to_blowup: Option<usize>,
    /// Gradient norm per ascent step.
    pub trace: Vec<f64>,
}

/// Combined verdict; `passed` requires both tests.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RejectionVerdict {
    pub passed: bool,
    pub quality: QualityOutcome,
    /// Absent when the quality test already failed.
    pub stability: Option<StabilityOutcome>,
}

/// Train the anchor with the candidate for a few steps and check that
/// validation accuracy clears the threshold. Any non-finite loss fails
/// immediately.
pub fn quality_test(
    g: &LayerGraph,
    anchor: &AnchorSpec,
    data: &Dataset,
    cfg: &QualityConfig,
    seed: u64,
) -> Result<QualityOutcome> {
    let tc = TrainConfig {
        steps: cfg.train_steps,
        batch: cfg.batch,
        lr: cfg.lr,
        ..TrainConfig::default()
    };
    let report = crate::proxy::train_eval(anchor, g, data, &tc, seed)?;
    Ok(QualityOutcome {
        passed: !report.non_finite && report.accuracy >= cfg.accuracy_threshold,
        accuracy: report.accuracy,
        non_finite: report.non_finite,
    })
}

/// Ascend the parameters along the gradient of the gradient norm, up to
/// `max_ascent_steps` times, failing as soon as ‖∇ℓ‖₂ exceeds the
/// threshold or turns non-finite.
///
/// Each step computes u = ∇ℓ, then d = hvp(ℓ, θ, u)/‖u‖ (= ∇‖∇ℓ‖₂) and
/// updates θ ← θ + η·d/‖d‖∞.
pub fn stability_test(
    g: &LayerGraph,
    anchor: &AnchorSpec,
    probe_images: &Tensor,
    probe_labels: &[usize],
    cfg: &StabilityConfig,
    seed: u64,
) -> Result<StabilityOutcome> {
    let mut model = AnchorModel::build(anchor, g, mix_seed(seed, 11))?;
    let mut theta: Vec<Tensor> = model.params().to_vec();
    let mut trace = Vec::with_capacity(cfg.max_ascent_steps);
    let mut peak = 0.0f64;
    for step in 0..cfg.max_ascent_steps {
        let (_, grads) = model.loss_and_grads_at(&theta, probe_images, probe_labels, EvalMode::Training)?;
        let norm = global_l2_norm(&grads);
        trace.push(norm);
        peak = peak.max(norm);
        if !norm.is_finite() || norm > cfg.norm_threshold {
            return Ok(StabilityOutcome {
                passed: false,
                peak_grad_norm: peak,
                steps_to_blowup: Some(step),
                trace,
            });
        }
        if norm == 0.0 {
            // Flat gradient: ascent has nowhere to go; the layer is stable.
            break;
        }
        let direction = finite_diff_hvp(
            |p| {
                model
                    .loss_and_grads_at(p, probe_images, probe_labels, EvalMode::Training)
                    .map(|(_, g)| g)
            },
            &theta,
            &grads,
            None,
        )?;
        // d = H·∇ℓ / ‖∇ℓ‖; any non-finite direction counts as a blowup.
        let mut dinf = 0.0f64;
        let mut finite = true;
        for d in &direction {
            for v in d.data() {
                if !v.is_finite() {
                    finite = false;
                }
                dinf = dinf.max((v / norm).abs());
            }
        }
        if !finite {
            return Ok(StabilityOutcome {
                passed: false,
                peak_grad_norm: peak,
                steps_to_blowup: Some(step),
                trace,
            });
        }
        if dinf == 0.0 {
            break;
        }
        let scale = cfg.step_size / (dinf * norm);
        for (t, d) in theta.iter_mut().zip(&direction) {
            let td = t.data_mut();
            for (a, b) in td.iter_mut().zip(d.data()) {
                *a += scale * b;
            }
        }
    }
    Ok(StabilityOutcome {
        passed: true,
        peak_grad_norm: peak,
        steps_to_blowup: None,
        trace,
    })
}

/// Run quality first, stability only for quality passers. The two tests
/// may probe different anchors: quality wants the anchor that exposes
/// dead layers, stability only needs gradients.
#[allow(clippy::too_many_arguments)]
pub fn reject(
    g: &LayerGraph,
    quality_anchor: &AnchorSpec,
    stability_anchor: &AnchorSpec,
    data: &Dataset,
    quality: &QualityConfig,
    stability: &StabilityConfig,
    seed: u64,
) -> Result<RejectionVerdict> {
    let q = quality_test(g, quality_anchor, data, quality, mix_seed(seed, 21))?;
    if !q.passed {
        return Ok(RejectionVerdict {
            passed: false,
            quality: q,
            stability: None,
        });
    }
    let (probe_images, probe_labels) = data.probe_batch(stability.probe_batch);
    let s = stability_test(
        g,
        stability_anchor,
        &probe_images,
        &probe_labels,
        stability,
        mix_seed(seed, 22),
    )?;
    Ok(RejectionVerdict {
        passed: q.passed && s.passed,
        quality: q,
        stability: Some(s),
    })
}

/// Graphs get a uniform random probe: used by tests and the survey path.
pub fn random_graph_stream(
    master_seed: u64,
    cfg: &crate::graph::GraphGenConfig,
) -> impl Iterator<Item = (u64, LayerGraph)> + '_ {
    let cfg = *cfg;
    (0..u64::MAX).map(move |i| {
        let seed = mix_seed(master_seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Consume one draw so consecutive streams diverge even when the
        // generator config is identical.
        let _: u64 = rng.random();
        (seed, crate::graph::generate_random(&mut rng, &cfg))
    })
}
