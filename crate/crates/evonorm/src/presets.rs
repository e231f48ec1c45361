//! Bundled run settings at two scales.
//!
//! The desk preset keeps the published search hyperparameters (window
//! 2500, 5% tournaments, double mutation, 0.5 replacement noise, 100-step
//! quality filter at threshold 0.2, gradient-norm bound 1e8) on the
//! 16-pixel synthetic task. The micro preset shrinks the proxy further for
//! fast paired search experiments.

use serde::{Deserialize, Serialize};

use crate::evolution::SearchConfig;
use crate::proxy::{AnchorKind, AnchorSpec, DatasetConfig, RerankConfig, TrainConfig};

/// B-series searches are unconstrained and train with a constant schedule;
/// S-series searches exclude batch aggregation and train longer with a
/// cosine schedule, mirroring how the two layer families are meant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Batch,
    Sample,
}

/// Everything one run needs: dataset, search, and rerank settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub mode: Mode,
    pub dataset: DatasetConfig,
    pub dataset_seed: u64,
    pub search: SearchConfig,
    pub rerank: RerankConfig,
}

pub fn desk_anchors() -> Vec<AnchorSpec> {
    AnchorKind::all().into_iter().map(AnchorSpec::new).collect()
}

fn apply_mode(settings: &mut RunSettings) {
    if settings.mode == Mode::Sample {
        settings.search.batch_independent = true;
        settings.search.proxy.schedule = crate::proxy::LrScheduleConfig::Cosine;
        settings.search.proxy.steps *= 2;
    }
    settings.rerank.base = settings.search.proxy;
}

/// Desk scale: 16-pixel images, batch 128, 1000-step proxy training.
pub fn desk(mode: Mode) -> RunSettings {
    let mut search = SearchConfig::desk(desk_anchors());
    search.proxy = TrainConfig::default();
    let mut settings = RunSettings {
        mode,
        // The generator default sigma (0.3) leaves the task separable
        // enough that broken layers clear twice-chance accuracy through
        // anchor skip paths; the run preset raises the noise so the
        // quality filter discriminates.
        dataset: DatasetConfig {
            noise_sigma: 2.0,
            ..DatasetConfig::default()
        },
        dataset_seed: 1,
        search,
        rerank: RerankConfig::default(),
    };
    apply_mode(&mut settings);
    settings
}

/// Micro scale: 10-pixel images under heavy noise, batch 32 with the
/// learning rate scaled linearly to the batch size, 200-step proxy
/// training. The noise keeps good layers below saturation so scores
/// spread out; sized so paired search experiments finish quickly.
pub fn micro(mode: Mode) -> RunSettings {
    let mut search = SearchConfig::desk(desk_anchors());
    search.window_capacity = 256;
    search.proxy = TrainConfig {
        steps: 200,
        batch: 32,
        lr: 0.025,
        ..TrainConfig::default()
    };
    search.quality.batch = 32;
    search.quality.lr = 0.025;
    // The skip-free anchor rejects nearly every random graph at this
    // scale; the residual anchor keeps enough survivors for tournaments
    // to have a population to climb.
    search.quality_anchor = 0;
    let proxy = search.proxy;
    let mut settings = RunSettings {
        mode,
        dataset: DatasetConfig {
            image_size: 10,
            train: 384,
            val: 192,
            noise_sigma: 2.0,
        },
        dataset_seed: 1,
        search,
        rerank: RerankConfig {
            base: proxy,
            ..RerankConfig::default()
        },
    };
    apply_mode(&mut settings);
    settings
}

/// Look up a preset by name.
pub fn by_name(name: &str, mode: Mode) -> crate::Result<RunSettings> {
    match name {
        "desk" => Ok(desk(mode)),
        "micro" => Ok(micro(mode)),
        other => Err(crate::Error::Config(format!(
            "unknown preset `{other}`; valid: desk, micro"
        ))),
    }
}
