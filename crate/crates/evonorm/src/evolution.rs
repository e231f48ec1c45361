//! Regularized tournament evolution over layer graphs with multi-objective
//! winner selection, plus the random-search baseline sharing its pipeline.
//!
//! The controller generates candidates in fixed-size batches; each
//! candidate carries an evaluation seed derived from (master seed, index),
//! so results are identical for any worker count. Offspring come from a
//! tournament winner mutated twice, replaced by a fresh random graph with
//! probability 0.5 to inject exploration noise. Rejected candidates are
//! logged but never enter the population window.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::GraphDoc;
use crate::error::{Error, Result};
use crate::graph::{generate_random, mutate, GraphGenConfig, LayerGraph};
use crate::proxy::{train_eval, AnchorSpec, Dataset, TrainConfig};
use crate::rejection::{reject, QualityConfig, RejectionVerdict, StabilityConfig};
use crate::seed::{mix_seed, mix_seed3};

// ---------------------------------------------------------------------
// Pareto machinery
// ---------------------------------------------------------------------

/// `a` dominates `b` when it is no worse everywhere and better somewhere.
fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Indices of the non-dominated score vectors.
pub fn pareto_front(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    if let Some(first) = scores.first() {
        for s in scores {
            if s.len() != first.len() {
                return Err(Error::ScoreLength {
                    a: first.len(),
                    b: s.len(),
                });
            }
        }
    }
    let mut front = Vec::new();
    'outer: for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if i != j && dominates(sj, si) {
                continue 'outer;
            }
        }
        front.push(i);
    }
    Ok(front)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Pareto,
    Average,
}

// ---------------------------------------------------------------------
// Population
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    RejectedQuality,
    RejectedStability,
    Evaluated,
}

/// One point of the search: a graph plus its verdicts and fitness scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    /// Seed that reproduces rejection and evaluation exactly.
    pub seed: u64,
    pub parent: Option<u64>,
    pub origin: Origin,
    pub status: Status,
    pub graph: GraphDoc,
    pub quality_accuracy: Option<f64>,
    pub peak_grad_norm: Option<f64>,
    pub steps_to_blowup: Option<usize>,
    /// One validation accuracy per anchor, in anchor-list order.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Random,
    Mutation,
}

impl Candidate {
    pub fn layer_graph(&self) -> Result<LayerGraph> {
        crate::codec::from_doc(&self.graph)
    }

    pub fn mean_score(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.scores.iter().sum::<f64>() / self.scores.len() as f64
        }
    }
}

/// Sliding window of the most recent evaluated candidates; eviction is
/// oldest-first.
#[derive(Debug, Clone)]
pub struct Population {
    window: std::collections::VecDeque<Candidate>,
    capacity: usize,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Population {
            window: std::collections::VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn insert(&mut self, c: Candidate) {
        debug_assert_eq!(c.status, Status::Evaluated);
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(c);
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.window.iter()
    }

    pub fn get(&self, i: usize) -> &Candidate {
        &self.window[i]
    }
}

/// Tournament selection: sample ⌈fraction·size⌉ distinct members, then pick
/// by the criterion. Average breaks ties toward the earliest insertion;
/// Pareto draws uniformly from the tournament's non-dominated set.
pub fn select_winner<'p>(
    pop: &'p Population,
    rng: &mut impl Rng,
    criterion: Criterion,
    fraction: f64,
) -> Result<&'p Candidate> {
    if pop.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let size = ((fraction * pop.len() as f64).ceil() as usize).clamp(1, pop.len());
    let mut indices: Vec<usize> = (0..pop.len()).collect();
    indices.shuffle(rng);
    let mut tournament: Vec<usize> = indices[..size].to_vec();
    // Window order equals insertion order; sorting keeps tie-breaking and
    // Pareto draws independent of the shuffle.
    tournament.sort_unstable();
    match criterion {
        Criterion::Average => {
            let mut best = tournament[0];
            for &i in &tournament[1..] {
                if pop.get(i).mean_score() > pop.get(best).mean_score() {
                    best = i;
                }
            }
            Ok(pop.get(best))
        }
        Criterion::Pareto => {
            let scores: Vec<Vec<f64>> = tournament
                .iter()
                .map(|&i| pop.get(i).scores.clone())
                .collect();
            let front = pareto_front(&scores)?;
            let pick = front[rng.random_range(0..front.len())];
            Ok(pop.get(tournament[pick]))
        }
    }
}

// ---------------------------------------------------------------------
// Search configuration and log
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub criterion: Criterion,
    pub tournament_fraction: f64,
    pub mutations_per_offspring: usize,
    pub random_replacement_prob: f64,
    pub window_capacity: usize,
    /// Number of initial attempts that are always random; afterwards
    /// tournaments run whenever the window is non-empty.
    pub bootstrap: usize,
    /// Candidates generated per controller round; fixed so that results
    /// never depend on the worker count.
    pub generation_batch: usize,
    /// Total candidates attempted (rejected ones included).
    pub budget: usize,
    pub batch_independent: bool,
    pub graph: GraphGenConfig,
    pub anchors: Vec<AnchorSpec>,
    /// Anchor index the quality filter trains; the skip-free bottleneck
    /// anchor is the default because residual skips let dead layers ride.
    pub quality_anchor: usize,
    /// Anchor index the stability ascent probes; the cheapest one suffices
    /// to expose exploding gradients.
    pub stability_anchor: usize,
    pub quality: QualityConfig,
    pub stability: StabilityConfig,
    pub proxy: TrainConfig,
    pub seed: u64,
    pub workers: usize,
}

impl SearchConfig {
    /// Desk-scale defaults: the published evolution hyperparameters with
    /// the desk proxy task.
    pub fn desk(anchors: Vec<AnchorSpec>) -> Self {
        SearchConfig {
            criterion: Criterion::Pareto,
            tournament_fraction: 0.05,
            mutations_per_offspring: 2,
            random_replacement_prob: 0.5,
            window_capacity: 2500,
            bootstrap: 20,
            generation_batch: 16,
            budget: 300,
            batch_independent: false,
            graph: GraphGenConfig::default(),
            anchors,
            quality_anchor: 1,
            stability_anchor: 0,
            quality: QualityConfig::default(),
            stability: StabilityConfig::default(),
            proxy: TrainConfig::default(),
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::Config("at least one anchor is required".into()));
        }
        if self.quality_anchor >= self.anchors.len() || self.stability_anchor >= self.anchors.len() {
            return Err(Error::Config("rejection anchor index out of range".into()));
        }
        if !(0.0 < self.tournament_fraction && self.tournament_fraction <= 1.0) {
            return Err(Error::Config(
                "tournament fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.random_replacement_prob) {
            return Err(Error::Config(
                "replacement probability must lie in [0, 1]".into(),
            ));
        }
        if self.generation_batch == 0 || self.window_capacity == 0 {
            return Err(Error::Config(
                "generation batch and window capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-generation progress row: best and top-10-mean score per anchor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgressRow {
    pub attempted: usize,
    pub survivors: usize,
    pub best: Vec<f64>,
    pub top10_mean: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchLog {
    pub candidates: Vec<Candidate>,
    pub progress: Vec<ProgressRow>,
    pub attempted: usize,
    pub survivors: usize,
}

impl SearchLog {
    /// Top-k surviving candidates by mean score, stable order.
    pub fn top_by_mean(&self, k: usize) -> Vec<&Candidate> {
        let mut survivors: Vec<&Candidate> = self
            .candidates
            .iter()
            .filter(|c| c.status == Status::Evaluated)
            .collect();
        survivors.sort_by(|a, b| {
            b.mean_score()
                .partial_cmp(&a.mean_score())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        survivors.truncate(k);
        survivors
    }
}

// ---------------------------------------------------------------------
// The search loop
// ---------------------------------------------------------------------

struct CandidateSpec {
    id: u64,
    seed: u64,
    parent: Option<u64>,
    origin: Origin,
    graph: LayerGraph,
}

/// Evaluate one candidate: rejection filters, then proxy training on every
/// anchor. Fully determined by (graph, seed, config).
pub fn evaluate_candidate(
    graph: &LayerGraph,
    seed: u64,
    cfg: &SearchConfig,
    data: &Dataset,
) -> Result<(RejectionVerdict, Vec<f64>)> {
    let verdict = reject(
        graph,
        &cfg.anchors[cfg.quality_anchor],
        &cfg.anchors[cfg.stability_anchor],
        data,
        &cfg.quality,
        &cfg.stability,
        mix_seed(seed, 101),
    )?;
    if !verdict.passed {
        return Ok((verdict, Vec::new()));
    }
    let mut scores = Vec::with_capacity(cfg.anchors.len());
    for (ai, anchor) in cfg.anchors.iter().enumerate() {
        let report = train_eval(
            anchor,
            graph,
            data,
            &cfg.proxy,
            mix_seed3(seed, 7, ai as u64),
        )?;
        scores.push(if report.non_finite { 0.0 } else { report.accuracy });
    }
    Ok((verdict, scores))
}

fn candidate_from(
    spec: &CandidateSpec,
    verdict: &RejectionVerdict,
    scores: Vec<f64>,
) -> Candidate {
    let status = if verdict.passed {
        Status::Evaluated
    } else if verdict.stability.is_some() {
        Status::RejectedStability
    } else {
        Status::RejectedQuality
    };
    let sanitize = |v: f64| if v.is_finite() { Some(v) } else { None };
    Candidate {
        id: spec.id,
        seed: spec.seed,
        parent: spec.parent,
        origin: spec.origin,
        status,
        graph: crate::codec::to_doc(&spec.graph),
        quality_accuracy: sanitize(verdict.quality.accuracy),
        peak_grad_norm: verdict
            .stability
            .as_ref()
            .and_then(|s| sanitize(s.peak_grad_norm)),
        steps_to_blowup: verdict.stability.as_ref().and_then(|s| s.steps_to_blowup),
        scores,
    }
}

fn run_search(cfg: &SearchConfig, data: &Dataset, always_random: bool) -> Result<SearchLog> {
    cfg.validate()?;
    let gen_cfg = GraphGenConfig {
        batch_independent: cfg.batch_independent,
        ..cfg.graph
    };
    let mut controller_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xC0));
    let mut window = Population::new(cfg.window_capacity);
    let mut log = SearchLog {
        candidates: Vec::with_capacity(cfg.budget),
        progress: Vec::new(),
        attempted: 0,
        survivors: 0,
    };
    let pool = crate::parallel::pool(cfg.workers);
    let mut next_id: u64 = 0;
    while log.attempted < cfg.budget {
        let batch_n = cfg.generation_batch.min(cfg.budget - log.attempted);
        let mut specs = Vec::with_capacity(batch_n);
        for _ in 0..batch_n {
            let id = next_id;
            next_id += 1;
            let seed = mix_seed3(cfg.seed, id, 0xE7A1);
            let mut birth_rng = ChaCha8Rng::seed_from_u64(mix_seed3(cfg.seed, id, 0xB1));
            let (graph, parent, origin) = if always_random || id < cfg.bootstrap as u64 || window.is_empty() {
                (generate_random(&mut birth_rng, &gen_cfg), None, Origin::Random)
            } else if birth_rng.random_bool(cfg.random_replacement_prob) {
                (generate_random(&mut birth_rng, &gen_cfg), None, Origin::Random)
            } else {
                let winner = select_winner(
                    &window,
                    &mut controller_rng,
                    cfg.criterion,
                    cfg.tournament_fraction,
                )?;
                let mut child = winner.layer_graph()?;
                for _ in 0..cfg.mutations_per_offspring {
                    child = mutate(&child, &mut birth_rng, &gen_cfg);
                }
                (child, Some(winner.id), Origin::Mutation)
            };
            specs.push(CandidateSpec {
                id,
                seed,
                parent,
                origin,
                graph,
            });
        }
        let results: Vec<Result<(RejectionVerdict, Vec<f64>)>> = pool.install(|| {
            use rayon::prelude::*;
            specs
                .par_iter()
                .map(|spec| evaluate_candidate(&spec.graph, spec.seed, cfg, data))
                .collect()
        });
        for (spec, result) in specs.iter().zip(results) {
            let (verdict, scores) = result?;
            let cand = candidate_from(spec, &verdict, scores);
            log.attempted += 1;
            if cand.status == Status::Evaluated {
                log.survivors += 1;
                window.insert(cand.clone());
            }
            log.candidates.push(cand);
        }
        log.progress.push(progress_row(&window, &log, cfg));
    }
    Ok(log)
}

fn progress_row(window: &Population, log: &SearchLog, cfg: &SearchConfig) -> ProgressRow {
    let anchors = cfg.anchors.len();
    let mut best = vec![0.0f64; anchors];
    let mut top10 = vec![0.0f64; anchors];
    for a in 0..anchors {
        let mut scores: Vec<f64> = window.iter().map(|c| c.scores[a]).collect();
        scores.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
        best[a] = scores.first().copied().unwrap_or(0.0);
        let k = scores.len().min(10);
        top10[a] = if k == 0 {
            0.0
        } else {
            scores[..k].iter().sum::<f64>() / k as f64
        };
    }
    ProgressRow {
        attempted: log.attempted,
        survivors: log.survivors,
        best,
        top10_mean: top10,
    }
}

/// Tournament evolution under the configured budget.
pub fn evolve(cfg: &SearchConfig, data: &Dataset) -> Result<SearchLog> {
    run_search(cfg, data, false)
}

/// Random-search baseline: identical pipeline, every candidate random.
pub fn random_search(cfg: &SearchConfig, data: &Dataset) -> Result<SearchLog> {
    run_search(cfg, data, true)
}
