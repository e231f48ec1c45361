//! Batch-style command line for layer search: evolution and random-search
//! runs, random-layer surveys, single-layer evaluation and stress tests,
//! top-K reranking, zoo inspection, and the gradient verification suite.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use evonorm::evolution::{evolve, random_search, Criterion, SearchLog};
use evonorm::presets::{self, Mode, RunSettings};
use evonorm::proxy::{make_dataset, train_eval, AnchorKind, AnchorSpec, Dataset};
use evonorm::rejection::{random_graph_stream, stability_test};
use evonorm::render::render_expression;
use evonorm::zoo;

#[derive(Parser)]
#[command(
    name = "evonorm",
    about = "Search engine for normalization-activation layers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Knobs shared by every run-style subcommand. Defaults follow the search
/// method where it states them (window 2500, 5% tournaments, quality
/// threshold 0.2, gradient-norm bound 1e8) and desk-scale values otherwise.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Settings preset: `desk` or `micro` (desk-scale values)
    #[arg(long, default_value = "desk")]
    preset: String,
    /// `batch` searches freely; `sample` excludes batch aggregation and
    /// trains with the cosine schedule (method default)
    #[arg(long, default_value = "batch")]
    mode: String,
    /// JSON settings file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for the whole run
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (env EVONORM_WORKERS, desk default 1)
    #[arg(long)]
    workers: Option<usize>,
    /// Group count for grouped aggregation ops (desk default 8)
    #[arg(long)]
    groups: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SearchTuning {
    /// Candidates attempted, rejected ones included
    #[arg(long)]
    budget: Option<usize>,
    /// Tournament winner rule: `pareto` (method default) or `average`
    #[arg(long)]
    criterion: Option<String>,
    /// Sliding-window capacity (method default 2500)
    #[arg(long)]
    window: Option<usize>,
    /// Tournament fraction of the window (method default 0.05)
    #[arg(long)]
    tournament_fraction: Option<f64>,
    /// Probability of replacing an offspring with a fresh random graph
    /// (method default 0.5)
    #[arg(long)]
    replacement_prob: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run tournament evolution; writes candidates.jsonl, progress.csv,
    /// rejections.csv and top10.json
    Search {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        tuning: SearchTuning,
    },
    /// Random-search baseline with the identical pipeline and outputs
    RandomSearch {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        tuning: SearchTuning,
    },
    /// Fully train N random layers on every anchor and write per-anchor
    /// accuracy histograms
    Survey {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random layers
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Override proxy training steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train one layer on one anchor and print the report
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Zoo name or a graph JSON file path
        #[arg(long)]
        layer: String,
        /// anchor_r, anchor_m or anchor_e
        #[arg(long, default_value = "anchor_r")]
        anchor: String,
        /// Override proxy training steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the gradient-norm stress test on one layer and write its trace
    Stress {
        #[command(flatten)]
        common: CommonArgs,
        /// Zoo name or a graph JSON file path
        #[arg(long)]
        layer: String,
    },
    /// Rerank the top candidates of a finished search on enlarged anchors
    Rank {
        #[command(flatten)]
        common: CommonArgs,
        /// candidates.jsonl from a search run
        #[arg(long = "in")]
        input: PathBuf,
        /// How many top candidates to rerank
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Inspect the layer zoo
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Run the finite-difference gradient verification suite
    Gradcheck,
}

#[derive(Subcommand)]
enum ZooAction {
    /// List all zoo layer names
    List,
    /// Print a layer's rendered expression
    Show { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Config-class failures (bad names, bad flags, malformed inputs) exit 2;
/// anything else is an internal error and exits 1.
fn is_config_error(e: &anyhow::Error) -> bool {
    if let Some(ev) = e.downcast_ref::<evonorm::Error>() {
        return matches!(
            ev,
            evonorm::Error::Config(_)
                | evonorm::Error::UnknownZoo { .. }
                | evonorm::Error::Parse(_)
        );
    }
    false
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search { common, tuning } => run_search(&common, &tuning, false),
        Command::RandomSearch { common, tuning } => run_search(&common, &tuning, true),
        Command::Survey { common, n, steps } => run_survey(&common, n, steps),
        Command::Eval {
            common,
            layer,
            anchor,
            steps,
        } => run_eval(&common, &layer, &anchor, steps),
        Command::Stress { common, layer } => run_stress(&common, &layer),
        Command::Rank { common, input, k } => run_rank(&common, &input, k),
        Command::Zoo { action } => run_zoo(action),
        Command::Gradcheck => run_gradcheck(),
    }
}

fn parse_mode(name: &str) -> Result<Mode> {
    match name {
        "batch" => Ok(Mode::Batch),
        "sample" => Ok(Mode::Sample),
        other => Err(anyhow::Error::new(evonorm::Error::Config(format!(
            "unknown mode `{other}`; valid: batch, sample"
        )))),
    }
}

/// Resolve settings: preset, then config file, then flags, in that order.
fn resolve_settings(common: &CommonArgs) -> Result<RunSettings> {
    let mode = parse_mode(&common.mode)?;
    let mut settings = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunSettings>(&text).map_err(|e| {
                anyhow::Error::new(evonorm::Error::Parse(format!(
                    "{}: {e}",
                    path.display()
                )))
            })?
        }
        None => presets::by_name(&common.preset, mode)?,
    };
    if common.config.is_none() {
        settings.mode = mode;
    }
    settings.search.seed = common.seed;
    if let Some(g) = common.groups {
        settings.search.graph.groups = g;
    }
    let workers = common
        .workers
        .or_else(|| {
            std::env::var("EVONORM_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    settings.search.workers = workers.max(1);
    Ok(settings)
}

fn apply_tuning(settings: &mut RunSettings, tuning: &SearchTuning) -> Result<()> {
    if let Some(b) = tuning.budget {
        settings.search.budget = b;
    }
    if let Some(c) = &tuning.criterion {
        settings.search.criterion = match c.as_str() {
            "pareto" => Criterion::Pareto,
            "average" => Criterion::Average,
            other => {
                return Err(anyhow::Error::new(evonorm::Error::Config(format!(
                    "unknown criterion `{other}`; valid: pareto, average"
                ))))
            }
        };
    }
    if let Some(w) = tuning.window {
        settings.search.window_capacity = w;
    }
    if let Some(f) = tuning.tournament_fraction {
        settings.search.tournament_fraction = f;
    }
    if let Some(p) = tuning.replacement_prob {
        settings.search.random_replacement_prob = p;
    }
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, settings: &RunSettings) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "build": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "dataset_seed": settings.dataset_seed,
        "settings": settings,
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn load_layer(spec: &str, groups: usize) -> Result<evonorm::graph::LayerGraph> {
    if spec.ends_with(".json") || Path::new(spec).exists() {
        let text = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        return Ok(evonorm::codec::deserialize(&text)?);
    }
    Ok(zoo::get_with_groups(spec, groups)?.graph)
}

fn dataset_for(settings: &RunSettings) -> Dataset {
    make_dataset(settings.dataset_seed, &settings.dataset)
}

fn run_search(common: &CommonArgs, tuning: &SearchTuning, random: bool) -> Result<()> {
    let mut settings = resolve_settings(common)?;
    apply_tuning(&mut settings, tuning)?;
    std::fs::create_dir_all(&common.out)?;
    let command = if random { "random-search" } else { "search" };
    write_manifest(&common.out, command, &settings)?;
    let data = dataset_for(&settings);
    let log: SearchLog = if random {
        random_search(&settings.search, &data)?
    } else {
        evolve(&settings.search, &data)?
    };
    output::write_candidates_jsonl(&common.out.join("candidates.jsonl"), &log)?;
    output::write_progress_csv(&common.out.join("progress.csv"), &log, &settings.search.anchors)?;
    output::write_rejections_csv(&common.out.join("rejections.csv"), &log)?;
    output::write_top10_json(&common.out.join("top10.json"), &log)?;
    println!(
        "{command}: attempted {}, survivors {}, best mean score {:.4}",
        log.attempted,
        log.survivors,
        log.top_by_mean(1)
            .first()
            .map_or(0.0, |c| c.mean_score())
    );
    Ok(())
}

fn run_survey(common: &CommonArgs, n: usize, steps: Option<usize>) -> Result<()> {
    let mut settings = resolve_settings(common)?;
    if let Some(s) = steps {
        settings.search.proxy.steps = s;
    }
    std::fs::create_dir_all(&common.out)?;
    write_manifest(&common.out, "survey", &settings)?;
    let data = dataset_for(&settings);
    let gen_cfg = evonorm::graph::GraphGenConfig {
        batch_independent: settings.search.batch_independent,
        ..settings.search.graph
    };
    let graphs: Vec<_> = random_graph_stream(settings.search.seed, &gen_cfg)
        .take(n)
        .collect();
    let pool = evonorm::parallel::pool(settings.search.workers);
    let anchors = settings.search.anchors.clone();
    let proxy = settings.search.proxy;
    let results: Vec<Vec<f64>> = pool.install(|| {
        use rayon::prelude::*;
        graphs
            .par_iter()
            .map(|(seed, g)| {
                anchors
                    .iter()
                    .map(|a| {
                        train_eval(a, g, &data, &proxy, *seed)
                            .map(|r| if r.non_finite { 0.0 } else { r.accuracy })
                            .unwrap_or(0.0)
                    })
                    .collect()
            })
            .collect()
    });
    for (ai, anchor) in anchors.iter().enumerate() {
        let accs: Vec<f64> = results.iter().map(|r| r[ai]).collect();
        output::write_histogram_csv(
            &common
                .out
                .join(format!("survey_hist_{}.csv", anchor.kind.name())),
            &accs,
        )?;
        let mut sorted = accs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        println!(
            "{}: median accuracy {:.4}, best {:.4}",
            anchor.kind.name(),
            median,
            sorted.last().copied().unwrap_or(0.0)
        );
    }
    // Cross-anchor disagreement at the quality threshold.
    let thr = settings.search.quality.accuracy_threshold;
    let disagreements = results
        .iter()
        .filter(|r| {
            let pass: Vec<bool> = r.iter().map(|&a| a >= thr).collect();
            pass.iter().any(|&p| p) && !pass.iter().all(|&p| p)
        })
        .count();
    println!("layers with mixed pass/fail across anchors at threshold {thr}: {disagreements}/{n}");
    Ok(())
}

fn run_eval(common: &CommonArgs, layer: &str, anchor: &str, steps: Option<usize>) -> Result<()> {
    let mut settings = resolve_settings(common)?;
    if let Some(s) = steps {
        settings.search.proxy.steps = s;
    }
    let graph = load_layer(layer, settings.search.graph.groups)?;
    let kind = AnchorKind::parse(anchor)?;
    let data = dataset_for(&settings);
    let report = train_eval(
        &AnchorSpec::new(kind),
        &graph,
        &data,
        &settings.search.proxy,
        settings.search.seed,
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "layer": layer,
            "expression": render_expression(&graph),
            "anchor": kind.name(),
            "steps": report.steps_run,
            "validation_accuracy": report.accuracy,
            "non_finite": report.non_finite,
            "final_loss": report.loss_trace.last(),
        }))?
    );
    Ok(())
}

fn run_stress(common: &CommonArgs, layer: &str) -> Result<()> {
    let settings = resolve_settings(common)?;
    let graph = load_layer(layer, settings.search.graph.groups)?;
    std::fs::create_dir_all(&common.out)?;
    write_manifest(&common.out, "stress", &settings)?;
    let data = dataset_for(&settings);
    let (probe, labels) = data.probe_batch(settings.search.stability.probe_batch);
    let rejection_anchor = settings.search.anchors[settings.search.stability_anchor];
    let out = stability_test(
        &graph,
        &rejection_anchor,
        &probe,
        &labels,
        &settings.search.stability,
        settings.search.seed,
    )?;
    output::write_stress_trace_csv(&common.out.join("stress_trace.csv"), &out.trace)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "layer": layer,
            "passed": out.passed,
            "peak_grad_norm": if out.peak_grad_norm.is_finite() { Some(out.peak_grad_norm) } else { None },
            "steps_to_blowup": out.steps_to_blowup,
            "ascent_steps_run": out.trace.len(),
        }))?
    );
    Ok(())
}

fn run_rank(common: &CommonArgs, input: &Path, k: usize) -> Result<()> {
    let settings = resolve_settings(common)?;
    std::fs::create_dir_all(&common.out)?;
    write_manifest(&common.out, "rank", &settings)?;
    let candidates = output::read_candidates_jsonl(input)?;
    let log = SearchLog {
        candidates,
        progress: Vec::new(),
        attempted: 0,
        survivors: 0,
    };
    let top: Vec<(u64, evonorm::graph::LayerGraph)> = log
        .top_by_mean(k)
        .into_iter()
        .map(|c| c.layer_graph().map(|g| (c.id, g)))
        .collect::<evonorm::Result<_>>()?;
    if top.is_empty() {
        return Err(anyhow::Error::new(evonorm::Error::Config(
            "no evaluated candidates to rerank".into(),
        )));
    }
    let data = dataset_for(&settings);
    let results = evonorm::proxy::rerank(&top, &data, &settings.rerank, settings.search.seed)?;
    let by_id: std::collections::BTreeMap<u64, &evonorm::evolution::Candidate> =
        log.candidates.iter().map(|c| (c.id, c)).collect();
    let doc: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            let cand = by_id.get(&r.id);
            serde_json::json!({
                "id": r.id,
                "rerank_mean_accuracy": r.mean_accuracy,
                "rerank_per_anchor": r.per_anchor,
                "proxy_scores": cand.map(|c| c.scores.clone()),
                "expression": cand.and_then(|c| c.layer_graph().ok()).map(|g| render_expression(&g)),
                "graph": cand.map(|c| c.graph.clone()),
            })
        })
        .collect();
    std::fs::write(
        common.out.join("top10.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;
    for r in &results {
        println!("{}: mean {:.4} {:?}", r.id, r.mean_accuracy, r.per_anchor);
    }
    Ok(())
}

fn run_zoo(action: ZooAction) -> Result<()> {
    match action {
        ZooAction::List => {
            for name in zoo::names() {
                println!("{name}");
            }
        }
        ZooAction::Show { name } => {
            let entry = zoo::get(&name)?;
            println!("{}", render_expression(&entry.graph));
        }
    }
    Ok(())
}

fn run_gradcheck() -> Result<()> {
    let reports = evonorm::gradcheck::check_all_zoo_layers()?;
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:24} rel_err {:>12.3e}  clearance {:>9.3e}  seed {:>6}  {status}",
            r.name, r.max_rel_err, r.clearance, r.seed
        );
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(anyhow!("{failed} layer gradient checks failed"));
    }
    println!("all {} layer gradient checks passed", reports.len());
    Ok(())
}
