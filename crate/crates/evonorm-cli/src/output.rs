//! File writers for search logs, surveys and stress traces. Everything is
//! plain JSON/CSV shaped for external plotting; field order is fixed so
//! identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use evonorm::evolution::{Candidate, SearchLog};
use evonorm::proxy::AnchorSpec;
use evonorm::render::render_expression;

pub fn write_candidates_jsonl(path: &Path, log: &SearchLog) -> Result<()> {
    let mut body = String::new();
    for cand in &log.candidates {
        body.push_str(&serde_json::to_string(cand)?);
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn read_candidates_jsonl(path: &Path) -> Result<Vec<Candidate>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cand: Candidate = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad candidate record", path.display(), i + 1))?;
        out.push(cand);
    }
    Ok(out)
}

pub fn write_progress_csv(path: &Path, log: &SearchLog, anchors: &[AnchorSpec]) -> Result<()> {
    let mut body = String::from("attempted,survivors");
    for a in anchors {
        write!(body, ",best_{}", a.kind.name())?;
    }
    for a in anchors {
        write!(body, ",top10_mean_{}", a.kind.name())?;
    }
    body.push('\n');
    for row in &log.progress {
        write!(body, "{},{}", row.attempted, row.survivors)?;
        for v in &row.best {
            write!(body, ",{v}")?;
        }
        for v in &row.top10_mean {
            write!(body, ",{v}")?;
        }
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_rejections_csv(path: &Path, log: &SearchLog) -> Result<()> {
    let mut body = String::from("id,quality_acc,peak_norm,steps_to_blowup,passed\n");
    for c in &log.candidates {
        let passed = c.status == evonorm::evolution::Status::Evaluated;
        write!(
            body,
            "{},{},{},{},{}\n",
            c.id,
            c.quality_accuracy.map_or(String::from("nan"), |v| v.to_string()),
            c.peak_grad_norm.map_or(String::new(), |v| v.to_string()),
            c.steps_to_blowup.map_or(String::new(), |v| v.to_string()),
            passed
        )?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_top10_json(path: &Path, log: &SearchLog) -> Result<()> {
    let top: Vec<serde_json::Value> = log
        .top_by_mean(10)
        .into_iter()
        .map(|c| {
            let expr = c
                .layer_graph()
                .map(|g| render_expression(&g))
                .unwrap_or_else(|_| String::from("<invalid>"));
            serde_json::json!({
                "id": c.id,
                "seed": c.seed,
                "mean_score": c.mean_score(),
                "scores": c.scores,
                "expression": expr,
                "graph": c.graph,
            })
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&top)?)
        .with_context(|| format!("writing {}", path.display()))
}

/// 20-bin accuracy histogram in [0, 1].
pub fn write_histogram_csv(path: &Path, accuracies: &[f64]) -> Result<()> {
    let bins = 20usize;
    let mut counts = vec![0usize; bins];
    for &a in accuracies {
        let b = ((a * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut body = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        writeln!(
            body,
            "{},{},{}",
            i as f64 / bins as f64,
            (i + 1) as f64 / bins as f64,
            c
        )?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_stress_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut body = String::from("step,grad_norm\n");
    for (i, v) in trace.iter().enumerate() {
        writeln!(body, "{i},{v}")?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}
