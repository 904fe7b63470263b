//! Versioned run reports and their JSON and text renderings.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use mise_core::data::CorpusSummary;
use mise_core::meta::{AdaptStep, GradSuite, ModelKind, Snapshot};
use mise_core::metrics::{Aggregate, EvalSuite, ForgetReport, Prf};
use mise_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

pub const REPORT_SCHEMA: &str = "mise-lab/report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format `{other}` (expected json or text)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub steps: usize,
    pub params: usize,
    pub corpus: CorpusSummary,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub episode_seed: u64,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub trace: Vec<AdaptStep>,
    /// Query scores of the starting model.
    pub before: Prf,
    /// Query scores after adaptation.
    pub after: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub temperature: f64,
    pub mean: Aggregate,
    pub std: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub k: usize,
    pub lambdas: Vec<f64>,
    pub temperatures: Vec<f64>,
    /// Row-major over `lambdas`, then `temperatures`.
    pub cells: Vec<SweepCell>,
    /// The cell with the highest mean F1; ties go to the earlier cell.
    pub best: usize,
}

impl SweepReport {
    pub fn new(k: usize, lambdas: Vec<f64>, temperatures: Vec<f64>, cells: Vec<SweepCell>) -> Self {
        let best = cells
            .iter()
            .enumerate()
            .fold(0, |b, (i, c)| if c.mean.f1 > cells[b].mean.f1 { i } else { b });
        SweepReport {
            k,
            lambdas,
            temperatures,
            cells,
            best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
pub enum Outcome {
    Train(TrainSummary),
    Adapt(AdaptSummary),
    Eval(EvalSuite),
    Forget(ForgetReport),
    Sweep(SweepReport),
    Gradcheck(GradSuite),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub config: RunConfig,
    pub result: Outcome,
}

impl Report {
    pub fn new(command: &str, config: RunConfig, result: Outcome) -> Self {
        Report {
            schema: REPORT_SCHEMA.into(),
            command: command.into(),
            config,
            result,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Report, CliError> {
        let r: Report = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(CliError::data(format!("unsupported report schema `{}`", r.schema)));
        }
        Ok(r)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("mise-lab {}\n\n", self.command);
        out.push_str(&match &self.result {
            Outcome::Train(t) => train_text(t),
            Outcome::Adapt(a) => adapt_text(a),
            Outcome::Eval(e) => e.render_text(),
            Outcome::Forget(f) => f.render_text(),
            Outcome::Sweep(s) => sweep_text(s),
            Outcome::Gradcheck(g) => gradcheck_text(g),
        });
        out.push_str("\nconfig\n");
        let mut lines = Vec::new();
        flatten("", &serde_json::to_value(&self.config).expect("config serializes"), &mut lines);
        for (k, v) in lines {
            writeln!(out, "  {k} = {v}").ok();
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Text => self.to_text(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push((prefix.into(), s.clone())),
        other => out.push((prefix.into(), other.to_string())),
    }
}

fn train_text(t: &TrainSummary) -> String {
    let mut out = String::new();
    writeln!(out, "{:?} model, {} parameters, {} steps", t.kind, t.params, t.steps).ok();
    writeln!(out, "{} posts, {} spans", t.corpus.posts, t.corpus.span_count).ok();
    if !t.snapshots.is_empty() {
        writeln!(out, "{:>7}  {:>10}", "step", "val loss").ok();
        for s in &t.snapshots {
            writeln!(out, "{:>7}  {:>10.4}", s.step, s.val_loss).ok();
        }
    }
    out
}

fn adapt_text(a: &AdaptSummary) -> String {
    let mut out = String::new();
    writeln!(out, "{:>5}  {:>9}  {:>9}  {:>9}", "step", "CRF", "KI", "total").ok();
    for (i, s) in a.trace.iter().enumerate() {
        writeln!(out, "{:>5}  {:>9.4}  {:>9.4}  {:>9.4}", i, s.crf, s.ki, s.total).ok();
    }
    writeln!(
        out,
        "query F1 {:.4} -> {:.4} (P {:.4}, R {:.4})",
        a.before.f1, a.after.f1, a.after.precision, a.after.recall
    )
    .ok();
    out
}

fn sweep_text(s: &SweepReport) -> String {
    let mut out = String::new();
    writeln!(out, "mean query F1 at K={}", s.k).ok();
    write!(out, "{:>6}", "λ \\ t").ok();
    for t in &s.temperatures {
        write!(out, "  {t:>7}").ok();
    }
    out.push('\n');
    for (row, l) in s.cells.chunks(s.temperatures.len().max(1)).zip(&s.lambdas) {
        write!(out, "{l:>6}").ok();
        for c in row {
            write!(out, "  {:>7.4}", c.mean.f1).ok();
        }
        out.push('\n');
    }
    if let Some(b) = s.cells.get(s.best) {
        writeln!(out, "best: λ={} t={} F1={:.4}", b.lambda, b.temperature, b.mean.f1).ok();
    }
    out
}

fn gradcheck_text(g: &GradSuite) -> String {
    let mut out = String::new();
    writeln!(out, "{:>20}  {:>6}  {:>10}  {:>10}  {:>10}", "seed", "params", "nll", "ki", "total").ok();
    for r in &g.rows {
        writeln!(
            out,
            "{:>20}  {:>6}  {:>10.2e}  {:>10.2e}  {:>10.2e}",
            r.seed, r.params, r.nll, r.ki, r.total
        )
        .ok();
    }
    writeln!(out, "max relative error {:.3e}", g.max_rel_error).ok();
    out
}

/// Writes `text` to `path`, or to standard output when there is none.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            Error::Io {
                path: p.into(),
                source: e,
            }
            .into()
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::data(format!("writing to standard output: {e}")))
        }
    }
}

/// Renders `report` in `format` and writes it to `path` or standard output.
pub fn write_report(report: &Report, path: Option<&Path>, format: ReportFormat) -> Result<(), CliError> {
    emit(&report.render(format), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Flags;
    use mise_core::metrics::{EvalConfig, EvalReport, EpisodeResult};

    fn prf(f1: f64) -> Prf {
        Prf {
            precision: f1,
            recall: f1,
            f1,
            undefined_precision: false,
            undefined_recall: false,
        }
    }

    fn eval_report() -> Report {
        let config = RunConfig::resolve(Flags::default(), None, true).unwrap();
        let runs = [3, 5, 10]
            .iter()
            .map(|&k| {
                let episodes = vec![
                    EpisodeResult {
                        episode: 0,
                        seed: 11,
                        support: vec![1, 2],
                        query: vec![3],
                        scores: prf(0.1 * k as f64 / 3.0),
                    },
                    EpisodeResult {
                        episode: 1,
                        seed: 12,
                        support: vec![4, 5],
                        query: vec![6],
                        scores: prf(0.7),
                    },
                ];
                let mean = Aggregate {
                    precision: 0.5,
                    recall: 0.5,
                    f1: 0.5,
                };
                EvalReport {
                    k,
                    config: EvalConfig::default(),
                    episodes,
                    mean,
                    std: mean,
                    flags: vec![],
                }
            })
            .collect();
        Report::new("eval", config, Outcome::Eval(EvalSuite::new("fixture", runs)))
    }

    #[test]
    fn same_report_writes_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = eval_report();
        for format in [ReportFormat::Json, ReportFormat::Text] {
            let a = dir.path().join("a");
            let b = dir.path().join("b");
            write_report(&r, Some(&a), format).unwrap();
            write_report(&r.clone(), Some(&b), format).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }

    #[test]
    fn json_parses_back_to_the_same_report() {
        let r = eval_report();
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
        let sweep = Report::new(
            "sweep",
            r.config.clone(),
            Outcome::Sweep(SweepReport::new(
                5,
                vec![0.1],
                vec![1.0, 3.0],
                vec![
                    SweepCell {
                        lambda: 0.1,
                        temperature: 1.0,
                        mean: Aggregate {
                            precision: 0.1,
                            recall: 0.2,
                            f1: 1.0 / 3.0,
                        },
                        std: Aggregate {
                            precision: 0.0,
                            recall: 0.0,
                            f1: 0.0,
                        },
                    };
                    2
                ],
            )),
        );
        assert_eq!(Report::from_json(&sweep.to_json()).unwrap(), sweep);
    }

    #[test]
    fn text_renders_a_shot_by_score_grid() {
        let text = eval_report().to_text();
        let header = text.lines().find(|l| l.contains("Precision")).unwrap();
        assert!(header.contains("Recall") && header.contains("F1"));
        for k in ["   3 ", "   5 ", "  10 "] {
            assert!(text.lines().any(|l| l.starts_with(k)), "row {k} missing:\n{text}");
        }
        assert!(text.contains("train.lambda = 0.2"));
    }

    #[test]
    fn other_schemas_are_refused() {
        let json = eval_report().to_json().replace(REPORT_SCHEMA, "mise-lab/report/v0");
        assert!(Report::from_json(&json).is_err());
    }

    #[test]
    fn best_sweep_cell_is_the_first_maximum() {
        let cell = |f1| SweepCell {
            lambda: 0.0,
            temperature: 1.0,
            mean: Aggregate {
                precision: f1,
                recall: f1,
                f1,
            },
            std: Aggregate {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            },
        };
        let s = SweepReport::new(5, vec![], vec![], vec![cell(0.2), cell(0.5), cell(0.5), cell(0.1)]);
        assert_eq!(s.best, 1);
    }
}
