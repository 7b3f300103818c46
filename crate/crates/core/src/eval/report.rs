//! The results matrix and its JSON, Markdown and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{relative_improvement, Confusion};
use super::{EvalError, Result, System, Task};
use crate::corpus::{Scenario, TrainedOn};

pub const REPORT_SCHEMA: u32 = 1;

/// One headline number: WER % for ASR, accuracy % for SER, pooled over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub architecture: System,
    pub trained_on: TrainedOn,
    pub task: Task,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelImp {
    pub scenario: Scenario,
    pub trained_on: TrainedOn,
    pub task: Task,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub scenario: Scenario,
    pub architecture: System,
    pub trained_on: TrainedOn,
    /// Rows: true class, columns: prediction (neutral, happy, sad, angry).
    pub matrix: Confusion,
}

/// Single-fold score, kept for diagnostics only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_speaker: String,
    pub scenario: Scenario,
    pub architecture: System,
    pub trained_on: TrainedOn,
    pub task: Task,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    #[serde(default)]
    pub config_hash: Option<String>,
    /// Held-out speaker of each fold, in fold order.
    pub folds: Vec<String>,
    pub n_utterances: usize,
    pub cells: Vec<ScenarioResult>,
    pub rel_imp: Vec<RelImp>,
    pub confusion: Vec<ConfusionCell>,
    /// Unweighted average recall (%), SER cells only. Not a headline metric.
    pub uar: Vec<ScenarioResult>,
    /// Mean of the per-fold scores. Not a headline metric.
    pub macro_avg: Vec<ScenarioResult>,
    pub per_fold: Vec<FoldResult>,
}

fn cell_name(scenario: Scenario, system: System, trained_on: TrainedOn, task: Task) -> String {
    format!("{task}/{system}/{trained_on}/{scenario}")
}

impl EvalReport {
    /// A report holding only headline cells; Rel Imp columns are derived.
    pub fn from_cells(cells: Vec<ScenarioResult>) -> Self {
        let mut r = Self {
            schema: REPORT_SCHEMA,
            config_hash: None,
            folds: Vec::new(),
            n_utterances: 0,
            cells,
            rel_imp: Vec::new(),
            confusion: Vec::new(),
            uar: Vec::new(),
            macro_avg: Vec::new(),
            per_fold: Vec::new(),
        };
        r.rel_imp = r.derive_rel_imp();
        r
    }

    pub fn cell(&self, scenario: Scenario, system: System, trained_on: TrainedOn, task: Task) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.scenario == scenario && c.architecture == system && c.trained_on == trained_on && c.task == task)
            .map(|c| c.value)
    }

    pub fn rel_imp(&self, scenario: Scenario, trained_on: TrainedOn, task: Task) -> Option<f64> {
        self.rel_imp
            .iter()
            .find(|c| c.scenario == scenario && c.trained_on == trained_on && c.task == task)
            .map(|c| c.value)
    }

    /// Rel Imp for every (scenario, condition, task) whose two cells exist
    /// and whose arithmetic is defined.
    pub fn derive_rel_imp(&self) -> Vec<RelImp> {
        let mut out = Vec::new();
        for task in Task::ALL {
            for trained_on in TrainedOn::ALL {
                for scenario in Scenario::ALL {
                    let b = self.cell(scenario, System::Baseline, trained_on, task);
                    let j = self.cell(scenario, System::Joint, trained_on, task);
                    if let (Some(b), Some(j)) = (b, j) {
                        if let Ok(value) = relative_improvement(b, j, task) {
                            out.push(RelImp {
                                scenario,
                                trained_on,
                                task,
                                value,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Names of the headline cells that are absent, as `task/system/condition/scenario`.
    pub fn missing_cells(&self) -> Vec<String> {
        let mut missing = Vec::new();
        for task in Task::ALL {
            for trained_on in TrainedOn::ALL {
                for scenario in Scenario::ALL {
                    for system in System::ALL {
                        match self.cell(scenario, system, trained_on, task) {
                            Some(v) if v.is_finite() => {}
                            _ => missing.push(cell_name(scenario, system, trained_on, task)),
                        }
                    }
                }
            }
        }
        missing
    }

    pub fn check_complete(&self) -> Result<()> {
        let missing = self.missing_cells();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EvalError::IncompleteReport(missing))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One decimal, without a negative sign on zero.
fn fmt1(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

/// Two tables, ASR then SER, one row per test scenario; columns are
/// Baseline, Joint and Rel Imp for the clean-trained then the noise-trained
/// models.
pub fn render_markdown(report: &EvalReport) -> Result<String> {
    report.check_complete()?;
    let mut md = String::new();
    md.push_str("# Evaluation report\n\n");
    let _ = writeln!(
        md,
        "Pooled over {} leave-one-speaker-out folds ({} utterances).",
        report.folds.len(),
        report.n_utterances
    );
    if let Some(h) = &report.config_hash {
        let _ = writeln!(md, "Config hash: `{h}`.");
    }
    for task in Task::ALL {
        let title = match task {
            Task::Asr => "ASR: WER (%), lower is better",
            Task::Ser => "SER: accuracy (%), higher is better",
        };
        let _ = write!(
            md,
            "\n## {title}\n\n\
             | Test scenario | Clean: Baseline | Clean: Joint | Clean: Rel Imp | Noise: Baseline | Noise: Joint | Noise: Rel Imp |\n\
             |---|---:|---:|---:|---:|---:|---:|\n"
        );
        for scenario in Scenario::ALL {
            let _ = write!(md, "| {} ", scenario.label());
            for trained_on in TrainedOn::ALL {
                let b = report.cell(scenario, System::Baseline, trained_on, task).expect("complete");
                let j = report.cell(scenario, System::Joint, trained_on, task).expect("complete");
                let r = report
                    .rel_imp(scenario, trained_on, task)
                    .map(fmt1)
                    .unwrap_or_else(|| "n/a".into());
                let _ = write!(md, "| {} | {} | {} ", fmt1(b), fmt1(j), r);
            }
            md.push_str("|\n");
        }
    }
    md.push_str(
        "\nClean/Noise: training condition (clean audio only, or every training utterance replaced by one \
         noisy overlay at 5-35 dB).\n\
         Rel Imp is positive when the joint model is better. ASR: relative WER reduction, \
         100 x (Baseline - Joint) / Baseline. SER: absolute accuracy gain in percentage points, \
         Joint - Baseline; it is labelled \"relative improvement\" by convention but is not a ratio. \
         n/a marks a zero baseline WER, where the relative change is undefined.\n",
    );
    Ok(md)
}

const BAR_COLORS: [&str; 4] = ["#9ecae1", "#3182bd", "#fdae6b", "#e6550d"];

/// Grouped bar chart for one task: a group per scenario, a bar per
/// (condition, system).
pub fn render_svg(report: &EvalReport, task: Task) -> Result<String> {
    report.check_complete()?;
    let (w, h) = (760.0, 360.0);
    let (left, right, top, bottom) = (56.0, 16.0, 40.0, 70.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let series: Vec<(TrainedOn, System)> = TrainedOn::ALL
        .into_iter()
        .flat_map(|t| System::ALL.into_iter().map(move |s| (t, s)))
        .collect();
    let max_val = report
        .cells
        .iter()
        .filter(|c| c.task == task)
        .map(|c| c.value)
        .fold(100.0f64, f64::max);
    let y_max = (max_val / 20.0).ceil() * 20.0;
    let y = |v: f64| top + plot_h * (1.0 - v.max(0.0) / y_max);
    let group_w = plot_w / Scenario::ALL.len() as f64;
    let bar_w = group_w * 0.8 / series.len() as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let title = match task {
        Task::Asr => "ASR word error rate (%)",
        Task::Ser => "SER accuracy (%)",
    };
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let mut tick = 0.0;
    while tick <= y_max + 1e-9 {
        let ty = y(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.0}</text>"##,
            w - right,
            left - 6.0,
            ty + 4.0
        );
        tick += y_max / 5.0;
    }
    for (g, scenario) in Scenario::ALL.into_iter().enumerate() {
        let gx = left + g as f64 * group_w + group_w * 0.1;
        for (k, (trained_on, system)) in series.iter().enumerate() {
            let v = report.cell(scenario, *system, *trained_on, task).expect("complete");
            let x = gx + k as f64 * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {} {}: {}</title></rect>"#,
                y(v),
                bar_w - 1.0,
                y(0.0) - y(v),
                BAR_COLORS[k],
                scenario.label(),
                trained_on,
                system,
                fmt1(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + (g as f64 + 0.5) * group_w,
            y(0.0) + 16.0,
            scenario.label()
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        y(0.0),
        w - right,
        y(0.0)
    );
    for (k, (trained_on, system)) in series.iter().enumerate() {
        let lx = left + k as f64 * 170.0;
        let ly = h - 22.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{}"/><text x="{:.2}" y="{ly:.2}">{system} (trained on {trained_on})</text>"#,
            ly - 10.0,
            BAR_COLORS[k],
            lx + 16.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `report.json`, `report.md`, `asr.svg` and `ser.svg` into `dir`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    report.check_complete()?;
    let dir = dir.as_ref();
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = [
        ("report.json", report.to_json()?),
        ("report.md", render_markdown(report)?),
        ("asr.svg", render_svg(report, Task::Asr)?),
        ("ser.svg", render_svg(report, Task::Ser)?),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io(&p))?;
        out.push(p);
    }
    Ok(out)
}
