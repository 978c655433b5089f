use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::dataset::{Platform, RecordKey, UiType};
use super::EvalOptions;
use crate::reward::{RewardVariant, RewardWeights};
use crate::tools::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CellStats {
    pub correct: usize,
    /// Records in the accuracy denominator.
    pub total: usize,
    pub errored: usize,
}

impl CellStats {
    /// Percentage, or `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, r: &RecordResult, exclude_errors: bool) {
        if r.error.is_some() {
            self.errored += 1;
            if exclude_errors {
                return;
            }
        }
        self.total += 1;
        self.correct += r.correct as usize;
    }

    fn merge(&mut self, o: &CellStats) {
        self.correct += o.correct;
        self.total += o.total;
        self.errored += o.errored;
    }

    fn render(&self) -> String {
        match self.accuracy() {
            Some(a) => format!("{a:.2} ({}/{})", self.correct, self.total),
            None => "n/a".into(),
        }
    }

    fn csv_accuracy(&self) -> String {
        self.accuracy()
            .map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub category: String,
    pub text: CellStats,
    pub icon: CellStats,
    pub all: CellStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CellTable {
    pub rows: Vec<CellRow>,
}

impl CellTable {
    pub fn row(&self, category: &str) -> Option<&CellRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    pub fn cell(&self, category: &str, ui: UiType) -> Option<&CellStats> {
        self.row(category).map(|r| match ui {
            UiType::Text => &r.text,
            UiType::Icon => &r.icon,
        })
    }

    fn build(cells: BTreeMap<(String, UiType), CellStats>, categories: Vec<String>) -> Self {
        let rows = categories
            .into_iter()
            .map(|category| {
                let get = |ui| cells.get(&(category.clone(), ui)).copied().unwrap_or_default();
                let (text, icon) = (get(UiType::Text), get(UiType::Icon));
                let mut all = text;
                all.merge(&icon);
                CellRow {
                    category,
                    text,
                    icon,
                    all,
                }
            })
            .collect();
        Self { rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordResult {
    pub key: RecordKey,
    pub platform: Platform,
    pub ui_type: UiType,
    pub group: String,
    /// Final click in original-image coordinates, when the output parsed.
    pub prediction: Option<Point>,
    pub correct: bool,
    /// Set when the episode could not be run (policy or I/O failure).
    pub error: Option<String>,
}

/// Configuration the report was produced with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalEcho {
    pub mode: String,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub weights: RewardWeights,
    pub variant: RewardVariant,
    pub exclude_errors: bool,
}

impl EvalEcho {
    pub(super) fn new(mode: &str, alpha: Option<f64>, opts: &EvalOptions) -> Self {
        Self {
            mode: mode.to_owned(),
            alpha,
            seed: opts.seed,
            weights: opts.reward.weights,
            variant: opts.reward.variant,
            exclude_errors: opts.exclude_errors,
        }
    }
}

/// Everything computed from the records; independent of their order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Sorted by record key.
    pub results: Vec<RecordResult>,
    /// One row per platform, always all three.
    pub by_platform: CellTable,
    /// One row per group present, sorted by name.
    pub by_group: CellTable,
    pub overall: CellStats,
    /// Σ correct / Σ total, in percent.
    pub micro_average: Option<f64>,
    /// Unweighted mean over the non-empty (platform, query type) cells.
    pub cell_average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalEcho,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn new(config: EvalEcho, mut results: Vec<RecordResult>, exclude_errors: bool) -> Self {
        results.sort_by(|a, b| {
            (&a.key, a.platform, a.ui_type, &a.group).cmp(&(&b.key, b.platform, b.ui_type, &b.group))
        });
        let mut by_platform: BTreeMap<(String, UiType), CellStats> = BTreeMap::new();
        let mut by_group: BTreeMap<(String, UiType), CellStats> = BTreeMap::new();
        let mut overall = CellStats::default();
        for r in &results {
            by_platform
                .entry((r.platform.as_str().to_owned(), r.ui_type))
                .or_default()
                .add(r, exclude_errors);
            by_group
                .entry((r.group.clone(), r.ui_type))
                .or_default()
                .add(r, exclude_errors);
            overall.add(r, exclude_errors);
        }
        let cell_accs: Vec<f64> = by_platform.values().filter_map(CellStats::accuracy).collect();
        let cell_average =
            (!cell_accs.is_empty()).then(|| cell_accs.iter().sum::<f64>() / cell_accs.len() as f64);
        let mut groups: Vec<String> = by_group.keys().map(|(g, _)| g.clone()).collect();
        groups.dedup();
        let platforms = Platform::ALL.iter().map(|p| p.as_str().to_owned()).collect();
        Self {
            config,
            summary: EvalSummary {
                results,
                by_platform: CellTable::build(by_platform, platforms),
                by_group: CellTable::build(by_group, groups),
                micro_average: overall.accuracy(),
                overall,
                cell_average,
            },
        }
    }

    pub fn to_markdown(&self) -> String {
        let c = &self.config;
        let s = &self.summary;
        let mut out = String::from("# Evaluation report\n\n");
        let _ = writeln!(out, "- mode: {}", c.mode);
        if let Some(a) = c.alpha {
            let _ = writeln!(out, "- baseline alpha: {a}");
        }
        let _ = writeln!(out, "- seed: {}", c.seed);
        let _ = writeln!(out, "- reward variant: {}", c.variant);
        let w = &c.weights;
        let _ = writeln!(
            out,
            "- weights: acc {} / format {} / tool {} / center {} / overlap {} / alpha {} / sigma scale {}",
            w.lambda_acc,
            w.lambda_format,
            w.lambda_tool,
            w.lambda_center,
            w.lambda_overlap,
            w.alpha,
            w.sigma_scale
        );
        let _ = writeln!(
            out,
            "- errored records: {} ({})\n",
            s.overall.errored,
            if c.exclude_errors {
                "excluded"
            } else {
                "counted as incorrect"
            }
        );
        for (title, table) in [("Platform", &s.by_platform), ("Group", &s.by_group)] {
            let _ = writeln!(out, "## By {}\n", title.to_lowercase());
            let _ = writeln!(out, "| {title} | Text | Icon | Avg |\n|---|---|---|---|");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.category,
                    r.text.render(),
                    r.icon.render(),
                    r.all.render()
                );
            }
            out.push('\n');
        }
        let _ = writeln!(out, "## Overall\n");
        let _ = writeln!(out, "- micro-average: {}", s.overall.render());
        let _ = writeln!(
            out,
            "- cell-weighted average: {}",
            s.cell_average.map_or_else(|| "n/a".into(), |a| format!("{a:.2}"))
        );
        out
    }

    /// `table,category,ui_type,correct,total,errored,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let s = &self.summary;
        let mut out = String::from("table,category,ui_type,correct,total,errored,accuracy\n");
        for (name, table) in [("platform", &s.by_platform), ("group", &s.by_group)] {
            for r in &table.rows {
                for (ui, cell) in [("text", &r.text), ("icon", &r.icon), ("all", &r.all)] {
                    let _ = writeln!(
                        out,
                        "{name},{},{ui},{},{},{},{}",
                        csv_field(&r.category),
                        cell.correct,
                        cell.total,
                        cell.errored,
                        cell.csv_accuracy()
                    );
                }
            }
        }
        let o = &s.overall;
        let _ = writeln!(
            out,
            "overall,micro,all,{},{},{},{}",
            o.correct,
            o.total,
            o.errored,
            o.csv_accuracy()
        );
        let _ = writeln!(
            out,
            "overall,cell_weighted,all,,,,{}",
            s.cell_average.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
        );
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
