use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Seen,
    Unseen,
}

impl SplitKind {
    pub fn tag(self) -> &'static str {
        match self {
            SplitKind::Seen => "S",
            SplitKind::Unseen => "U",
        }
    }
}

/// Score of one trained model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: String,
    pub variant: String,
    pub mode: Mode,
    pub seed: u64,
    pub fold: usize,
    /// Training datasets joined with `+`.
    pub trained_on: String,
    pub dataset: String,
    pub split: SplitKind,
    pub n: u64,
    pub mf1: f64,
    pub f1_w: f64,
    pub f1_n1: f64,
    pub f1_n2: f64,
    pub f1_n3: f64,
    pub f1_rem: f64,
}

/// Labelled grid of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == col)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for c in &self.columns {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (name, vals) in &self.rows {
            s.push_str(name);
            for v in vals {
                let _ = write!(s, ",{v:.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("{}\n\n|  |", self.title);
        for c in &self.columns {
            let _ = write!(s, " {c} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.columns.len()));
        s.push('\n');
        for (name, vals) in &self.rows {
            let _ = write!(s, "| {name} |");
            for v in vals {
                let _ = write!(s, " {:.1} |", 100.0 * v);
            }
            s.push('\n');
        }
        s
    }
}

/// Mean MF1 per `(dataset, split)` over the given rows.
pub fn mean_scores<'r>(rows: impl IntoIterator<Item = &'r ResultRow>) -> BTreeMap<(String, SplitKind), f64> {
    let mut acc: BTreeMap<(String, SplitKind), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.dataset.clone(), r.split)).or_default();
        e.0 += r.mf1;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Seen columns of the training datasets, their unseen columns, then the
/// remaining datasets, with the averages in between.
pub fn seen_unseen_columns(trained: &[String], others: &[String]) -> Vec<String> {
    let mut c: Vec<String> = trained.iter().map(|d| format!("{d}(S)")).collect();
    c.push("Avg(S)".into());
    c.extend(trained.iter().map(|d| format!("{d}(U)")));
    c.push("Avg(U1)".into());
    c.extend(others.iter().map(|d| format!("{d}(U)")));
    c.push("Avg(U2)".into());
    c.push("Avg(U)".into());
    c
}

pub fn seen_unseen_values(
    scores: &BTreeMap<(String, SplitKind), f64>,
    trained: &[String],
    others: &[String],
) -> Vec<f64> {
    let get = |d: &String, s| scores.get(&(d.clone(), s)).copied().unwrap_or(f64::NAN);
    let seen: Vec<f64> = trained.iter().map(|d| get(d, SplitKind::Seen)).collect();
    let u1: Vec<f64> = trained.iter().map(|d| get(d, SplitKind::Unseen)).collect();
    let u2: Vec<f64> = others.iter().map(|d| get(d, SplitKind::Unseen)).collect();
    let all_u: Vec<f64> = u1.iter().chain(&u2).copied().collect();
    let mut v = seen.clone();
    v.push(mean(&seen));
    v.extend(&u1);
    v.push(mean(&u1));
    v.extend(&u2);
    v.push(mean(&u2));
    v.push(mean(&all_u));
    v
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv: {e}")))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Mean unseen-dataset MF1 of two modes across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directional {
    pub column: String,
    pub per_seed: Vec<(u64, f64, f64)>,
    pub mean_s2maml: f64,
    pub mean_sl: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub rows: Vec<ResultRow>,
    /// Averages over seeds and folds.
    pub tables: Vec<Table>,
    /// The same tables per `(seed, fold)`.
    pub per_run: Vec<((u64, usize), Vec<Table>)>,
    pub directional: Option<Directional>,
}

impl ExperimentReport {
    pub fn table(&self, title: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.title == title)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        w(&format!("{}_rows.csv", self.protocol), rows_to_csv(&self.rows)?)?;
        for (i, t) in self.tables.iter().enumerate() {
            w(&format!("{}_table{}.csv", self.protocol, i + 1), t.to_csv())?;
        }
        w(&format!("{}_summary.json", self.protocol), serde_json::to_string_pretty(self)?)?;
        let md: Vec<String> = self.tables.iter().map(Table::to_markdown).collect();
        w(&format!("{}_tables.md", self.protocol), md.join("\n"))
    }
}
