//! Per-label precision/recall/F1 with macro averages, and win-count /
//! average-rank comparisons across models.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Number of positive targets.
    pub support: usize,
}

impl LabelScores {
    /// Scores from raw counts; any zero denominator yields 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        LabelScores {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub labels: Vec<LabelScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl MetricsTable {
    pub fn from_labels(labels: Vec<LabelScores>) -> Self {
        let n = labels.len().max(1) as f64;
        let mean = |f: fn(&LabelScores) -> f64| labels.iter().map(f).sum::<f64>() / n;
        MetricsTable {
            macro_precision: mean(|s| s.precision),
            macro_recall: mean(|s| s.recall),
            macro_f1: mean(|s| s.f1),
            labels,
        }
    }

    /// `label,precision,recall,f1,support` rows plus a `macro` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,precision,recall,f1,support\n");
        for (i, s) in self.labels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{:.6},{:.6},{:.6},{}",
                s.precision, s.recall, s.f1, s.support
            );
        }
        let support: usize = self.labels.iter().map(|s| s.support).sum();
        let _ = writeln!(
            out,
            "macro,{:.6},{:.6},{:.6},{support}",
            self.macro_precision, self.macro_recall, self.macro_f1
        );
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<7} {:>9} {:>9} {:>9} {:>8}\n",
            "label", "precision", "recall", "f1", "support"
        );
        for (i, s) in self.labels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<7} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                i, s.precision, s.recall, s.f1, s.support
            );
        }
        let _ = writeln!(
            out,
            "{:<7} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "macro",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.labels.iter().map(|s| s.support).sum::<usize>()
        );
        out
    }

    /// Parses the output of [`MetricsTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::invalid(
                    "metrics csv",
                    format!("line {}: expected 5 columns", n + 1),
                ));
            }
            if cols[0] == "macro" {
                continue;
            }
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::invalid("metrics csv", format!("line {}: bad number {s:?}", n + 1))
                })
            };
            let support = cols[4].trim().parse::<usize>().map_err(|_| {
                Error::invalid("metrics csv", format!("line {}: bad support", n + 1))
            })?;
            labels.push(LabelScores {
                precision: num(cols[1])?,
                recall: num(cols[2])?,
                f1: num(cols[3])?,
                true_positives: 0,
                false_positives: 0,
                false_negatives: 0,
                support,
            });
        }
        Ok(MetricsTable::from_labels(labels))
    }
}

/// Precision, recall and F1 per label column of binary `[n x M]` matrices.
pub fn prf1(predictions: &[Vec<bool>], targets: &[Vec<bool>]) -> Result<MetricsTable> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(
            "prf1",
            format!(
                "{} prediction rows vs {} target rows",
                predictions.len(),
                targets.len()
            ),
        ));
    }
    let m = targets.first().map_or(0, Vec::len);
    if predictions.iter().chain(targets).any(|r| r.len() != m) {
        return Err(Error::shape(
            "prf1",
            format!("every row must have {m} labels"),
        ));
    }
    let mut counts = vec![(0usize, 0usize, 0usize); m];
    for (p, t) in predictions.iter().zip(targets) {
        for (c, (&pv, &tv)) in counts.iter_mut().zip(p.iter().zip(t)) {
            match (pv, tv) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    Ok(MetricsTable::from_labels(
        counts
            .into_iter()
            .map(|(tp, fp, fn_)| LabelScores::from_counts(tp, fp, fn_))
            .collect(),
    ))
}

/// Scores of each model on each `(label, metric)` cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreBoard {
    pub models: Vec<String>,
    pub scores: Vec<BTreeMap<String, f64>>,
}

impl ScoreBoard {
    pub fn add_model(&mut self, name: impl Into<String>, cells: BTreeMap<String, f64>) {
        self.models.push(name.into());
        self.scores.push(cells);
    }

    /// Adds the per-label precision/recall/F1 cells of a metrics table.
    pub fn add_table(&mut self, name: impl Into<String>, table: &MetricsTable) {
        let mut cells = BTreeMap::new();
        for (i, s) in table.labels.iter().enumerate() {
            cells.insert(format!("{i}/precision"), s.precision);
            cells.insert(format!("{i}/recall"), s.recall);
            cells.insert(format!("{i}/f1"), s.f1);
        }
        self.add_model(name, cells);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRank {
    pub models: Vec<String>,
    pub wins: Vec<usize>,
    pub average_rank: Vec<f64>,
    pub cells: usize,
}

impl WinRank {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,wins,average_rank\n");
        for i in 0..self.models.len() {
            let _ = writeln!(
                out,
                "{},{},{:.4}",
                self.models[i], self.wins[i], self.average_rank[i]
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let w = self
            .models
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<w$}  {:>4}  {:>12}\n", "model", "win", "average_rank");
        for i in 0..self.models.len() {
            let _ = writeln!(
                out,
                "{:<w$}  {:>4}  {:>12.2}",
                self.models[i], self.wins[i], self.average_rank[i]
            );
        }
        out
    }
}

/// A win is a strictly best score in a cell; tied leaders get none. Ranks use
/// competition ranking (ties share the best rank) and are averaged over cells.
pub fn win_rank(board: &ScoreBoard) -> Result<WinRank> {
    let n = board.models.len();
    if n == 0 {
        return Err(Error::invalid("win_rank", "no models"));
    }
    let cells: Vec<&String> = board.scores[0].keys().collect();
    for (i, s) in board.scores.iter().enumerate() {
        let mut missing = cells.iter().filter(|c| !s.contains_key(**c));
        if let Some(c) = missing.next() {
            return Err(Error::invalid(
                "win_rank",
                format!("model {} has no score for {c}", board.models[i]),
            ));
        }
        if s.len() != cells.len() {
            return Err(Error::invalid(
                "win_rank",
                format!(
                    "model {} scores cells absent for {}",
                    board.models[i], board.models[0]
                ),
            ));
        }
    }
    let mut wins = vec![0usize; n];
    let mut rank_sum = vec![0usize; n];
    for cell in &cells {
        let vals: Vec<f64> = board.scores.iter().map(|s| s[*cell]).collect();
        for (i, &v) in vals.iter().enumerate() {
            rank_sum[i] += 1 + vals.iter().filter(|&&o| o > v).count();
        }
        let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let leaders: Vec<usize> = (0..n).filter(|&i| vals[i] == best).collect();
        if leaders.len() == 1 {
            wins[leaders[0]] += 1;
        }
    }
    let denom = cells.len().max(1) as f64;
    Ok(WinRank {
        models: board.models.clone(),
        wins,
        average_rank: rank_sum.into_iter().map(|r| r as f64 / denom).collect(),
        cells: cells.len(),
    })
}
