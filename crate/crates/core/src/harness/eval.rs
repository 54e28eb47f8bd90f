//! Accuracy per question category.

use std::fmt::Write as _;

use diffcore::Graph;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Split};
use crate::error::Result;
use crate::model::Model;
use crate::par;
use crate::reasoner::{argmax, loss};
use crate::scenegen::Category;
use diffcore::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: Category,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub per_category: Vec<CategoryMetrics>,
    /// Mean training loss per epoch, when the report follows training.
    pub loss_curve: Vec<f64>,
    /// Seconds spent producing the report; shown in the table only, so the
    /// JSONL output stays a pure function of seed and config.
    pub wall_seconds: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Predicted label and loss for each example, in order.
pub fn predict(model: &Model, store: &ParamStore, examples: &[Example]) -> Result<Vec<(usize, f64)>> {
    par::map(examples, |ex| -> Result<(usize, f64)> {
        let mut g = Graph::new();
        let fw = model.forward(&mut g, store, &ex.tokens, &ex.video)?;
        let l = loss(&mut g, fw.probs, ex.label)?;
        Ok((argmax(g.value(fw.probs).data()), g.value(l).item()))
    })
    .into_iter()
    .collect()
}

pub fn evaluate(model: &Model, store: &ParamStore, examples: &[Example], split: Split) -> Result<MetricsReport> {
    let preds = predict(model, store, examples)?;
    let mut per: Vec<CategoryMetrics> = Category::ALL
        .iter()
        .map(|&category| CategoryMetrics {
            category,
            correct: 0,
            total: 0,
            accuracy: 0.0,
        })
        .collect();
    for (ex, &(pred, _)) in examples.iter().zip(&preds) {
        let m = per.iter_mut().find(|m| m.category == ex.category).expect("every category listed");
        m.total += 1;
        m.correct += usize::from(pred == ex.label);
    }
    // Summed in sorted order so the figure does not depend on record order.
    let mut losses: Vec<f64> = preds.iter().map(|p| p.1).collect();
    losses.sort_by(f64::total_cmp);
    let loss_sum: f64 = losses.iter().sum();
    for m in &mut per {
        m.accuracy = ratio(m.correct, m.total);
    }
    let correct = per.iter().map(|m| m.correct).sum();
    Ok(MetricsReport {
        split,
        correct,
        total: examples.len(),
        accuracy: ratio(correct, examples.len()),
        mean_loss: if examples.is_empty() { 0.0 } else { loss_sum / examples.len() as f64 },
        per_category: per,
        loss_curve: Vec::new(),
        wall_seconds: 0.0,
    })
}

impl MetricsReport {
    /// One JSON object per line: the overall figures, each category, then
    /// each epoch of the loss curve.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let overall = serde_json::json!({
            "kind": "overall",
            "split": self.split,
            "correct": self.correct,
            "total": self.total,
            "accuracy": self.accuracy,
            "mean_loss": self.mean_loss,
        });
        writeln!(out, "{}", serde_json::to_string(&overall)?).ok();
        for m in &self.per_category {
            let line = serde_json::json!({
                "kind": "category",
                "category": m.category,
                "correct": m.correct,
                "total": m.total,
                "accuracy": m.accuracy,
            });
            writeln!(out, "{}", serde_json::to_string(&line)?).ok();
        }
        for (epoch, l) in self.loss_curve.iter().enumerate() {
            let line = serde_json::json!({"kind": "loss", "epoch": epoch, "loss": l});
            writeln!(out, "{}", serde_json::to_string(&line)?).ok();
        }
        Ok(out)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "split: {}", self.split.name()).ok();
        writeln!(out, "{:<22} {:>8} {:>8} {:>9}", "category", "correct", "total", "accuracy").ok();
        for m in &self.per_category {
            writeln!(
                out,
                "{:<22} {:>8} {:>8} {:>8.2}%",
                m.category.name(),
                m.correct,
                m.total,
                100.0 * m.accuracy
            )
            .ok();
        }
        writeln!(
            out,
            "{:<22} {:>8} {:>8} {:>8.2}%",
            "overall",
            self.correct,
            self.total,
            100.0 * self.accuracy
        )
        .ok();
        writeln!(out, "mean loss {:.4}", self.mean_loss).ok();
        if let (Some(first), Some(last)) = (self.loss_curve.first(), self.loss_curve.last()) {
            writeln!(out, "training loss {first:.4} -> {last:.4} over {} epochs", self.loss_curve.len()).ok();
        }
        writeln!(out, "wall clock {:.2}s", self.wall_seconds).ok();
        out
    }
}
