//! Loss-weight sweep: one train-and-evaluate run per (λ1, λ2) cell.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossWeights;

/// The seven (λ1, λ2) rows of the published ablation.
pub const ABLATION_GRID: [(f64, f64); 7] = [
    (25.0, 25.0),
    (25.0, 50.0),
    (50.0, 50.0),
    (50.0, 100.0),
    (100.0, 50.0),
    (150.0, 300.0),
    (500.0, 1000.0),
];

pub fn ablation_grid() -> Vec<LossWeights> {
    ABLATION_GRID
        .iter()
        .map(|&(lambda1, lambda2)| LossWeights { lambda1, lambda2 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Index of the best cell; the first one on ties.
    pub best: Option<usize>,
}

impl SweepReport {
    pub fn best_cell(&self) -> Option<&SweepCell> {
        self.best.map(|i| &self.cells[i])
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:>8} {:>8} {:>8}\n", "lambda1", "lambda2", "AUC");
        for (i, c) in self.cells.iter().enumerate() {
            let auc = match (&c.auc, &c.error) {
                (Some(a), _) => format!("{a:.4}"),
                (None, Some(_)) => "error".into(),
                _ => "-".into(),
            };
            let mark = if Some(i) == self.best { " *" } else { "" };
            out.push_str(&format!("{:>8} {:>8} {:>8}{mark}\n", c.lambda1, c.lambda2, auc));
        }
        out
    }
}

/// Runs `cell_auc` for every weight pair. A failing cell is recorded and the
/// sweep moves on.
pub fn lambda_sweep(grid: &[LossWeights], mut cell_auc: impl FnMut(&LossWeights) -> Result<f64>) -> SweepReport {
    let mut cells = Vec::with_capacity(grid.len());
    for w in grid {
        let result = w.validate().and_then(|_| cell_auc(w));
        if let Err(e) = &result {
            log::warn!("sweep cell ({}, {}) failed: {e}", w.lambda1, w.lambda2);
        }
        cells.push(SweepCell {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            auc: result.as_ref().ok().copied(),
            error: result.err().map(|e| e.to_string()),
        });
    }
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Some(a) = c.auc {
            if best.is_none_or(|b| a > cells[b].auc.unwrap()) {
                best = Some(i);
            }
        }
    }
    SweepReport { cells, best }
}
