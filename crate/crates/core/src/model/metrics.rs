use std::fmt;

use serde::{Deserialize, Serialize};

use super::{infer, ModelError, ModelWeights};
use crate::dataset::LabeledImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingStatus {
    Improving,
    Converging,
    WellTrained,
}

impl fmt::Display for TrainingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingStatus::Improving => "Improving",
            TrainingStatus::Converging => "Converging",
            TrainingStatus::WellTrained => "Well Trained",
        })
    }
}

/// Above 0.7 is Improving, below 0.15 WellTrained; both boundaries belong to
/// Converging.
pub fn status_label(avg_recent_loss: f32) -> TrainingStatus {
    if avg_recent_loss > 0.7 {
        TrainingStatus::Improving
    } else if avg_recent_loss < 0.15 {
        TrainingStatus::WellTrained
    } else {
        TrainingStatus::Converging
    }
}

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Fixed-width table with row/column labels.
    pub fn render(&self, labels: &[String]) -> String {
        let name = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        let width = (0..self.num_classes())
            .map(|i| name(i).len())
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .chain(["true\\pred".len()])
            .max()
            .unwrap_or(4);
        let mut out = format!("{:>width$}", "true\\pred");
        for j in 0..self.num_classes() {
            out.push_str(&format!(" {:>width$}", name(j)));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:>width$}", name(i)));
            for c in row {
                out.push_str(&format!(" {c:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every image through the model and tallies true vs predicted class.
pub fn confusion_matrix(
    weights: &ModelWeights,
    dataset: &[LabeledImage],
) -> Result<ConfusionMatrix, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut cm = ConfusionMatrix::new(weights.spec.num_classes);
    for item in dataset {
        let (pred, _) = infer(weights, &item.pixels)?;
        cm.record(item.class_index, pred);
    }
    Ok(cm)
}
