use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScores {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        PrfScores { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    #[serde(flatten)]
    pub scores: PrfScores,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
    /// Unweighted mean over classes.
    pub macro_avg: PrfScores,
    /// Mean over classes weighted by support.
    pub weighted_avg: PrfScores,
    pub accuracy: f64,
}

impl ClassificationMetrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::Parameter("confusion matrix must be square and non-empty".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::EmptyInput("classification metrics"));
        }
        let per_class: Vec<ClassScores> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
                let support: u64 = confusion[k].iter().sum();
                let ratio = |den: u64| if den > 0 { tp / den as f64 } else { 0.0 };
                ClassScores { scores: PrfScores::new(ratio(predicted), ratio(support)), support }
            })
            .collect();
        let mean = |f: &dyn Fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
        let weighted = |f: &dyn Fn(&ClassScores) -> f64| {
            per_class.iter().map(|s| f(s) * s.support as f64).sum::<f64>() / total as f64
        };
        let macro_avg = PrfScores {
            precision: mean(&|s| s.scores.precision),
            recall: mean(&|s| s.scores.recall),
            f1: mean(&|s| s.scores.f1),
        };
        let weighted_avg = PrfScores {
            precision: weighted(&|s| s.scores.precision),
            recall: weighted(&|s| s.scores.recall),
            f1: weighted(&|s| s.scores.f1),
        };
        let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();
        Ok(ClassificationMetrics {
            confusion,
            per_class,
            macro_avg,
            weighted_avg,
            accuracy: correct as f64 / total as f64,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("confusion", &[truth.len()], &[predicted.len()]));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Parameter(format!("class index out of range for {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub samples: usize,
}

impl RegressionMetrics {
    pub fn from_predictions(truth: &[f64], predicted: &[f64]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("mae", &[truth.len()], &[predicted.len()]));
        }
        if truth.is_empty() {
            return Err(Error::EmptyInput("regression metrics"));
        }
        let mae = truth.iter().zip(predicted).map(|(t, p)| (t - p).abs()).sum::<f64>() / truth.len() as f64;
        Ok(RegressionMetrics { mae, samples: truth.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Metrics {
    Classification(ClassificationMetrics),
    Regression(RegressionMetrics),
}

impl Metrics {
    /// The model-selection score: macro F1, or MAE.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Classification(m) => m.macro_avg.f1,
            Metrics::Regression(m) => m.mae,
        }
    }

    /// True if `self` is strictly better than `other` by [`Metrics::headline`].
    pub fn improves_on(&self, other: &Metrics) -> bool {
        match self {
            Metrics::Classification(_) => self.headline() > other.headline(),
            Metrics::Regression(_) => self.headline() < other.headline(),
        }
    }

    pub fn classification(&self) -> Option<&ClassificationMetrics> {
        match self {
            Metrics::Classification(m) => Some(m),
            Metrics::Regression(_) => None,
        }
    }

    /// JSON report with every real rounded to 9 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        round_reals(&mut value);
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }
}

fn round_reals(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r: f64 = crate::fmt::sig9(x).parse().expect("formatted float");
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_reals),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_reals),
        _ => {}
    }
}
