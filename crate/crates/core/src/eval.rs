//! Classification metrics: accuracy, confusion matrices and one-vs-rest
//! precision-recall curves with step-wise average precision.

use std::fmt::Write as _;
use std::io::Write;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassProbabilities;
use crate::error::{contract_err, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn normalized(&self) -> Vec<Vec<f64>> {
        normalize_rows(&self.counts)
    }

    /// One-vs-rest recall of `class`: diagonal over row sum.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row: u64 = self.counts[class].iter().sum();
        (row > 0).then(|| self.counts[class][class] as f64 / row as f64)
    }

    pub fn precision(&self, class: usize) -> Option<f64> {
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        (col > 0).then(|| self.counts[class][class] as f64 / col as f64)
    }
}

pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return contract_err(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        ));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return contract_err(format!(
                "class index ({t}, {p}) outside {n_classes} classes"
            ));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// Divides each row by its sum; empty rows become all zeros.
pub fn normalize_rows<V: ToPrimitive>(rows: &[Vec<V>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let values: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
            let sum: f64 = values.iter().sum();
            if sum == 0.0 {
                vec![0.0; values.len()]
            } else {
                values.into_iter().map(|v| v / sum).collect()
            }
        })
        .collect()
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return contract_err(format!(
            "accuracy needs equal nonzero lengths, got {} and {}",
            truth.len(),
            predicted.len()
        ));
    }
    let hits = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, highest threshold first, so recall is
    /// non-decreasing along the list.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

/// Sweeps every distinct score as a threshold (`score ≥ t` is positive).
/// Average precision is `Σ (r_i − r_{i−1}) · p_i` starting from recall 0.
pub fn pr_curve(scores: &[f64], truth: &[bool]) -> Result<PrCurve> {
    if scores.len() != truth.len() {
        return contract_err(format!(
            "{} scores but {} labels",
            scores.len(),
            truth.len()
        ));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return contract_err("precision-recall needs at least one positive sample");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold,
            recall,
            precision,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap.clamp(0.0, 1.0),
    })
}

/// Everything reported for one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub vocabulary: Vec<String>,
    pub n_samples: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub normalized_confusion: Vec<Vec<f64>>,
    /// One-vs-rest AP per class; `None` when the class has no samples.
    pub average_precision: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_predictions(
        vocabulary: &[String],
        truth: &[usize],
        probabilities: &[ClassProbabilities],
    ) -> Result<Self> {
        let n = vocabulary.len();
        if let Some(p) = probabilities.iter().find(|p| p.0.len() != n) {
            return contract_err(format!(
                "probability vector of length {} for {n} classes",
                p.0.len()
            ));
        }
        let predicted: Vec<usize> = probabilities
            .iter()
            .map(ClassProbabilities::argmax)
            .collect();
        let confusion = confusion(truth, &predicted, n)?;
        let accuracy = accuracy(truth, &predicted)?;
        let average_precision = (0..n)
            .map(|c| {
                let scores: Vec<f64> = probabilities.iter().map(|p| p.0[c]).collect();
                let labels: Vec<bool> = truth.iter().map(|&t| t == c).collect();
                pr_curve(&scores, &labels)
                    .ok()
                    .map(|curve| curve.average_precision)
            })
            .collect();
        Ok(Self {
            vocabulary: vocabulary.to_vec(),
            n_samples: truth.len(),
            accuracy,
            normalized_confusion: confusion.normalized(),
            confusion,
            average_precision,
        })
    }

    /// Normalized matrix as CSV with a header of class names.
    pub fn write_normalized_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let header: Vec<String> = self.vocabulary.iter().map(|v| quote(v)).collect();
        writeln!(out, "true\\predicted,{}", header.join(","))?;
        for (label, row) in self.vocabulary.iter().zip(&self.normalized_confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{},{}", quote(label), cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_counts_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let header: Vec<String> = self.vocabulary.iter().map(|v| quote(v)).collect();
        writeln!(out, "true\\predicted,{}", header.join(","))?;
        for (label, row) in self.vocabulary.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{},{}", quote(label), cells.join(","))?;
        }
        Ok(())
    }

    /// Aligned text grid of the normalized matrix; columns are numbered by
    /// class index and rows carry the class name.
    pub fn render_grid(&self) -> String {
        let name_width = self
            .vocabulary
            .iter()
            .map(|v| v.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut s = String::new();
        let _ = write!(s, "{:>w$} ", "", w = name_width + 4);
        for c in 0..self.vocabulary.len() {
            let _ = write!(s, "{c:>6}");
        }
        s.push('\n');
        for (i, (label, row)) in self
            .vocabulary
            .iter()
            .zip(&self.normalized_confusion)
            .enumerate()
        {
            let _ = write!(s, "{i:>3} {label:<name_width$} ");
            for v in row {
                let _ = write!(s, "{v:>6.2}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let m = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let m = confusion(&[0, 0], &[1, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![0, 2], vec![0, 0]]);
        assert!(confusion(&[0, 3], &[0, 0], 3).is_err());
        assert!(confusion(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn normalize_examples() {
        let id = normalize_rows(&[vec![1u64, 0], vec![0, 1]]);
        assert_eq!(id, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(normalize_rows(&[vec![2u64, 2]]), vec![vec![0.5, 0.5]]);
        assert_eq!(normalize_rows(&[vec![0u64, 0]]), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            pr_curve(&[0.9, 0.1], &[true, false])
                .unwrap()
                .average_precision,
            1.0
        );
        let c = pr_curve(&[0.1, 0.9], &[true, false]).unwrap();
        assert_eq!(c.average_precision, 0.5);
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[0].recall, c.points[0].precision), (0.0, 0.0));
        assert_eq!((c.points[1].recall, c.points[1].precision), (1.0, 0.5));
        assert!(pr_curve(&[0.1, 0.9], &[false, false]).is_err());
    }

    #[test]
    fn tied_scores_form_one_threshold() {
        let c = pr_curve(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert_eq!(c.points.len(), 1);
        assert!((c.average_precision - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_and_rendering() {
        let vocab = vec!["Flats".to_string(), "Heels".to_string()];
        let probs = vec![
            ClassProbabilities(vec![0.8, 0.2]),
            ClassProbabilities(vec![0.4, 0.6]),
            ClassProbabilities(vec![0.3, 0.7]),
            ClassProbabilities(vec![0.1, 0.9]),
        ];
        let r = EvalReport::from_predictions(&vocab, &[0, 0, 1, 1], &probs).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.normalized_confusion, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(r.average_precision[0], Some(1.0));
        let grid = r.render_grid();
        assert!(grid.contains("Flats") && grid.contains("0.50"));
        let mut csv = Vec::new();
        r.write_normalized_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("true\\predicted,\"Flats\",\"Heels\"\n\"Flats\",0.500000,0.500000"));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["accuracy"], 0.75);
    }
}
