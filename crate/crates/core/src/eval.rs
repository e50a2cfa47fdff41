//! Evaluation matching the task's two regimes: macro-F over FAVOR and
//! AGAINST only (NONE predictions still count toward precision/recall but
//! are excluded from the average), and plain three-class accuracy.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::Stance;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold and prediction lists differ in length: {gold} vs {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot evaluate an empty set")]
    Empty,
}

/// 3×3 counts; rows are gold, columns are predicted, both in
/// FAVOR/AGAINST/NONE order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    pub fn from_pairs(gold: &[Stance], pred: &[Stance]) -> Result<ConfusionMatrix, EvalError> {
        if gold.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        let mut cm = ConfusionMatrix::new();
        for (&g, &p) in gold.iter().zip(pred) {
            cm.add(g, p);
        }
        Ok(cm)
    }

    pub fn add(&mut self, gold: Stance, pred: Stance) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn count(&self, gold: Stance, pred: Stance) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn true_positives(&self, class: Stance) -> u64 {
        self.count(class, class)
    }

    fn predicted(&self, class: Stance) -> u64 {
        let c = class.index();
        (0..3).map(|g| self.counts[g][c]).sum()
    }

    fn gold_count(&self, class: Stance) -> u64 {
        self.counts[class.index()].iter().sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0 // 0/0 convention
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(cm: &ConfusionMatrix, class: Stance) -> f64 {
    ratio(cm.true_positives(class), cm.predicted(class))
}

pub fn recall(cm: &ConfusionMatrix, class: Stance) -> f64 {
    ratio(cm.true_positives(class), cm.gold_count(class))
}

/// `F1 = 2PR/(P+R)`, with any 0/0 resolving to 0.
pub fn f1(cm: &ConfusionMatrix, class: Stance) -> f64 {
    let p = precision(cm, class);
    let r = recall(cm, class);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// The official task metric: mean of F1(FAVOR) and F1(AGAINST). NONE rows
/// and columns still shape the counts; only the average ignores them.
pub fn macro_f_fa(cm: &ConfusionMatrix) -> f64 {
    (f1(cm, Stance::Favor) + f1(cm, Stance::Against)) / 2.0
}

/// Three-class accuracy: trace over total.
pub fn accuracy3(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let correct: u64 = Stance::ALL.iter().map(|&c| cm.true_positives(c)).sum();
    Ok(correct as f64 / total as f64)
}

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation: per-class metrics, the favor/against macro-F, 3-class
/// accuracy, and (for the top-level report) a per-target breakdown.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_class: [ClassMetrics; 3],
    pub macro_f_fa: f64,
    pub accuracy3: f64,
    pub total: u64,
    pub confusion: ConfusionMatrix,
    pub per_target: BTreeMap<String, EvalReport>,
}

fn report_from_cm(cm: ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let acc = accuracy3(&cm)?;
    let per_class = Stance::ALL.map(|c| ClassMetrics {
        precision: precision(&cm, c),
        recall: recall(&cm, c),
        f1: f1(&cm, c),
    });
    Ok(EvalReport {
        per_class,
        macro_f_fa: macro_f_fa(&cm),
        accuracy3: acc,
        total: cm.total(),
        confusion: cm,
        per_target: BTreeMap::new(),
    })
}

/// Overall metrics over the pooled predictions plus per-target sub-reports.
/// `targets[i]` names the target of example `i`.
pub fn report(gold: &[Stance], pred: &[Stance], targets: &[String]) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: targets.len(),
        });
    }
    let cm = ConfusionMatrix::from_pairs(gold, pred)?;
    let mut overall = report_from_cm(cm)?;

    let mut grouped: BTreeMap<&String, (Vec<Stance>, Vec<Stance>)> = BTreeMap::new();
    for i in 0..gold.len() {
        let slot = grouped.entry(&targets[i]).or_default();
        slot.0.push(gold[i]);
        slot.1.push(pred[i]);
    }
    for (target, (g, p)) in grouped {
        let cm = ConfusionMatrix::from_pairs(&g, &p)?;
        overall.per_target.insert(target.clone(), report_from_cm(cm)?);
    }
    Ok(overall)
}

impl EvalReport {
    /// Human-readable table.
    pub fn render_table(&self, per_target: bool) -> String {
        let mut out = String::new();
        self.render_section(&mut out, "overall");
        if per_target {
            for (target, sub) in &self.per_target {
                out.push('\n');
                sub.render_section(&mut out, target);
            }
        }
        out
    }

    fn render_section(&self, out: &mut String, title: &str) {
        use std::fmt::Write;
        writeln!(out, "== {title} (n={}) ==", self.total).unwrap();
        writeln!(out, "{:<10} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1").unwrap();
        for (i, stance) in Stance::ALL.iter().enumerate() {
            let m = &self.per_class[i];
            writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4}",
                stance.as_str(),
                m.precision,
                m.recall,
                m.f1
            )
            .unwrap();
        }
        writeln!(out, "macro-F (favor/against): {:.4}", self.macro_f_fa).unwrap();
        writeln!(out, "accuracy (3-class):      {:.4}", self.accuracy3).unwrap();
    }

    /// Machine-readable `key=value` lines.
    pub fn render_kv(&self, per_target: bool) -> String {
        let mut out = String::new();
        self.render_kv_prefixed(&mut out, "overall");
        if per_target {
            for (target, sub) in &self.per_target {
                let key = target
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
                    .collect::<String>();
                sub.render_kv_prefixed(&mut out, &format!("target.{key}"));
            }
        }
        out
    }

    fn render_kv_prefixed(&self, out: &mut String, prefix: &str) {
        use std::fmt::Write;
        for (i, stance) in Stance::ALL.iter().enumerate() {
            let m = &self.per_class[i];
            let class = stance.as_str().to_lowercase();
            writeln!(out, "{prefix}.precision.{class}={:.6}", m.precision).unwrap();
            writeln!(out, "{prefix}.recall.{class}={:.6}", m.recall).unwrap();
            writeln!(out, "{prefix}.f1.{class}={:.6}", m.f1).unwrap();
        }
        writeln!(out, "{prefix}.macro_f_fa={:.6}", self.macro_f_fa).unwrap();
        writeln!(out, "{prefix}.accuracy3={:.6}", self.accuracy3).unwrap();
        writeln!(out, "{prefix}.count={}", self.total).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Stance::{Against as A, Favor as F, None as N};

    #[test]
    fn perfect_predictions_give_ones() {
        let gold = vec![F, A, N, F, A, N];
        let cm = ConfusionMatrix::from_pairs(&gold, &gold).unwrap();
        for c in Stance::ALL {
            assert_eq!(f1(&cm, c), 1.0);
            assert_eq!(precision(&cm, c), 1.0);
            assert_eq!(recall(&cm, c), 1.0);
        }
        assert_eq!(accuracy3(&cm).unwrap(), 1.0);
        assert_eq!(macro_f_fa(&cm), 1.0);
    }

    #[test]
    fn absent_class_uses_zero_convention() {
        // NONE never gold and never predicted
        let gold = vec![F, A];
        let pred = vec![F, A];
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        assert_eq!(f1(&cm, N), 0.0);
        assert_eq!(precision(&cm, N), 0.0);
        assert_eq!(recall(&cm, N), 0.0);
    }

    #[test]
    fn hand_computed_f1_is_exact() {
        // FAVOR: tp=2, fp=1, fn=1 → P = R = 2/3, F1 = 2/3 exactly
        let gold = vec![F, F, F, A];
        let pred = vec![F, F, A, F];
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        assert_eq!(precision(&cm, F), 2.0 / 3.0);
        assert_eq!(recall(&cm, F), 2.0 / 3.0);
        assert_eq!(f1(&cm, F), 2.0 / 3.0);
    }

    #[test]
    fn all_none_predictions_give_zero_macro_f() {
        let gold = vec![F, A, N, F];
        let pred = vec![N, N, N, N];
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        assert_eq!(macro_f_fa(&cm), 0.0);
        assert_eq!(accuracy3(&cm).unwrap(), 0.25);
    }

    #[test]
    fn none_predictions_still_shape_favor_precision() {
        // one FAVOR tp plus one gold-NONE predicted FAVOR: precision 1/2
        let gold = vec![F, N];
        let pred = vec![F, F];
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        assert_eq!(precision(&cm, F), 0.5);
        assert_eq!(recall(&cm, F), 1.0);
    }

    #[test]
    fn macro_f_only_ignores_none_in_the_average_not_the_counts() {
        let gold = vec![F, A, N, N];
        let base = ConfusionMatrix::from_pairs(&gold, &[F, A, N, N]).unwrap();
        // swapping predictions among gold-NONE examples that stay NONE
        // changes nothing
        let swapped = ConfusionMatrix::from_pairs(&gold, &[F, A, N, N]).unwrap();
        assert_eq!(macro_f_fa(&base), macro_f_fa(&swapped));
        // but a gold-NONE example predicted FAVOR degrades favor precision
        let leaked = ConfusionMatrix::from_pairs(&gold, &[F, A, F, N]).unwrap();
        assert!(macro_f_fa(&leaked) < macro_f_fa(&base));
    }

    #[test]
    fn empty_set_is_an_error() {
        let cm = ConfusionMatrix::new();
        assert!(matches!(accuracy3(&cm), Err(EvalError::Empty)));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            ConfusionMatrix::from_pairs(&[F], &[F, A]),
            Err(EvalError::LengthMismatch { gold: 1, pred: 2 })
        ));
    }

    #[test]
    fn report_splits_per_target() {
        let gold = vec![F, A, N, F];
        let pred = vec![F, A, F, A];
        let targets: Vec<String> = vec!["x".into(), "x".into(), "y".into(), "y".into()];
        let rep = report(&gold, &pred, &targets).unwrap();
        assert_eq!(rep.total, 4);
        assert_eq!(rep.per_target.len(), 2);
        assert_eq!(rep.per_target["x"].accuracy3, 1.0);
        assert_eq!(rep.per_target["y"].accuracy3, 0.0);
        // sub-reports have no nested per-target maps
        assert!(rep.per_target["x"].per_target.is_empty());

        let kv = rep.render_kv(true);
        assert!(kv.contains("overall.macro_f_fa="));
        assert!(kv.contains("target.x.accuracy3=1.000000"));
        let table = rep.render_table(true);
        assert!(table.contains("== overall (n=4) =="));
        assert!(table.contains("== x (n=2) =="));
    }

    #[test]
    fn permuting_examples_changes_no_metric() {
        let gold = vec![F, A, N, F, A, N, F];
        let pred = vec![A, A, N, F, N, F, F];
        let cm1 = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        let perm = [6, 2, 4, 0, 5, 1, 3];
        let gold_p: Vec<Stance> = perm.iter().map(|&i| gold[i]).collect();
        let pred_p: Vec<Stance> = perm.iter().map(|&i| pred[i]).collect();
        let cm2 = ConfusionMatrix::from_pairs(&gold_p, &pred_p).unwrap();
        assert_eq!(cm1, cm2);
    }
}
