//! Accuracy, class-wise and macro precision/recall/F1, 2-class F1 on the
//! polar-gold subset, mean absolute error, and pair inversion rate.

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::numerics::{Label, ProbabilityTriple};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPair {
    pub gold: Label,
    pub pred_label: Label,
    pub pred_dist: ProbabilityTriple,
}

impl EvalPair {
    pub fn new(gold: Label, pred_dist: ProbabilityTriple) -> Self {
        EvalPair {
            gold,
            pred_label: pred_dist.argmax(),
            pred_dist,
        }
    }

    /// A pair with a one-hot distribution on `pred`.
    pub fn hard(gold: Label, pred: Label) -> Self {
        let mut p = [0.0; 3];
        p[pred.index()] = 1.0;
        EvalPair {
            gold,
            pred_label: pred,
            pred_dist: ProbabilityTriple {
                p_neg: p[0],
                p_neu: p[1],
                p_pos: p[2],
            },
        }
    }
}

/// How the numeric prediction ŷ is derived for MAE and PIR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimate {
    /// The argmax label.
    #[default]
    Discrete,
    /// `p_pos − p_neg`.
    Expected,
}

impl Estimate {
    fn value(self, pair: &EvalPair) -> f64 {
        match self {
            Estimate::Discrete => pair.pred_label.value() as f64,
            Estimate::Expected => pair.pred_dist.expected_value(),
        }
    }
}

fn non_empty(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Input("no evaluation pairs".into()));
    }
    Ok(())
}

/// 3×3 counts indexed `[gold][pred]`.
pub fn confusion_matrix(pairs: &[EvalPair]) -> [[usize; 3]; 3] {
    let mut m = [[0; 3]; 3];
    for p in pairs {
        m[p.gold.index()][p.pred_label.index()] += 1;
    }
    m
}

pub fn accuracy(pairs: &[EvalPair]) -> Result<f64> {
    non_empty(pairs)?;
    let hits = pairs.iter().filter(|p| p.gold == p.pred_label).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn prf_from_matrix(m: &[[usize; 3]; 3], class: Label) -> Prf {
    let c = class.index();
    let tp = m[c][c];
    let predicted: usize = (0..3).map(|g| m[g][c]).sum();
    let gold: usize = m[c].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, gold);
    Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// Precision, recall and F1 of one class; 0/0 is reported as 0.
pub fn class_prf(pairs: &[EvalPair], class: Label) -> Result<Prf> {
    non_empty(pairs)?;
    Ok(prf_from_matrix(&confusion_matrix(pairs), class))
}

/// Unweighted mean of the three class-wise P, R and F1.
pub fn macro_prf(pairs: &[EvalPair]) -> Result<Prf> {
    non_empty(pairs)?;
    let m = confusion_matrix(pairs);
    let all: Vec<Prf> = Label::ALL.iter().map(|&l| prf_from_matrix(&m, l)).collect();
    Ok(Prf {
        precision: all.iter().map(|p| p.precision).sum::<f64>() / 3.0,
        recall: all.iter().map(|p| p.recall).sum::<f64>() / 3.0,
        f1: all.iter().map(|p| p.f1).sum::<f64>() / 3.0,
    })
}

/// Macro F1 over {−1, +1} restricted to polar-gold pairs, keeping the 3-way
/// predictions. `None` when no gold label is polar.
pub fn two_class_f1(pairs: &[EvalPair]) -> Result<Option<f64>> {
    non_empty(pairs)?;
    let polar: Vec<EvalPair> = pairs
        .iter()
        .copied()
        .filter(|p| p.gold != Label::Neutral)
        .collect();
    if polar.is_empty() {
        return Ok(None);
    }
    let m = confusion_matrix(&polar);
    let f_neg = prf_from_matrix(&m, Label::Negative).f1;
    let f_pos = prf_from_matrix(&m, Label::Positive).f1;
    Ok(Some((f_neg + f_pos) / 2.0))
}

pub fn mae(pairs: &[EvalPair], estimate: Estimate) -> Result<f64> {
    non_empty(pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|p| (p.gold.value() as f64 - estimate.value(p)).abs())
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Fraction of unordered pairs `{i, j}` with `(y_i − y_j)(ŷ_i − ŷ_j) < 0`.
pub fn pir(pairs: &[EvalPair], estimate: Estimate) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Input(
            "pair inversion rate needs at least two pairs".into(),
        ));
    }
    let total = (n * (n - 1) / 2) as f64;
    let inversions = match estimate {
        Estimate::Discrete => {
            let m = confusion_matrix(pairs);
            let mut inv = 0usize;
            for g_hi in 0..3 {
                for g_lo in 0..g_hi {
                    for p_lo in 0..3 {
                        for p_hi in p_lo + 1..3 {
                            inv += m[g_hi][p_lo] * m[g_lo][p_hi];
                        }
                    }
                }
            }
            inv
        }
        Estimate::Expected => {
            let mut inv = 0usize;
            for i in 0..n {
                for j in i + 1..n {
                    let dy = (pairs[i].gold.value() - pairs[j].gold.value()) as f64;
                    let dp = estimate.value(&pairs[i]) - estimate.value(&pairs[j]);
                    if dy * dp < 0.0 {
                        inv += 1;
                    }
                }
            }
            inv
        }
    };
    Ok(inversions as f64 / total)
}

/// All measures for one model on one dataset. Serializes as a flat object;
/// rates are fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mae: f64,
    pub pir: Option<f64>,
    pub two_class_f1: Option<f64>,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f1_neg: f64,
    pub support_neg: usize,
    pub precision_neu: f64,
    pub recall_neu: f64,
    pub f1_neu: f64,
    pub support_neu: usize,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub support_pos: usize,
}

impl EvaluationReport {
    pub fn from_pairs(pairs: &[EvalPair], estimate: Estimate) -> Result<Self> {
        let m = confusion_matrix(pairs);
        let macro_ = macro_prf(pairs)?;
        let c = |l: Label| prf_from_matrix(&m, l);
        let support = |l: Label| m[l.index()].iter().sum::<usize>();
        let (neg, neu, pos) = (c(Label::Negative), c(Label::Neutral), c(Label::Positive));
        Ok(EvaluationReport {
            n: pairs.len(),
            accuracy: accuracy(pairs)?,
            macro_precision: macro_.precision,
            macro_recall: macro_.recall,
            macro_f1: macro_.f1,
            mae: mae(pairs, estimate)?,
            pir: if pairs.len() >= 2 {
                Some(pir(pairs, estimate)?)
            } else {
                None
            },
            two_class_f1: two_class_f1(pairs)?,
            precision_neg: neg.precision,
            recall_neg: neg.recall,
            f1_neg: neg.f1,
            support_neg: support(Label::Negative),
            precision_neu: neu.precision,
            recall_neu: neu.recall,
            f1_neu: neu.f1,
            support_neu: support(Label::Neutral),
            precision_pos: pos.precision,
            recall_pos: pos.recall,
            f1_pos: pos.f1,
            support_pos: support(Label::Positive),
        })
    }

    /// One-row text table in the column order Accuracy, Precision, Recall,
    /// F1, MAE, PIR%, 2-class F1, then class-wise F1 for −1, 0, +1
    /// (percentages ×100 here only).
    pub fn text_table(&self, model_name: &str) -> String {
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let opt =
            |x: Option<f64>, f: &dyn Fn(f64) -> String| x.map(f).unwrap_or_else(|| "-".into());
        let header = [
            "Model",
            "Accuracy",
            "Precision",
            "Recall",
            "F1",
            "MAE",
            "PIR%",
            "2-class F1",
            "F1(-1)",
            "F1(0)",
            "F1(+1)",
        ];
        let row = [
            model_name.to_string(),
            pct(self.accuracy),
            pct(self.macro_precision),
            pct(self.macro_recall),
            pct(self.macro_f1),
            format!("{:.3}", self.mae),
            opt(self.pir, &|x| format!("{:.2}", 100.0 * x)),
            opt(self.two_class_f1, &pct),
            pct(self.f1_neg),
            pct(self.f1_neu),
            pct(self.f1_pos),
        ];
        let widths: Vec<usize> = header
            .iter()
            .zip(&row)
            .map(|(h, r)| h.len().max(r.len()))
            .collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!(
            "{}\n{}\n",
            line(header.to_vec()),
            line(row.iter().map(String::as_str).collect())
        )
    }
}

/// Predictions for every instance of `data`, in order.
pub fn predict_pairs<P: Predictor + ?Sized>(
    model: &P,
    data: &Dataset,
    table: &EmbeddingTable,
) -> Result<Vec<EvalPair>> {
    if data.is_empty() {
        return Err(Error::Input("evaluation dataset is empty".into()));
    }
    match data {
        Dataset::Targeted(items) => {
            if !model.variant().is_targeted() {
                return Err(Error::Usage(format!(
                    "{} model cannot be evaluated on targeted data",
                    model.variant()
                )));
            }
            items
                .iter()
                .map(|inst| {
                    let dist =
                        model.predict_targeted(&table.embed_sequence(&inst.tokens), inst.span())?;
                    Ok(EvalPair::new(inst.label, dist))
                })
                .collect()
        }
        Dataset::Passages(items) => {
            if model.variant().is_targeted() {
                return Err(Error::Usage(format!(
                    "{} model cannot be evaluated on whole-passage data",
                    model.variant()
                )));
            }
            items
                .iter()
                .map(|inst| {
                    Ok(EvalPair::new(
                        inst.label,
                        model.predict_passage(&table.embed_sequence(&inst.tokens))?,
                    ))
                })
                .collect()
        }
    }
}

/// Eval-mode predictions over `data` and the full report.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    data: &Dataset,
    table: &EmbeddingTable,
    estimate: Estimate,
) -> Result<EvaluationReport> {
    EvaluationReport::from_pairs(&predict_pairs(model, data, table)?, estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(gold: &[i64], pred: &[i64]) -> Vec<EvalPair> {
        gold.iter()
            .zip(pred)
            .map(|(&g, &p)| {
                EvalPair::hard(Label::from_value(g).unwrap(), Label::from_value(p).unwrap())
            })
            .collect()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&pairs(&[1, 0, -1], &[1, 0, -1])).unwrap(), 1.0);
        assert_eq!(accuracy(&pairs(&[1, 0], &[0, 1])).unwrap(), 0.0);
        assert_eq!(
            accuracy(&pairs(&[1, 0, -1, 1], &[1, 0, -1, 0])).unwrap(),
            0.75
        );
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn prf_cases() {
        let p = pairs(&[-1, 0, 1], &[-1, 0, 1]);
        let m = macro_prf(&p).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let p = pairs(&[0, 1], &[0, 1]);
        let neg = class_prf(&p, Label::Negative).unwrap();
        assert_eq!((neg.precision, neg.recall, neg.f1), (0.0, 0.0, 0.0));

        let p = pairs(&[-1, -1, 0, 1], &[-1, 0, 0, 1]);
        let neg = class_prf(&p, Label::Negative).unwrap();
        assert_eq!(neg.precision, 1.0);
        assert_eq!(neg.recall, 0.5);
        assert!((neg.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_class_cases() {
        assert_eq!(two_class_f1(&pairs(&[-1, 1], &[-1, 1])).unwrap(), Some(1.0));
        assert_eq!(two_class_f1(&pairs(&[-1, 1], &[0, 0])).unwrap(), Some(0.0));
        assert_eq!(
            two_class_f1(&pairs(&[-1, 1, 0], &[-1, 0, 0])).unwrap(),
            Some(0.5)
        );
        assert_eq!(two_class_f1(&pairs(&[0, 0], &[1, 0])).unwrap(), None);
    }

    #[test]
    fn mae_cases() {
        let d = Estimate::Discrete;
        assert_eq!(mae(&pairs(&[1, 0], &[1, 0]), d).unwrap(), 0.0);
        assert_eq!(mae(&pairs(&[-1], &[1]), d).unwrap(), 2.0);
        assert!((mae(&pairs(&[-1, 0, 1], &[1, 0, 1]), d).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pir_cases() {
        for est in [Estimate::Discrete, Estimate::Expected] {
            assert_eq!(pir(&pairs(&[-1, 0, 1], &[-1, 0, 1]), est).unwrap(), 0.0);
            assert_eq!(pir(&pairs(&[-1, 0, 1], &[1, 0, -1]), est).unwrap(), 1.0);
            assert_eq!(pir(&pairs(&[1, 1], &[1, -1]), est).unwrap(), 0.0);
        }
        assert!(pir(&pairs(&[1], &[1]), Estimate::Discrete).is_err());
    }

    #[test]
    fn expected_estimate_uses_distribution() {
        let p = EvalPair::new(
            Label::Positive,
            ProbabilityTriple::new(0.1, 0.3, 0.6).unwrap(),
        );
        assert!((mae(&[p], Estimate::Expected).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mae(&[p], Estimate::Discrete).unwrap(), 0.0);
    }

    #[test]
    fn report_is_flat_json() {
        let r = EvaluationReport::from_pairs(
            &pairs(&[-1, 0, 1, 1], &[-1, 0, 0, 1]),
            Estimate::Discrete,
        )
        .unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v
            .as_object()
            .unwrap()
            .values()
            .all(|x| !x.is_object() && !x.is_array()));
        assert_eq!(v["support_pos"], 2);
        assert!(r.text_table("x").lines().next().unwrap().contains("PIR%"));
    }
}
