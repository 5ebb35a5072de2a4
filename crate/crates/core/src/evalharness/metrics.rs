//! Verdict metrics: accuracy, rank-based AUC and TPR at a capped FPR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One audited model: its score, true class and checkpoint digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredModel {
    pub score: f64,
    pub infringing: bool,
    pub digest: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredPopulation {
    pub models: Vec<ScoredModel>,
}

impl ScoredPopulation {
    pub fn new(models: Vec<ScoredModel>) -> Self {
        Self { models }
    }

    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Ok(Self {
            models: scores
                .iter()
                .zip(labels)
                .map(|(&score, &infringing)| ScoredModel {
                    score,
                    infringing,
                    digest: String::new(),
                })
                .collect(),
        })
    }

    pub fn positives(&self) -> usize {
        self.models.iter().filter(|m| m.infringing).count()
    }

    pub fn negatives(&self) -> usize {
        self.models.len() - self.positives()
    }

    fn check_both_classes(&self) -> Result<()> {
        if self.models.iter().any(|m| !m.score.is_finite()) {
            return Err(Error::NonFinite("population score".into()));
        }
        if self.positives() == 0 || self.negatives() == 0 {
            return Err(Error::SingleClass(format!(
                "{} infringing and {} innocent models",
                self.positives(),
                self.negatives()
            )));
        }
        Ok(())
    }
}

/// Fraction of predictions equal to the truth.
pub fn accuracy(preds: &[bool], truth: &[bool]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InsufficientData("accuracy of an empty set".into()));
    }
    let correct = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Probability that a random infringing score beats a random innocent one,
/// ties counted as one half. Computed from average ranks.
pub fn auc(pop: &ScoredPopulation) -> Result<f64> {
    pop.check_both_classes()?;
    let mut order: Vec<&ScoredModel> = pop.models.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    // doubled ranks keep tied averages integral
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        // ranks i+1..=j, average (i+1+j)/2, doubled: i+1+j
        let positives = order[i..j].iter().filter(|m| m.infringing).count() as u64;
        rank_sum_x2 += positives * (i as u64 + 1 + j as u64);
        i = j;
    }
    let p = pop.positives() as u64;
    let n = pop.negatives() as u64;
    // doubled Mann-Whitney U
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// Largest true-positive rate over thresholds (`score ≥ threshold` flags
/// infringing) whose false-positive rate stays within `fpr_cap`.
pub fn tpr_at_fpr(pop: &ScoredPopulation, fpr_cap: f64) -> Result<f64> {
    pop.check_both_classes()?;
    if !(0.0..=1.0).contains(&fpr_cap) {
        return Err(Error::InvalidArgument(format!("fpr cap {fpr_cap} outside [0, 1]")));
    }
    let p = pop.positives();
    let n = pop.negatives();
    let mut order: Vec<&ScoredModel> = pop.models.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            if order[j].infringing {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        if fp as f64 / n as f64 <= fpr_cap {
            best = best.max(tp);
        }
        i = j;
    }
    Ok(best as f64 / p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(scores: &[f64], labels: &[bool]) -> ScoredPopulation {
        ScoredPopulation::from_scores(scores, labels).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(accuracy(&[true, true], &[true, false]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[true], &[true, false]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&pop(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true])).unwrap(), 1.0);
        assert_eq!(auc(&pop(&[0.5; 6], &[false, true, false, true, true, false])).unwrap(), 0.5);
        assert_eq!(auc(&pop(&[0.9, 0.1], &[false, true])).unwrap(), 0.0);
        assert!(auc(&pop(&[0.1, 0.2], &[true, true])).is_err());
    }

    #[test]
    fn tpr_examples() {
        let p = pop(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
        assert_eq!(tpr_at_fpr(&p, 1.0).unwrap(), 1.0);
        assert_eq!(tpr_at_fpr(&p, 0.0).unwrap(), 0.5);
        assert_eq!(tpr_at_fpr(&p, 0.5).unwrap(), 1.0);
        let sep = pop(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]);
        assert_eq!(tpr_at_fpr(&sep, 0.1).unwrap(), 1.0);
        assert!(tpr_at_fpr(&sep, 1.5).is_err());
    }
}
