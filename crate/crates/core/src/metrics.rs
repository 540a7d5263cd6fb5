//! Mean Average Accuracy, position weights, weighted log loss and the
//! last-observed-skip baseline.

use std::fmt::Write as _;

use crate::data::{FeatureSchema, Session};
use crate::error::{Error, Result};
use crate::tape::PROB_CLAMP;

/// Average accuracy of one session: `Σᵢ A(i)·L(i) / T`, where `L(i)` marks a
/// correct i-th prediction and `A(i)` is the fraction correct among the first
/// `i` predictions.
pub fn average_accuracy(truth: &[bool], pred: &[bool]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::contract(format!(
            "average_accuracy needs equal nonzero lengths, got {} and {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut correct = 0usize;
    let mut total = 0.0;
    for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
        if t == p {
            correct += 1;
            total += correct as f64 / (i + 1) as f64;
        }
    }
    Ok(total / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub maa: f64,
    pub first_prediction_accuracy: f64,
    /// Index 0 is the first second-half position.
    pub per_position_accuracy: Vec<f64>,
    pub n_sessions: usize,
}

/// Scores `(truth, prediction)` pairs. Position `i` accuracy only counts
/// sessions that have a position `i`.
pub fn mean_average_accuracy<T, P>(pairs: &[(T, P)]) -> Result<EvalReport>
where
    T: AsRef<[bool]>,
    P: AsRef<[bool]>,
{
    if pairs.is_empty() {
        return Err(Error::contract("cannot score an empty set of sessions"));
    }
    let mut aa_sum = 0.0;
    let mut hits: Vec<usize> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (truth, pred) in pairs {
        let (truth, pred) = (truth.as_ref(), pred.as_ref());
        aa_sum += average_accuracy(truth, pred)?;
        if truth.len() > counts.len() {
            counts.resize(truth.len(), 0);
            hits.resize(truth.len(), 0);
        }
        for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
            counts[i] += 1;
            hits[i] += usize::from(t == p);
        }
    }
    let per_position_accuracy: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| h as f64 / c as f64)
        .collect();
    Ok(EvalReport {
        maa: aa_sum / pairs.len() as f64,
        first_prediction_accuracy: per_position_accuracy[0],
        per_position_accuracy,
        n_sessions: pairs.len(),
    })
}

impl EvalReport {
    /// Flat `key=value` text, floats to six decimals.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let per: Vec<String> = self
            .per_position_accuracy
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect();
        writeln!(s, "maa={:.6}", self.maa).unwrap();
        writeln!(
            s,
            "first_prediction_accuracy={:.6}",
            self.first_prediction_accuracy
        )
        .unwrap();
        writeln!(s, "per_position_accuracy={}", per.join(",")).unwrap();
        writeln!(s, "n_sessions={}", self.n_sessions).unwrap();
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut maa = None;
        let mut first = None;
        let mut per = None;
        let mut n = None;
        let bad = |line: &str| Error::contract(format!("malformed report line `{line}`"));
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
            match key {
                "maa" => maa = Some(value.parse().map_err(|_| bad(line))?),
                "first_prediction_accuracy" => first = Some(value.parse().map_err(|_| bad(line))?),
                "per_position_accuracy" => {
                    per = Some(
                        value
                            .split(',')
                            .filter(|v| !v.is_empty())
                            .map(|v| v.parse::<f64>().map_err(|_| bad(line)))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "n_sessions" => n = Some(value.parse().map_err(|_| bad(line))?),
                _ => return Err(bad(line)),
            }
        }
        match (maa, first, per, n) {
            (
                Some(maa),
                Some(first_prediction_accuracy),
                Some(per_position_accuracy),
                Some(n_sessions),
            ) => Ok(EvalReport {
                maa,
                first_prediction_accuracy,
                per_position_accuracy,
                n_sessions,
            }),
            _ => Err(Error::contract("report is missing a key")),
        }
    }
}

/// Loss weights for a second half of `t` tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionWeights {
    pub t: usize,
    /// Drop in average accuracy when only position `i` is wrong.
    pub raw_drop: Vec<f64>,
    /// `raw_drop` normalized to sum to one.
    pub w: Vec<f64>,
}

/// A single error at position `i` (1-based) of `T` costs its own term plus
/// `1/j` for every later position `j`, giving
/// `dᵢ = (1 + Σ_{j=i+1}^{T} 1/j) / T`.
pub fn position_weights(t: usize) -> Result<PositionWeights> {
    if t == 0 {
        return Err(Error::contract("position weights need T >= 1"));
    }
    let mut raw_drop = vec![0.0; t];
    let mut tail = 0.0;
    for i in (1..=t).rev() {
        raw_drop[i - 1] = (1.0 + tail) / t as f64;
        tail += 1.0 / i as f64;
    }
    let total: f64 = raw_drop.iter().sum();
    let w = raw_drop.iter().map(|d| d / total).collect();
    Ok(PositionWeights { t, raw_drop, w })
}

/// Session-averaged weighted log loss. Each session's probabilities and
/// truths have its own length; positions beyond it do not exist.
pub fn weighted_log_loss<P, T>(probs: &[P], truth: &[T]) -> Result<f64>
where
    P: AsRef<[f64]>,
    T: AsRef<[bool]>,
{
    if probs.len() != truth.len() || probs.is_empty() {
        return Err(Error::contract(format!(
            "weighted_log_loss needs matching nonempty session lists, got {} and {}",
            probs.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(truth) {
        let (p, y) = (p.as_ref(), y.as_ref());
        if p.len() != y.len() {
            return Err(Error::contract(format!(
                "session has {} probabilities for {} labels",
                p.len(),
                y.len()
            )));
        }
        let weights = position_weights(p.len())?;
        for ((&pi, &yi), w) in p.iter().zip(y).zip(&weights.w) {
            let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += w * if yi { -pc.ln() } else { -(1.0 - pc).ln() };
        }
    }
    Ok(total / probs.len() as f64)
}

/// Repeats the last observed skip_2 across the whole second half.
pub fn baseline_predict(session: &Session, schema: &FeatureSchema) -> Result<Vec<bool>> {
    let last = session.last_observed_skip2(schema)?;
    Ok(vec![last; session.horizon()])
}
