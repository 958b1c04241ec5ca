//! Accuracy, communication-efficiency and per-party summary statistics.

use std::fmt;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;

const EVAL_CHUNK: usize = 1024;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn top1_accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Contract("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let part = ds.subset(chunk);
        let logits = net.forward_full(part.features())?;
        correct += part
            .labels()
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(logits.row(i)) == y)
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Accuracy per round for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    points: Vec<(usize, f64)>,
}

impl Curve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Input(format!(
                    "curve rounds must strictly increase: {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        if let Some(&(r, a)) = points.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
            return Err(Error::Input(format!("accuracy {a} at round {r} outside [0, 1]")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn last(&self) -> Option<(usize, f64)> {
        self.points.last().copied()
    }
}

/// First round whose accuracy reaches `target`.
pub fn rounds_to_target(curve: &Curve, target: f64) -> Option<usize> {
    curve.points.iter().find(|&&(_, a)| a >= target).map(|&(r, _)| r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Speedup {
    Factor(f64),
    /// The curve never reaches the baseline's final accuracy.
    Never,
}

impl fmt::Display for Speedup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speedup::Factor(x) => write!(f, "{x:.1}×"),
            Speedup::Never => f.write_str("<1×"),
        }
    }
}

/// Baseline's final round divided by the rounds `other` needs to reach the
/// baseline's final accuracy.
pub fn speedup(baseline: &Curve, other: &Curve) -> Result<Speedup> {
    let (rounds, target) = baseline
        .last()
        .ok_or_else(|| Error::Input("baseline curve is empty".into()))?;
    Ok(match rounds_to_target(other, target) {
        Some(r) => Speedup::Factor(rounds as f64 / r as f64),
        None => Speedup::Never,
    })
}

/// Mean and population standard deviation.
pub fn party_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Contract("party_stats of an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
