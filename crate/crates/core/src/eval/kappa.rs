use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(true, predicted)` score pairs on a `1..=num_levels` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaInput {
    pairs: Vec<(u8, u8)>,
    num_levels: u8,
}

impl KappaInput {
    pub fn new(pairs: Vec<(u8, u8)>, num_levels: u8) -> Result<Self> {
        if num_levels < 2 {
            return Err(Error::Validation(format!(
                "kappa needs at least two levels, got {num_levels}"
            )));
        }
        if pairs.is_empty() {
            return Err(Error::Validation("kappa needs at least one pair".into()));
        }
        if let Some(&(p, q)) = pairs
            .iter()
            .find(|&&(p, q)| !(1..=num_levels).contains(&p) || !(1..=num_levels).contains(&q))
        {
            return Err(Error::Validation(format!(
                "pair ({p}, {q}) outside [1, {num_levels}]"
            )));
        }
        Ok(KappaInput { pairs, num_levels })
    }

    pub fn pairs(&self) -> &[(u8, u8)] {
        &self.pairs
    }

    pub fn num_levels(&self) -> u8 {
        self.num_levels
    }
}

/// `1 - sum(A * O) / sum(A * E)` for a disagreement weight matrix `A`.
fn weighted_kappa(input: &KappaInput, weight: impl Fn(usize, usize) -> f64) -> Result<f64> {
    let m = input.num_levels as usize;
    let mut observed = vec![0.0f64; m * m];
    let mut rows = vec![0.0f64; m];
    let mut cols = vec![0.0f64; m];
    for &(p, q) in &input.pairs {
        let (p, q) = (p as usize - 1, q as usize - 1);
        observed[p * m + q] += 1.0;
        rows[p] += 1.0;
        cols[q] += 1.0;
    }
    let n = input.pairs.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..m {
        for q in 0..m {
            let a = weight(p, q);
            num += a * observed[p * m + q];
            den += a * rows[p] * cols[q] / n;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedKappa(
            "every true and predicted score is the same single level".into(),
        ));
    }
    Ok(1.0 - num / den)
}

/// Quadratic weighted kappa, weights `(p - q)^2 / (M - 1)^2`.
pub fn qwk(input: &KappaInput) -> Result<f64> {
    let scale = ((input.num_levels - 1) as f64).powi(2);
    weighted_kappa(input, |p, q| (p as f64 - q as f64).powi(2) / scale)
}

/// Linear weighted kappa, weights `|p - q| / (M - 1)`.
pub fn linear_kappa(input: &KappaInput) -> Result<f64> {
    let scale = (input.num_levels - 1) as f64;
    weighted_kappa(input, |p, q| (p as f64 - q as f64).abs() / scale)
}
