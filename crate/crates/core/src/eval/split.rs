use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repeated random train/test splits (Monte Carlo cross-validation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub repeats: usize,
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            repeats: 10,
            train_fraction: 0.7,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Independent stream per repeat, identical whether repeats run serially or in parallel.
    pub fn repeat_rng(&self, repeat: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(repeat as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// Ascending indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split items with the given scores. The training set has
/// `round(train_fraction * n)` items; when stratified, each class gets its
/// floor quota and the remainder goes to the classes with the largest
/// fractional parts.
pub fn split_indices<R: Rng>(
    scores: &[u8],
    train_fraction: f64,
    stratified: bool,
    rng: &mut R,
) -> Result<Split> {
    let n = scores.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "a {train_fraction} split of {n} documents leaves an empty side"
        )));
    }
    let mut train = Vec::with_capacity(n_train);
    if stratified {
        let max_level = scores.iter().copied().max().unwrap_or(0) as usize;
        let mut classes: Vec<Vec<usize>> = vec![Vec::new(); max_level + 1];
        for (i, &s) in scores.iter().enumerate() {
            classes[s as usize].push(i);
        }
        let exact: Vec<f64> = classes
            .iter()
            .map(|c| c.len() as f64 * train_fraction)
            .collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut remaining = n_train - quota.iter().sum::<usize>();
        let mut by_remainder: Vec<usize> = (0..classes.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        for &c in by_remainder.iter().cycle() {
            if remaining == 0 {
                break;
            }
            if quota[c] < classes[c].len() {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        for (members, q) in classes.iter_mut().zip(&quota) {
            members.shuffle(rng);
            train.extend_from_slice(&members[..*q]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        train.extend_from_slice(&all[..n_train]);
    }
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok(Split { train, test })
}
