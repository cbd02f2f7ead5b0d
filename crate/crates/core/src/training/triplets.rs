use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices into the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    pub triplets: Vec<Triplet>,
    /// Anchors whose score class has no other member.
    pub skipped_anchors: Vec<usize>,
}

/// Probability of drawing the negative from each score class `1..=M`:
/// proportional to `|s - k|` over classes that have members.
pub fn negative_class_probabilities(anchor_score: u8, class_sizes: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = class_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if n == 0 {
                0.0
            } else {
                (anchor_score as f64 - (k + 1) as f64).abs()
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return raw;
    }
    raw.into_iter().map(|w| w / total).collect()
}

/// Draw `per_anchor` triplets for every document in order.
///
/// The positive is uniform among other members of the anchor's class; the
/// negative's class follows [`negative_class_probabilities`], then a member
/// is drawn uniformly within it.
pub fn sample_triplets<R: Rng>(
    scores: &[u8],
    num_levels: u8,
    per_anchor: usize,
    rng: &mut R,
) -> Result<TripletSample> {
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); num_levels as usize];
    for (i, &s) in scores.iter().enumerate() {
        if s == 0 || s > num_levels {
            return Err(Error::Validation(format!(
                "score {s} of training item {i} outside [1, {num_levels}]"
            )));
        }
        classes[s as usize - 1].push(i);
    }
    let sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
    if sizes.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::Training(
            "training set needs at least two distinct score levels".into(),
        ));
    }

    let mut triplets = Vec::with_capacity(scores.len() * per_anchor);
    let mut skipped = Vec::new();
    for (anchor, &s) in scores.iter().enumerate() {
        let own = &classes[s as usize - 1];
        if own.len() < 2 {
            log::warn!("anchor {anchor} is the only member of score class {s}; skipped");
            skipped.push(anchor);
            continue;
        }
        let probs = negative_class_probabilities(s, &sizes);
        let class_dist = WeightedIndex::new(&probs).map_err(|e| Error::Internal(e.to_string()))?;
        for _ in 0..per_anchor {
            let positive = loop {
                let p = own[rng.gen_range(0..own.len())];
                if p != anchor {
                    break p;
                }
            };
            let class = &classes[class_dist.sample(rng)];
            let negative = class[rng.gen_range(0..class.len())];
            triplets.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    if triplets.is_empty() {
        return Err(Error::Training("no valid triplets".into()));
    }
    Ok(TripletSample {
        triplets,
        skipped_anchors: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn class_law_for_middle_anchor() {
        let p = negative_class_probabilities(2, &[3, 3, 3, 3]);
        assert_eq!(p, vec![0.25, 0.0, 0.25, 0.5]);
    }

    #[test]
    fn empty_classes_get_no_mass() {
        let p = negative_class_probabilities(1, &[2, 0, 1, 1]);
        assert_eq!(p, vec![0.0, 0.0, 2.0 / 5.0, 3.0 / 5.0]);
    }

    #[test]
    fn singleton_class_anchor_skipped() {
        let scores = [1, 2, 2, 3, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_triplets(&scores, 3, 4, &mut rng).unwrap();
        assert_eq!(s.skipped_anchors, vec![0]);
        assert_eq!(s.triplets.len(), 16);
    }

    #[test]
    fn all_singletons_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_triplets(&[1, 2, 3], 3, 2, &mut rng).unwrap_err();
        assert!(err.to_string().contains("no valid triplets"));
        assert!(sample_triplets(&[2, 2, 2], 3, 2, &mut rng).is_err());
    }
}
