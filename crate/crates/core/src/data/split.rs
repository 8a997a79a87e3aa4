use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Sample, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config("ratios", format!("all ratios must be positive, got {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("ratios", format!("ratios must sum to 1, got {all:?}")));
        }
        Ok(())
    }
}

/// Women per split: train and valid take `floor(ratio · women)`, test takes the rest.
pub fn split_counts(women: usize, ratios: &SplitRatios) -> Result<[usize; 3]> {
    ratios.validate()?;
    if women < 3 {
        return Err(Error::config("women", format!("{women} women cannot fill three splits")));
    }
    // the epsilon keeps products like 0.7 · 10 from flooring to 6
    let floor = |r: f64| ((r * women as f64) + 1e-9).floor() as usize;
    let train = floor(ratios.train);
    let valid = floor(ratios.valid).min(women - train);
    Ok([train, valid, women - train - valid])
}

/// Assigns every woman (group) and all her images to one split.
///
/// Groups are taken in first-appearance order, shuffled with `seed`, then
/// cut according to [`split_counts`].
pub fn group_split(samples: &[Sample], ratios: &SplitRatios, seed: u64) -> Result<Vec<Sample>> {
    let mut groups: Vec<&str> = Vec::new();
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for s in samples {
        if seen.insert(&s.group_id, ()).is_none() {
            groups.push(&s.group_id);
        }
    }
    let [train, valid, _] = split_counts(groups.len(), ratios)?;
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment: BTreeMap<&str, Split> = groups
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let split = if i < train {
                Split::Train
            } else if i < train + valid {
                Split::Valid
            } else {
                Split::Test
            };
            (g, split)
        })
        .collect();
    Ok(samples
        .iter()
        .map(|s| Sample {
            split: assignment[s.group_id.as_str()],
            ..s.clone()
        })
        .collect())
}
