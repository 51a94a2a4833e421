use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::shapedata::MultiStructureSample;
use crate::{Error, Result};

/// Sample indices of each partition, ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn part(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Shuffles the distinct subjects (first-appearance order, Fisher-Yates with
/// `seed`) and assigns `round(ratio · subjects)` of them to train and val,
/// the rest to test. All samples of a subject share a partition.
pub fn split_by_subject(samples: &[MultiStructureSample], ratios: [f64; 3], seed: u64) -> Result<Split> {
    check_ratios(ratios)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("split_by_subject"));
    }
    let mut subjects: Vec<&str> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for s in samples {
        slot.entry(&s.subject_id).or_insert_with(|| {
            subjects.push(&s.subject_id);
            subjects.len() - 1
        });
    }
    let mut rng = rng_from_seed(seed);
    let n = subjects.len();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        subjects.swap(i, j);
    }
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let part_of: HashMap<&str, usize> = subjects
        .iter()
        .enumerate()
        .map(|(rank, s)| {
            (
                *s,
                if rank < n_train {
                    0
                } else if rank < n_train + n_val {
                    1
                } else {
                    2
                },
            )
        })
        .collect();
    let mut split = Split::default();
    for (i, s) in samples.iter().enumerate() {
        match part_of[s.subject_id.as_str()] {
            0 => split.train.push(i),
            1 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    Ok(split)
}
