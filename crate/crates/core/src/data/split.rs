use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Session;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || sum <= 0.0 || sum > 1.0 + 1e-9 {
            return Err(Error::contract(format!(
                "split fractions must be non-negative with a positive sum <= 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Randomly partitions sessions into disjoint train/validation/test sets.
/// Each part keeps the input order of its members. When the fractions sum
/// to one, rounding leftovers go to the training part.
pub fn split_sessions(
    sessions: &[Session],
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Vec<Session>, Vec<Session>, Vec<Session>)> {
    fractions.validate()?;
    let mut ids = HashSet::new();
    for s in sessions {
        if !ids.insert(s.session_id.as_str()) {
            return Err(Error::contract(format!(
                "duplicate session_id `{}`",
                s.session_id
            )));
        }
    }
    let n = sessions.len();
    let count = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let n_val = count(fractions.validation);
    let n_test = count(fractions.test);
    let total = fractions.train + fractions.validation + fractions.test;
    let n_train = if (total - 1.0).abs() < 1e-9 {
        n - n_val - n_test
    } else {
        count(fractions.train)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| sessions[i].clone())
            .collect::<Vec<_>>()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..n_train + n_val + n_test]);
    Ok((train, val, test))
}
