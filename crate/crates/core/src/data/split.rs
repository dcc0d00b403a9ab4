use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// Chronological train / validation / test ranges over frame rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub const MIN_SPLIT_LEN: usize = 10;

pub fn chrono_split(frame: &SeriesFrame, fractions: [f64; 3]) -> Result<SplitIndex> {
    split_len(frame.len(), fractions)
}

/// Floors the train and validation shares; the remainder goes to test.
pub fn split_len(n: usize, fractions: [f64; 3]) -> Result<SplitIndex> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Validation(format!(
            "split fractions {fractions:?} must be positive"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    if n < MIN_SPLIT_LEN {
        return Err(Error::InsufficientData(format!(
            "{n} rows, split needs at least {MIN_SPLIT_LEN}"
        )));
    }
    // the epsilon absorbs products such as 0.15 * 20 = 2.9999999999999996
    let share = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let n_train = share(fractions[0]);
    let n_val = share(fractions[1]);
    Ok(SplitIndex {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

    #[test]
    fn exact_division() {
        let s = split_len(100, FRACTIONS).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..70, 70..85, 85..100));
    }

    #[test]
    fn remainder_goes_to_test() {
        let s = split_len(10, FRACTIONS).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..7, 7..8, 8..10));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(matches!(
            split_len(101, [0.6, 0.15, 0.15]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn short_frames_rejected() {
        assert!(matches!(
            split_len(9, FRACTIONS),
            Err(Error::InsufficientData(_))
        ));
    }

    proptest! {
        #[test]
        fn ranges_concatenate_to_identity(n in 10usize..5000) {
            let s = split_len(n, FRACTIONS).unwrap();
            let all: Vec<usize> = s.train.clone().chain(s.val.clone()).chain(s.test.clone()).collect();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let within = |len: usize, f: f64| (len as f64 - f * n as f64).abs() <= 2.0;
            prop_assert!(within(s.train.len(), 0.7));
            prop_assert!(within(s.val.len(), 0.15));
            prop_assert!(within(s.test.len(), 0.15));
        }
    }
}
