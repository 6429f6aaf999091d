use std::ops::Range;

use crate::error::{Error, Result};

/// Row ranges of a chronological train/validation/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous split in calendar order; the test part takes what is left.
pub fn split_data(rows: usize, train_frac: f64, val_frac: f64) -> Result<DataSplit> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "split fractions {train_frac} and {val_frac} must be nonnegative with a positive training part and sum <= 1"
        )));
    }
    let cut = |f: f64| ((f * rows as f64 + 1e-9).floor() as usize).min(rows);
    let train_end = cut(train_frac);
    let val_end = cut(train_frac + val_frac).max(train_end);
    if train_end < 2 {
        return Err(Error::Config(format!(
            "{rows} rows leave only {train_end} for training"
        )));
    }
    Ok(DataSplit {
        train: 0..train_end,
        validation: train_end..val_end,
        test: val_end..rows,
    })
}
