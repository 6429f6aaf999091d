use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column-aligned daily data: asset returns plus optional exogenous features.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnData {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    /// Row-major `rows x assets`, decimal fractions.
    pub returns: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Row-major `rows x features`.
    pub features: Vec<f64>,
}

impl ReturnData {
    pub fn rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn returns_at(&self, t: usize) -> &[f64] {
        let n = self.n_assets();
        &self.returns[t * n..(t + 1) * n]
    }

    pub fn features_at(&self, t: usize) -> &[f64] {
        let f = self.n_features();
        &self.features[t * f..(t + 1) * f]
    }
}

const MISSING: [&str; 6] = ["", "na", "nan", "null", "n/a", "none"];

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 10 {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| r.into_iter().all(|i| b[i].is_ascii_digit());
    digits(0..4)
        && b[4] == b'-'
        && digits(5..7)
        && b[7] == b'-'
        && digits(8..10)
        && (b.len() == 10 || b[10] == b'T' || b[10] == b' ')
}

/// Reads `date,<asset>...,[feat_*...]` from a path.
pub fn load_returns_csv(path: impl AsRef<Path>, forward_fill: bool) -> Result<ReturnData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_returns_csv(file, forward_fill)
}

/// Missing cells are an error unless `forward_fill` is set, in which case
/// the previous row's value is carried forward.
pub fn read_returns_csv<R: Read>(reader: R, forward_fill: bool) -> Result<ReturnData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    if header.len() < 2 {
        return Err(Error::Data(
            "need a date column and at least one asset column".into(),
        ));
    }
    if !header[0].eq_ignore_ascii_case("date") {
        return Err(Error::Data(format!(
            "first column must be 'date', found '{}'",
            &header[0]
        )));
    }
    let mut assets = Vec::new();
    let mut feature_names = Vec::new();
    let mut is_feature = Vec::new();
    for name in header.iter().skip(1) {
        if name.starts_with("feat_") {
            feature_names.push(name.to_string());
            is_feature.push(true);
        } else {
            if !feature_names.is_empty() {
                return Err(Error::Data(format!(
                    "asset column '{name}' after feature columns"
                )));
            }
            assets.push(name.to_string());
            is_feature.push(false);
        }
    }
    if assets.is_empty() {
        return Err(Error::Data("no asset return columns".into()));
    }
    let width = header.len() - 1;
    let mut dates: Vec<String> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "row {}: expected {} fields, found {}",
                line + 2,
                header.len(),
                rec.len()
            )));
        }
        let date = rec[0].to_string();
        if !is_iso_date(&date) {
            return Err(Error::Data(format!(
                "row {}: '{date}' is not an ISO-8601 date",
                line + 2
            )));
        }
        if let Some(prev) = dates.last() {
            if *prev == date {
                return Err(Error::Data(format!("duplicate date {date}")));
            }
            if *prev > date {
                return Err(Error::Data(format!(
                    "dates out of order: {prev} then {date}"
                )));
            }
        }
        for c in 0..width {
            let raw = &rec[c + 1];
            let value = if MISSING.contains(&raw.to_ascii_lowercase().as_str()) {
                if !forward_fill || dates.is_empty() {
                    return Err(Error::Data(format!(
                        "row {}: missing value in column '{}'",
                        line + 2,
                        &header[c + 1]
                    )));
                }
                cells[cells.len() - width]
            } else {
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}: cannot parse '{raw}' in column '{}'",
                        line + 2,
                        &header[c + 1]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "row {}: non-finite value '{raw}'",
                        line + 2
                    )));
                }
                v
            };
            cells.push(value);
        }
        dates.push(date);
    }
    if dates.is_empty() {
        return Err(Error::Data("file has no data rows".into()));
    }
    let mut returns = Vec::with_capacity(dates.len() * assets.len());
    let mut features = Vec::with_capacity(dates.len() * feature_names.len());
    for row in cells.chunks(width) {
        for (v, feat) in row.iter().zip(&is_feature) {
            if *feat {
                features.push(*v);
            } else {
                returns.push(*v);
            }
        }
    }
    if let Some(bad) = returns.iter().find(|r| !(**r > -1.0)) {
        return Err(Error::Data(format!(
            "return {bad} implies a non-positive price"
        )));
    }
    Ok(ReturnData {
        dates,
        assets,
        returns,
        feature_names,
        features,
    })
}

/// Writes the same layout `read_returns_csv` accepts; values use the
/// shortest round-trip representation.
pub fn write_returns_csv<W: Write>(data: &ReturnData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(data.assets.iter().cloned());
    header.extend(data.feature_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..data.rows() {
        let mut rec = vec![data.dates[t].clone()];
        rec.extend(data.returns_at(t).iter().map(|v| v.to_string()));
        rec.extend(data.features_at(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// Trailing-window standardisation of a row-major `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ZScored {
    pub values: Vec<f64>,
    /// Rows `0..warmup` lack a full window; their values are zero.
    pub warmup: usize,
}

/// `(x_t - mean) / sd` over rows `t - window + 1 ..= t` (sample standard
/// deviation). Windows with zero variance map to 0.
pub fn rolling_zscore(matrix: &[f64], cols: usize, window: usize) -> Result<ZScored> {
    if window < 2 {
        return Err(Error::Config(format!(
            "rolling window must be at least 2, got {window}"
        )));
    }
    if cols == 0 || matrix.len() % cols != 0 {
        return Err(Error::Shape {
            expected: cols,
            got: matrix.len(),
        });
    }
    let rows = matrix.len() / cols;
    let mut values = vec![0.0; matrix.len()];
    for t in window - 1..rows {
        for c in 0..cols {
            let xs = (t + 1 - window..=t).map(|i| matrix[i * cols + c]);
            let mean = xs.clone().sum::<f64>() / window as f64;
            let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (window - 1) as f64;
            let x = matrix[t * cols + c];
            values[t * cols + c] = if var > 1e-24 * (1.0 + mean * mean) {
                (x - mean) / var.sqrt()
            } else {
                0.0
            };
        }
    }
    Ok(ZScored {
        values,
        warmup: (window - 1).min(rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ReturnData> {
        read_returns_csv(s.as_bytes(), false)
    }

    #[test]
    fn zero_returns() {
        let d =
            parse("date,a,b,c\n2020-01-01,0,0,0\n2020-01-02,0,0,0\n2020-01-03,0,0,0\n").unwrap();
        assert_eq!(d.rows(), 3);
        assert_eq!(d.n_assets(), 3);
        assert!(d.returns.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn shuffled_and_duplicate_dates_rejected() {
        assert!(parse("date,a\n2020-01-02,0\n2020-01-01,0\n").is_err());
        assert!(parse("date,a\n2020-01-01,0\n2020-01-01,0\n").is_err());
        assert!(parse("date,a\n01/02/2020,0\n").is_err());
    }

    #[test]
    fn missing_values_policy() {
        let text = "date,a,feat_x\n2020-01-01,0.01,1\n2020-01-02,,2\n";
        assert!(read_returns_csv(text.as_bytes(), false).is_err());
        let d = read_returns_csv(text.as_bytes(), true).unwrap();
        assert_eq!(d.returns, vec![0.01, 0.01]);
        assert_eq!(d.features, vec![1.0, 2.0]);
        assert!(read_returns_csv("date,a\n2020-01-01,NA\n".as_bytes(), true).is_err());
        assert!(parse("date,a\n2020-01-01,abc\n").is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = ReturnData {
            dates: vec!["2021-03-01".into(), "2021-03-02".into()],
            assets: vec!["x".into(), "y".into()],
            returns: vec![0.1 + 0.2, -1e-17, 1.0 / 3.0, 5e-324],
            feature_names: vec!["feat_v".into()],
            features: vec![std::f64::consts::PI, -2.5e10],
        };
        let mut buf = Vec::new();
        write_returns_csv(&d, &mut buf).unwrap();
        let back = read_returns_csv(buf.as_slice(), false).unwrap();
        assert_eq!(back.dates, d.dates);
        for (a, b) in back
            .returns
            .iter()
            .chain(&back.features)
            .zip(d.returns.iter().chain(&d.features))
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zscore_constant_is_zero() {
        let m = vec![3.0; 20];
        let z = rolling_zscore(&m, 2, 4).unwrap();
        assert_eq!(z.warmup, 3);
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zscore_ramp_window_three() {
        let m: Vec<f64> = (0..6).map(|i| (i * i) as f64).collect();
        let z = rolling_zscore(&m, 1, 3).unwrap();
        for t in 2..6 {
            let w = [m[t - 2], m[t - 1], m[t]];
            let mean = (w[0] + w[1] + w[2]) / 3.0;
            let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert!((z.values[t] - (m[t] - mean) / sd).abs() < 1e-12);
        }
        // linear ramp: last point always one sample sd above the window mean
        let ramp: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let zr = rolling_zscore(&ramp, 1, 3).unwrap();
        assert!(zr.values[2..].iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zscore_shift_invariant_and_causal() {
        let m: Vec<f64> = (0..50).map(|i| ((i * 7919) % 31) as f64 * 0.1).collect();
        let shifted: Vec<f64> = m.iter().map(|x| x + 12.5).collect();
        let a = rolling_zscore(&m, 1, 10).unwrap();
        let b = rolling_zscore(&shifted, 1, 10).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-9);
        }
        let mut future = m.clone();
        future[40] += 100.0;
        let c = rolling_zscore(&future, 1, 10).unwrap();
        assert_eq!(&a.values[..40], &c.values[..40]);
    }
}
