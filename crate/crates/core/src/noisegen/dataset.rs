use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Features with their current training labels. Clean labels are not part
/// of this type, so nothing holding only a `TrainingSet` can read them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Matrix,
    observed: Vec<usize>,
    labels: Vec<usize>,
    corrected: Vec<bool>,
    num_classes: usize,
}

impl TrainingSet {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for k = {num_classes}")));
        }
        Ok(Self {
            features,
            corrected: vec![false; labels.len()],
            observed: labels.clone(),
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Current (possibly corrected) labels.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Labels as originally observed, before any correction.
    pub fn observed_labels(&self) -> &[usize] {
        &self.observed
    }

    pub fn corrected_mask(&self) -> &[bool] {
        &self.corrected
    }

    pub fn set_label(&mut self, i: usize, label: usize) {
        debug_assert!(label < self.num_classes);
        self.labels[i] = label;
        self.corrected[i] = label != self.observed[i];
    }

    pub fn corrected_count(&self) -> usize {
        self.corrected.iter().filter(|&&c| c).count()
    }

    /// Rows currently labelled `class`.
    pub fn class_features(&self, class: usize) -> Matrix {
        select_rows(&self.features, &self.labels, class)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.num_classes)
    }
}

pub(crate) fn select_rows(features: &Matrix, labels: &[usize], class: usize) -> Matrix {
    let rows: Vec<&[f64]> = features
        .row_iter()
        .zip(labels)
        .filter(|(_, &l)| l == class)
        .map(|(r, _)| r)
        .collect();
    if rows.is_empty() {
        return Matrix::zeros(0, features.cols());
    }
    Matrix::from_rows(&rows).expect("rows share the feature dimension")
}

pub(crate) fn class_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Output of label corruption: the training view plus the clean labels,
/// which only evaluation code should touch.
#[derive(Debug, Clone)]
pub struct NoisyDataset {
    pub training: TrainingSet,
    pub clean_labels: Vec<usize>,
    /// Fraction of samples whose noisy label differs from the clean one.
    pub flip_rate: f64,
}

/// Features with fixed labels (clean test data or calibrated samples).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for k = {num_classes}")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Contents of a dataset CSV (`f0,…,f{d−1},clean,noisy`).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    pub features: Matrix,
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
}

impl DatasetTable {
    pub fn num_classes(&self) -> usize {
        self.clean
            .iter()
            .chain(&self.noisy)
            .max()
            .map_or(0, |m| m + 1)
    }
}

/// Seventeen significant digits; parses back to the identical f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn feature_header(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

pub fn write_dataset_csv<W: Write>(writer: W, features: &Matrix, clean: &[usize], noisy: &[usize]) -> Result<()> {
    if clean.len() != features.rows() || noisy.len() != features.rows() {
        return Err(Error::LengthMismatch {
            what: "label columns",
            expected: features.rows(),
            got: clean.len().min(noisy.len()),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = feature_header(features.cols());
    header.push("clean".into());
    header.push("noisy".into());
    w.write_record(&header)?;
    for ((row, c), n) in features.row_iter().zip(clean).zip(noisy) {
        let mut rec: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        rec.push(c.to_string());
        rec.push(n.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(reader: R) -> Result<DatasetTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "clean" || &header[cols - 1] != "noisy" {
        return Err(Error::invalid("dataset CSV must end with `clean,noisy` columns"));
    }
    let d = cols - 2;
    let mut data = Vec::new();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for j in 0..d {
            data.push(parse_f64(&rec[j], line)?);
        }
        clean.push(parse_label(&rec[d], line)?);
        noisy.push(parse_label(&rec[d + 1], line)?);
    }
    let n = clean.len();
    Ok(DatasetTable {
        features: Matrix::from_vec(n, d, data)?,
        clean,
        noisy,
    })
}

pub fn write_labeled_csv<W: Write>(writer: W, set: &LabeledSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = feature_header(set.features.cols());
    header.push("label".into());
    w.write_record(&header)?;
    for (row, l) in set.features.row_iter().zip(&set.labels) {
        let mut rec: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        rec.push(l.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_csv<W: Write>(writer: W, points: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(feature_header(points.cols()))?;
    for row in points.row_iter() {
        w.write_record(row.iter().map(|&v| format_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a points CSV. A first row that does not parse as numbers is
/// treated as a header.
pub fn read_points_csv<R: Read>(reader: R) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut data = Vec::new();
    let mut d = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if line == 0 && rec.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            continue;
        }
        match d {
            None => d = Some(rec.len()),
            Some(d) if d != rec.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: rec.len(),
                })
            }
            _ => {}
        }
        for f in rec.iter() {
            data.push(parse_f64(f, line)?);
        }
    }
    let d = d.ok_or(Error::EmptyInput)?;
    Matrix::from_vec(data.len() / d, d, data)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("record {line}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite("csv field"));
    }
    Ok(v)
}

fn parse_label(s: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("record {line}: `{s}` is not a class label")))
}

pub fn write_dataset_file(path: &Path, features: &Matrix, clean: &[usize], noisy: &[usize]) -> Result<()> {
    write_dataset_csv(File::create(path)?, features, clean, noisy)
}

pub fn read_dataset_file(path: &Path) -> Result<DatasetTable> {
    read_dataset_csv(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = Matrix::from_rows(&[[0.5, -1.0]]).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &f, &[1], &[0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("f0,f1,clean,noisy\n"));
    }

    #[test]
    fn corrected_mask_tracks_divergence() {
        let f = Matrix::zeros(3, 1);
        let mut t = TrainingSet::new(f, vec![0, 1, 1], 2).unwrap();
        t.set_label(0, 1);
        t.set_label(1, 1);
        assert_eq!(t.corrected_mask(), &[true, false, false]);
        t.set_label(0, 0);
        assert_eq!(t.corrected_count(), 0);
    }

    #[test]
    fn points_csv_with_and_without_header() {
        let with = "f0,f1\n1,2\n3,4\n";
        let without = "1,2\n3,4\n";
        let a = read_points_csv(with.as_bytes()).unwrap();
        let b = read_points_csv(without.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), 2);
    }

    #[test]
    fn label_out_of_range() {
        assert!(TrainingSet::new(Matrix::zeros(1, 1), vec![3], 2).is_err());
    }

    proptest! {
        #[test]
        fn dataset_csv_round_trip_is_lossless(
            rows in prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL, 3), 1..20),
            labels in prop::collection::vec((0usize..5, 0usize..5), 20),
        ) {
            let f = Matrix::from_rows(&rows).unwrap();
            let n = rows.len();
            let clean: Vec<usize> = labels[..n].iter().map(|p| p.0).collect();
            let noisy: Vec<usize> = labels[..n].iter().map(|p| p.1).collect();
            let mut buf = Vec::new();
            write_dataset_csv(&mut buf, &f, &clean, &noisy).unwrap();
            let back = read_dataset_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.features, f);
            prop_assert_eq!(back.clean, clean);
            prop_assert_eq!(back.noisy, noisy);
        }
    }
}
