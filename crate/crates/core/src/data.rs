//! Prediction matrices, label vectors and ground-truth accuracy.
//!
//! Prediction file layout (UTF-8 CSV):
//!
//! ```text
//! #classes=2
//! example_id,model_a,model_b,model_c
//! x0,0,0,1
//! x1,1,1,1
//! ```
//!
//! The `#classes=K` line is optional; without it `K` is the largest class id
//! plus one. Label files use the header `example_id,label` and must list the
//! same example ids in the same order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u32;

const CLASSES_PREFIX: &str = "#classes=";

/// Immutable n×m table of hard class predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMatrix {
    example_ids: Vec<String>,
    model_names: Vec<String>,
    num_classes: usize,
    // Row-major: preds[i * m + j] is model j's prediction on example i.
    preds: Vec<ClassId>,
}

impl PredictionMatrix {
    /// Builds a matrix from per-example rows. When `num_classes` is `None`
    /// it is inferred as `max(entry) + 1`.
    pub fn new(
        example_ids: Vec<String>,
        model_names: Vec<String>,
        rows: Vec<Vec<ClassId>>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let m = model_names.len();
        if m < 2 {
            return Err(Error::Invalid(format!("m ≥ 2 required, got {m} model(s)")));
        }
        if rows.is_empty() {
            return Err(Error::Invalid("n ≥ 1 required".into()));
        }
        if example_ids.len() != rows.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                got: example_ids.len(),
            });
        }
        check_model_names(&model_names).map_err(|(col, msg)| Error::ingest(1, col + 2, msg))?;

        let mut preds = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::ingest(
                    i + 2,
                    row.len().min(m) + 2,
                    format!("expected {m} predictions, found {}", row.len()),
                ));
            }
            preds.extend_from_slice(row);
        }
        let observed = preds.iter().copied().max().unwrap_or(0) as usize + 1;
        let num_classes = match num_classes {
            Some(k) => {
                if k == 0 {
                    return Err(Error::Invalid("class count must be positive".into()));
                }
                if let Some(pos) = preds.iter().position(|&c| c as usize >= k) {
                    return Err(Error::ingest(
                        pos / m + 2,
                        pos % m + 2,
                        format!("class id {} out of range for {k} classes", preds[pos]),
                    ));
                }
                k
            }
            None => observed,
        };
        Ok(Self {
            example_ids,
            model_names,
            num_classes,
            preds,
        })
    }

    /// Convenience constructor with generated ids (`x0`, `x1`, ...) and model
    /// names (`h1`, `h2`, ...).
    pub fn from_rows(rows: Vec<Vec<ClassId>>, num_classes: Option<usize>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        let ids = (0..rows.len()).map(|i| format!("x{i}")).collect();
        let names = (1..=m).map(|j| format!("h{j}")).collect();
        Self::new(ids, names, rows, num_classes)
    }

    pub fn num_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn num_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    /// Predictions of all models on example `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[ClassId] {
        let m = self.num_models();
        &self.preds[i * m..(i + 1) * m]
    }

    #[inline]
    pub fn pred(&self, i: usize, j: usize) -> ClassId {
        self.preds[i * self.num_models() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[ClassId]> + '_ {
        self.preds.chunks_exact(self.num_models())
    }

    /// Restricts the matrix to the given examples, in the given order.
    /// The class count is preserved.
    pub fn select_examples(&self, indices: &[usize]) -> Result<Self> {
        let mut preds = Vec::with_capacity(indices.len() * self.num_models());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            self.check_example(i)?;
            preds.extend_from_slice(self.row(i));
            ids.push(self.example_ids[i].clone());
        }
        if ids.is_empty() {
            return Err(Error::Invalid("n ≥ 1 required".into()));
        }
        Ok(Self {
            example_ids: ids,
            model_names: self.model_names.clone(),
            num_classes: self.num_classes,
            preds,
        })
    }

    /// Reorders model columns: column `j` of the result is column
    /// `order[j]` of `self`.
    pub fn permute_models(&self, order: &[usize]) -> Result<Self> {
        let m = self.num_models();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&j| j >= m || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::Invalid("model order must be a permutation".into()));
        }
        let preds = self
            .rows()
            .flat_map(|row| order.iter().map(move |&j| row[j]))
            .collect();
        Ok(Self {
            example_ids: self.example_ids.clone(),
            model_names: order.iter().map(|&j| self.model_names[j].clone()).collect(),
            num_classes: self.num_classes,
            preds,
        })
    }

    pub fn check_example(&self, index: usize) -> Result<()> {
        if index >= self.num_examples() {
            return Err(Error::ExampleOutOfRange {
                index,
                num_examples: self.num_examples(),
            });
        }
        Ok(())
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }
}

fn check_model_names(names: &[String]) -> std::result::Result<(), (usize, String)> {
    let mut seen = HashSet::new();
    for (j, name) in names.iter().enumerate() {
        if name.trim().is_empty() {
            return Err((j, "empty model name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err((j, format!("duplicate model name {name:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    Noisy,
}

/// One class id per example, from either the true oracle or a surrogate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<ClassId>,
    provenance: Provenance,
}

impl LabelVector {
    pub fn new(labels: Vec<ClassId>, provenance: Provenance, matrix: &PredictionMatrix) -> Result<Self> {
        if labels.len() != matrix.num_examples() {
            return Err(Error::LengthMismatch {
                expected: matrix.num_examples(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&c| c as usize >= matrix.num_classes()) {
            return Err(Error::ClassOutOfRange {
                class: bad as usize,
                num_classes: matrix.num_classes(),
            });
        }
        Ok(Self { labels, provenance })
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> ClassId {
        self.labels[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn select_examples(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance,
        }
    }
}

/// Ground-truth accuracy of every model and the set of models attaining the
/// maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    pub per_model_accuracy: Vec<f64>,
    pub correct_counts: Vec<usize>,
    /// Ascending model indices sharing the maximal correct count.
    pub best_set: Vec<usize>,
}

impl AccuracyProfile {
    pub fn best_accuracy(&self) -> f64 {
        self.per_model_accuracy[self.best_set[0]]
    }

    pub fn is_best(&self, model: usize) -> bool {
        self.best_set.binary_search(&model).is_ok()
    }
}

pub fn accuracy_profile(matrix: &PredictionMatrix, labels: &LabelVector) -> Result<AccuracyProfile> {
    if labels.len() != matrix.num_examples() {
        return Err(Error::LengthMismatch {
            expected: matrix.num_examples(),
            got: labels.len(),
        });
    }
    let m = matrix.num_models();
    let mut counts = vec![0usize; m];
    for (row, &y) in matrix.rows().zip(labels.labels()) {
        for (count, &p) in counts.iter_mut().zip(row) {
            *count += usize::from(p == y);
        }
    }
    let n = matrix.num_examples() as f64;
    let top = counts.iter().copied().max().unwrap_or(0);
    Ok(AccuracyProfile {
        per_model_accuracy: counts.iter().map(|&c| c as f64 / n).collect(),
        best_set: (0..m).filter(|&j| counts[j] == top).collect(),
        correct_counts: counts,
    })
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// Splits off the optional `#classes=K` line. Returns the declared class
/// count and the number of lines consumed.
fn split_class_header(text: &str) -> Result<(Option<usize>, &str, usize)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let first = text.lines().next().unwrap_or("");
    if let Some(value) = first.trim().strip_prefix(CLASSES_PREFIX) {
        let k = value
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::ingest(1, 1, format!("bad class count {value:?}")))?;
        if k == 0 {
            return Err(Error::ingest(1, 1, "class count must be positive"));
        }
        let rest = text.split_once('\n').map_or("", |(_, rest)| rest);
        Ok((Some(k), rest, 1))
    } else {
        Ok((None, text, 0))
    }
}

fn parse_class(field: &str, row: usize, column: usize) -> Result<ClassId> {
    field
        .trim()
        .parse::<ClassId>()
        .map_err(|_| Error::ingest(row, column, format!("non-integer class id {field:?}")))
}

pub fn load_predictions<R: Read>(mut source: R) -> Result<PredictionMatrix> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let (declared, body, skipped) = split_class_header(&text)?;
    let header_row = skipped + 1;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    if header.get(0) != Some("example_id") {
        return Err(Error::ingest(header_row, 1, "first column must be example_id"));
    }
    let model_names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if model_names.len() < 2 {
        return Err(Error::Invalid(format!(
            "m ≥ 2 required, got {} model column(s)",
            model_names.len()
        )));
    }
    check_model_names(&model_names).map_err(|(col, msg)| Error::ingest(header_row, col + 2, msg))?;

    let width = header.len();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row_no = header_row + r + 1;
        let record = record?;
        if record.len() != width {
            return Err(Error::ingest(
                row_no,
                record.len().min(width) + 1,
                format!("ragged row: expected {width} fields, found {}", record.len()),
            ));
        }
        ids.push(record[0].to_owned());
        let mut row = Vec::with_capacity(width - 1);
        for (c, field) in record.iter().enumerate().skip(1) {
            let class = parse_class(field, row_no, c + 1)?;
            if let Some(k) = declared {
                if class as usize >= k {
                    return Err(Error::ingest(
                        row_no,
                        c + 1,
                        format!("class id {class} out of range for {k} classes"),
                    ));
                }
            }
            row.push(class);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Invalid("prediction file has no examples (n ≥ 1 required)".into()));
    }
    PredictionMatrix::new(ids, model_names, rows, declared)
}

pub fn load_predictions_path(path: impl AsRef<Path>) -> Result<PredictionMatrix> {
    load_predictions(BufReader::new(File::open(path)?))
}

pub fn load_labels<R: Read>(source: R, matrix: &PredictionMatrix) -> Result<LabelVector> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() != 2 || &header[0] != "example_id" || &header[1] != "label" {
        return Err(Error::ingest(1, 1, "label header must be example_id,label"));
    }
    let mut labels = Vec::with_capacity(matrix.num_examples());
    for (r, record) in reader.records().enumerate() {
        let row_no = r + 2;
        let record = record?;
        if record.len() != 2 {
            return Err(Error::ingest(row_no, record.len().min(2) + 1, "expected 2 fields"));
        }
        if let Some(expected) = matrix.example_ids().get(r) {
            if &record[0] != expected {
                return Err(Error::ingest(
                    row_no,
                    1,
                    format!("example id {:?} does not match prediction file id {expected:?}", &record[0]),
                ));
            }
        }
        labels.push(parse_class(&record[1], row_no, 2)?);
    }
    LabelVector::new(labels, Provenance::Oracle, matrix)
}

pub fn load_labels_path(path: impl AsRef<Path>, matrix: &PredictionMatrix) -> Result<LabelVector> {
    load_labels(BufReader::new(File::open(path)?), matrix)
}

/// Writes the prediction file format, always including the class header.
pub fn write_predictions<W: Write>(matrix: &PredictionMatrix, mut sink: W) -> Result<()> {
    writeln!(sink, "{CLASSES_PREFIX}{}", matrix.num_classes())?;
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(std::iter::once("example_id").chain(matrix.model_names().iter().map(String::as_str)))?;
    for (id, row) in matrix.example_ids().iter().zip(matrix.rows()) {
        let mut record = Vec::with_capacity(row.len() + 1);
        record.push(id.clone());
        record.extend(row.iter().map(ToString::to_string));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_labels<W: Write>(matrix: &PredictionMatrix, labels: &LabelVector, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["example_id", "label"])?;
    for (id, y) in matrix.example_ids().iter().zip(labels.labels()) {
        writer.write_record([id.as_str(), &y.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Optional sidecar mapping dense class ids to display names
/// (CSV header `class_id,name`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNames(pub Vec<String>);

impl ClassNames {
    pub fn load<R: Read>(source: R, num_classes: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut names = vec![String::new(); num_classes];
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let id = parse_class(record.get(0).unwrap_or(""), r + 2, 1)? as usize;
            if id >= num_classes {
                return Err(Error::ClassOutOfRange { class: id, num_classes });
            }
            names[id] = record.get(1).unwrap_or("").to_owned();
        }
        for (c, name) in names.iter_mut().enumerate() {
            if name.is_empty() {
                *name = c.to_string();
            }
        }
        Ok(Self(names))
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        self.0.get(class as usize).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T1: &str = "example_id,h1,h2,h3\nx0,0,0,1\nx1,1,1,1\nx2,0,1,1\nx3,1,0,0\n";

    fn t1() -> PredictionMatrix {
        load_predictions(T1.as_bytes()).unwrap()
    }

    #[test]
    fn loads_t1_fixture() {
        let m = t1();
        assert_eq!((m.num_examples(), m.num_models(), m.num_classes()), (4, 3, 2));
        assert_eq!(m.row(2), &[0, 1, 1]);
        assert_eq!(m.model_names(), &["h1", "h2", "h3"]);
    }

    #[test]
    fn single_model_column_is_rejected() {
        let err = load_predictions("example_id,h1\nx0,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("m ≥ 2 required"), "{err}");
    }

    #[test]
    fn declared_class_count_bounds_entries() {
        let err = load_predictions("#classes=2\nexample_id,a,b\nx0,0,5\n".as_bytes()).unwrap_err();
        match err {
            Error::Ingest { row, column, .. } => assert_eq!((row, column), (3, 3)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn declared_class_count_is_not_shrunk() {
        let m = load_predictions("#classes=1000\nexample_id,a,b\nx0,0,5\n".as_bytes()).unwrap();
        assert_eq!(m.num_classes(), 1000);
    }

    #[test]
    fn malformed_rows_name_their_position() {
        let ragged = load_predictions("example_id,a,b\nx0,0,1\nx1,0\n".as_bytes()).unwrap_err();
        assert!(matches!(ragged, Error::Ingest { row: 3, .. }), "{ragged}");
        let text = load_predictions("example_id,a,b\nx0,0,cat\n".as_bytes()).unwrap_err();
        assert!(matches!(text, Error::Ingest { row: 2, column: 3, .. }), "{text}");
        let dup = load_predictions("example_id,a,a\nx0,0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(dup, Error::Ingest { row: 1, column: 3, .. }), "{dup}");
    }

    #[test]
    fn label_file_validation() {
        let m = t1();
        let labels = load_labels("example_id,label\nx0,0\nx1,1\nx2,1\nx3,0\n".as_bytes(), &m).unwrap();
        assert_eq!(labels.labels(), &[0, 1, 1, 0]);
        assert_eq!(labels.provenance(), Provenance::Oracle);

        let short = load_labels("example_id,label\nx0,0\nx1,1\nx2,1\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(short, Error::LengthMismatch { expected: 4, got: 3 }));
        let range = load_labels("example_id,label\nx0,7\nx1,1\nx2,1\nx3,0\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(range, Error::ClassOutOfRange { class: 7, .. }));
        let order = load_labels("example_id,label\nx1,0\nx0,1\nx2,1\nx3,0\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(order, Error::Ingest { row: 2, column: 1, .. }));
    }

    #[test]
    fn t1_accuracy_profile() {
        let m = t1();
        let y = LabelVector::new(vec![0, 1, 1, 0], Provenance::Oracle, &m).unwrap();
        let profile = accuracy_profile(&m, &y).unwrap();
        assert_eq!(profile.per_model_accuracy, vec![0.5, 1.0, 0.75]);
        assert_eq!(profile.best_set, vec![1]);
    }

    #[test]
    fn identical_models_all_best() {
        let m = PredictionMatrix::from_rows(vec![vec![0, 0, 0], vec![1, 1, 1]], None).unwrap();
        let y = LabelVector::new(vec![0, 1], Provenance::Oracle, &m).unwrap();
        let profile = accuracy_profile(&m, &y).unwrap();
        assert_eq!(profile.per_model_accuracy, vec![1.0; 3]);
        assert_eq!(profile.best_set, vec![0, 1, 2]);
    }

    #[test]
    fn symmetric_tie_keeps_both() {
        let m = PredictionMatrix::from_rows(vec![vec![0, 1], vec![0, 1]], None).unwrap();
        let y = LabelVector::new(vec![0, 1], Provenance::Oracle, &m).unwrap();
        let profile = accuracy_profile(&m, &y).unwrap();
        assert_eq!(profile.per_model_accuracy, vec![0.5, 0.5]);
        assert_eq!(profile.best_set, vec![0, 1]);
    }

    #[test]
    fn csv_round_trip() {
        let m = load_predictions("#classes=3\nexample_id,a,b\nx0,0,2\nx1,1,1\n".as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_predictions(&m, &mut buf).unwrap();
        assert_eq!(load_predictions(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn class_names_sidecar() {
        let names = ClassNames::load("class_id,name\n1,dog\n0,cat\n".as_bytes(), 3).unwrap();
        assert_eq!(names.name(0), Some("cat"));
        assert_eq!(names.name(2), Some("2"));
    }
}
