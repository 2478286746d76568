use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled inputs plus a content digest identifying them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub id: String,
}

impl DatasetHandle {
    /// `num_classes` defaults to one more than the largest label.
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: Option<usize>) -> Result<Self> {
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Validation(format!(
                "{} input rows but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        let inferred = labels.iter().max().map_or(0, |&m| m + 1);
        let num_classes = num_classes.unwrap_or(inferred);
        if inferred > num_classes {
            return Err(Error::Validation(format!(
                "label {} outside declared class count {num_classes}",
                inferred - 1
            )));
        }
        let id = digest(&inputs, &labels);
        Ok(Self {
            inputs,
            labels,
            num_classes,
            id,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// A seeded random subset of `n` samples, kept in original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!(
                "subset size {n} must be in 1..={}",
                self.len()
            )));
        }
        let mut picked =
            index::sample(&mut ChaCha8Rng::seed_from_u64(seed), self.len(), n).into_vec();
        picked.sort_unstable();
        let inputs = self.inputs.select_batch(&picked)?;
        let labels = picked.iter().map(|&i| self.labels[i]).collect();
        Self::new(inputs, labels, Some(self.num_classes))
    }
}

fn digest(inputs: &Tensor, labels: &[usize]) -> String {
    let mut h = Sha256::new();
    h.update((inputs.rank() as u64).to_le_bytes());
    for &d in inputs.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in inputs.data() {
        h.update(v.to_bits().to_le_bytes());
    }
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Validation(format!("{}: truncated IDX header", path.display())))
}

fn idx_body<'a>(
    bytes: &'a [u8],
    path: &Path,
    magic: u32,
    dims: usize,
) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let shape = (0..dims)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * dims;
    let expected: usize = shape.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(Error::Validation(format!(
            "{}: header declares {expected} bytes of data, file has {}",
            path.display(),
            body.len()
        )));
    }
    Ok((shape, body))
}

/// Reads an IDX image file (`[N, H, W]` unsigned bytes) as `[N, 1, H, W]`
/// scaled to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let (shape, body) = idx_body(&bytes, path, IDX_IMAGES_MAGIC, 3)?;
    let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![shape[0], 1, shape[1], shape[2]], data)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let (_, body) = idx_body(&bytes, path, IDX_LABELS_MAGIC, 1)?;
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<DatasetHandle> {
    DatasetHandle::new(read_idx_images(images)?, read_idx_labels(labels)?, None)
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    /// Feature columns in order; `None` takes every non-label column.
    pub feature_columns: Option<Vec<String>>,
    pub num_classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            feature_columns: None,
            num_classes: None,
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<DatasetHandle> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("header lacks column `{name}`"),
            })
    };
    let label_ix = column(&schema.label_column)?;
    let feature_ix: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| column(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != label_ix).collect(),
    };
    if feature_ix.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        for &i in &feature_ix {
            let cell = record[i].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: `{cell}` is not a number", &headers[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}`: non-finite value", &headers[i]),
                });
            }
            data.push(v);
        }
        let cell = record[label_ix].trim();
        labels.push(cell.parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("label `{cell}` is not a non-negative integer"),
        })?);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let inputs = Tensor::new(vec![labels.len(), feature_ix.len()], data)?;
    DatasetHandle::new(inputs, labels, schema.num_classes)
}

/// Writes a dataset as CSV with columns `f0..fN` and `label`; values use
/// the shortest representation that parses back to the same `f64`.
pub fn save_csv(path: impl AsRef<Path>, dataset: &DatasetHandle) -> Result<()> {
    let path = path.as_ref();
    let n = dataset.len();
    let width = dataset.inputs.len() / n;
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header: Vec<String> = (0..width).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    let io_err = |e: csv::Error| Error::io(path, e.into());
    writer.write_record(&header).map_err(io_err)?;
    for (row, label) in dataset
        .inputs
        .data()
        .chunks_exact(width)
        .zip(&dataset.labels)
    {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        fields.push(label.to_string());
        writer.write_record(&fields).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
