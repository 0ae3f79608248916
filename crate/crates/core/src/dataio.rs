//! IDX image/label files and the CSV tables written by the experiment drivers.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::experiments::{ImageDataset, MnistRecord, RunRecord};
use crate::theory::BoundCheckReport;

pub const IDX_UBYTE: u8 = 0x08;

/// A decoded unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses `00 00 08 rank`, big-endian `u32` extents, then the payload.
/// Trailing bytes past the declared payload are rejected.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            declared: 4,
            found: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::BadMagic(magic));
    }
    if magic[2] != IDX_UBYTE {
        return Err(Error::UnsupportedType(magic[2]));
    }
    let rank = magic[3] as usize;
    if rank == 0 {
        return Err(Error::Schema("IDX rank must be at least 1".into()));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::TruncatedPayload {
            declared: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let declared = dims
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Schema("IDX extents overflow".into()))?;
    let found = bytes.len() - header;
    if found < declared {
        return Err(Error::TruncatedPayload { declared, found });
    }
    if found > declared {
        return Err(Error::Schema(format!("{} trailing bytes after IDX payload", found - declared)));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, tensor.dims.len() as u8];
    for &n in &tensor.dims {
        out.extend_from_slice(&(n as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_idx(&bytes)
}

/// Images scaled to `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pixels: Vec<f64>,
    labels: Vec<u8>,
    input_dim: usize,
}

impl ImageSet {
    pub fn new(pixels: Vec<f64>, labels: Vec<u8>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || pixels.len() != labels.len() * input_dim {
            return Err(Error::Schema(format!(
                "{} pixels do not fit {} images of {input_dim}",
                pixels.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Empty("image set"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Schema(format!("label {bad} outside 0..=9")));
        }
        Ok(ImageSet {
            pixels,
            labels,
            input_dim,
        })
    }

    /// Pairs an image tensor `[n, rows, cols]` with a label tensor `[n]`.
    pub fn from_idx(images: &IdxTensor, labels: &IdxTensor) -> Result<Self> {
        if images.dims.len() != 3 {
            return Err(Error::Schema(format!("image tensor has rank {}", images.dims.len())));
        }
        if labels.dims.len() != 1 {
            return Err(Error::Schema(format!("label tensor has rank {}", labels.dims.len())));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Schema(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        let pixels = images.data.iter().map(|&p| p as f64 / 255.0).collect();
        Self::new(pixels, labels.data.clone(), images.dims[1] * images.dims[2])
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::from_idx(&read_idx(images)?, &read_idx(labels)?)
    }

    /// Standard file names under `dir`: `train-images-idx3-ubyte` and friends.
    pub fn load_split(dir: &Path, train: bool) -> Result<Self> {
        let prefix = if train { "train" } else { "t10k" };
        Self::load(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Seventeen significant digits; parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// A row type with a fixed CSV header.
pub trait CsvRow: Sized {
    const HEADER: &'static [&'static str];
    fn to_fields(&self) -> Vec<String>;
    fn from_fields(fields: &csv::StringRecord) -> Result<Self>;
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Schema(format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Schema(format!("bad value {raw:?} in column {name}")))
}

impl CsvRow for RunRecord {
    const HEADER: &'static [&'static str] = &[
        "seed",
        "task",
        "aggregator",
        "D",
        "d",
        "H",
        "P",
        "lambda",
        "iterations",
        "final_grad_norm",
        "metric",
        "metric_stderr",
    ];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.task.name().to_string(),
            self.aggregator.clone(),
            self.dim.to_string(),
            self.d.to_string(),
            self.honest.to_string(),
            self.poisons.to_string(),
            format_f64(self.lambda),
            self.iterations.to_string(),
            format_f64(self.final_grad_norm),
            format_f64(self.metric),
            format_f64(self.metric_stderr),
        ]
    }

    fn from_fields(r: &csv::StringRecord) -> Result<Self> {
        let h = Self::HEADER;
        Ok(RunRecord {
            seed: field(r, 0, h[0])?,
            task: field::<TaskKind>(r, 1, h[1])?,
            aggregator: field(r, 2, h[2])?,
            dim: field(r, 3, h[3])?,
            d: field(r, 4, h[4])?,
            honest: field(r, 5, h[5])?,
            poisons: field(r, 6, h[6])?,
            lambda: field(r, 7, h[7])?,
            iterations: field(r, 8, h[8])?,
            final_grad_norm: field(r, 9, h[9])?,
            metric: field(r, 10, h[10])?,
            metric_stderr: field(r, 11, h[11])?,
        })
    }
}

impl CsvRow for MnistRecord {
    const HEADER: &'static [&'static str] = &[
        "seed",
        "dataset",
        "d",
        "P",
        "batch",
        "epochs",
        "aggregator",
        "val_cross_entropy",
        "val_accuracy",
    ];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.dataset.name().to_string(),
            self.d.to_string(),
            self.poisons.to_string(),
            self.batch.to_string(),
            self.epochs.to_string(),
            self.aggregator.clone(),
            format_f64(self.val_cross_entropy),
            format_f64(self.val_accuracy),
        ]
    }

    fn from_fields(r: &csv::StringRecord) -> Result<Self> {
        let h = Self::HEADER;
        Ok(MnistRecord {
            seed: field(r, 0, h[0])?,
            dataset: field::<ImageDataset>(r, 1, h[1])?,
            d: field(r, 2, h[2])?,
            poisons: field(r, 3, h[3])?,
            batch: field(r, 4, h[4])?,
            epochs: field(r, 5, h[5])?,
            aggregator: field(r, 6, h[6])?,
            val_cross_entropy: field(r, 7, h[7])?,
            val_accuracy: field(r, 8, h[8])?,
        })
    }
}

impl CsvRow for BoundCheckReport {
    const HEADER: &'static [&'static str] = &["bound_name", "theoretical", "empirical", "trials", "stderr", "pass"];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.bound_name.clone(),
            format_f64(self.theoretical),
            format_f64(self.empirical),
            self.trials.to_string(),
            format_f64(self.stderr),
            self.pass.to_string(),
        ]
    }

    fn from_fields(r: &csv::StringRecord) -> Result<Self> {
        let h = Self::HEADER;
        Ok(BoundCheckReport {
            bound_name: field(r, 0, h[0])?,
            theoretical: field(r, 1, h[1])?,
            empirical: field(r, 2, h[2])?,
            trials: field(r, 3, h[3])?,
            stderr: field(r, 4, h[4])?,
            pass: field(r, 5, h[5])?,
        })
    }
}

pub fn write_csv<R: CsvRow, W: Write>(rows: &[R], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::HEADER)?;
    for row in rows {
        w.write_record(row.to_fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows after checking the header matches exactly.
pub fn read_csv<R: CsvRow, Rd: Read>(input: Rd) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(Error::Schema(format!(
            "expected header {}, found {}",
            R::HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.records().map(|rec| R::from_fields(&rec?)).collect()
}

pub fn write_csv_file<R: CsvRow>(rows: &[R], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_csv(rows, file)
}

pub fn read_csv_file<R: CsvRow>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(metric: f64) -> RunRecord {
        RunRecord {
            seed: 42,
            task: TaskKind::Logistic,
            aggregator: "cwtm".into(),
            dim: 200,
            d: 50,
            honest: 500,
            poisons: 5,
            lambda: 1e3,
            iterations: 731,
            final_grad_norm: 3.3e-9,
            metric,
            metric_stderr: 0.1 + 0.2,
        }
    }

    #[test]
    fn idx_round_trip() {
        let t = IdxTensor {
            dims: vec![2, 2, 3],
            data: (0..12).collect(),
        };
        assert_eq!(parse_idx(&encode_idx(&t)).unwrap(), t);
    }

    #[test]
    fn idx_errors() {
        assert!(matches!(parse_idx(&[1, 0, 8, 1]), Err(Error::BadMagic(_))));
        assert!(matches!(parse_idx(&[0, 0, 0x0d, 1]), Err(Error::UnsupportedType(0x0d))));
        assert!(matches!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 5, 1, 2]),
            Err(Error::TruncatedPayload { declared: 5, found: 2 })
        ));
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0]), Err(Error::TruncatedPayload { .. })));
        assert!(matches!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 1, 2]), Err(Error::Schema(_))));
    }

    #[test]
    fn image_set_scales_pixels() {
        let images = IdxTensor {
            dims: vec![2, 1, 2],
            data: vec![0, 255, 51, 102],
        };
        let labels = IdxTensor {
            dims: vec![2],
            data: vec![3, 9],
        };
        let set = ImageSet::from_idx(&images, &labels).unwrap();
        assert_eq!(set.image(0), &[0.0, 1.0]);
        assert_eq!(set.image(1), &[0.2, 0.4]);
        assert_eq!(set.label(1), 9);
        let bad = IdxTensor {
            dims: vec![2],
            data: vec![3, 10],
        };
        assert!(ImageSet::from_idx(&images, &bad).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![sample_record(std::f64::consts::PI), sample_record(1.0 / 3.0), sample_record(5e-324)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seed,task,aggregator,D,d,H,P,lambda,iterations,final_grad_norm,metric,metric_stderr\n"));
        let back: Vec<RunRecord> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let text = "seed,dataset,d,P,batch,epochs,aggregator,val_cross_entropy,val_accuracy\n";
        assert!(matches!(read_csv::<RunRecord, _>(text.as_bytes()), Err(Error::Schema(_))));
    }
}
