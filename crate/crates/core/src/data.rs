//! Synthetic mixture datasets, label-preserving augmentation and dataset files.
//!
//! Labels are zero-based in memory and one-based on disk.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{domain, Error, Location, Result};
use crate::oracle::GaussianMixtureSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Tensor,
    labels: Option<Vec<usize>>,
    spec: Option<GaussianMixtureSpec>,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if x.rows() == 0 {
            return domain("dataset must have at least one row");
        }
        if x.cols() == 0 {
            return domain("dataset must have at least one column");
        }
        if !x.all_finite() {
            return domain("dataset contains non-finite values");
        }
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return domain(format!("{} labels for {} rows", l.len(), x.rows()));
            }
        }
        Ok(Self { x, labels, spec: None })
    }

    pub fn with_spec(mut self, spec: GaussianMixtureSpec) -> Result<Self> {
        if spec.dim() != self.dim() {
            return domain(format!("spec dimension {} vs data dimension {}", spec.dim(), self.dim()));
        }
        if let Some(l) = &self.labels {
            if l.iter().any(|c| *c >= spec.n_components()) {
                return domain("label outside the spec's component range");
            }
        }
        self.spec = Some(spec);
        Ok(self)
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn spec(&self) -> Option<&GaussianMixtureSpec> {
        self.spec.as_ref()
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Number of classes implied by the labels: the largest label plus one.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.iter().max().map(|m| m + 1))
    }
}

/// How many samples [`make_synthetic`] draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleCounts {
    /// Exactly this many of each class, in class order.
    PerClass(Vec<usize>),
    /// This many in total, classes drawn from the mixture weights.
    Total(usize),
}

/// Draws a labeled dataset from `spec`.
pub fn make_synthetic<R: Rng + ?Sized>(spec: &GaussianMixtureSpec, counts: &SampleCounts, rng: &mut R) -> Result<Dataset> {
    let k = spec.n_components();
    let classes: Vec<usize> = match counts {
        SampleCounts::PerClass(c) => {
            if c.len() != k {
                return domain(format!("{} per-class counts for {k} components", c.len()));
            }
            if c.contains(&0) {
                return domain("per-class counts must be at least 1");
            }
            c.iter().enumerate().flat_map(|(m, n)| std::iter::repeat_n(m, *n)).collect()
        }
        SampleCounts::Total(n) => {
            if *n == 0 {
                return domain("sample count must be at least 1");
            }
            let w = WeightedIndex::new(spec.weights().parts()).map_err(|e| Error::Domain(e.to_string()))?;
            (0..*n).map(|_| w.sample(rng)).collect()
        }
    };
    let d = spec.dim();
    let mut data = Vec::with_capacity(classes.len() * d);
    for &m in &classes {
        data.extend(spec.draw(m, rng));
    }
    Dataset::new(Tensor::new(classes.len(), d, data)?, Some(classes))?.with_spec(spec.clone())
}

/// A stochastic transform that keeps the class of its input.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmenterKind {
    /// Draws from the spec's class-conditional kernel around the source; see
    /// [`GaussianMixtureSpec::augment_kernel`]. `concentration = 1` is a fresh
    /// class-conditional draw, `0` the identity.
    OracleResample { spec: GaussianMixtureSpec, concentration: f64 },
    /// `x + noise_std · N(0, I)`.
    GaussianJitter { noise_std: f64 },
}

impl AugmenterKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            AugmenterKind::OracleResample { concentration, .. } => {
                if !(0.0..=1.0).contains(concentration) {
                    return domain(format!("concentration {concentration} outside [0, 1]"));
                }
            }
            AugmenterKind::GaussianJitter { noise_std } => {
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return domain(format!("noise_std {noise_std} must be nonnegative"));
                }
            }
        }
        Ok(())
    }
}

/// One augmented copy of `x`.
pub fn augment<R: Rng + ?Sized>(x: &[f64], label: Option<usize>, kind: &AugmenterKind, rng: &mut R) -> Result<Vec<f64>> {
    kind.validate()?;
    match kind {
        AugmenterKind::GaussianJitter { noise_std } => Ok(x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + noise_std * z
            })
            .collect()),
        AugmenterKind::OracleResample { spec, concentration } => {
            let Some(m) = label else {
                return domain("oracle resampling needs a label");
            };
            if m >= spec.n_components() {
                return domain(format!("label {} outside 1..={}", m + 1, spec.n_components()));
            }
            if x.len() != spec.dim() {
                return domain(format!("point has {} coordinates, spec has {}", x.len(), spec.dim()));
            }
            if *concentration == 0.0 {
                return Ok(x.to_vec());
            }
            let (mean, var) = spec.augment_kernel(m, x, *concentration);
            Ok(mean
                .iter()
                .zip(&var)
                .map(|(mu, v)| {
                    let z: f64 = StandardNormal.sample(rng);
                    mu + v.sqrt() * z
                })
                .collect())
        }
    }
}

/// Augments every row of `x`.
pub fn augment_batch<R: Rng + ?Sized>(
    x: &Tensor,
    labels: Option<&[usize]>,
    kind: &AugmenterKind,
    rng: &mut R,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        data.extend(augment(x.row_slice(r), labels.map(|l| l[r]), kind, rng)?);
    }
    Tensor::new(x.rows(), x.cols(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Raw,
}

impl DataFormat {
    /// `.csv` files are CSV, everything else raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Raw,
        }
    }
}

const RAW_MAGIC: &[u8; 8] = b"CPLMIX01";

/// Raw layout: `CPLMIX01`, `u64 N`, `u64 d`, `u8 has_labels`, the row-major
/// little-endian `f64` matrix, then `u32` one-based labels when present.
pub fn raw_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + ds.x.len() * 8 + ds.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    out.push(ds.labels.is_some() as u8);
    for v in ds.x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = &ds.labels {
        for c in l {
            out.extend_from_slice(&(*c as u32 + 1).to_le_bytes());
        }
    }
    out
}

fn parse_err<T>(path: &Path, location: Location, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    })
}

pub fn dataset_from_raw(buf: &[u8], path: &Path) -> Result<Dataset> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if buf.len() - pos < n {
            return parse_err(path, Location::Byte(pos as u64), format!("unexpected end of file reading {what}"));
        }
        let s = &buf[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8, "magic")? != RAW_MAGIC {
        return parse_err(path, Location::Byte(0), "bad magic, expected CPLMIX01");
    }
    let n = u64::from_le_bytes(take(8, "row count")?.try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(take(8, "column count")?.try_into().expect("8 bytes")) as usize;
    let flag = take(1, "label flag")?[0];
    if flag > 1 {
        return parse_err(path, Location::Byte(24), format!("label flag must be 0 or 1, got {flag}"));
    }
    if n == 0 {
        return domain(format!("{}: dataset has no rows", path.display()));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(if flag == 1 { n * 4 } else { 0 }))
        .and_then(|v| v.checked_add(25));
    if expected != Some(buf.len()) {
        return parse_err(
            path,
            Location::Byte(25),
            format!("file is {} bytes, header implies {:?}", buf.len(), expected),
        );
    }
    let data: Vec<f64> = take(n * d * 8, "matrix")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let labels = if flag == 1 {
        let start = 25 + n * d * 8;
        let raw = take(n * 4, "labels")?;
        let mut l = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = u32::from_le_bytes(c.try_into().expect("4 bytes"));
            if v == 0 {
                return parse_err(path, Location::Byte((start + 4 * i) as u64), "labels are one-based, found 0");
            }
            l.push(v as usize - 1);
        }
        Some(l)
    } else {
        None
    };
    Dataset::new(Tensor::new(n, d, data)?, labels)
}

/// CSV with header `x0,…,x{d−1}[,label]`; values use shortest round-trip
/// formatting so reloading is exact.
pub fn csv_string(ds: &Dataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..ds.len() {
        let mut fields: Vec<String> = ds.x.row_slice(r).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            fields.push((l[r] + 1).to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(src: &str, path: &Path, require_labels: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(src.as_bytes());
    let csv_err = |e: csv::Error| -> Error {
        let location = e
            .position()
            .map_or(Location::Unknown, |p| Location::Line(p.line()));
        Error::Parse {
            path: path.to_path_buf(),
            location,
            message: e.to_string(),
        }
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let has_labels = header.iter().next_back() == Some("label");
    if require_labels && !has_labels {
        return parse_err(path, Location::Line(1), "missing label column");
    }
    let d = header.len() - has_labels as usize;
    for (j, h) in header.iter().take(d).enumerate() {
        if h != format!("x{j}") {
            return parse_err(path, Location::LineColumn(1, j as u64 + 1), format!("expected column x{j}, found {h:?}"));
        }
    }
    if d == 0 {
        return parse_err(path, Location::Line(1), "no feature columns");
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        for j in 0..d {
            let f = &rec[j];
            match f.trim().parse::<f64>() {
                Ok(v) => data.push(v),
                Err(_) => {
                    return parse_err(path, Location::LineColumn(line, j as u64 + 1), format!("not a number: {f:?}"))
                }
            }
        }
        if has_labels {
            let f = &rec[d];
            match f.trim().parse::<usize>() {
                Ok(v) if v >= 1 => labels.push(v - 1),
                _ => {
                    return parse_err(
                        path,
                        Location::LineColumn(line, d as u64 + 1),
                        format!("label must be a positive integer, got {f:?}"),
                    )
                }
            }
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return domain(format!("{}: dataset has no rows", path.display()));
    }
    Dataset::new(Tensor::new(n, d, data)?, has_labels.then_some(labels))
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    match format {
        DataFormat::Raw => f.write_all(&raw_bytes(ds))?,
        DataFormat::Csv => f.write_all(csv_string(ds).as_bytes())?,
    }
    Ok(())
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    load_dataset_with(path, format, false)
}

/// Like [`load_dataset`], failing when `require_labels` is set and the file has none.
pub fn load_dataset_with(path: &Path, format: DataFormat, require_labels: bool) -> Result<Dataset> {
    let ds = match format {
        DataFormat::Raw => dataset_from_raw(&std::fs::read(path)?, path)?,
        DataFormat::Csv => dataset_from_csv(&std::fs::read_to_string(path)?, path, require_labels)?,
    };
    if require_labels && ds.labels.is_none() {
        return parse_err(path, Location::Byte(24), "dataset has no labels");
    }
    Ok(ds)
}
