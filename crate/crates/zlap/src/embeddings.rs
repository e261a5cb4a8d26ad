//! Feature matrices, prompt groups and label vectors, plus their file formats.
//!
//! Image and class embeddings arrive as dense row-major matrices of unit
//! vectors. The binary feature format is little-endian throughout:
//!
//! ```text
//! magic    4 bytes  "ZLAP"
//! version  u32      currently 1
//! rows     u64
//! dim      u64
//! data     rows * dim * f32, row-major
//! ```
//!
//! Labels are plain text, one base-10 class index per line. Class-name files
//! are plain text, one name per line, line number = class index.
//!
//! Values are stored as `f32` on the wire whatever the in-memory scalar is;
//! loading back into `f32` reproduces the written matrix bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FEATURE_MAGIC: &[u8; 4] = b"ZLAP";
const FEATURE_VERSION: u32 = 1;

/// Dense row-major matrix of embedding vectors, one vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T = f32> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Wraps a row-major buffer. Rejects empty shapes, length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "feature matrix {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Copy into another storage precision (`f32` -> `f64` widens losslessly).
    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|v| U::from_acc(v.acc())).collect(),
        }
    }
}

/// Scales every row to unit Euclidean norm, in place.
///
/// Norms are accumulated in `f64`, so normalizing twice moves no element by
/// more than one storage ulp. Rows of exactly zero norm carry no direction
/// and are rejected.
pub fn l2_normalize<T: Scalar>(m: &mut FeatureMatrix<T>) -> Result<()> {
    for i in 0..m.rows {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v.acc() * v.acc()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
        let inv = T::from_acc(1.0 / norm);
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok(())
}

/// A stack of `class_count * prompts_per_class` prompt embeddings, grouped so
/// that class `c` owns rows `c*P .. (c+1)*P`.
#[derive(Debug, Clone)]
pub struct PromptGroup<T = f32> {
    features: FeatureMatrix<T>,
    prompts_per_class: usize,
}

impl<T: Scalar> PromptGroup<T> {
    pub fn new(features: FeatureMatrix<T>, prompts_per_class: usize) -> Result<Self> {
        if prompts_per_class == 0 {
            return Err(Error::Empty("prompt group with zero prompts per class".into()));
        }
        if features.rows() % prompts_per_class != 0 {
            return Err(Error::Shape(format!(
                "{} prompt rows do not divide into groups of {}",
                features.rows(),
                prompts_per_class
            )));
        }
        Ok(Self { features, prompts_per_class })
    }

    pub fn class_count(&self) -> usize {
        self.features.rows() / self.prompts_per_class
    }

    pub fn prompts_per_class(&self) -> usize {
        self.prompts_per_class
    }

    pub fn features(&self) -> &FeatureMatrix<T> {
        &self.features
    }
}

/// Collapses each class's prompt embeddings into one unit-norm class vector:
/// arithmetic mean over the class's rows, then renormalized.
pub fn average_class_prompts<T: Scalar>(group: &PromptGroup<T>) -> Result<FeatureMatrix<T>> {
    let c = group.class_count();
    let p = group.prompts_per_class;
    let dim = group.features.dim();
    let mut out = vec![T::zero(); c * dim];
    let mut sum = vec![0.0f64; dim];
    for class in 0..c {
        sum.iter_mut().for_each(|v| *v = 0.0);
        for prompt in 0..p {
            let row = group.features.row(class * p + prompt);
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += v.acc();
            }
        }
        // Renormalizing the mean cancels the 1/p factor, so the sum is enough.
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!(
                "prompt mean for class {class} has zero norm"
            )));
        }
        for (o, v) in out[class * dim..(class + 1) * dim].iter_mut().zip(&sum) {
            *o = T::from_acc(v / norm);
        }
    }
    FeatureMatrix::from_vec(c, dim, out)
}

/// Ground-truth class index per image, loaded from plain text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    values: Vec<usize>,
}

impl LabelVector {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.values
    }

    /// Checks every entry against the class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if v >= classes {
                return Err(Error::Data(format!(
                    "label {v} at line {} out of range for {classes} classes",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Reads a feature matrix from the binary format described in the module
/// docs. No normalization happens here; rows come back exactly as stored.
pub fn load_features<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMatrix<T>> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| {
        Error::Format(format!("{}: too short for a feature header", path.display()))
    })?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"ZLAP\"",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut reader)?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported feature version {version}",
            path.display()
        )));
    }
    let rows = read_u64(&mut reader)? as usize;
    let dim = read_u64(&mut reader)? as usize;
    let count = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::Size(format!("{}: rows*dim overflows", path.display())))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != count * 4 {
        return Err(Error::Size(format!(
            "{}: payload holds {} bytes, header promises {}",
            path.display(),
            payload.len(),
            count * 4
        )));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite value at flat index {}",
                path.display(),
                data.len()
            )));
        }
        data.push(T::from_acc(v as f64));
    }
    if rows == 0 || dim == 0 {
        return Err(Error::Shape(format!(
            "{}: empty feature matrix {rows}x{dim}",
            path.display()
        )));
    }
    Ok(FeatureMatrix { rows, dim, data })
}

/// Writes a feature matrix in the binary format. Values are narrowed to
/// `f32` on the wire.
pub fn write_features<T: Scalar>(path: impl AsRef<Path>, m: &FeatureMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.dim as u64).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one class index per line. Blank trailing lines are tolerated,
/// anything else non-numeric is a data error.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut values = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v = trimmed.parse::<usize>().map_err(|_| {
            Error::Data(format!(
                "{}: line {} is not a class index: {trimmed:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        values.push(v);
    }
    Ok(LabelVector::new(values))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &labels.values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one class name per line; line number is the class index.
pub fn load_class_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut names = Vec::new();
    for line in reader.lines() {
        names.push(line?.trim_end().to_string());
    }
    while names.last().is_some_and(|s| s.is_empty()) {
        names.pop();
    }
    Ok(names)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Size("header truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Size("header truncated".into()))?;
    Ok(u64::from_le_bytes(buf))
}
