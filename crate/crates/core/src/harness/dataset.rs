//! Dataset files: headerless CSV and the binary `VQDS` layout.
//!
//! `VQDS` is little-endian: magic `VQDS`, version `u32`, number of
//! dimensions `u32`, each dimension as `u64`, then the `f32` payload. The
//! first dimension is the row count; the remaining ones are flattened into
//! columns.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

pub const MAGIC: &[u8; 4] = b"VQDS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Csv,
    RawF32,
}

impl Layout {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Layout::Csv),
            "raw-f32" => Some(Layout::RawF32),
            _ => None,
        }
    }

    /// `.csv` files are CSV, everything else is `VQDS`.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Layout::Csv,
            _ => Layout::RawF32,
        }
    }
}

/// Per-column standardization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Column means and population standard deviations; constant columns get std 1.
    pub fn fit(data: &DataMatrix) -> Self {
        let (n, d) = (data.rows() as f64, data.cols());
        let mut mean = vec![0.0; d];
        for row in data.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in data.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        if data.cols() != self.mean.len() {
            return Err(Error::shape(
                "standardization columns",
                self.mean.len(),
                data.cols(),
            ));
        }
        let mut m = data.as_ref().clone();
        for r in 0..m.rows() {
            for ((v, mu), sd) in m.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        DataMatrix::try_from(m)
    }

    /// Two comma-separated lines: means, then standard deviations.
    pub fn to_text(&self) -> String {
        let line = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{}\n{}\n", line(&self.mean), line(&self.std))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut parse = |what: &str| -> Result<Vec<f64>> {
            lines
                .next()
                .ok_or_else(|| {
                    Error::format(format!("normalization file is missing the {what} line"))
                })?
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::format(format!("bad {what} value `{t}`")))
                })
                .collect()
        };
        let mean = parse("mean")?;
        let std = parse("std")?;
        if mean.len() != std.len() || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::format(
                "normalization mean/std mismatch or non-positive std",
            ));
        }
        Ok(Self { mean, std })
    }
}

/// A loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub source: PathBuf,
    pub layout: Layout,
    /// Declared shape; the first entry is the row count.
    pub shape: Vec<usize>,
    pub data: DataMatrix,
    pub normalization: Option<Standardization>,
}

impl Dataset {
    pub fn load(path: impl AsRef<Path>, layout: Option<Layout>) -> Result<Self> {
        let path = path.as_ref();
        let layout = layout.unwrap_or_else(|| Layout::infer(path));
        let (shape, data) = match layout {
            Layout::Csv => {
                let data = read_csv(BufReader::new(open(path)?))?;
                (vec![data.rows(), data.cols()], data)
            }
            Layout::RawF32 => read_raw(BufReader::new(open(path)?))?,
        };
        Ok(Self {
            source: path.to_path_buf(),
            layout,
            shape,
            data,
            normalization: None,
        })
    }

    /// Standardizes columns in place and records the parameters.
    pub fn standardize(&mut self) -> Result<()> {
        let s = Standardization::fit(&self.data);
        self.data = s.apply(&self.data)?;
        self.normalization = Some(s);
        Ok(())
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Headerless comma-separated numbers, one row per line.
pub fn read_csv<R: BufRead>(reader: R) -> Result<DataMatrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("line {}: `{tok}` is not a number", n + 1)))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {}: non-finite value", n + 1)));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Data(format!(
                    "line {}: expected {c} columns, found {width}",
                    n + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Data("CSV file has no rows".into()))?;
    DataMatrix::new(rows, cols, data).map_err(|e| Error::Data(e.to_string()))
}

pub fn read_raw<R: Read>(mut reader: R) -> Result<(Vec<usize>, DataMatrix)> {
    let mut head = [0u8; 12];
    reader
        .read_exact(&mut head)
        .map_err(|_| Error::Data("truncated dataset header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Data("bad dataset magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset version {version}"
        )));
    }
    let ndims = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if ndims == 0 || ndims > 16 {
        return Err(Error::Data(format!("unsupported dataset rank {ndims}")));
    }
    let mut shape = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let mut b = [0u8; 8];
        reader
            .read_exact(&mut b)
            .map_err(|_| Error::Data("truncated dataset shape".into()))?;
        shape.push(
            usize::try_from(u64::from_le_bytes(b))
                .map_err(|_| Error::Data("dimension overflows usize".into()))?,
        );
    }
    let total = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Data("dataset size overflows".into()))?;
    let mut bytes = Vec::new();
    reader.take(total as u64 + 1).read_to_end(&mut bytes)?;
    if bytes.len() != total {
        return Err(Error::Data(format!(
            "declared shape {shape:?} needs {total} payload bytes, found {}{}",
            bytes.len().min(total),
            if bytes.len() > total {
                " plus trailing data"
            } else {
                ""
            }
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let rows = shape[0];
    let cols = shape[1..].iter().product::<usize>();
    let data = DataMatrix::new(rows, cols, values).map_err(|e| Error::Data(e.to_string()))?;
    Ok((shape, data))
}

/// Writes `data` as `VQDS` with the given shape (defaults to `[N, D]`).
pub fn write_raw<W: Write>(mut w: W, data: &DataMatrix, shape: Option<&[usize]>) -> Result<()> {
    let default = [data.rows(), data.cols()];
    let shape = shape.unwrap_or(&default);
    if shape.first() != Some(&data.rows()) || shape[1..].iter().product::<usize>() != data.cols() {
        return Err(Error::invalid(format!(
            "shape {shape:?} does not match a {}x{} matrix",
            data.rows(),
            data.cols()
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(mut w: W, data: &DataMatrix) -> Result<()> {
    for row in data.row_iter() {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save(path: impl AsRef<Path>, data: &DataMatrix, layout: Layout) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    match layout {
        Layout::Csv => write_csv(&mut w, data)?,
        Layout::RawF32 => write_raw(&mut w, data, None)?,
    }
    w.flush()?;
    Ok(())
}
