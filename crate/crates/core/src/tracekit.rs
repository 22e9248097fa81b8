//! Trace containers, min-max normalization and dataset files.
//!
//! Datasets are stored in the `SCDT` binary format:
//!
//! ```text
//! "SCDT" | version u8 | w u32 | channels u32 | records u32
//! label count u16 | per label: group u8, name len u8, name bytes, prior f64
//! per record: session u32, instr u16, group u8, power w x f32, em w x f32
//! crc32 u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 315;

const MAGIC: &[u8; 4] = b"SCDT";
const FORMAT_VERSION: u8 = 1;
const CHANNELS: u32 = 2;

/// One channel's samples for one instruction window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace(Vec<f32>);

impl Trace {
    pub fn new(samples: Vec<f32>) -> Self {
        Trace(samples)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl From<Vec<f32>> for Trace {
    fn from(v: Vec<f32>) -> Self {
        Trace(v)
    }
}

/// Simultaneously captured power and EM traces of the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrace {
    power: Trace,
    em: Trace,
}

impl DualTrace {
    pub fn new(power: Trace, em: Trace) -> Result<Self> {
        if power.len() != em.len() {
            return Err(Error::DimensionMismatch {
                expected: power.len(),
                found: em.len(),
            });
        }
        Ok(DualTrace { power, em })
    }

    pub fn power(&self) -> &Trace {
        &self.power
    }

    pub fn em(&self) -> &Trace {
        &self.em
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }
}

/// Name and group of one instruction label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub name: String,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub trace: DualTrace,
    pub instr: usize,
    pub group: usize,
    pub session: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    labels: Vec<LabelInfo>,
    records: Vec<Record>,
    class_priors: Vec<f64>,
}

impl LabeledDataset {
    /// Builds a dataset with priors equal to the empirical label frequencies.
    pub fn new(labels: Vec<LabelInfo>, records: Vec<Record>) -> Result<Self> {
        let mut counts = vec![0usize; labels.len()];
        for r in &records {
            if r.instr >= labels.len() {
                return Err(Error::Format(format!("label index {} out of range", r.instr)));
            }
            counts[r.instr] += 1;
        }
        let n = records.len().max(1) as f64;
        let priors = counts.iter().map(|&c| c as f64 / n).collect();
        Self::with_priors(labels, records, priors)
    }

    pub fn with_priors(
        labels: Vec<LabelInfo>,
        records: Vec<Record>,
        class_priors: Vec<f64>,
    ) -> Result<Self> {
        if class_priors.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: class_priors.len(),
                right: labels.len(),
            });
        }
        let w = records.first().map(|r| r.trace.len());
        for r in &records {
            let info = labels
                .get(r.instr)
                .ok_or_else(|| Error::Format(format!("label index {} out of range", r.instr)))?;
            if info.group != r.group {
                return Err(Error::GroupMismatch {
                    instr: info.name.clone(),
                    expected: info.group,
                    found: r.group,
                });
            }
            if let Some(w) = w {
                if r.trace.len() != w {
                    return Err(Error::RaggedTraces {
                        expected: w,
                        found: r.trace.len(),
                    });
                }
            }
        }
        if !records.is_empty() {
            let total: f64 = class_priors.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Format(format!("class priors sum to {total}")));
            }
        }
        Ok(LabeledDataset {
            labels,
            records,
            class_priors,
        })
    }

    pub fn labels(&self) -> &[LabelInfo] {
        &self.labels
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn class_priors(&self) -> &[f64] {
        &self.class_priors
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Window size, or `None` for an empty dataset.
    pub fn window(&self) -> Option<usize> {
        self.records.first().map(|r| r.trace.len())
    }

    pub fn instr_labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.instr).collect()
    }

    pub fn group_labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.group).collect()
    }

    /// Keeps the records at `indices` (in that order); priors are recomputed.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.labels.clone(), records)
    }

    /// Writes one CSV row per record: session, group, instruction, power[0..w), em[0..w).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let w = self.window().unwrap_or(0);
        out.push_str("session_id,group,instruction");
        for k in 0..w {
            out.push_str(&format!(",p{k}"));
        }
        for k in 0..w {
            out.push_str(&format!(",em{k}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}",
                r.session,
                r.group + 1,
                self.labels[r.instr].name
            ));
            for v in r.trace.power().samples().iter().chain(r.trace.em().samples()) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Per-index bounds of one channel over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl ChannelBounds {
    fn from_first(samples: &[f32]) -> Self {
        ChannelBounds {
            min: samples.to_vec(),
            max: samples.to_vec(),
        }
    }

    fn absorb(&mut self, samples: &[f32]) {
        for ((lo, hi), &v) in self.min.iter_mut().zip(self.max.iter_mut()).zip(samples) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn is_constant(&self, k: usize) -> bool {
        self.max[k] == self.min[k]
    }

    pub fn constant_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_constant(k)).collect()
    }

    /// `clamp((v - min) / (max - min), 0, 1)`; constant indices map to 0.5.
    pub fn normalize(&self, trace: &Trace) -> Result<Trace> {
        if trace.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: trace.len(),
            });
        }
        let mut out = Vec::with_capacity(trace.len());
        self.normalize_into(trace.samples(), &mut out);
        Ok(Trace(out))
    }

    pub(crate) fn normalize_into(&self, samples: &[f32], out: &mut Vec<f32>) {
        out.extend(samples.iter().enumerate().map(|(k, &v)| {
            let (lo, hi) = (self.min[k] as f64, self.max[k] as f64);
            if hi == lo {
                0.5
            } else {
                ((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0) as f32
            }
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub power: ChannelBounds,
    pub em: ChannelBounds,
}

impl NormalizationStats {
    pub fn window(&self) -> usize {
        self.power.len()
    }

    pub fn normalize_dual(&self, dual: &DualTrace) -> Result<DualTrace> {
        DualTrace::new(self.power.normalize(dual.power())?, self.em.normalize(dual.em())?)
    }
}

/// Per-index, per-channel min/max over every training trace.
pub fn fit_normalizer(dataset: &LabeledDataset) -> Result<NormalizationStats> {
    let first = dataset.records.first().ok_or(Error::EmptyDataset)?;
    let w = first.trace.len();
    let mut power = ChannelBounds::from_first(first.trace.power().samples());
    let mut em = ChannelBounds::from_first(first.trace.em().samples());
    for r in &dataset.records[1..] {
        if r.trace.len() != w {
            return Err(Error::RaggedTraces {
                expected: w,
                found: r.trace.len(),
            });
        }
        power.absorb(r.trace.power().samples());
        em.absorb(r.trace.em().samples());
    }
    Ok(NormalizationStats { power, em })
}

pub fn normalize(trace: &Trace, bounds: &ChannelBounds) -> Result<Trace> {
    bounds.normalize(trace)
}

pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(dataset)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn encode_dataset(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let w = dataset.window().unwrap_or(0);
    let mut buf = Vec::with_capacity(32 + dataset.len() * (7 + 8 * w));
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&CHANNELS.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    let n_labels = u16::try_from(dataset.labels.len())
        .map_err(|_| Error::Format("too many labels".into()))?;
    buf.extend_from_slice(&n_labels.to_le_bytes());
    for (info, prior) in dataset.labels.iter().zip(&dataset.class_priors) {
        let name = info.name.as_bytes();
        if name.len() > u8::MAX as usize || info.group > u8::MAX as usize {
            return Err(Error::Format(format!("label `{}` not encodable", info.name)));
        }
        buf.push(info.group as u8);
        buf.push(name.len() as u8);
        buf.extend_from_slice(name);
        buf.extend_from_slice(&prior.to_le_bytes());
    }
    for r in &dataset.records {
        buf.extend_from_slice(&r.session.to_le_bytes());
        buf.extend_from_slice(&(r.instr as u16).to_le_bytes());
        buf.push(r.group as u8);
        for v in r.trace.power().samples().iter().chain(r.trace.em().samples()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    // magic + version + crc is the smallest thing that can be a dataset
    if bytes.len() < MAGIC.len() + 1 + 4 {
        return Err(Error::ChecksumMismatch);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: FORMAT_VERSION as u32,
            found: bytes[4] as u32,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::ChecksumMismatch);
    }

    let mut rd = Reader { bytes: body, pos: 5 };
    let w = rd.u32()? as usize;
    let channels = rd.u32()?;
    if channels != CHANNELS {
        return Err(Error::Format(format!("expected 2 channels, found {channels}")));
    }
    let n_records = rd.u32()? as usize;
    let n_labels = rd.u16()? as usize;
    let mut labels = Vec::with_capacity(n_labels);
    let mut priors = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let group = rd.u8()? as usize;
        let len = rd.u8()? as usize;
        let name = std::str::from_utf8(rd.take(len)?)
            .map_err(|_| Error::Format("label name is not utf-8".into()))?
            .to_string();
        labels.push(LabelInfo { name, group });
        priors.push(rd.f64()?);
    }
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let session = rd.u32()?;
        let instr = rd.u16()? as usize;
        let group = rd.u8()? as usize;
        let power = Trace(rd.f32s(w)?);
        let em = Trace(rd.f32s(w)?);
        records.push(Record {
            trace: DualTrace::new(power, em)?,
            instr,
            group,
            session,
        });
    }
    if rd.pos != body.len() {
        return Err(Error::Format("trailing bytes after records".into()));
    }
    LabeledDataset::with_priors(labels, records, priors)
}

/// Dense row-major `f32` matrix: one row per trace, one column per feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::RaggedTraces {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j] as f64).collect()
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Side-by-side concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        let mut data = Vec::with_capacity(self.rows * (self.cols + other.cols));
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols + other.cols,
            data,
        })
    }
}

/// Normalized power and EM matrices of a whole dataset.
pub fn normalize_dataset(
    dataset: &LabeledDataset,
    stats: &NormalizationStats,
) -> Result<(Matrix, Matrix)> {
    let w = stats.window();
    let n = dataset.len();
    let mut power = Vec::with_capacity(n * w);
    let mut em = Vec::with_capacity(n * w);
    for r in dataset.records() {
        if r.trace.len() != w {
            return Err(Error::DimensionMismatch {
                expected: w,
                found: r.trace.len(),
            });
        }
        stats.power.normalize_into(r.trace.power().samples(), &mut power);
        stats.em.normalize_into(r.trace.em().samples(), &mut em);
    }
    Ok((Matrix::new(n, w, power)?, Matrix::new(n, w, em)?))
}
