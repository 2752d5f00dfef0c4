//! Synthetic multi-lead, multi-label records, the `ECOS` dataset file
//! format, and seeded train/validation/test splits.
//!
//! Each latent class owns a characteristic period. When a class is present
//! in a record, a sinusoid with that period, a random amplitude and a random
//! phase is added to a random non-empty subset of leads, on top of Gaussian
//! baseline noise. Telling the classes apart therefore requires receptive
//! fields on the order of each period.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

pub const MAGIC: &[u8; 4] = b"ECOS";
pub const VERSION: u32 = 1;
/// Magic, version, record count, leads, length, classes.
pub const HEADER_BYTES: usize = 4 + 4 + 4 + 2 + 4 + 2;
/// Record id and label mask.
pub const RECORD_HEADER_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Predict the subset of present classes; every record has at least one.
    MultiLabel,
    /// Predict whether any class is present.
    Binary,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" => Ok(Task::MultiLabel),
            "bin" => Ok(Task::Binary),
            other => Err(Error::invalid(
                "data.task",
                format!("{other:?} (expected ml or bin)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub num_records: usize,
    pub length: usize,
    pub leads: usize,
    /// Period in samples of each latent class; also fixes the class count.
    pub class_scales: Vec<usize>,
    pub noise_std: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub task: Task,
    pub label_prob: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_records: 2400,
            length: 512,
            leads: 12,
            class_scales: vec![8, 16, 32, 64, 128, 224],
            noise_std: 0.5,
            amplitude_min: 0.5,
            amplitude_max: 1.5,
            task: Task::MultiLabel,
            label_prob: 0.3,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn num_classes(&self) -> usize {
        self.class_scales.len()
    }

    /// Labels stored per record: one per class, or a single any-class flag.
    pub fn label_count(&self) -> usize {
        match self.task {
            Task::MultiLabel => self.num_classes(),
            Task::Binary => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.class_scales.len();
        if m == 0 || m > 32 {
            return Err(Error::invalid(
                "data.class_scales",
                "between 1 and 32 classes required",
            ));
        }
        let mut sorted = self.class_scales.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(
                "data.class_scales",
                "scales must be distinct",
            ));
        }
        if let Some(&bad) = self
            .class_scales
            .iter()
            .find(|&&s| s < 2 || 2 * s > self.length)
        {
            return Err(Error::invalid(
                "data.class_scales",
                format!(
                    "scale {bad} must be in [2, length/2] for length {}",
                    self.length
                ),
            ));
        }
        if self.leads == 0 || self.leads > u16::MAX as usize {
            return Err(Error::invalid("data.leads", "must be in [1, 65535]"));
        }
        if self.length == 0 || self.length > u32::MAX as usize {
            return Err(Error::invalid("data.length", "must be positive"));
        }
        if !(self.label_prob > 0.0 && self.label_prob <= 1.0) {
            return Err(Error::invalid("data.label_prob", "must be in (0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(
                "data.noise_std",
                "must be finite and non-negative",
            ));
        }
        if !(self.amplitude_min > 0.0 && self.amplitude_min <= self.amplitude_max) {
            return Err(Error::invalid(
                "data.amplitude",
                "need 0 < amplitude_min <= amplitude_max",
            ));
        }
        Ok(())
    }
}

/// One multi-lead signal, stored lead-major as 32-bit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u32,
    pub signal: Vec<f32>,
    /// Bit `m` set when class `m` is present.
    pub labels: u32,
}

impl Record {
    pub fn has_label(&self, m: usize) -> bool {
        self.labels >> m & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub leads: usize,
    pub length: usize,
    pub num_classes: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn empty(leads: usize, length: usize, num_classes: usize) -> Self {
        Dataset {
            leads,
            length,
            num_classes,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.id).collect()
    }

    /// Records whose ids appear in `ids`, in the order of `ids`.
    pub fn subset(&self, ids: &[u32]) -> Result<Dataset> {
        let index: std::collections::HashMap<u32, usize> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id, i))
            .collect();
        let records = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|&i| self.records[i].clone())
                    .ok_or_else(|| Error::invalid("ids", format!("unknown record id {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            records,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Dataset {
        Dataset::empty(self.leads, self.length, self.num_classes)
    }

    /// Signals of the records at `indices`, widened to `S`.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Tensor3<S> {
        let n = self.leads * self.length;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.records[i].signal.iter().map(|&v| S::lit(v as f64)));
        }
        Tensor3::from_vec(indices.len(), self.leads, self.length, data).expect("record sizes")
    }

    pub fn label_rows(&self, indices: &[usize]) -> Vec<Vec<bool>> {
        indices
            .iter()
            .map(|&i| {
                (0..self.num_classes)
                    .map(|m| self.records[i].has_label(m))
                    .collect()
            })
            .collect()
    }

    pub fn targets<S: Scalar>(&self, indices: &[usize]) -> Vec<Vec<S>> {
        self.label_rows(indices)
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|b| if b { S::one() } else { S::zero() })
                    .collect()
            })
            .collect()
    }
}

/// Generates a dataset fully determined by `config` (including its seed).
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::invalid("data.noise_std", e.to_string()))?;
    let m = config.num_classes();
    let (leads, len) = (config.leads, config.length);
    let out_classes = config.label_count();
    let mut records = Vec::with_capacity(config.num_records);
    for id in 0..config.num_records {
        let present = loop {
            let mask = (0..m).fold(0u32, |acc, c| {
                if rng.gen_bool(config.label_prob) {
                    acc | 1 << c
                } else {
                    acc
                }
            });
            if config.task == Task::Binary || mask != 0 {
                break mask;
            }
        };
        let mut signal = vec![0f64; leads * len];
        if config.noise_std > 0.0 {
            for v in &mut signal {
                *v = noise.sample(&mut rng);
            }
        }
        for (c, &period) in config.class_scales.iter().enumerate() {
            if present >> c & 1 == 0 {
                continue;
            }
            let amplitude = rng.gen_range(config.amplitude_min..=config.amplitude_max);
            let phase = rng.gen_range(0.0..period as f64);
            let mut chosen: Vec<usize> = (0..leads).filter(|_| rng.gen_bool(0.5)).collect();
            if chosen.is_empty() {
                chosen.push(rng.gen_range(0..leads));
            }
            for lead in chosen {
                let row = &mut signal[lead * len..(lead + 1) * len];
                for (t, v) in row.iter_mut().enumerate() {
                    *v += amplitude * class_template(period, phase, t);
                }
            }
        }
        let labels = match config.task {
            Task::MultiLabel => present,
            Task::Binary => u32::from(present != 0),
        };
        records.push(Record {
            id: id as u32,
            signal: signal.into_iter().map(|v| v as f32).collect(),
            labels,
        });
    }
    Ok(Dataset {
        leads,
        length: len,
        num_classes: out_classes,
        records,
    })
}

/// Unit-amplitude waveform of a class with period `period` at phase `phase`.
pub fn class_template(period: usize, phase: f64, t: usize) -> f64 {
    (2.0 * PI * (t as f64 + phase) / period as f64).sin()
}

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.leads > u16::MAX as usize
        || dataset.num_classes > 32
        || dataset.length > u32::MAX as usize
    {
        return Err(Error::invalid("dataset", "header fields out of range"));
    }
    let per_record = RECORD_HEADER_BYTES + dataset.leads * dataset.length * 4;
    let mut out = Vec::with_capacity(HEADER_BYTES + dataset.len() * per_record);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.leads as u16).to_le_bytes());
    out.extend_from_slice(&(dataset.length as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.num_classes as u16).to_le_bytes());
    for r in &dataset.records {
        if r.signal.len() != dataset.leads * dataset.length {
            return Err(Error::invalid(
                "dataset",
                format!("record {} has wrong signal size", r.id),
            ));
        }
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&r.labels.to_le_bytes());
        for v in &r.signal {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_array<const N: usize>(bytes: &[u8], at: usize, what: &str) -> Result<[u8; N]> {
    bytes
        .get(at..at + N)
        .map(|s| s.try_into().expect("slice length"))
        .ok_or_else(|| Error::format(at as u64, format!("truncated while reading {what}")))
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if read_array::<4>(bytes, 0, "magic")? != *MAGIC {
        return Err(Error::format(0, "bad magic, expected ECOS"));
    }
    let version = u32::from_le_bytes(read_array(bytes, 4, "version")?);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(bytes, 8, "record count")?) as usize;
    let leads = u16::from_le_bytes(read_array(bytes, 12, "lead count")?) as usize;
    let length = u32::from_le_bytes(read_array(bytes, 14, "length")?) as usize;
    let num_classes = u16::from_le_bytes(read_array(bytes, 18, "class count")?) as usize;
    let samples = leads * length;
    let per_record = RECORD_HEADER_BYTES + samples * 4;
    let expected = HEADER_BYTES + count * per_record;
    if bytes.len() < expected {
        let whole = (bytes.len() - HEADER_BYTES) / per_record;
        let at = HEADER_BYTES + whole * per_record;
        return Err(Error::format(
            at as u64,
            format!("truncated in record {whole} of {count}"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            "trailing bytes after last record",
        ));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let at = HEADER_BYTES + i * per_record;
        let id = u32::from_le_bytes(read_array(bytes, at, "record id")?);
        let labels = u32::from_le_bytes(read_array(bytes, at + 4, "label mask")?);
        if num_classes < 32 && labels >> num_classes != 0 {
            return Err(Error::format(
                (at + 4) as u64,
                format!("label mask {labels:#x} exceeds {num_classes} classes"),
            ));
        }
        let body = &bytes[at + RECORD_HEADER_BYTES..at + per_record];
        let signal = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { id, signal, labels });
    }
    Ok(Dataset {
        leads,
        length,
        num_classes,
        records,
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, encode(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Train/validation/test partition of record ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

fn shuffled(ids: &[u32], seed: u64) -> Result<Vec<u32>> {
    if ids.is_empty() {
        return Err(Error::invalid("ids", "cannot split an empty id list"));
    }
    let mut v = ids.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(v)
}

/// Seeded shuffle, then `floor(n * f)` ids to validation and test each; the
/// remainder goes to train.
pub fn split(ids: &[u32], fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(
            "split",
            format!("fractions {fractions:?} must be in [0,1] and sum to 1"),
        ));
    }
    let n = ids.len() as f64;
    // the tolerance keeps exact products such as 100 * 0.05 from rounding down
    let n_val = (n * fv + 1e-9).floor() as usize;
    let n_test = (n * fs + 1e-9).floor() as usize;
    split_sizes(ids, (ids.len() - n_val - n_test, n_val, n_test), seed)
}

/// Seeded shuffle into explicitly sized partitions (train, validation, test).
pub fn split_sizes(ids: &[u32], sizes: (usize, usize, usize), seed: u64) -> Result<Split> {
    let (nt, nv, ns) = sizes;
    if nt + nv + ns != ids.len() {
        return Err(Error::invalid(
            "split",
            format!("sizes {sizes:?} do not add up to {} ids", ids.len()),
        ));
    }
    let v = shuffled(ids, seed)?;
    Ok(Split {
        val: v[..nv].to_vec(),
        test: v[nv..nv + ns].to_vec(),
        train: v[nv + ns..].to_vec(),
    })
}
