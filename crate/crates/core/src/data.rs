//! Heartbeat records: CSV ingestion, synthetic ECG-like beats and per-record normalization.
//!
//! The CSV format is one record per line, no header: an integer label (`0` normal, `1` VEB)
//! followed by exactly [`BEAT_LEN`] decimal samples.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per heartbeat.
pub const BEAT_LEN: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    /// Ventricular ectopic beat, the positive class.
    Veb,
}

impl Label {
    pub fn as_int(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Veb => 1,
        }
    }

    pub fn from_int(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Veb),
            _ => None,
        }
    }

    pub fn target(self) -> f64 {
        f64::from(self.as_int())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Veb => "veb",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatRecord {
    pub samples: Vec<f64>,
    pub label: Label,
    pub source_id: String,
}

impl HeartbeatRecord {
    pub fn new(samples: Vec<f64>, label: Label, source_id: impl Into<String>) -> Result<Self> {
        if samples.len() != BEAT_LEN {
            return Err(Error::DimensionMismatch {
                expected: BEAT_LEN,
                actual: samples.len(),
            });
        }
        if let Some(j) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("sample {j} is not finite")));
        }
        Ok(Self {
            samples,
            label,
            source_id: source_id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<HeartbeatRecord>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(records: Vec<HeartbeatRecord>, split: SplitTag) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { records, split })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Moves the last `fraction` of the records into a second dataset with the same tag.
    pub fn split_off(mut self, fraction: f64) -> Result<(Dataset, Dataset)> {
        let tail = ((self.len() as f64) * fraction).round() as usize;
        if tail == 0 || tail >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "holdout fraction {fraction} leaves an empty part of {} records",
                self.len()
            )));
        }
        let rest = self.records.split_off(self.len() - tail);
        Ok((
            Dataset::new(self.records, self.split)?,
            Dataset::new(rest, self.split)?,
        ))
    }
}

/// Reads a heartbeat CSV. Blank lines are skipped; anything else must be a complete record.
pub fn load_heartbeats(path: &Path, split: SplitTag) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    parse_heartbeats(&text, &name, split)
}

/// Parses heartbeat CSV text. `origin` prefixes each record's source id.
pub fn parse_heartbeats(text: &str, origin: &str, split: SplitTag) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != BEAT_LEN + 1 {
            return Err(Error::Parse {
                line,
                column: fields.len().min(BEAT_LEN + 1) + 1,
                message: format!("expected a label and {BEAT_LEN} samples, found {} fields", fields.len()),
            });
        }
        let label = fields[0]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_int)
            .ok_or_else(|| Error::Parse {
                line,
                column: 1,
                message: format!("label must be 0 or 1, got `{}`", fields[0]),
            })?;
        let mut samples = Vec::with_capacity(BEAT_LEN);
        for (c, field) in fields[1..].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                column: c + 2,
                message: format!("not a number: `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: c + 2,
                    message: format!("non-finite sample `{field}`"),
                });
            }
            samples.push(v);
        }
        records.push(HeartbeatRecord {
            samples,
            label,
            source_id: format!("{origin}:{line}"),
        });
    }
    Dataset::new(records, split)
}

/// Writes records in the loader's format. Floats use the shortest round-trip representation.
pub fn write_heartbeats<W: Write>(records: &[HeartbeatRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        write!(out, "{}", r.label.as_int())?;
        for v in &r.samples {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_heartbeats(records: &[HeartbeatRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_heartbeats(records, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// One Gaussian bump `amplitude * exp(-(t - center)^2 / (2 width^2))`, time in the `[0, 2]`
/// beat domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: f64,
    pub amplitude: f64,
    pub width: f64,
}

impl Bump {
    fn eval(&self, t: f64) -> f64 {
        let x = (t - self.center) / self.width;
        self.amplitude * (-0.5 * x * x).exp()
    }
}

/// Synthetic beat morphology.
///
/// | wave        | normal: center / amp / width | VEB: center / amp / width |
/// |-------------|------------------------------|---------------------------|
/// | P           | 0.50 / 0.25 / 0.045          | absent                    |
/// | QRS         | 1.00 / 1.00 / 0.020          | 1.00 / 1.00 / 0.060       |
/// | QRS notch   | absent                       | 1.09 / -0.45 / 0.045      |
/// | T           | 1.40 / 0.30 / 0.070          | 1.42 / -0.35 / 0.090      |
pub mod morphology {
    use super::Bump;

    pub const NORMAL: [Bump; 3] = [
        Bump { center: 0.50, amplitude: 0.25, width: 0.045 },
        Bump { center: 1.00, amplitude: 1.00, width: 0.020 },
        Bump { center: 1.40, amplitude: 0.30, width: 0.070 },
    ];

    pub const VEB: [Bump; 3] = [
        Bump { center: 1.00, amplitude: 1.00, width: 0.060 },
        Bump { center: 1.09, amplitude: -0.45, width: 0.045 },
        Bump { center: 1.42, amplitude: -0.35, width: 0.090 },
    ];

    /// Relative jitter applied independently to every amplitude and width.
    pub const SHAPE_JITTER: f64 = 0.10;
    /// Absolute jitter of every center.
    pub const CENTER_JITTER: f64 = 0.02;
    /// Window (in the `[0, 2]` domain) inspected for a P wave.
    pub const P_WINDOW: (f64, f64) = (0.36, 0.64);
}

fn beat_time(j: usize) -> f64 {
    2.0 * j as f64 / (BEAT_LEN - 1) as f64
}

/// Deterministic synthetic beat. White Gaussian noise has standard deviation
/// `noise_level * max|clean beat|`.
pub fn synthesize_heartbeat(seed: u64, label: Label, noise_level: f64) -> Result<HeartbeatRecord> {
    if !(noise_level >= 0.0) || !noise_level.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {noise_level}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = match label {
        Label::Normal => &morphology::NORMAL,
        Label::Veb => &morphology::VEB,
    };
    let bumps: Vec<Bump> = template
        .iter()
        .map(|b| Bump {
            center: b.center + rng.random_range(-morphology::CENTER_JITTER..=morphology::CENTER_JITTER),
            amplitude: b.amplitude * (1.0 + rng.random_range(-morphology::SHAPE_JITTER..=morphology::SHAPE_JITTER)),
            width: b.width * (1.0 + rng.random_range(-morphology::SHAPE_JITTER..=morphology::SHAPE_JITTER)),
        })
        .collect();
    let mut samples: Vec<f64> = (0..BEAT_LEN)
        .map(|j| {
            let t = beat_time(j);
            bumps.iter().map(|b| b.eval(t)).sum()
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if noise_level > 0.0 {
        let noise = Normal::new(0.0, noise_level * peak).expect("finite positive deviation");
        for v in &mut samples {
            *v += noise.sample(&mut rng);
        }
    }
    HeartbeatRecord::new(samples, label, format!("synthetic:{label}:{seed}"))
}

/// `count` synthetic beats, `round(count * veb_fraction)` of them VEB, in shuffled order.
pub fn synthesize_dataset(
    seed: u64,
    count: usize,
    veb_fraction: f64,
    noise_level: f64,
    split: SplitTag,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&veb_fraction) {
        return Err(Error::InvalidParameter(format!("VEB fraction {veb_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_veb = (count as f64 * veb_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..count)
        .map(|i| if i < n_veb { Label::Veb } else { Label::Normal })
        .collect();
    labels.shuffle(&mut rng);
    let records = labels
        .into_iter()
        .map(|label| synthesize_heartbeat(rng.random(), label, noise_level))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, split)
}

/// Share of a record's energy inside the P window.
pub fn p_window_energy_ratio(samples: &[f64]) -> f64 {
    let (lo, hi) = morphology::P_WINDOW;
    let total: f64 = samples.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0.0;
    }
    let window: f64 = samples
        .iter()
        .enumerate()
        .filter(|(j, _)| (lo..=hi).contains(&beat_time(*j)))
        .map(|(_, v)| v * v)
        .sum();
    window / total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Zscore,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(Normalization::Zscore),
            "none" => Ok(Normalization::None),
            other => Err(Error::InvalidParameter(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Per-record standardization to zero mean and unit (population) variance. Constant records
/// are returned unchanged.
pub fn zscore(samples: &[f64]) -> Option<Vec<f64>> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return None;
    }
    Some(samples.iter().map(|v| (v - mean) / sd).collect())
}

pub fn normalize(dataset: &Dataset, scheme: Normalization) -> Dataset {
    let mut out = dataset.clone();
    if scheme == Normalization::None {
        return out;
    }
    for r in &mut out.records {
        match zscore(&r.samples) {
            Some(z) => r.samples = z,
            None => log::warn!("record {} is constant; left unnormalized", r.source_id),
        }
    }
    out
}
