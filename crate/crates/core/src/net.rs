//! VP network: a variable-projection feature layer `c = Psi(eta)^+ f`, one rectified hidden
//! layer and a sigmoid output, trained on binary cross-entropy plus the reconstruction penalty
//!
//! ```text
//! J_VP = alpha / s * sum_i ||f_i - P f_i||^2 / ||f_i||^2
//! ```
//!
//! Gradients treat the wavelet normalization constant as fixed within a step.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{build_jacobian, max_relative_error, GradCheckReport};
use crate::data::{zscore, Dataset, HeartbeatRecord, Label, Normalization, BEAT_LEN};
use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::optim::Adam;
use crate::rgw::{build_wavelet_matrix_with, EtaVector, MotherKind, Wavelet, LAMBDA_MIN};
use crate::vp::VpOperator;

/// Version tag written into model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `tau ~ U[0, 2]`, `lambda` log-uniform on `[0.1, 1.5]`, shape drawn at random.
    #[default]
    Random,
    /// Translations evenly spaced over the signal domain, scales as in `Random`.
    Spread,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitScheme::Random),
            "spread" => Ok(InitScheme::Spread),
            other => Err(Error::InvalidParameter(format!("unknown init scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub hidden_units: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_min: f64,
    pub init_scheme: InitScheme,
    pub mother: MotherKind,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Cross-entropy weight of the VEB class; `None` is unweighted.
    pub positive_weight: Option<f64>,
    pub normalization: Normalization,
    pub signal_len: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            m: 10,
            p: 3,
            n: 4,
            hidden_units: 15,
            alpha: 0.1,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            lambda_min: LAMBDA_MIN,
            init_scheme: InitScheme::Random,
            mother: MotherKind::Rational,
            patience: 20,
            positive_weight: None,
            normalization: Normalization::Zscore,
            signal_len: BEAT_LEN,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m", self.m),
            ("hidden_units", self.hidden_units),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        if self.mother == MotherKind::Rational && self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lambda_min > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda_min must be > 0, got {}", self.lambda_min)));
        }
        if let Some(w) = self.positive_weight {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidParameter(format!("positive_weight must be > 0, got {w}")));
            }
        }
        if self.signal_len < self.m.max(2) {
            return Err(Error::InvalidParameter(format!(
                "signal_len {} is smaller than m = {}",
                self.signal_len, self.m
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SampleGrid> {
        SampleGrid::signal_domain(self.signal_len)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_veb_se: f64,
    pub val_veb_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: NetworkConfig,
    pub eta: EtaVector,
    /// hidden_units x m, stored as rows
    #[serde(with = "matrix_rows")]
    pub hidden_weights: DMatrix<f64>,
    #[serde(with = "vector")]
    pub hidden_bias: DVector<f64>,
    #[serde(with = "vector")]
    pub output_weights: DVector<f64>,
    pub output_bias: f64,
    pub history: Vec<EpochRecord>,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        s.collect_seq(rows)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
    }
}

mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: ModelState,
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl ModelState {
    /// Freshly initialized parameters. The same config (including seed) always gives the same
    /// model.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let eta = EtaVector::random(&mut rng, config.m, config.mother, config.p, config.n);
        let eta = match config.init_scheme {
            InitScheme::Random => eta,
            InitScheme::Spread => {
                let m = config.m;
                let taus = (0..m).map(|k| 2.0 * (k as f64 + 0.5) / m as f64).collect();
                EtaVector::new(eta.scales().to_vec(), taus, eta.mother().clone())?
            }
        };
        let h = config.hidden_units;
        let hidden_weights = glorot(&mut rng, h, config.m);
        let output_weights = glorot(&mut rng, h, 1).column(0).into_owned();
        let mut eta = eta;
        eta.project(config.lambda_min);
        Ok(Self {
            config: config.clone(),
            eta,
            hidden_weights,
            hidden_bias: DVector::zeros(h),
            output_weights,
            output_bias: 0.0,
            history: Vec::new(),
        })
    }

    /// Applies the configured per-record normalization.
    pub fn prepare(&self, samples: &[f64]) -> Vec<f64> {
        match self.config.normalization {
            Normalization::Zscore => zscore(samples).unwrap_or_else(|| samples.to_vec()),
            Normalization::None => samples.to_vec(),
        }
    }

    /// VEB probability of a raw (unnormalized) record.
    pub fn probability(&self, samples: &[f64]) -> Result<f64> {
        let layer = VpLayer::new(&self.eta, &self.config.grid()?)?;
        Ok(forward(self, &layer, &self.prepare(samples))?.probability)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::InvalidParameter(format!(
                "unsupported model format version {version:?}, expected {MODEL_FORMAT_VERSION}"
            )));
        }
        let file: ModelFile = serde_json::from_value(value)?;
        let model = file.model;
        let (h, m) = (model.config.hidden_units, model.config.m);
        if model.eta.m() != m
            || model.hidden_weights.shape() != (h, m)
            || model.hidden_bias.len() != h
            || model.output_weights.len() != h
        {
            return Err(Error::InvalidParameter("model parameter shapes disagree with its config".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write_history_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_history_csv(&self.history, out)
    }

    fn param_count(&self) -> usize {
        let h = self.config.hidden_units;
        self.eta.dim() + h * self.config.m + 2 * h + 1
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.eta.to_flat();
        v.extend(self.hidden_weights.iter());
        v.extend(self.hidden_bias.iter());
        v.extend(self.output_weights.iter());
        v.push(self.output_bias);
        v
    }

    fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        let q = self.eta.dim();
        let (h, m) = self.hidden_weights.shape();
        self.eta = self.eta.with_flat_projected(&v[..q], self.config.lambda_min)?;
        let mut at = q;
        self.hidden_weights.copy_from_slice(&v[at..at + h * m]);
        at += h * m;
        self.hidden_bias.copy_from_slice(&v[at..at + h]);
        at += h;
        self.output_weights.copy_from_slice(&v[at..at + h]);
        self.output_bias = v[at + h];
        Ok(())
    }
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss,val_accuracy,val_veb_se,val_veb_pp")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.val_veb_se, r.val_veb_pp
        )?;
    }
    Ok(())
}

/// Sampled wavelets and their pseudoinverse for one value of `eta`.
pub struct VpLayer {
    pub wavelet: Wavelet,
    pub operator: VpOperator,
    grid: SampleGrid,
}

impl VpLayer {
    pub fn new(eta: &EtaVector, grid: &SampleGrid) -> Result<Self> {
        Self::with_wavelet(eta, eta.wavelet()?, grid)
    }

    /// Uses `wavelet` as given, e.g. with a frozen normalization constant.
    pub fn with_wavelet(eta: &EtaVector, wavelet: Wavelet, grid: &SampleGrid) -> Result<Self> {
        let psi = build_wavelet_matrix_with(eta, &wavelet, grid);
        let operator = VpOperator::new(psi.matrix())?;
        Ok(Self {
            wavelet,
            operator,
            grid: *grid,
        })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub coefficients: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_energy: f64,
    pub signal_energy: f64,
    pub hidden_pre: DVector<f64>,
    pub hidden: DVector<f64>,
    pub logit: f64,
    pub probability: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Forward pass for an already prepared input.
pub fn forward(model: &ModelState, layer: &VpLayer, f: &[f64]) -> Result<ForwardCache> {
    let dec = layer.operator.decompose(f)?;
    if dec.coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation { stage: "vp coefficients" });
    }
    let hidden_pre = &model.hidden_weights * &dec.coefficients + &model.hidden_bias;
    let hidden = hidden_pre.map(|v| v.max(0.0));
    let logit = model.output_weights.dot(&hidden) + model.output_bias;
    if !logit.is_finite() {
        return Err(Error::NonFiniteActivation { stage: "output" });
    }
    Ok(ForwardCache {
        signal_energy: f.iter().map(|v| v * v).sum(),
        coefficients: dec.coefficients,
        residual: dec.residual,
        residual_energy: dec.residual_energy,
        hidden_pre,
        hidden,
        logit,
        probability: sigmoid(logit),
    })
}

/// Loss contributions of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub reconstruction: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.reconstruction
    }
}

fn class_weight(config: &NetworkConfig, target: f64) -> f64 {
    match config.positive_weight {
        Some(w) if target > 0.5 => w,
        _ => 1.0,
    }
}

/// Per-example cross-entropy from the logit.
fn cross_entropy(config: &NetworkConfig, logit: f64, target: f64) -> f64 {
    class_weight(config, target) * (target * softplus(-logit) + (1.0 - target) * softplus(logit))
}

/// Parameter gradients, laid out like the model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub eta: Vec<f64>,
    pub hidden_weights: DMatrix<f64>,
    pub hidden_bias: DVector<f64>,
    pub output_weights: DVector<f64>,
    pub output_bias: f64,
}

impl Gradients {
    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.eta.clone();
        v.extend(self.hidden_weights.iter());
        v.extend(self.hidden_bias.iter());
        v.extend(self.output_weights.iter());
        v.push(self.output_bias);
        v
    }

    fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// A labelled input, already prepared.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub samples: &'a [f64],
    pub target: f64,
}

fn batch_loss_with(model: &ModelState, layer: &VpLayer, batch: &[Example<'_>], strict: bool) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = batch.len() as f64;
    let mut ce = 0.0;
    let mut rec = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let cache = forward(model, layer, ex.samples)?;
        ce += cross_entropy(&model.config, cache.logit, ex.target);
        if cache.signal_energy > 0.0 {
            rec += cache.residual_energy / cache.signal_energy;
        } else if strict {
            return Err(Error::DegenerateSignal { index: i });
        }
    }
    Ok(LossParts {
        cross_entropy: ce / s,
        reconstruction: model.config.alpha / s * rec,
    })
}

/// Mean cross-entropy plus `J_VP` over `batch`.
pub fn loss(model: &ModelState, batch: &[Example<'_>]) -> Result<LossParts> {
    let layer = VpLayer::new(&model.eta, &model.config.grid()?)?;
    batch_loss_with(model, &layer, batch, true)
}

/// Like [`loss`], but with the wavelet (and so its normalization constant) supplied.
pub fn loss_with_wavelet(model: &ModelState, wavelet: Wavelet, batch: &[Example<'_>]) -> Result<LossParts> {
    let layer = VpLayer::with_wavelet(&model.eta, wavelet, &model.config.grid()?)?;
    batch_loss_with(model, &layer, batch, true)
}

/// Loss and gradients of [`loss`] for `batch`. Zero-energy inputs contribute no reconstruction
/// term.
pub fn backward(model: &ModelState, layer: &VpLayer, batch: &[Example<'_>]) -> Result<(LossParts, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = batch.len() as f64;
    let alpha = model.config.alpha;
    let (h, m) = model.hidden_weights.shape();
    let op = &layer.operator;
    let n_rows = op.psi().nrows();

    let mut g_w1 = DMatrix::zeros(h, m);
    let mut g_b1 = DVector::zeros(h);
    let mut g_w2 = DVector::zeros(h);
    let mut g_b2 = 0.0;
    // sum_i <dPsi_q, weights>; see calculus::JacobianBlock::contract
    let mut weights = DMatrix::zeros(n_rows, m);
    let mut ce = 0.0;
    let mut rec = 0.0;

    for ex in batch {
        let cache = forward(model, layer, ex.samples)?;
        ce += cross_entropy(&model.config, cache.logit, ex.target);
        let w = class_weight(&model.config, ex.target);
        let d_logit = w * (cache.probability - ex.target) / s;
        g_b2 += d_logit;
        g_w2.axpy(d_logit, &cache.hidden, 1.0);
        let d_hidden = model
            .output_weights
            .zip_map(&cache.hidden_pre, |wo, z| if z > 0.0 { wo * d_logit } else { 0.0 });
        g_b1 += &d_hidden;
        g_w1.ger(1.0, &d_hidden, &cache.coefficients, 1.0);
        let g_c = model.hidden_weights.tr_mul(&d_hidden);

        // g_c^T dc/d eta_q = <dPsi_q, -(Psi^+)^T g_c c^T + r (G^{-1} g_c)^T>
        let back = op.pinv().tr_mul(&g_c);
        let u = op.gram_inverse() * &g_c;
        weights.ger(-1.0, &back, &cache.coefficients, 1.0);
        weights.ger(1.0, &cache.residual, &u, 1.0);

        if cache.signal_energy > 0.0 {
            rec += cache.residual_energy / cache.signal_energy;
            // d(E2)/d eta_q = <dPsi_q, -2 r c^T>
            let scale = -2.0 * alpha / (s * cache.signal_energy);
            weights.ger(scale, &cache.residual, &cache.coefficients, 1.0);
        } else {
            log::warn!("zero-energy input skipped in the reconstruction penalty");
        }
    }

    let g_eta = build_jacobian(&model.eta, &layer.wavelet, layer.grid()).contract(&weights);
    Ok((
        LossParts {
            cross_entropy: ce / s,
            reconstruction: alpha / s * rec,
        },
        Gradients {
            eta: g_eta,
            hidden_weights: g_w1,
            hidden_bias: g_b1,
            output_weights: g_w2,
            output_bias: g_b2,
        },
    ))
}

/// Confusion counts with VEB as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Veb, Label::Veb) => self.tp += 1,
            (Label::Veb, Label::Normal) => self.fn_ += 1,
            (Label::Normal, Label::Veb) => self.fp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_accuracy: f64,
    pub normal_se: f64,
    pub normal_pp: f64,
    pub veb_se: f64,
    pub veb_pp: f64,
    pub confusion: Confusion,
}

impl Metrics {
    /// Rates with an empty denominator are reported as 0.
    pub fn from_confusion(c: Confusion) -> Self {
        Self {
            total_accuracy: ratio(c.tp + c.tn, c.total()),
            normal_se: ratio(c.tn, c.tn + c.fp),
            normal_pp: ratio(c.tn, c.tn + c.fn_),
            veb_se: ratio(c.tp, c.tp + c.fn_),
            veb_pp: ratio(c.tp, c.tp + c.fp),
            confusion: c,
        }
    }
}

/// Decision threshold on the output probability.
pub const THRESHOLD: f64 = 0.5;

pub fn predict_label(probability: f64) -> Label {
    if probability >= THRESHOLD {
        Label::Veb
    } else {
        Label::Normal
    }
}

fn prepared(model: &ModelState, records: &[HeartbeatRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| model.prepare(&r.samples)).collect()
}

fn examples<'a>(inputs: &'a [Vec<f64>], records: &[HeartbeatRecord]) -> Vec<Example<'a>> {
    inputs
        .iter()
        .zip(records)
        .map(|(s, r)| Example {
            samples: s,
            target: r.label.target(),
        })
        .collect()
}

fn evaluate_prepared(model: &ModelState, layer: &VpLayer, batch: &[Example<'_>]) -> Result<(f64, Metrics)> {
    let mut confusion = Confusion::default();
    let mut ce = 0.0;
    let mut rec = 0.0;
    for ex in batch {
        let cache = forward(model, layer, ex.samples)?;
        ce += cross_entropy(&model.config, cache.logit, ex.target);
        if cache.signal_energy > 0.0 {
            rec += cache.residual_energy / cache.signal_energy;
        }
        let actual = if ex.target > 0.5 { Label::Veb } else { Label::Normal };
        confusion.record(actual, predict_label(cache.probability));
    }
    let s = batch.len() as f64;
    Ok(((ce + model.config.alpha * rec) / s, Metrics::from_confusion(confusion)))
}

/// Metrics of `model` on `dataset` at the fixed threshold.
pub fn evaluate(model: &ModelState, dataset: &Dataset) -> Result<Metrics> {
    let layer = VpLayer::new(&model.eta, &model.config.grid()?)?;
    let inputs = prepared(model, &dataset.records);
    Ok(evaluate_prepared(model, &layer, &examples(&inputs, &dataset.records))?.1)
}

/// Trains from [`ModelState::init`] and returns the parameters with the best validation
/// accuracy.
pub fn train(config: &NetworkConfig, train_set: &Dataset, validation_set: &Dataset) -> Result<ModelState> {
    train_from(ModelState::init(config)?, train_set, validation_set)
}

/// Continues training `model` with its own config.
pub fn train_from(mut model: ModelState, train_set: &Dataset, validation_set: &Dataset) -> Result<ModelState> {
    let config = model.config.clone();
    config.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grid = config.grid()?;
    for r in train_set.records.iter().chain(&validation_set.records) {
        grid.check_len(r.samples.len())?;
    }
    let train_inputs = prepared(&model, &train_set.records);
    let val_inputs = prepared(&model, &validation_set.records);
    let train_examples = examples(&train_inputs, &train_set.records);
    let val_examples = examples(&val_inputs, &validation_set.records);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f7a_1e00);
    let mut adam = Adam::new(model.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    let mut best: Option<(f64, f64, ModelState)> = None;
    let mut since_best = 0;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut finite_batches = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batches += 1;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_examples[i]));
            let layer = VpLayer::new(&model.eta, &grid)?;
            let (parts, grads) = match backward(&model, &layer, &batch) {
                Ok(v) => v,
                Err(e) if e.is_numerical() => {
                    log::warn!("epoch {epoch}: batch skipped ({e})");
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !parts.total().is_finite() || !grads.is_finite() {
                log::warn!("epoch {epoch}: non-finite loss or gradient, batch skipped");
                continue;
            }
            finite_batches += 1;
            epoch_loss += parts.total() * batch.len() as f64;
            let mut params = model.to_flat();
            adam.step(&mut params, &grads.to_flat());
            model.set_flat(&params)?;
        }
        if finite_batches == 0 {
            return Err(Error::Divergence { epoch });
        }
        log::trace!("epoch {epoch}: {finite_batches}/{batches} batches applied");

        let layer = VpLayer::new(&model.eta, &grid)?;
        let (val_loss, metrics) = evaluate_prepared(&model, &layer, &val_examples)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_examples.len() as f64,
            val_loss,
            val_accuracy: metrics.total_accuracy,
            val_veb_se: metrics.veb_se,
            val_veb_pp: metrics.veb_pp,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val acc {:.4}, VEB Se {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_accuracy,
            record.val_veb_se
        );
        model.history.push(record);

        // ties on accuracy go to the lower validation loss
        let improved = best.as_ref().is_none_or(|(acc, loss, _)| {
            metrics.total_accuracy > *acc || (metrics.total_accuracy == *acc && val_loss < *loss)
        });
        if improved {
            best = Some((metrics.total_accuracy, val_loss, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (_, _, mut chosen) = best.expect("at least one epoch ran");
    chosen.history = model.history;
    Ok(chosen)
}

/// Worst relative error of [`backward`] against central differences of the loss, per
/// parameter block. The wavelet normalization constant is frozen at its value for `model.eta`.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct NetGradCheck {
    pub eta: GradCheckReport,
    pub hidden_weights: f64,
    pub hidden_bias: f64,
    pub output_weights: f64,
    pub output_bias: f64,
}

impl NetGradCheck {
    pub fn dense_max(&self) -> f64 {
        [self.hidden_weights, self.hidden_bias, self.output_weights, self.output_bias]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn vector_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_relative_error(
        &DMatrix::from_column_slice(analytic.len(), 1, analytic),
        &DMatrix::from_column_slice(numeric.len(), 1, numeric),
    )
}

pub fn check_gradients(model: &ModelState, batch: &[Example<'_>], step: f64) -> Result<NetGradCheck> {
    let grid = model.config.grid()?;
    let wavelet = model.eta.wavelet()?;
    let norm = wavelet.norm();
    let layer = VpLayer::with_wavelet(&model.eta, wavelet, &grid)?;
    let (_, grads) = backward(model, &layer, batch)?;

    let total = |probe: &ModelState| -> Result<f64> {
        let frozen = Wavelet::with_norm(probe.eta.mother().clone(), norm);
        Ok(loss_with_wavelet(probe, frozen, batch)?.total())
    };
    let central = |set: &dyn Fn(&mut ModelState, f64)| -> Result<f64> {
        let mut plus = model.clone();
        set(&mut plus, step);
        let mut minus = model.clone();
        set(&mut minus, -step);
        Ok((total(&plus)? - total(&minus)?) / (2.0 * step))
    };

    let base = model.eta.to_flat();
    let mut eta_numeric = vec![0.0; base.len()];
    for (q, slot) in eta_numeric.iter_mut().enumerate() {
        *slot = central(&|m: &mut ModelState, d: f64| {
            let mut x = base.clone();
            x[q] += d;
            m.eta = m.eta.with_flat(&x).expect("perturbed parameters stay valid");
        })?;
    }
    let mut report = NetGradCheck::default();
    let mut by_kind: Vec<(crate::rgw::ParamKind, Vec<f64>, Vec<f64>)> = Vec::new();
    for q in 0..base.len() {
        let kind = model.eta.param_kind(q);
        let name = kind.block_name();
        match by_kind.iter_mut().find(|(k, _, _)| k.block_name() == name) {
            Some((_, a, n)) => {
                a.push(grads.eta[q]);
                n.push(eta_numeric[q]);
            }
            None => by_kind.push((kind, vec![grads.eta[q]], vec![eta_numeric[q]])),
        }
    }
    for (kind, a, n) in &by_kind {
        report.eta.record(*kind, vector_error(a, n));
    }

    let (h, m) = model.hidden_weights.shape();
    let mut w1 = DMatrix::zeros(h, m);
    for i in 0..h {
        for j in 0..m {
            w1[(i, j)] = central(&|mm: &mut ModelState, d: f64| mm.hidden_weights[(i, j)] += d)?;
        }
    }
    report.hidden_weights = max_relative_error(&grads.hidden_weights, &w1);
    let mut b1 = vec![0.0; h];
    let mut w2 = vec![0.0; h];
    for i in 0..h {
        b1[i] = central(&|mm: &mut ModelState, d: f64| mm.hidden_bias[i] += d)?;
        w2[i] = central(&|mm: &mut ModelState, d: f64| mm.output_weights[i] += d)?;
    }
    report.hidden_bias = vector_error(grads.hidden_bias.as_slice(), &b1);
    report.output_weights = vector_error(grads.output_weights.as_slice(), &w2);
    let b2 = central(&|mm: &mut ModelState, d: f64| mm.output_bias += d)?;
    report.output_bias = vector_error(&[grads.output_bias], &[b2]);
    Ok(report)
}
