//! A small feed-forward softmax classifier trained against soft targets.
//!
//! One hidden tanh layer, mini-batch SGD on the cross-entropy between the
//! predicted distribution and the target distribution. The same model and
//! training routine serve as Teacher, Student, and every baseline: training
//! on hard labels is training on their one-hot encoding.
//!
//! Training is exposed both as a one-shot [`fit_classifier`] and as an
//! epoch-stepped [`Trainer`] so callers can interleave evaluation, early
//! stopping, federated aggregation rounds, or dataset swaps between epochs.

use crate::data::{argmax_lowest, LabeledDataset, SoftDataset};
use crate::error::CoreError;
use crate::rng::RngStream;
use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Hidden-layer width used when a dimension is not chosen explicitly.
pub const DEFAULT_HIDDEN_DIM: usize = 64;

const FORMAT_MAGIC: &[u8; 4] = b"FKRC";
const FORMAT_VERSION: u32 = 1;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

/// Learning-rate schedule over the configured epoch budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Training hyperparameters plus the stream that drives initialization and
/// epoch shuffling. Identical configs produce bit-identical models.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub rng: RngStream,
}

impl TrainConfig {
    /// Defaults: batch 32, learning rate 0.05, cosine decay.
    pub fn new(epochs: usize, rng: RngStream) -> Self {
        Self {
            epochs,
            batch_size: 32,
            learning_rate: 0.05,
            lr_schedule: LrSchedule::Cosine,
            rng,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.epochs == 0 {
            return Err(CoreError::InvalidSpec("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidSpec("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(CoreError::InvalidSpec(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Two affine layers with a tanh hidden activation and softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    activation: Activation,
}

/// Gradients of the mean cross-entropy loss, one entry per parameter tensor.
#[derive(Debug, Clone)]
pub struct ClassifierGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ClassifierModel {
    /// Xavier-uniform initialization drawn from `rng`; biases start at zero.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        n_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lim1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let lim2 = (6.0 / (hidden_dim + n_classes) as f64).sqrt();
        let mut draw = |lim: f64, rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-lim..lim))
        };
        Self {
            w1: draw(lim1, input_dim, hidden_dim),
            b1: Array1::zeros(hidden_dim),
            w2: draw(lim2, hidden_dim, n_classes),
            b2: Array1::zeros(n_classes),
            activation: Activation::Tanh,
        }
    }

    /// All-zero parameters; predicts the uniform distribution everywhere.
    pub fn zeros(input_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        Self {
            w1: Array2::zeros((input_dim, hidden_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array2::zeros((hidden_dim, n_classes)),
            b2: Array1::zeros(n_classes),
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check_features(&self, features: &ArrayView2<'_, f64>) -> Result<(), CoreError> {
        if features.ncols() != self.input_dim() {
            return Err(CoreError::ShapeMismatch(format!(
                "model expects feature_dim {}, got {}",
                self.input_dim(),
                features.ncols()
            )));
        }
        Ok(())
    }

    /// Pre-softmax outputs, one row per input row.
    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>, CoreError> {
        self.check_features(&features)?;
        let mut z1 = features.dot(&self.w1);
        z1 += &self.b1;
        let h = z1.mapv_into(f64::tanh);
        let mut z2 = h.dot(&self.w2);
        z2 += &self.b2;
        Ok(z2)
    }

    /// Softmax class probabilities; every row sums to one.
    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>, CoreError> {
        let mut z = self.logits(features)?;
        softmax_rows_inplace(&mut z);
        Ok(z)
    }

    /// Per-sample cross-entropy of the true label under the model, the score
    /// base for the membership-inference probe.
    pub fn cross_entropy_losses(&self, data: &LabeledDataset) -> Result<Vec<f64>, CoreError> {
        if data.n_classes() != self.n_classes() {
            return Err(CoreError::ShapeMismatch(format!(
                "model has {} classes, data has {}",
                self.n_classes(),
                data.n_classes()
            )));
        }
        let logp = log_softmax_rows(self.logits(data.features())?);
        Ok(data
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| -logp[[i, l]])
            .collect())
    }

    /// Parameters in serialization order: w1 row-major, b1, w2 row-major, b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    /// Rebuild a model from [`ClassifierModel::flatten`] output.
    pub fn from_flat(
        input_dim: usize,
        hidden_dim: usize,
        n_classes: usize,
        params: &[f64],
    ) -> Result<Self, CoreError> {
        let expected = input_dim * hidden_dim + hidden_dim + hidden_dim * n_classes + n_classes;
        if params.len() != expected {
            return Err(CoreError::ShapeMismatch(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let w1 = Array2::from_shape_vec((input_dim, hidden_dim), take(input_dim * hidden_dim))
            .expect("shape checked");
        let b1 = Array1::from_vec(take(hidden_dim));
        let w2 = Array2::from_shape_vec((hidden_dim, n_classes), take(hidden_dim * n_classes))
            .expect("shape checked");
        let b2 = Array1::from_vec(take(n_classes));
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            activation: Activation::Tanh,
        })
    }

    /// Versioned binary layout: magic, format version, dims, activation tag,
    /// then parameters as little-endian 64-bit floats in flatten order.
    /// Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.flatten();
        let mut buf = Vec::with_capacity(24 + params.len() * 8);
        buf.extend_from_slice(FORMAT_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for dim in [self.input_dim(), self.hidden_dim(), self.n_classes()] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        buf.push(match self.activation {
            Activation::Tanh => 0,
        });
        let mut tail = vec![0u8; params.len() * 8];
        LittleEndian::write_f64_into(&params, &mut tail);
        buf.extend_from_slice(&tail);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CoreError> {
        let header = 4 + 4 + 12 + 1;
        if bytes.len() < header {
            return Err(CoreError::Deserialize("truncated header".into()));
        }
        if &bytes[..4] != FORMAT_MAGIC {
            return Err(CoreError::Deserialize("bad magic".into()));
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != FORMAT_VERSION {
            return Err(CoreError::Deserialize(format!(
                "unsupported format version {version}"
            )));
        }
        let input_dim = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let hidden_dim = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let n_classes = LittleEndian::read_u32(&bytes[16..20]) as usize;
        let activation = match bytes[20] {
            0 => Activation::Tanh,
            t => return Err(CoreError::Deserialize(format!("unknown activation tag {t}"))),
        };
        let expected = input_dim * hidden_dim + hidden_dim + hidden_dim * n_classes + n_classes;
        if bytes.len() != header + expected * 8 {
            return Err(CoreError::Deserialize(format!(
                "expected {} payload bytes, got {}",
                expected * 8,
                bytes.len() - header
            )));
        }
        let mut params = vec![0.0f64; expected];
        LittleEndian::read_f64_into(&bytes[header..], &mut params);
        let mut model = Self::from_flat(input_dim, hidden_dim, n_classes, &params)?;
        model.activation = activation;
        Ok(model)
    }
}

fn softmax_rows_inplace(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
}

fn log_softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v = *v - max - log_sum;
        }
    }
    z
}

/// Mean cross-entropy between soft targets and model predictions on a batch.
pub fn cross_entropy_loss(
    model: &ClassifierModel,
    features: ArrayView2<'_, f64>,
    soft_targets: ArrayView2<'_, f64>,
) -> Result<f64, CoreError> {
    Ok(loss_and_gradients(model, features, soft_targets)?.0)
}

/// Mean cross-entropy loss and its analytic gradients on a batch.
pub fn loss_and_gradients(
    model: &ClassifierModel,
    features: ArrayView2<'_, f64>,
    soft_targets: ArrayView2<'_, f64>,
) -> Result<(f64, ClassifierGradients), CoreError> {
    model.check_features(&features)?;
    if soft_targets.nrows() != features.nrows() || soft_targets.ncols() != model.n_classes() {
        return Err(CoreError::ShapeMismatch(
            "soft targets do not match batch/model shape".into(),
        ));
    }
    let n = features.nrows();
    if n == 0 {
        return Err(CoreError::EmptyDataset);
    }
    let inv_n = 1.0 / n as f64;

    let mut z1 = features.dot(&model.w1);
    z1 += &model.b1;
    let h = z1.mapv_into(f64::tanh);
    let mut z2 = h.dot(&model.w2);
    z2 += &model.b2;

    let logp = log_softmax_rows(z2);
    let loss = -(&soft_targets * &logp).sum() * inv_n;

    // dL/dz2 = (softmax(z2) - t) / n
    let mut dz2 = logp.mapv_into(f64::exp);
    dz2 -= &soft_targets;
    dz2 *= inv_n;

    let gw2 = h.t().dot(&dz2);
    let gb2 = dz2.sum_axis(Axis(0));
    let dh = dz2.dot(&model.w2.t());
    let dz1 = dh * h.mapv(|v| 1.0 - v * v);
    let gw1 = features.t().dot(&dz1);
    let gb1 = dz1.sum_axis(Axis(0));

    Ok((
        loss,
        ClassifierGradients {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        },
    ))
}

/// Mini-batch SGD driver that exposes one epoch at a time. Holds the model,
/// the position in the learning-rate schedule, and the shuffle stream, so a
/// training run can be paused, evaluated, aggregated, or pointed at a
/// different dataset between epochs without breaking determinism.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: ClassifierModel,
    total_epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    lr_schedule: LrSchedule,
    epoch: usize,
    shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh model initialized from `cfg.rng`'s `init` substream; shuffling
    /// comes from the `shuffle` substream.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        n_classes: usize,
        cfg: &TrainConfig,
    ) -> Result<Self, CoreError> {
        cfg.validate()?;
        let model = ClassifierModel::init(
            input_dim,
            hidden_dim,
            n_classes,
            &mut cfg.rng.derive("init").rng(),
        );
        Ok(Self {
            model,
            total_epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            lr_schedule: cfg.lr_schedule,
            epoch: 0,
            shuffle_rng: cfg.rng.derive("shuffle").rng(),
        })
    }

    /// Continue training an existing model from `start_epoch` with an
    /// explicit shuffle generator, e.g. across federated rounds.
    pub fn resume(
        model: ClassifierModel,
        cfg: &TrainConfig,
        start_epoch: usize,
        shuffle_rng: ChaCha8Rng,
    ) -> Result<Self, CoreError> {
        cfg.validate()?;
        Ok(Self {
            model,
            total_epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            lr_schedule: cfg.lr_schedule,
            epoch: start_epoch,
            shuffle_rng,
        })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    /// Epochs completed so far (position in the lr schedule).
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn into_model(self) -> ClassifierModel {
        self.model
    }

    pub fn into_parts(self) -> (ClassifierModel, ChaCha8Rng) {
        (self.model, self.shuffle_rng)
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.total_epochs as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    /// One shuffled pass over `data`; returns the mean batch loss.
    pub fn run_epoch(&mut self, data: &SoftDataset) -> Result<f64, CoreError> {
        if data.n_samples() == 0 {
            return Err(CoreError::EmptyDataset);
        }
        if data.feature_dim() != self.model.input_dim()
            || data.n_classes() != self.model.n_classes()
        {
            return Err(CoreError::ShapeMismatch(
                "training data does not match model dimensions".into(),
            ));
        }
        let lr = self.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..data.n_samples()).collect();
        order.shuffle(&mut self.shuffle_rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let x = data.features().select(Axis(0), chunk);
            let t = data.soft_labels().select(Axis(0), chunk);
            let (loss, g) = loss_and_gradients(&self.model, x.view(), t.view())?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged { epoch: self.epoch });
            }
            self.model.w1.scaled_add(-lr, &g.w1);
            self.model.b1.scaled_add(-lr, &g.b1);
            self.model.w2.scaled_add(-lr, &g.w2);
            self.model.b2.scaled_add(-lr, &g.b2);
            loss_sum += loss * chunk.len() as f64;
        }
        self.epoch += 1;
        Ok(loss_sum / data.n_samples() as f64)
    }
}

/// Train a fresh classifier on soft targets for the full configured budget.
/// Hidden width is [`DEFAULT_HIDDEN_DIM`].
pub fn fit_classifier(data: &SoftDataset, cfg: &TrainConfig) -> Result<ClassifierModel, CoreError> {
    if data.n_samples() == 0 {
        return Err(CoreError::EmptyDataset);
    }
    let mut trainer = Trainer::new(
        data.feature_dim(),
        DEFAULT_HIDDEN_DIM,
        data.n_classes(),
        cfg,
    )?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch(data)?;
    }
    Ok(trainer.into_model())
}

/// Fraction of samples whose argmax prediction equals the label; prediction
/// ties resolve to the lowest class index, consistent with hardening.
pub fn accuracy(model: &ClassifierModel, data: &LabeledDataset) -> Result<f64, CoreError> {
    if data.n_samples() == 0 {
        return Err(CoreError::EmptyDataset);
    }
    if data.n_classes() != model.n_classes() {
        return Err(CoreError::ShapeMismatch(format!(
            "model has {} classes, data has {}",
            model.n_classes(),
            data.n_classes()
        )));
    }
    let proba = model.predict_proba(data.features())?;
    let hits = proba
        .rows()
        .into_iter()
        .zip(data.labels())
        .filter(|(row, &label)| argmax_lowest(row.view()) == label)
        .count();
    Ok(hits as f64 / data.n_samples() as f64)
}

/// Parameter-wise weighted mean of identically shaped models, with weights
/// normalized to sum to one.
pub fn fedavg_combine(
    models: &[ClassifierModel],
    weights: &[f64],
) -> Result<ClassifierModel, CoreError> {
    if models.is_empty() {
        return Err(CoreError::InvalidWeights("no models to combine".into()));
    }
    if models.len() != weights.len() {
        return Err(CoreError::InvalidWeights(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(CoreError::InvalidWeights(
            "weights must be non-negative and finite".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::InvalidWeights("weights sum to zero".into()));
    }
    let first = &models[0];
    for m in models {
        if m.input_dim() != first.input_dim()
            || m.hidden_dim() != first.hidden_dim()
            || m.n_classes() != first.n_classes()
            || m.activation != first.activation
        {
            return Err(CoreError::ArchitectureMismatch(
                "all models must share dimensions and activation".into(),
            ));
        }
    }
    let mut combined = ClassifierModel::zeros(first.input_dim(), first.hidden_dim(), first.n_classes());
    for (m, &w) in models.iter().zip(weights) {
        let scale = w / total;
        combined.w1.scaled_add(scale, &m.w1);
        combined.b1.scaled_add(scale, &m.b1);
        combined.w2.scaled_add(scale, &m.w2);
        combined.b2.scaled_add(scale, &m.b2);
    }
    Ok(combined)
}
