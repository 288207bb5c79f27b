//! Class-conditional Gaussian-mixture generator.
//!
//! Each class owns a diagonal-covariance mixture fitted by per-class
//! expectation-maximization, with one immutable checkpoint emitted after
//! every full pass so a downstream selection step can pick the best one.
//! Sampling applies a runtime standard-deviation multiplier `sigma` on top
//! of the fitted component scales.

use crate::data::LabeledDataset;
use crate::error::CoreError;
use crate::rng::RngStream;
use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Lower bound on fitted component standard deviations.
pub const STD_FLOOR: f64 = 1e-3;

const FORMAT_MAGIC: &[u8; 4] = b"FKRG";
const FORMAT_VERSION: u32 = 1;
const LOG_2PI: f64 = 1.837_877_066_409_345_4;

/// Diagonal Gaussian mixture for one class.
#[derive(Debug, Clone, PartialEq)]
struct ClassMixture {
    /// Component weights, summing to one.
    weights: Vec<f64>,
    /// `n_components x feature_dim` component means.
    means: Array2<f64>,
    /// `n_components x feature_dim` component standard deviations.
    stds: Array2<f64>,
}

impl ClassMixture {
    fn log_density(&self, x: &[f64]) -> f64 {
        let k = self.weights.len();
        let mut acc = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(k);
        for c in 0..k {
            let mut lp = self.weights[c].ln();
            for (j, &v) in x.iter().enumerate() {
                let s = self.stds[[c, j]];
                let z = (v - self.means[[c, j]]) / s;
                lp += -0.5 * (LOG_2PI + z * z) - s.ln();
            }
            acc = acc.max(lp);
            terms.push(lp);
        }
        acc + terms.iter().map(|t| (t - acc).exp()).sum::<f64>().ln()
    }
}

/// Class-conditional mixture generator with empirical class prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    feature_dim: usize,
    n_components: usize,
    class_prior: Vec<f64>,
    mixtures: Vec<ClassMixture>,
}

/// Immutable snapshot of the generator after one EM pass. Epochs count
/// from one: the checkpoint at `epoch_index = e` reflects `e` full passes.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorCheckpoint {
    pub epoch_index: usize,
    pub model: GeneratorModel,
}

impl GeneratorModel {
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.mixtures.len()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn class_prior(&self) -> &[f64] {
        &self.class_prior
    }

    /// Total data log-likelihood under the model, each sample scored by its
    /// own class mixture. Non-decreasing over EM passes.
    pub fn log_likelihood(&self, data: &LabeledDataset) -> Result<f64, CoreError> {
        if data.feature_dim() != self.feature_dim || data.n_classes() != self.n_classes() {
            return Err(CoreError::ShapeMismatch(
                "data does not match generator dimensions".into(),
            ));
        }
        let mut total = 0.0;
        let mut row = vec![0.0; self.feature_dim];
        for (i, &label) in data.labels().iter().enumerate() {
            for (j, v) in data.row(i).iter().enumerate() {
                row[j] = *v;
            }
            total += self.mixtures[label].log_density(&row);
        }
        Ok(total)
    }

    /// Versioned binary layout: magic, format version, dims, then class
    /// prior, weights, means, and stds as little-endian 64-bit floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(FORMAT_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for dim in [self.n_classes(), self.feature_dim, self.n_components] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        let mut values: Vec<f64> = self.class_prior.clone();
        for mix in &self.mixtures {
            values.extend(&mix.weights);
            values.extend(mix.means.iter());
            values.extend(mix.stds.iter());
        }
        let mut tail = vec![0u8; values.len() * 8];
        LittleEndian::write_f64_into(&values, &mut tail);
        buf.extend_from_slice(&tail);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CoreError> {
        let header = 4 + 4 + 12;
        if bytes.len() < header || &bytes[..4] != FORMAT_MAGIC {
            return Err(CoreError::Deserialize("bad magic or truncated header".into()));
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != FORMAT_VERSION {
            return Err(CoreError::Deserialize(format!(
                "unsupported format version {version}"
            )));
        }
        let n_classes = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let feature_dim = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let n_components = LittleEndian::read_u32(&bytes[16..20]) as usize;
        let per_class = n_components * (1 + 2 * feature_dim);
        let expected = n_classes + n_classes * per_class;
        if bytes.len() != header + expected * 8 {
            return Err(CoreError::Deserialize("payload length mismatch".into()));
        }
        let mut values = vec![0.0f64; expected];
        LittleEndian::read_f64_into(&bytes[header..], &mut values);
        let class_prior = values[..n_classes].to_vec();
        let mut mixtures = Vec::with_capacity(n_classes);
        let mut offset = n_classes;
        for _ in 0..n_classes {
            let weights = values[offset..offset + n_components].to_vec();
            offset += n_components;
            let means = Array2::from_shape_vec(
                (n_components, feature_dim),
                values[offset..offset + n_components * feature_dim].to_vec(),
            )
            .expect("shape checked");
            offset += n_components * feature_dim;
            let stds = Array2::from_shape_vec(
                (n_components, feature_dim),
                values[offset..offset + n_components * feature_dim].to_vec(),
            )
            .expect("shape checked");
            offset += n_components * feature_dim;
            mixtures.push(ClassMixture {
                weights,
                means,
                stds,
            });
        }
        Ok(Self {
            feature_dim,
            n_components,
            class_prior,
            mixtures,
        })
    }
}

/// Fit one diagonal mixture per class by EM, running `epochs` full passes
/// and snapshotting the model after each pass. The class prior is the
/// empirical class frequency; component standard deviations are floored at
/// [`STD_FLOOR`]. Initialization is k-means++ style seeding from `rng`.
pub fn fit_generator(
    data: &LabeledDataset,
    n_components: usize,
    epochs: usize,
    rng: &RngStream,
) -> Result<Vec<GeneratorCheckpoint>, CoreError> {
    if data.n_samples() == 0 {
        return Err(CoreError::EmptyDataset);
    }
    if n_components == 0 || epochs == 0 {
        return Err(CoreError::InvalidSpec(
            "n_components and epochs must be positive".into(),
        ));
    }
    let counts = data.class_counts();
    for (class, &count) in counts.iter().enumerate() {
        if count < n_components {
            return Err(CoreError::ClassTooSmall {
                class,
                count,
                needed: n_components,
            });
        }
    }

    let n = data.n_samples();
    let d = data.feature_dim();
    let class_prior: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    // Group row indices by class; iteration order is fixed by class index.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }

    let mut r = rng.rng();
    let mut states: Vec<EmState> = by_class
        .iter()
        .map(|rows| EmState::init(data, rows, n_components, &mut r))
        .collect();

    let mut checkpoints = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        for (class, rows) in by_class.iter().enumerate() {
            states[class].em_pass(data, rows);
        }
        let mixtures = states.iter().map(EmState::mixture).collect();
        checkpoints.push(GeneratorCheckpoint {
            epoch_index: epoch,
            model: GeneratorModel {
                feature_dim: d,
                n_components,
                class_prior: class_prior.clone(),
                mixtures,
            },
        });
    }
    Ok(checkpoints)
}

/// Per-class EM working state.
struct EmState {
    weights: Vec<f64>,
    means: Array2<f64>,
    stds: Array2<f64>,
}

impl EmState {
    /// k-means++ seeding: means are data points chosen with probability
    /// proportional to squared distance from the already chosen ones;
    /// initial stds are the per-coordinate class standard deviation.
    fn init(data: &LabeledDataset, rows: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = data.feature_dim();
        let n = rows.len();

        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        chosen.push(rows[rng.random_range(0..n)]);
        let mut dist2 = vec![0.0f64; n];
        while chosen.len() < k {
            let mut total = 0.0;
            for (slot, &row) in rows.iter().enumerate() {
                let best = chosen
                    .iter()
                    .map(|&c| sq_dist(data, row, c))
                    .fold(f64::INFINITY, f64::min);
                dist2[slot] = best;
                total += best;
            }
            let pick = if total > 0.0 {
                let mut u = rng.random_range(0.0..total);
                let mut idx = n - 1;
                for (slot, &w) in dist2.iter().enumerate() {
                    if u < w {
                        idx = slot;
                        break;
                    }
                    u -= w;
                }
                rows[idx]
            } else {
                // All remaining points coincide with a chosen centre.
                rows[rng.random_range(0..n)]
            };
            chosen.push(pick);
        }

        let mut means = Array2::zeros((k, d));
        for (c, &row) in chosen.iter().enumerate() {
            for (j, v) in data.row(row).iter().enumerate() {
                means[[c, j]] = *v;
            }
        }

        // Class-wide per-coordinate spread as the initial scale.
        let mut mean = vec![0.0; d];
        for &row in rows {
            for (j, v) in data.row(row).iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for &row in rows {
            for (j, v) in data.row(row).iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let mut stds = Array2::zeros((k, d));
        for j in 0..d {
            let s = (var[j] / n as f64).sqrt().max(STD_FLOOR);
            for c in 0..k {
                stds[[c, j]] = s;
            }
        }

        Self {
            weights: vec![1.0 / k as f64; k],
            means,
            stds,
        }
    }

    /// One expectation-maximization iteration over the class rows.
    fn em_pass(&mut self, data: &LabeledDataset, rows: &[usize]) {
        let k = self.weights.len();
        let d = self.means.ncols();
        let n = rows.len();

        // E step: responsibilities in log space.
        let mut resp = Array2::<f64>::zeros((n, k));
        let mut log_terms = vec![0.0f64; k];
        for (slot, &row) in rows.iter().enumerate() {
            let x = data.row(row);
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                let mut lp = self.weights[c].ln();
                for (j, &v) in x.iter().enumerate() {
                    let s = self.stds[[c, j]];
                    let z = (v - self.means[[c, j]]) / s;
                    lp += -0.5 * (LOG_2PI + z * z) - s.ln();
                }
                log_terms[c] = lp;
                max = max.max(lp);
            }
            let lse = max + log_terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
            for c in 0..k {
                resp[[slot, c]] = (log_terms[c] - lse).exp();
            }
        }

        // M step with the standard-deviation floor.
        for c in 0..k {
            let nk: f64 = (0..n).map(|s| resp[[s, c]]).sum();
            if nk <= f64::EPSILON {
                // Deserted component: keep its parameters, zero its weight.
                self.weights[c] = 0.0;
                continue;
            }
            self.weights[c] = nk / n as f64;
            let mut mean = vec![0.0; d];
            for (slot, &row) in rows.iter().enumerate() {
                let w = resp[[slot, c]];
                for (j, &v) in data.row(row).iter().enumerate() {
                    mean[j] += w * v;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut var = vec![0.0; d];
            for (slot, &row) in rows.iter().enumerate() {
                let w = resp[[slot, c]];
                for (j, &v) in data.row(row).iter().enumerate() {
                    var[j] += w * (v - mean[j]) * (v - mean[j]);
                }
            }
            for j in 0..d {
                self.means[[c, j]] = mean[j];
                self.stds[[c, j]] = (var[j] / nk).sqrt().max(STD_FLOOR);
            }
        }
        // Renormalize in case a component was deserted.
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
    }

    fn mixture(&self) -> ClassMixture {
        ClassMixture {
            weights: self.weights.clone(),
            means: self.means.clone(),
            stds: self.stds.clone(),
        }
    }
}

fn sq_dist(data: &LabeledDataset, a: usize, b: usize) -> f64 {
    data.row(a)
        .iter()
        .zip(data.row(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Draw `n` labeled samples: class from the prior, component from the class
/// weights, then `x = mu + sigma * s ⊙ eps` with standard normal `eps`.
pub fn sample_generator(
    gen: &GeneratorModel,
    n: usize,
    sigma: f64,
    rng: &RngStream,
) -> Result<LabeledDataset, CoreError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CoreError::InvalidSigma(sigma));
    }
    let mut r = rng.rng();
    let d = gen.feature_dim;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = sample_categorical(&gen.class_prior, &mut r);
        let mix = &gen.mixtures[class];
        let comp = sample_categorical(&mix.weights, &mut r);
        for j in 0..d {
            let eps: f64 = StandardNormal.sample(&mut r);
            features[[i, j]] = mix.means[[comp, j]] + sigma * mix.stds[[comp, j]] * eps;
        }
        labels.push(class);
    }
    LabeledDataset::new(features, labels, gen.n_classes())
}

fn sample_categorical(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::Array1;

    /// Data drawn from one known Gaussian per class.
    fn known_gaussian_data(n_per_class: usize, seed: u64) -> (LabeledDataset, [Array1<f64>; 2]) {
        let mu0 = Array1::from_vec(vec![-2.0, 0.5, 3.0]);
        let mu1 = Array1::from_vec(vec![4.0, -1.0, -2.5]);
        let s = 0.8;
        let mut r = RngStream::new(seed, "known-gaussian").rng();
        let total = 2 * n_per_class;
        let mut features = Array2::zeros((total, 3));
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            let class = i % 2;
            let mu = if class == 0 { &mu0 } else { &mu1 };
            for j in 0..3 {
                let eps: f64 = StandardNormal.sample(&mut r);
                features[[i, j]] = mu[j] + s * eps;
            }
            labels.push(class);
        }
        (
            LabeledDataset::new(features, labels, 2).unwrap(),
            [mu0, mu1],
        )
    }

    #[test]
    fn em_recovers_known_means() {
        let n_per_class = 400;
        let (data, mus) = known_gaussian_data(n_per_class, 77);
        let ckpts = fit_generator(&data, 1, 10, &RngStream::new(77, "fit")).unwrap();
        let model = &ckpts.last().unwrap().model;
        // With one component the EM mean is the sample mean; its sampling
        // error is s/sqrt(n) per coordinate.
        let bound = 3.0 * 0.8 / (n_per_class as f64).sqrt();
        for class in 0..2 {
            for j in 0..3 {
                let fitted = model.mixtures[class].means[[0, j]];
                assert!(
                    (fitted - mus[class][j]).abs() < bound,
                    "class {class} coord {j}: {fitted} vs {}",
                    mus[class][j]
                );
            }
        }
    }

    #[test]
    fn one_epoch_yields_one_checkpoint() {
        let (data, _) = known_gaussian_data(20, 3);
        let ckpts = fit_generator(&data, 2, 1, &RngStream::new(3, "fit")).unwrap();
        assert_eq!(ckpts.len(), 1);
        assert_eq!(ckpts[0].epoch_index, 1);
    }

    #[test]
    fn fitting_is_deterministic() {
        let (data, _) = known_gaussian_data(50, 5);
        let a = fit_generator(&data, 3, 6, &RngStream::new(5, "fit")).unwrap();
        let b = fit_generator(&data, 3, 6, &RngStream::new(5, "fit")).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.model.to_bytes(), y.model.to_bytes());
        }
    }

    #[test]
    fn log_likelihood_is_monotone_over_epochs() {
        let (data, _) = known_gaussian_data(120, 11);
        let ckpts = fit_generator(&data, 3, 12, &RngStream::new(11, "fit")).unwrap();
        let lls: Vec<f64> = ckpts
            .iter()
            .map(|c| c.model.log_likelihood(&data).unwrap())
            .collect();
        for pair in lls.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-8,
                "log-likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn small_classes_are_rejected() {
        let (data, _) = known_gaussian_data(2, 9);
        assert!(matches!(
            fit_generator(&data, 3, 4, &RngStream::new(9, "fit")),
            Err(CoreError::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn sampling_zero_is_empty() {
        let (data, _) = known_gaussian_data(20, 1);
        let ckpts = fit_generator(&data, 1, 2, &RngStream::new(1, "fit")).unwrap();
        let out = sample_generator(&ckpts[1].model, 0, 1.0, &RngStream::new(1, "sample")).unwrap();
        assert_eq!(out.n_samples(), 0);
    }

    #[test]
    fn sampling_rejects_nonpositive_sigma() {
        let (data, _) = known_gaussian_data(20, 1);
        let ckpts = fit_generator(&data, 1, 1, &RngStream::new(1, "fit")).unwrap();
        assert!(matches!(
            sample_generator(&ckpts[0].model, 5, 0.0, &RngStream::new(1, "s")),
            Err(CoreError::InvalidSigma(_))
        ));
    }

    #[test]
    fn sigma_scales_sample_variance_quadratically() {
        let (data, _) = known_gaussian_data(400, 13);
        let ckpts = fit_generator(&data, 1, 8, &RngStream::new(13, "fit")).unwrap();
        let model = &ckpts.last().unwrap().model;
        let n = 100_000;
        let var_at = |sigma: f64, stream: &str| -> f64 {
            let sample = sample_generator(model, n, sigma, &RngStream::new(13, stream)).unwrap();
            // Variance of coordinate 0 around the sample's own component
            // mean, averaged over classes via residuals to the class mean.
            let mut sums = vec![(0.0f64, 0.0f64, 0usize); 2];
            for (i, &l) in sample.labels().iter().enumerate() {
                let v = sample.features()[[i, 0]];
                sums[l].0 += v;
                sums[l].2 += 1;
            }
            let means: Vec<f64> = sums.iter().map(|s| s.0 / s.2 as f64).collect();
            for (i, &l) in sample.labels().iter().enumerate() {
                let v = sample.features()[[i, 0]] - means[l];
                sums[l].1 += v * v;
            }
            sums.iter().map(|s| s.1).sum::<f64>() / n as f64
        };
        let ratio = var_at(2.0, "sample-a") / var_at(1.0, "sample-b");
        assert!(
            (ratio - 4.0).abs() <= 0.4,
            "variance ratio at sigma 2 vs 1 was {ratio}"
        );
    }

    #[test]
    fn class_frequencies_follow_prior() {
        // Unbalanced prior: 300 vs 100 samples.
        let (balanced, _) = known_gaussian_data(200, 21);
        let keep: Vec<usize> = (0..balanced.n_samples())
            .filter(|&i| balanced.labels()[i] == 0 || i % 4 == 1)
            .collect();
        let data = balanced.subset(&keep);
        let ckpts = fit_generator(&data, 1, 4, &RngStream::new(21, "fit")).unwrap();
        let model = &ckpts.last().unwrap().model;
        let p0 = model.class_prior()[0];

        let n = 50_000;
        let sample = sample_generator(model, n, 1.0, &RngStream::new(21, "sample")).unwrap();
        let freq0 = sample.class_counts()[0] as f64 / n as f64;
        let bound = 3.0 * (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!(
            (freq0 - p0).abs() <= bound,
            "class-0 frequency {freq0} vs prior {p0} (bound {bound})"
        );
    }

    #[test]
    fn unit_sigma_reproduces_component_scale() {
        let (data, _) = known_gaussian_data(500, 31);
        let ckpts = fit_generator(&data, 1, 8, &RngStream::new(31, "fit")).unwrap();
        let model = &ckpts.last().unwrap().model;
        let sample =
            sample_generator(model, 80_000, 1.0, &RngStream::new(31, "sample")).unwrap();
        for class in 0..2 {
            let rows: Vec<usize> = (0..sample.n_samples())
                .filter(|&i| sample.labels()[i] == class)
                .collect();
            let sub = sample.subset(&rows);
            for j in 0..3 {
                let col: Vec<f64> = sub.features().column(j).to_vec();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / col.len() as f64;
                let want = model.mixtures[class].stds[[0, j]].powi(2);
                assert!(
                    (var / want - 1.0).abs() < 0.1,
                    "class {class} coord {j}: sampled var {var} vs fitted {want}"
                );
            }
        }
    }

    #[test]
    fn generator_serialization_round_trips() {
        let (data, _) = known_gaussian_data(60, 41);
        let ckpts = fit_generator(&data, 2, 3, &RngStream::new(41, "fit")).unwrap();
        let model = &ckpts.last().unwrap().model;
        let restored = GeneratorModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(model.to_bytes(), restored.to_bytes());
        assert_eq!(model, &restored);
    }
}
