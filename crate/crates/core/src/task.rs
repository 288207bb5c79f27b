//! Procedural classification tasks and federation splitting.
//!
//! Tasks are mixtures of Gaussian clusters in feature space: every class
//! owns `n_clusters_per_class` clusters, cluster centroids are rescaled so
//! the closest pair sits exactly `class_separation` apart, and samples are
//! centroid plus isotropic noise of scale `noise_scale`. Dialing the
//! noise-to-separation ratio moves the task from trivially separable to
//! pure chance.

use crate::data::LabeledDataset;
use crate::error::CoreError;
use crate::rng::RngStream;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

/// Parameters of a procedurally generated benchmark task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub n_clusters_per_class: usize,
    pub class_separation: f64,
    pub noise_scale: f64,
    /// Per-member (train, val, test) sample counts.
    pub samples_per_member: (usize, usize, usize),
    pub n_members: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("n_classes", self.n_classes),
            ("n_clusters_per_class", self.n_clusters_per_class),
            ("n_members", self.n_members),
            ("train samples", self.samples_per_member.0),
            ("val samples", self.samples_per_member.1),
            ("test samples", self.samples_per_member.2),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return Err(CoreError::InvalidSpec(
                "class_separation must be a positive finite real".into(),
            ));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(CoreError::InvalidSpec(
                "noise_scale must be a positive finite real".into(),
            ));
        }
        Ok(())
    }

    /// Samples in one member shard: train + val + test.
    pub fn shard_size(&self) -> usize {
        let (t, v, e) = self.samples_per_member;
        t + v + e
    }

    pub fn total_samples(&self) -> usize {
        self.shard_size() * self.n_members
    }

    /// Train/val/test ratios implied by `samples_per_member`.
    pub fn tvt_ratios(&self) -> (f64, f64, f64) {
        let total = self.shard_size() as f64;
        (
            self.samples_per_member.0 as f64 / total,
            self.samples_per_member.1 as f64 / total,
            self.samples_per_member.2 as f64 / total,
        )
    }
}

/// Generate the full task dataset: `n_members * shard_size` samples drawn
/// from `n_classes * n_clusters_per_class` Gaussian clusters, with per-class
/// counts balanced within one sample. Rows come out in a random order.
pub fn make_task(spec: &TaskSpec, rng: &RngStream) -> Result<LabeledDataset, CoreError> {
    spec.validate()?;
    let mut r = rng.rng();
    let d = spec.feature_dim;
    let n_clusters = spec.n_classes * spec.n_clusters_per_class;
    let total = spec.total_samples();

    // Random centroids, rescaled so the closest pair is class_separation apart.
    let mut centroids = Array2::<f64>::zeros((n_clusters, d));
    for v in centroids.iter_mut() {
        *v = StandardNormal.sample(&mut r);
    }
    if n_clusters > 1 {
        let mut min_dist = f64::INFINITY;
        for i in 0..n_clusters {
            for j in (i + 1)..n_clusters {
                let dist = centroids
                    .row(i)
                    .iter()
                    .zip(centroids.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        if min_dist <= f64::EPSILON {
            return Err(CoreError::InvalidSpec(
                "degenerate centroid draw; increase feature_dim or reduce clusters".into(),
            ));
        }
        centroids *= spec.class_separation / min_dist;
    }

    // Balanced class counts (±1), classes with lower index absorb remainders,
    // then round-robin across the class's clusters.
    let base = total / spec.n_classes;
    let extra = total % spec.n_classes;
    let mut features = Array2::<f64>::zeros((total, d));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for class in 0..spec.n_classes {
        let count = base + usize::from(class < extra);
        for s in 0..count {
            let cluster = class * spec.n_clusters_per_class + s % spec.n_clusters_per_class;
            for j in 0..d {
                let eps: f64 = StandardNormal.sample(&mut r);
                features[[row, j]] = centroids[[cluster, j]] + spec.noise_scale * eps;
            }
            labels.push(class);
            row += 1;
        }
    }

    // Shuffle rows so downstream splits see no class ordering.
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut r);
    let data = LabeledDataset::new(features, labels, spec.n_classes)?;
    Ok(data.subset(&order))
}

/// Split into `n_members` disjoint shards by a uniform random permutation,
/// with no class stratification. Shard sizes differ by at most one.
pub fn split_federation(
    data: &LabeledDataset,
    n_members: usize,
    rng: &RngStream,
) -> Result<Vec<LabeledDataset>, CoreError> {
    if n_members == 0 {
        return Err(CoreError::InvalidSpec("n_members must be positive".into()));
    }
    if data.n_samples() < n_members {
        return Err(CoreError::TooManyPartitions {
            requested: n_members,
            available: data.n_samples(),
        });
    }
    let mut order: Vec<usize> = (0..data.n_samples()).collect();
    order.shuffle(&mut rng.rng());
    let base = data.n_samples() / n_members;
    let extra = data.n_samples() % n_members;
    let mut shards = Vec::with_capacity(n_members);
    let mut offset = 0;
    for m in 0..n_members {
        let size = base + usize::from(m < extra);
        shards.push(data.subset(&order[offset..offset + size]));
        offset += size;
    }
    Ok(shards)
}

/// Split into train/val/test by a random permutation, with sizes assigned by
/// largest-remainder rounding. Remainder ties are broken in the documented
/// order train, then val, then test.
pub fn split_tvt(
    data: &LabeledDataset,
    ratios: (f64, f64, f64),
    rng: &RngStream,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), CoreError> {
    let parts = [ratios.0, ratios.1, ratios.2];
    if parts.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(CoreError::InvalidRatios(
            "all three ratios must be positive".into(),
        ));
    }
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidRatios(format!(
            "ratios sum to {sum}, expected 1"
        )));
    }
    let n = data.n_samples();
    let sizes = largest_remainder(n, &parts);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.rng());
    let train = data.subset(&order[..sizes[0]]);
    let val = data.subset(&order[sizes[0]..sizes[0] + sizes[1]]);
    let test = data.subset(&order[sizes[0] + sizes[1]..]);
    Ok((train, val, test))
}

/// Largest-remainder apportionment of `n` into `ratios.len()` parts; ties on
/// equal remainders favor earlier positions.
fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    // Sort by descending remainder; stable sort keeps the earlier position on ties.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for i in 0..(n - assigned) {
        sizes[order[i % ratios.len()]] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{fit_classifier, TrainConfig};
    use crate::data::SoftDataset;
    use std::collections::HashSet;

    fn small_spec() -> TaskSpec {
        TaskSpec {
            feature_dim: 2,
            n_classes: 2,
            n_clusters_per_class: 1,
            class_separation: 10.0,
            noise_scale: 0.1,
            samples_per_member: (60, 20, 20),
            n_members: 1,
        }
    }

    #[test]
    fn separable_task_is_learnable() {
        let spec = small_spec();
        let rng = RngStream::new(11, "task");
        let data = make_task(&spec, &rng).unwrap();
        assert_eq!(data.n_samples(), 100);
        let cfg = TrainConfig::new(100, RngStream::new(11, "ref-train"));
        let model = fit_classifier(&SoftDataset::one_hot(&data), &cfg).unwrap();
        let acc = crate::classifier::accuracy(&model, &data).unwrap();
        assert!(acc >= 0.99, "expected separable accuracy, got {acc}");
    }

    #[test]
    fn overwhelming_noise_reaches_chance_level() {
        let spec = TaskSpec {
            class_separation: 1e-6,
            noise_scale: 50.0,
            samples_per_member: (300, 50, 50),
            ..small_spec()
        };
        let rng = RngStream::new(5, "task");
        let data = make_task(&spec, &rng).unwrap();
        let cfg = TrainConfig::new(60, RngStream::new(5, "ref-train"));
        let model = fit_classifier(&SoftDataset::one_hot(&data), &cfg).unwrap();
        let acc = crate::classifier::accuracy(&model, &data).unwrap();
        assert!(
            (acc - 0.5).abs() <= 0.1,
            "uninformative labels should sit near chance, got {acc}"
        );
    }

    #[test]
    fn make_task_is_deterministic() {
        let spec = small_spec();
        let rng = RngStream::new(3, "task");
        let a = make_task(&spec, &rng).unwrap();
        let b = make_task(&spec, &rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn make_task_balances_classes_within_one() {
        let spec = TaskSpec {
            n_classes: 3,
            samples_per_member: (50, 25, 25),
            ..small_spec()
        };
        let data = make_task(&spec, &RngStream::new(9, "task")).unwrap();
        let counts = data.class_counts();
        assert_eq!(counts.iter().sum::<usize>(), 100);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn make_task_rejects_invalid_spec() {
        let spec = TaskSpec {
            n_classes: 0,
            ..small_spec()
        };
        assert!(matches!(
            make_task(&spec, &RngStream::new(0, "t")),
            Err(CoreError::InvalidSpec(_))
        ));
    }

    #[test]
    fn federation_split_is_a_partition() {
        let spec = TaskSpec {
            samples_per_member: (60, 20, 20),
            n_members: 20,
            ..small_spec()
        };
        let data = make_task(&spec, &RngStream::new(1, "task")).unwrap();
        assert_eq!(data.n_samples(), 2000);
        let shards = split_federation(&data, 20, &RngStream::new(1, "split")).unwrap();
        assert_eq!(shards.len(), 20);
        assert!(shards.iter().all(|s| s.n_samples() == 100));

        let mut seen = HashSet::new();
        for shard in &shards {
            for row in shard.features().rows() {
                let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key), "shards overlap");
            }
        }
        assert_eq!(seen.len(), 2000);
    }

    #[test]
    fn single_member_split_keeps_everything() {
        let data = make_task(&small_spec(), &RngStream::new(2, "task")).unwrap();
        let shards = split_federation(&data, 1, &RngStream::new(2, "split")).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].n_samples(), data.n_samples());
        assert_eq!(shards[0].class_counts(), data.class_counts());
    }

    #[test]
    fn remainder_spreads_across_first_shards() {
        let data = LabeledDataset::new(Array2::zeros((101, 1)), vec![0; 101], 1).unwrap();
        let shards = split_federation(&data, 2, &RngStream::new(0, "split")).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.n_samples()).collect();
        assert_eq!(sizes, vec![51, 50]);
    }

    #[test]
    fn split_rejects_more_members_than_samples() {
        let data = LabeledDataset::new(Array2::zeros((3, 1)), vec![0; 3], 1).unwrap();
        assert!(matches!(
            split_federation(&data, 4, &RngStream::new(0, "split")),
            Err(CoreError::TooManyPartitions { .. })
        ));
    }

    #[test]
    fn tvt_sizes_follow_ratios() {
        let data = LabeledDataset::new(Array2::zeros((100, 1)), vec![0; 100], 1).unwrap();
        let (t, v, e) = split_tvt(&data, (0.6, 0.2, 0.2), &RngStream::new(0, "tvt")).unwrap();
        assert_eq!((t.n_samples(), v.n_samples(), e.n_samples()), (60, 20, 20));
    }

    #[test]
    fn tvt_tie_break_prefers_val_over_test() {
        // 10 * (0.5, 0.25, 0.25) floors to (5, 2, 2); the one leftover sample
        // goes to val because it precedes test in the tie order.
        let data = LabeledDataset::new(Array2::zeros((10, 1)), vec![0; 10], 1).unwrap();
        let (t, v, e) = split_tvt(&data, (0.5, 0.25, 0.25), &RngStream::new(0, "tvt")).unwrap();
        assert_eq!((t.n_samples(), v.n_samples(), e.n_samples()), (5, 3, 2));
    }

    #[test]
    fn tvt_rejects_degenerate_ratios() {
        let data = LabeledDataset::new(Array2::zeros((10, 1)), vec![0; 10], 1).unwrap();
        assert!(split_tvt(&data, (1.0, 0.0, 0.0), &RngStream::new(0, "tvt")).is_err());
        assert!(split_tvt(&data, (0.5, 0.4, 0.2), &RngStream::new(0, "tvt")).is_err());
    }

    #[test]
    fn tvt_parts_are_disjoint_and_cover() {
        let spec = small_spec();
        let data = make_task(&spec, &RngStream::new(8, "task")).unwrap();
        let (t, v, e) = split_tvt(&data, (0.6, 0.2, 0.2), &RngStream::new(8, "tvt")).unwrap();
        assert_eq!(t.n_samples() + v.n_samples() + e.n_samples(), 100);
        let mut seen = HashSet::new();
        for part in [&t, &v, &e] {
            for row in part.features().rows() {
                let key: Vec<u64> = row.iter().map(|x| x.to_bits()).collect();
                assert!(seen.insert(key));
            }
        }
    }
}
