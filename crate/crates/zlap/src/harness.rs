//! Synthetic data and evaluation utilities.
//!
//! The generator produces the kind of geometry the pipeline is built for:
//! unit-norm class vectors, unit-norm images clustered per class, and a
//! systematic offset between the two modalities. Every image is drawn as
//!
//! ```text
//! normalize(anchor_class + modality_gap * g + cluster_spread * noise)
//! ```
//!
//! with `g` one shared unit direction. Because all images share the offset,
//! image-to-image similarities concentrate well above image-to-class
//! similarities once the gap is large, reproducing the reason joint
//! neighbor searches fail on real embedding pairs.
//!
//! Randomness comes from ChaCha20 seeded with a single `u64`, so a config
//! reproduces the same dataset on any platform and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embeddings::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::knn::top_k;
use crate::scalar::Scalar;

/// Shape and geometry of a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub classes: usize,
    pub images_per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of the image noise.
    pub cluster_spread: f64,
    /// Length of the shared offset between image and class vectors.
    pub modality_gap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            images_per_class: 100,
            dim: 64,
            cluster_spread: 0.25,
            modality_gap: 1.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.images_per_class == 0 {
            return Err(Error::Config("need at least 1 image per class".into()));
        }
        if self.dim < 4 {
            return Err(Error::Config(format!("dim must be at least 4, got {}", self.dim)));
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::Config(format!(
                "cluster_spread must be positive, got {}",
                self.cluster_spread
            )));
        }
        if self.modality_gap < 0.0 {
            return Err(Error::Config(format!(
                "modality_gap must be non-negative, got {}",
                self.modality_gap
            )));
        }
        Ok(())
    }
}

/// Generates `(images, classes, labels)`. Labels are class-major: class 0's
/// images first, then class 1's, and so on. Deterministic in the seed.
pub fn generate_bimodal<T: Scalar>(
    cfg: &SynthConfig,
) -> Result<(FeatureMatrix<T>, FeatureMatrix<T>, LabelVector)> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;

    let gap_dir = random_unit(&mut rng, d);
    let anchors: Vec<Vec<f64>> = (0..cfg.classes).map(|_| random_unit(&mut rng, d)).collect();

    let m = cfg.classes * cfg.images_per_class;
    let mut images = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    let mut raw = vec![0.0f64; d];
    for (class, anchor) in anchors.iter().enumerate() {
        for _ in 0..cfg.images_per_class {
            for i in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                raw[i] = anchor[i] + cfg.modality_gap * gap_dir[i] + cfg.cluster_spread * noise;
            }
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            images.extend(raw.iter().map(|&v| T::from_acc(v / norm)));
            labels.push(class);
        }
    }

    let mut class_rows = Vec::with_capacity(cfg.classes * d);
    for anchor in &anchors {
        class_rows.extend(anchor.iter().map(|&v| T::from_acc(v)));
    }

    Ok((
        FeatureMatrix::from_vec(m, d, images)?,
        FeatureMatrix::from_vec(cfg.classes, d, class_rows)?,
        LabelVector::new(labels),
    ))
}

fn random_unit(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Accuracy summary over a batch of predictions.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub classes: usize,
    pub total: usize,
    pub correct: usize,
    /// Overall accuracy in percent.
    pub overall: f64,
    /// Per-class accuracy in percent; classes with no ground-truth instances
    /// report 0.
    pub per_class: Vec<f64>,
    /// Row-major confusion counts, `confusion[truth * classes + predicted]`.
    pub confusion: Vec<u64>,
}

/// Compares predicted class indices against ground truth. The class count is
/// inferred from the largest index seen on either side.
pub fn accuracy(predictions: &[usize], labels: &LabelVector) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::Empty("no labels to score against".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let classes = predictions
        .iter()
        .chain(labels.as_slice())
        .max()
        .map_or(1, |&m| m + 1);
    let mut confusion = vec![0u64; classes * classes];
    let mut correct = 0usize;
    for (&p, &t) in predictions.iter().zip(labels.as_slice()) {
        confusion[t * classes + p] += 1;
        if p == t {
            correct += 1;
        }
    }
    let total = labels.len();
    let per_class = (0..classes)
        .map(|c| {
            let row = &confusion[c * classes..(c + 1) * classes];
            let instances: u64 = row.iter().sum();
            if instances == 0 {
                0.0
            } else {
                100.0 * confusion[c * classes + c] as f64 / instances as f64
            }
        })
        .collect();
    Ok(EvalReport {
        classes,
        total,
        correct,
        overall: 100.0 * correct as f64 / total as f64,
        per_class,
        confusion,
    })
}

/// The graph-free baseline: each image goes to its most similar class
/// vector. Ties resolve toward the lower class index.
pub fn nearest_class_baseline<T: Scalar>(
    images: &FeatureMatrix<T>,
    classes: &FeatureMatrix<T>,
) -> Result<Vec<usize>> {
    let nn = top_k(images, classes, 1, false)?;
    Ok(nn.iter().map(|list| list[0].0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_dot(a: &FeatureMatrix<f32>, i: usize, others: &FeatureMatrix<f32>, rows: &[usize]) -> f64 {
        let q = a.row(i);
        rows.iter()
            .map(|&r| q.iter().zip(others.row(r)).map(|(x, y)| (*x as f64) * (*y as f64)).sum::<f64>())
            .sum::<f64>()
            / rows.len() as f64
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let cfg = SynthConfig { classes: 4, images_per_class: 6, dim: 16, ..SynthConfig::default() };
        let (im1, cl1, la1) = generate_bimodal::<f32>(&cfg).unwrap();
        let (im2, cl2, la2) = generate_bimodal::<f32>(&cfg).unwrap();
        assert_eq!(im1, im2);
        assert_eq!(cl1, cl2);
        assert_eq!(la1, la2);
        let other = SynthConfig { seed: 1, ..cfg };
        let (im3, _, _) = generate_bimodal::<f32>(&other).unwrap();
        assert_ne!(im1, im3);
    }

    #[test]
    fn outputs_are_unit_norm_with_class_major_labels() {
        let cfg = SynthConfig { classes: 3, images_per_class: 5, dim: 12, ..SynthConfig::default() };
        let (images, classes, labels) = generate_bimodal::<f32>(&cfg).unwrap();
        assert_eq!(images.rows(), 15);
        assert_eq!(classes.rows(), 3);
        assert_eq!(labels.len(), 15);
        for i in 0..images.rows() {
            let norm: f64 = images.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-4, "image {i} norm {norm}");
        }
        for c in 0..classes.rows() {
            let norm: f64 = classes.row(c).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-4, "class {c} norm {norm}");
        }
        assert_eq!(labels.as_slice(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert!(labels.validate(3).is_ok());
    }

    #[test]
    fn modality_gap_separates_intra_from_cross_similarities() {
        let cfg = SynthConfig {
            classes: 5,
            images_per_class: 40,
            dim: 64,
            cluster_spread: 0.1,
            modality_gap: 0.8,
            seed: 3,
        };
        let (images, classes, labels) = generate_bimodal::<f32>(&cfg).unwrap();
        // Mean similarity from each class-0 image to its own class vector,
        // versus to the other images of class 0.
        let mut cross = 0.0;
        let mut within = 0.0;
        for i in 0..40 {
            assert_eq!(labels.as_slice()[i], 0);
            let own_rows: Vec<usize> = (0..40).filter(|&r| r != i).collect();
            cross += mean_dot(&images, i, &classes, &[0]);
            within += mean_dot(&images, i, &images, &own_rows);
        }
        cross /= 40.0;
        within /= 40.0;
        assert!(
            within > cross + 0.02,
            "gap should depress cross-modal similarity: within {within:.3} cross {cross:.3}"
        );
    }

    #[test]
    fn tiny_spread_makes_the_baseline_perfect() {
        let cfg = SynthConfig {
            classes: 4,
            images_per_class: 8,
            dim: 24,
            cluster_spread: 1e-6,
            modality_gap: 0.0,
            seed: 7,
        };
        let (images, classes, labels) = generate_bimodal::<f32>(&cfg).unwrap();
        let preds = nearest_class_baseline(&images, &classes).unwrap();
        let report = accuracy(&preds, &labels).unwrap();
        assert_eq!(report.overall, 100.0);
        assert_eq!(report.correct, 32);
    }

    #[test]
    fn config_validation_rejects_degenerate_settings() {
        let ok = SynthConfig::default();
        assert!(ok.validate().is_ok());
        assert!(SynthConfig { classes: 1, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { images_per_class: 0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { dim: 3, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { cluster_spread: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { modality_gap: -0.1, ..ok }.validate().is_err());
    }

    #[test]
    fn accuracy_report_matches_hand_counts() {
        let labels = LabelVector::new(vec![0, 0, 1, 1, 2]);
        let preds = vec![0, 1, 1, 1, 0];
        let report = accuracy(&preds, &labels).unwrap();
        assert_eq!(report.classes, 3);
        assert_eq!(report.total, 5);
        assert_eq!(report.correct, 3);
        assert!((report.overall - 60.0).abs() < 1e-12);
        assert_eq!(report.per_class, vec![50.0, 100.0, 0.0]);
        let want_confusion = vec![
            1, 1, 0, //
            0, 2, 0, //
            1, 0, 0, //
        ];
        assert_eq!(report.confusion, want_confusion);
        let diag: u64 = (0..3).map(|c| report.confusion[c * 3 + c]).sum();
        assert_eq!(diag as usize, report.correct);
    }

    #[test]
    fn accuracy_covers_absent_classes_and_shape_errors() {
        let labels = LabelVector::new(vec![0, 0]);
        let report = accuracy(&[0, 3], &labels).unwrap();
        assert_eq!(report.classes, 4, "class count comes from the largest index");
        assert_eq!(report.per_class[3], 0.0, "absent class scores zero");
        assert!(accuracy(&[0], &labels).is_err());
        assert!(accuracy(&[], &LabelVector::new(vec![])).is_err());
    }

    #[test]
    fn baseline_breaks_ties_toward_class_zero() {
        let images = FeatureMatrix::from_vec(1, 4, vec![1.0f32, 0.0, 0.0, 0.0]).unwrap();
        let classes = FeatureMatrix::from_vec(
            2,
            4,
            vec![0.0f32, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        assert_eq!(nearest_class_baseline(&images, &classes).unwrap(), vec![0]);
    }
}
