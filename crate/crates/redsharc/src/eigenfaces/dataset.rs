//! Synthetic face dataset generation and (de)serialization. Each subject
//! gets a random base pattern; its gallery images and probe samples are
//! small perturbations of that base, so a correct recognizer maps every
//! sample back to its subject.
//!
//! File schema: `{"width", "height", "subjects": [{"id", "images":
//! [[pixels...]]}], "samples": [[pixels...]]}`.

use crate::core::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Perturbation amplitude relative to the unit pixel range.
pub const PERTURBATION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: u32,
    /// Gallery images, one flat row-major pixel vector each.
    pub images: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub subjects: Vec<Subject>,
    /// Probe images to classify, one flat pixel vector each.
    pub samples: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn pixels_per_image(&self) -> usize {
        self.width * self.height
    }

    /// Gallery images flattened in subject order, with per-image subject ids.
    pub fn gallery(&self) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for s in &self.subjects {
            for img in &s.images {
                images.push(img.clone());
                labels.push(s.id);
            }
        }
        (images, labels)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pixels_per_image();
        if n == 0 {
            return Err(Error::Semantic("dataset has zero-sized images".into()));
        }
        if self.subjects.is_empty() {
            return Err(Error::Semantic("dataset has no subjects".into()));
        }
        for s in &self.subjects {
            if s.images.is_empty() {
                return Err(Error::Semantic(format!("subject {} has no images", s.id)));
            }
            if s.images.iter().any(|i| i.len() != n) {
                return Err(Error::Semantic(format!(
                    "subject {}: image size mismatch",
                    s.id
                )));
            }
        }
        if self.samples.is_empty() {
            return Err(Error::Semantic("dataset has no samples".into()));
        }
        if self.samples.iter().any(|s| s.len() != n) {
            return Err(Error::Semantic("sample size mismatch".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("dataset: {e}")))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serialization cannot fail")
    }
}

/// Deterministic synthetic dataset: `subjects` base patterns drawn
/// uniformly from [0, 1), each gallery image and probe sample perturbed by
/// at most `PERTURBATION` per pixel. Samples are emitted in subject order,
/// `samples_per_subject` each, so the ground truth of sample `i` is subject
/// `i / samples_per_subject`.
pub fn generate_synthetic_dataset(
    seed: u64,
    subjects: usize,
    images_per_subject: usize,
    samples_per_subject: usize,
    width: usize,
    height: usize,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;
    let mut out_subjects = Vec::with_capacity(subjects);
    let mut samples = Vec::new();
    let bases: Vec<Vec<f64>> = (0..subjects)
        .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
        .collect();
    for (si, base) in bases.iter().enumerate() {
        let perturb = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            base.iter()
                .map(|p| p + rng.gen_range(-PERTURBATION..PERTURBATION))
                .collect()
        };
        let images = (0..images_per_subject).map(|_| perturb(&mut rng)).collect();
        out_subjects.push(Subject {
            id: si as u32,
            images,
        });
        for _ in 0..samples_per_subject {
            samples.push(perturb(&mut rng));
        }
    }
    Dataset {
        width,
        height,
        subjects: out_subjects,
        samples,
    }
}

/// Ground-truth subject ids for a dataset built by
/// [`generate_synthetic_dataset`].
pub fn synthetic_truth(subjects: usize, samples_per_subject: usize) -> Vec<u32> {
    (0..subjects as u32)
        .flat_map(|s| std::iter::repeat(s).take(samples_per_subject))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_dataset(42, 4, 3, 2, 8, 8);
        let b = generate_synthetic_dataset(42, 4, 3, 2, 8, 8);
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(43, 4, 3, 2, 8, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_labels() {
        let ds = generate_synthetic_dataset(7, 10, 3, 2, 16, 16);
        assert_eq!(ds.subjects.len(), 10);
        assert_eq!(ds.samples.len(), 20);
        assert!(ds.validate().is_ok());
        let (gallery, labels) = ds.gallery();
        assert_eq!(gallery.len(), 30);
        assert_eq!(labels[0], 0);
        assert_eq!(labels[29], 9);
        assert!(gallery.iter().all(|img| img.len() == 256));
        assert_eq!(synthetic_truth(10, 2).len(), 20);
        assert_eq!(synthetic_truth(3, 2), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn perturbations_stay_close_to_base() {
        let ds = generate_synthetic_dataset(1, 2, 2, 1, 4, 4);
        for s in &ds.subjects {
            for (a, b) in s.images[0].iter().zip(&s.images[1]) {
                assert!((a - b).abs() < 2.0 * PERTURBATION);
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = generate_synthetic_dataset(3, 2, 2, 1, 4, 4);
        let text = ds.to_json();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn invalid_datasets_rejected() {
        assert!(Dataset::from_json("{").is_err());
        let empty = Dataset {
            width: 4,
            height: 4,
            subjects: vec![],
            samples: vec![],
        };
        assert!(Dataset::from_json(&empty.to_json()).is_err());
    }
}
