use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::shadow::{shadow_outputs, ShadowEnsemble};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keyselect::KeySampleSet;
use crate::seeds;
use crate::simembed::{PerceptualEmbedder, EMBED_DIM};

/// Perceptual embedding plus a 4×4 average-pooled thumbnail.
pub const FEATURE_DIM: usize = EMBED_DIM + 16;

pub fn features(image: &Image) -> Result<Vec<f64>> {
    let side = image.side();
    if side < 4 || side % 4 != 0 {
        return Err(Error::Shape(format!("{side}px image cannot be pooled to 4x4")));
    }
    let e = PerceptualEmbedder::shared(side).embed(image)?;
    let mut out: Vec<f64> = e.vector.iter().map(|&v| v as f64).collect();
    out.extend(image.avg_pool(side / 4).pixels().iter().map(|&v| v as f64));
    Ok(out)
}

/// Anything that maps one image to an infringement probability.
pub trait ImageScorer {
    /// Digest of the key set the scorer was trained for.
    fn key_digest(&self) -> &str;
    fn score_image(&self, image: &Image) -> Result<f64>;
}

/// Logistic regression over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            learning_rate: 0.2,
            l2: 1e-3,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Discriminator {
    /// Full-batch gradient descent on the mean logistic loss plus an L2
    /// penalty on the weights.
    pub fn fit(samples: &[(Vec<f64>, bool)], cfg: &FitConfig) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InsufficientData("no discriminator training samples".into()));
        };
        let dim = first.0.len();
        if samples.iter().any(|(x, _)| x.len() != dim) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        let positives = samples.iter().filter(|(_, y)| *y).count();
        if positives == 0 || positives == samples.len() {
            return Err(Error::SingleClass("discriminator training split".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for (x, _) in samples {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for (x, _) in samples {
            for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = samples
            .iter()
            .map(|(x, _)| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut gw = vec![0.0; dim];
        for _ in 0..cfg.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (zi, (_, y)) in z.iter().zip(samples) {
                let logit = b + zi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = sigmoid(logit) - if *y { 1.0 } else { 0.0 };
                for (g, a) in gw.iter_mut().zip(zi) {
                    *g += r * a;
                }
                gb += r;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= cfg.learning_rate * (g / n + cfg.l2 * *wi);
            }
            b -= cfg.learning_rate * gb / n;
        }
        Ok(Self {
            weights: w,
            bias: b,
            mean,
            scale,
        })
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "{} features for a {}-feature discriminator",
                x.len(),
                self.weights.len()
            )));
        }
        let logit = self.bias
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) / s * w)
                .sum::<f64>();
        Ok(sigmoid(logit))
    }
}

/// One shadow output with its label and the shadow it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub features: Vec<f64>,
    pub infringing: bool,
    /// Index into [`ShadowEnsemble::all`].
    pub shadow: usize,
}

/// Which shadows trained the discriminator and how it did on the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_accuracy: f64,
    /// Per-test-shadow mean probability, in `test` order.
    pub test_scores: Vec<f64>,
}

/// A discriminator bound to its key set and source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedDiscriminator {
    pub discriminator: Discriminator,
    pub key_digest: String,
    pub source_digest: String,
    pub fit: FitConfig,
    pub train_shadows: Vec<String>,
}

impl ImageScorer for TrainedDiscriminator {
    fn key_digest(&self) -> &str {
        &self.key_digest
    }

    fn score_image(&self, image: &Image) -> Result<f64> {
        self.discriminator.probability(&features(image)?)
    }
}

/// Per class, shuffles the shadows and sends `round(split * count)` of them
/// (at least one, at most all but one) to the training side.
fn split_shadows(ensemble: &ShadowEnsemble, split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = seeds::rng_for(seed, "discriminator/split", 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let offsets = [(0, ensemble.innocent.len()), (ensemble.innocent.len(), ensemble.infringing.len())];
    for (offset, count) in offsets {
        if count < 2 {
            return Err(Error::SingleClass(format!(
                "a class with {count} shadows cannot appear on both sides of the split"
            )));
        }
        let mut idx: Vec<usize> = (offset..offset + count).collect();
        idx.shuffle(&mut rng);
        let k = ((split * count as f64).round() as usize).clamp(1, count - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Labels every shadow's key-prompt outputs, splits by shadow, fits the
/// discriminator on the training side and measures per-image accuracy on the
/// test side.
pub fn train_discriminator(
    ensemble: &ShadowEnsemble,
    keys: &KeySampleSet,
    split: f64,
    fit: &FitConfig,
    seed: u64,
) -> Result<(TrainedDiscriminator, ShadowSplit)> {
    if keys.is_empty() {
        return Err(Error::InvalidArgument("discriminator needs key prompts".into()));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidArgument(format!("split must lie in (0, 1), got {split}")));
    }
    keys.check_source(&ensemble.source_digest)?;
    let outputs = shadow_outputs(ensemble, keys)?;
    let labels: Vec<bool> = ensemble.all().map(|s| s.infringing).collect();
    let mut images = Vec::new();
    for (shadow, (imgs, &infringing)) in outputs.iter().zip(&labels).enumerate() {
        for img in imgs {
            images.push(LabeledImage {
                features: features(img)?,
                infringing,
                shadow,
            });
        }
    }
    let (train_idx, test_idx) = split_shadows(ensemble, split, seed)?;
    let train_set: Vec<(Vec<f64>, bool)> = images
        .iter()
        .filter(|li| train_idx.binary_search(&li.shadow).is_ok())
        .map(|li| (li.features.clone(), li.infringing))
        .collect();
    let discriminator = Discriminator::fit(&train_set, fit)?;
    let mut correct = 0usize;
    let mut tested = 0usize;
    let mut test_scores = Vec::with_capacity(test_idx.len());
    for &t in &test_idx {
        let mut sum = 0.0;
        let mut count = 0usize;
        for li in images.iter().filter(|li| li.shadow == t) {
            let p = discriminator.probability(&li.features)?;
            correct += usize::from((p > 0.5) == li.infringing);
            tested += 1;
            sum += p;
            count += 1;
        }
        test_scores.push(sum / count as f64);
    }
    let shadows: Vec<_> = ensemble.all().collect();
    let trained = TrainedDiscriminator {
        discriminator,
        key_digest: keys.digest()?,
        source_digest: ensemble.source_digest.clone(),
        fit: *fit,
        train_shadows: train_idx
            .iter()
            .map(|&i| shadows[i].model.digest())
            .collect::<Result<_>>()?,
    };
    Ok((
        trained,
        ShadowSplit {
            train: train_idx,
            test: test_idx,
            test_accuracy: correct as f64 / tested as f64,
            test_scores,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_features_are_learned() {
        let mut samples = Vec::new();
        for i in 0..40 {
            let x = i as f64 / 40.0;
            samples.push((vec![x, 1.0 - x, 0.3], x > 0.5));
        }
        let d = Discriminator::fit(&samples, &FitConfig::default()).unwrap();
        let acc = samples
            .iter()
            .filter(|(x, y)| (d.probability(x).unwrap() > 0.5) == *y)
            .count();
        assert_eq!(acc, samples.len());
    }

    #[test]
    fn conflicting_duplicates_score_near_half() {
        let samples = vec![(vec![1.0, 2.0], true), (vec![1.0, 2.0], false), (vec![0.0, 0.0], false), (vec![3.0, 1.0], true)];
        let d = Discriminator::fit(&samples, &FitConfig::default()).unwrap();
        let p = d.probability(&[1.0, 2.0]).unwrap();
        assert!(p.is_finite());
        assert!((p - 0.5).abs() < 0.2, "{p}");
    }

    #[test]
    fn single_class_is_rejected() {
        let samples = vec![(vec![1.0], true), (vec![2.0], true)];
        assert!(matches!(
            Discriminator::fit(&samples, &FitConfig::default()),
            Err(Error::SingleClass(_))
        ));
    }
}
