//! Classifiers trained on biased data with and without translated images,
//! scored by macro-F1 on the inverted-bias test split.

mod chart;
mod experiment;

pub use chart::render_chart;
pub use experiment::{
    aggregate, run_debias_experiment, ArmReport, ArmSpec, ExperimentReport, SeedResult, REPORT_CHART, REPORT_FILE,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::autograd::Var;
use crate::checkpoint;
use crate::datasets::{load_all, DatasetManifest};
use crate::error::{Error, Result};
use crate::networks::infer;
use crate::nn::{Adam, Bound, Conv2d, Init, Linear, ParamStore, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

/// Classifier architecture and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Conv stages, each followed by 2×2 average pooling.
    pub stages: usize,
    /// Width of the first stage; doubles per stage up to `4 × width`.
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            width: 32,
            epochs: 5,
            batch_size: 32,
            lr: 1e-3,
            seeds: vec![0, 1, 2],
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.width == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "classifier stages, width and batch_size must be ≥ 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("classifier epochs must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one classifier seed is required".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("classifier lr must be positive".into()));
        }
        Ok(())
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        (self.width << stage.min(16)).min(4 * self.width)
    }
}

/// Small conv net: `stages × (conv 3×3, leaky ReLU, avg-pool 2×2)`, global
/// average pooling, linear head.
#[derive(Debug, Clone)]
pub struct Classifier<T: Float> {
    pub params: ParamStore<T>,
    convs: Vec<Conv2d>,
    head: Linear,
    input: [usize; 3],
    num_classes: usize,
}

impl<T: Float> Classifier<T> {
    pub fn new(cfg: &ClassifierConfig, input: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input[1] >> cfg.stages == 0 || input[2] >> cfg.stages == 0 {
            return Err(Error::Config(format!(
                "{} pooling stages do not fit {:?} inputs",
                cfg.stages, input
            )));
        }
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut in_ch = input[0];
        let convs = (0..cfg.stages)
            .map(|s| {
                let out = cfg.stage_width(s);
                let c = Conv2d::new(&mut params, &mut init, &format!("cls.conv{s}"), in_ch, out, 3, 1, true);
                in_ch = out;
                c
            })
            .collect();
        let head = Linear::new(&mut params, &mut init, "cls.head", in_ch, num_classes, true);
        Ok(Self {
            params,
            convs,
            head,
            input,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input {
            return Err(Error::Shape(format!(
                "classifier expects [N, {:?}], got {s:?}",
                self.input
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(p, h).leaky_relu(LRELU_SLOPE).avg_pool2x2();
        }
        Ok(self.head.forward(p, h.global_avg_pool()))
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        infer(&self.params, |tape, p| self.forward(p, tape.constant(x.clone())))
    }

    /// Arg-max class per row, evaluated in chunks.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let n = x.dim(0);
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(128) {
            let idx: Vec<usize> = (start..(start + 128).min(n)).collect();
            let logits = self.logits(&x.gather_outer(&idx))?;
            for row in logits.data().chunks(self.num_classes) {
                let best = row.iter().enumerate().fold(
                    (0, T::neg_infinity()),
                    |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                );
                out.push(best.0);
            }
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_store(dir, "", &self.params)?;
        let meta = BTreeMap::from([
            ("format".to_string(), "texswap-classifier-1".to_string()),
            ("num_classes".to_string(), self.num_classes.to_string()),
        ]);
        checkpoint::write_metadata(dir, &meta)
    }

    /// Load weights saved by [`Classifier::save`] into a network built from
    /// the same configuration.
    pub fn load(dir: &Path, cfg: &ClassifierConfig, input: [usize; 3], num_classes: usize) -> Result<Self> {
        let mut c = Self::new(cfg, input, num_classes, 0)?;
        checkpoint::load_store(dir, "", &mut c.params)?;
        Ok(c)
    }
}

/// A trained classifier and its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: Classifier<f32>,
    pub epoch_losses: Vec<f64>,
    pub train_size: usize,
}

/// Train on the union of `manifests` using class labels only.
pub fn train_classifier(
    cfg: &ClassifierConfig,
    manifests: &[&DatasetManifest],
    seed: u64,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let first = manifests
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training manifests".into()))?;
    let (shape, k) = (first.meta.image_shape(), first.meta.num_classes);
    for m in manifests {
        if m.meta.image_shape() != shape || m.meta.num_classes != k {
            return Err(Error::Dataset(format!(
                "manifest {} has shape {:?} and K={}, expected {:?} and K={k}",
                m.name(),
                m.meta.image_shape(),
                m.meta.num_classes,
                shape
            )));
        }
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for m in manifests {
        let batch = load_all(m)?;
        images.push(batch.images);
        labels.extend(batch.y);
    }
    let images = Tensor::stack_outer(&images)?;
    train_on_tensors(cfg, &images, &labels, k, seed)
}

/// Train on in-memory images `[N, C, H, W]` and labels.
pub fn train_on_tensors(
    cfg: &ClassifierConfig,
    images: &Tensor<f32>,
    labels: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<TrainedClassifier> {
    let n = images.dim(0);
    if n == 0 || labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} images with {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Dataset(format!("label {bad} outside {num_classes} classes")));
    }
    let input = [images.dim(1), images.dim(2), images.dim(3)];
    let mut net = Classifier::new(cfg, input, num_classes, seed)?;
    let mut adam = Adam::new(&net.params, cfg.lr, 0.9, 0.999);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x = images.gather_outer(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let tape = Tape::new();
            let p = net.params.bind(&tape, true);
            let loss = net.forward(&p, tape.constant(x))?.cross_entropy(&y);
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss {value}")));
            }
            total += value as f64 * idx.len() as f64;
            let grads = p.grads(&tape.backward(loss));
            adam.update(&mut net.params, &grads);
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(TrainedClassifier {
        classifier: net,
        epoch_losses,
        train_size: n,
    })
}

/// Per-class F1 and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
    pub accuracy: f64,
}

/// Macro-F1 of `pred` against `truth` over `num_classes` classes. A class
/// with no true positives scores 0.
pub fn macro_f1(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<F1Report> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::InvalidArgument(format!("label outside {num_classes} classes")));
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            if tp[c] == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / num_classes as f64;
    let accuracy = tp.iter().sum::<usize>() as f64 / truth.len() as f64;
    Ok(F1Report {
        macro_f1,
        per_class,
        accuracy,
    })
}

/// Score a classifier on every record of `test`.
pub fn evaluate_macro_f1(classifier: &Classifier<f32>, test: &DatasetManifest) -> Result<F1Report> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test manifest".into()));
    }
    if test.meta.num_classes != classifier.num_classes() {
        return Err(Error::Dataset(format!(
            "test set has {} classes, classifier {}",
            test.meta.num_classes,
            classifier.num_classes()
        )));
    }
    let batch = load_all(test)?;
    let pred = classifier.predict(&batch.images)?;
    macro_f1(&batch.y, &pred, classifier.num_classes())
}
