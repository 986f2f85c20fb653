//! Adversarial training of the translator, checkpoints, and export of the
//! augmented dataset.
//!
//! Randomness is a pure function of `(seed, step)`: every step draws from
//! dedicated ChaCha streams for pair sampling, patch crops and row
//! subsampling, so a resumed run continues exactly where it stopped.

mod augment;
mod run;

pub use augment::{build_augmented_dataset, AugmentSource, AUGMENT_SOURCES_FILE, PROVENANCE_FILE};
pub use run::{checkpoint_dir, train_translator, TrainOutcome, FILES_READ_FILE, METRICS_FILE};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint;
use crate::error::{Error, IoContext, Result};
use crate::losses::{
    cooccurrence_loss_discriminator, gan_loss_discriminator, gan_loss_generator, gram_style_loss, perceptual_loss,
    r1_penalty_grads, spatial_self_similarity_loss, texture_cooccurrence_loss, total_generator_loss, FeatureExtractor,
    GeneratorTerms, LossBreakdown, LossWeights,
};
use crate::networks::{ContentEncoder, Discriminator, Generator, NetConfig, PatchDiscriminator, TextureEncoder};
use crate::nn::{Adam, ParamStore};
use crate::tensor::Tensor;

/// Which generator terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    NoSpatial,
    NoTexture,
    ReplaceSpatialPerceptual,
    ReplaceTextureStyle,
    ReplaceBoth,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::NoSpatial,
        AblationMode::NoTexture,
        AblationMode::ReplaceSpatialPerceptual,
        AblationMode::ReplaceTextureStyle,
        AblationMode::ReplaceBoth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoSpatial => "no_spatial",
            AblationMode::NoTexture => "no_texture",
            AblationMode::ReplaceSpatialPerceptual => "replace_spatial_perceptual",
            AblationMode::ReplaceTextureStyle => "replace_texture_style",
            AblationMode::ReplaceBoth => "replace_both",
        }
    }

    fn texture_loss(self) -> Option<TextureLoss> {
        match self {
            AblationMode::NoTexture => None,
            AblationMode::ReplaceTextureStyle | AblationMode::ReplaceBoth => Some(TextureLoss::GramStyle),
            _ => Some(TextureLoss::Cooccurrence),
        }
    }

    fn spatial_loss(self) -> Option<SpatialLoss> {
        match self {
            AblationMode::NoSpatial => None,
            AblationMode::ReplaceSpatialPerceptual | AblationMode::ReplaceBoth => Some(SpatialLoss::Perceptual),
            _ => Some(SpatialLoss::SelfSimilarity),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TextureLoss {
    Cooccurrence,
    GramStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpatialLoss {
    SelfSimilarity,
    Perceptual,
}

/// Translator training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub net: NetConfig,
    pub weights: LossWeights,
    /// Learning rate of the encoders and generator.
    pub generator_lr: f64,
    /// Learning rate of both discriminators.
    pub discriminator_lr: f64,
    /// Adam `(β₁, β₂)` for both groups.
    pub betas: [f64; 2],
    pub batch_size: usize,
    pub steps: u64,
    /// R1 weight; 0 disables the penalty.
    pub r1_gamma: f64,
    /// Apply R1 on every `r1_interval`-th discriminator step, scaled by the
    /// interval.
    pub r1_interval: u64,
    pub seed: u64,
    pub ablation: AblationMode,
    /// Steps between checkpoints; 0 saves only the final state.
    pub checkpoint_every: u64,
    /// Steps between validation panels; 0 disables them.
    pub panel_every: u64,
    /// Directory of a saved feature extractor; the seeded random one is used
    /// when absent.
    pub extractor: Option<String>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::digit(),
            weights: LossWeights::default(),
            generator_lr: 2e-3,
            discriminator_lr: 2e-3,
            betas: [0.0, 0.99],
            batch_size: 16,
            steps: 20_000,
            r1_gamma: 1.0,
            r1_interval: 16,
            seed: 0,
            ablation: AblationMode::Full,
            checkpoint_every: 2_000,
            panel_every: 2_000,
            extractor: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size and steps must be ≥ 1".into()));
        }
        if !(self.generator_lr > 0.0 && self.discriminator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.r1_gamma < 0.0 || (self.r1_gamma > 0.0 && self.r1_interval == 0) {
            return Err(Error::Config("r1_gamma must be ≥ 0 with r1_interval ≥ 1".into()));
        }
        let m = self.ablation;
        if matches!(m.texture_loss(), Some(TextureLoss::GramStyle)) && self.weights.texture == 0.0 {
            return Err(Error::Config(format!(
                "ablation {m} replaces the texture term but its weight is 0"
            )));
        }
        if matches!(m.spatial_loss(), Some(SpatialLoss::Perceptual)) && self.weights.spatial == 0.0 {
            return Err(Error::Config(format!(
                "ablation {m} replaces the spatial term but its weight is 0"
            )));
        }
        Ok(())
    }

    /// Hash of every field that shapes the trained state. Run-length and
    /// logging cadence are excluded so a run can be extended or resumed.
    pub fn identity_hash(&self) -> Result<String> {
        let core = Self {
            steps: 0,
            checkpoint_every: 0,
            panel_every: 0,
            ..self.clone()
        };
        checkpoint::config_hash(&core)
    }

    fn texture_loss(&self) -> Option<TextureLoss> {
        (self.weights.texture > 0.0)
            .then(|| self.ablation.texture_loss())
            .flatten()
    }

    fn spatial_loss(&self) -> Option<SpatialLoss> {
        (self.weights.spatial > 0.0)
            .then(|| self.ablation.spatial_loss())
            .flatten()
    }

    fn gan_active(&self) -> bool {
        self.weights.gan > 0.0
    }

    /// Whether the patch discriminator is trained at all.
    pub fn uses_patch_discriminator(&self) -> bool {
        self.texture_loss() == Some(TextureLoss::Cooccurrence)
    }
}

/// Random streams drawn from within one step.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Stream {
    Pairs = 0,
    PatchDiscriminator = 1,
    Texture = 2,
    Spatial = 3,
    Panel = 4,
}

pub(crate) fn step_rng(seed: u64, step: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_mul(8).wrapping_add(stream as u64));
    rng
}

/// One training batch of cross-bias pairs.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub source: Tensor<f32>,
    pub reference: Tensor<f32>,
    pub source_domains: Vec<usize>,
    pub reference_domains: Vec<usize>,
}

impl PairBatch {
    fn len(&self) -> usize {
        self.source.dim(0)
    }
}

/// Flat record of one step.
pub type StepMetrics = BTreeMap<String, f64>;

/// Parameters, optimizer moments and step counter of a translator.
#[derive(Debug, Clone)]
pub struct TranslatorState {
    pub config: TrainerConfig,
    pub step: u64,
    pub content_encoder: ContentEncoder<f32>,
    pub texture_encoder: TextureEncoder<f32>,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub patch_discriminator: PatchDiscriminator<f32>,
    pub extractor: FeatureExtractor<f32>,
    adam_ec: Adam<f32>,
    adam_et: Adam<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    adam_dp: Adam<f32>,
}

fn add_scaled(into: &mut [Tensor<f32>], from: &[Tensor<f32>], scale: f32) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += scale * y;
        }
    }
}

fn mean(t: &Tensor<f32>) -> f64 {
    t.mean() as f64
}

fn non_finite(metrics: &StepMetrics, stage: &str) -> Error {
    let dump: Vec<String> = metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Error::NonFinite(format!(
        "{stage} produced a non-finite value; components: {}",
        dump.join(", ")
    ))
}

fn check_metrics(metrics: &StepMetrics, stage: &str) -> Result<()> {
    if metrics.values().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(non_finite(metrics, stage))
    }
}

impl TranslatorState {
    /// Fresh state; network seeds derive from `config.seed`.
    pub fn new(config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        let net = &config.net;
        let s = config.seed.wrapping_mul(16);
        let ec = ContentEncoder::new(net, s + 1)?;
        let et = TextureEncoder::new(net, s + 2)?;
        let g = Generator::new(net, s + 3)?;
        let d = Discriminator::new(net, s + 4)?;
        let dp = PatchDiscriminator::new(net, s + 5)?;
        let extractor = match &config.extractor {
            Some(dir) => FeatureExtractor::load(Path::new(dir))?,
            None => FeatureExtractor::new(net.channels, s + 6),
        };
        let [b1, b2] = config.betas;
        let (lg, ld) = (config.generator_lr, config.discriminator_lr);
        Ok(Self {
            adam_ec: Adam::new(&ec.params, lg, b1, b2),
            adam_et: Adam::new(&et.params, lg, b1, b2),
            adam_g: Adam::new(&g.params, lg, b1, b2),
            adam_d: Adam::new(&d.params, ld, b1, b2),
            adam_dp: Adam::new(&dp.params, ld, b1, b2),
            config: config.clone(),
            step: 0,
            content_encoder: ec,
            texture_encoder: et,
            generator: g,
            discriminator: d,
            patch_discriminator: dp,
            extractor,
        })
    }

    fn domains<'a>(&self, d: &'a [usize]) -> Option<&'a [usize]> {
        self.config.net.conditional.then_some(d)
    }

    /// `G(E_c(source), E_t(reference))` without gradients.
    pub fn translate(
        &self,
        source: &Tensor<f32>,
        reference: &Tensor<f32>,
        source_domains: &[usize],
        reference_domains: &[usize],
    ) -> Result<Tensor<f32>> {
        let c = self.content_encoder.encode(source, self.domains(source_domains))?;
        let t = self
            .texture_encoder
            .encode(reference, self.domains(reference_domains))?;
        self.generator.generate(&c, &t)
    }

    /// Generator objective on `batch`, returning the per-term breakdown and,
    /// when `update` is set, applying one optimizer step.
    fn generator_pass(&mut self, batch: &PairBatch, update: bool) -> Result<LossBreakdown> {
        let cfg = self.config.clone();
        let step = self.step;
        let tape = Tape::new();
        let pe = self.content_encoder.params.bind(&tape, update);
        let pt = self.texture_encoder.params.bind(&tape, update);
        let pg = self.generator.params.bind(&tape, update);
        let pd = self.discriminator.params.bind(&tape, false);
        let pdp = self.patch_discriminator.params.bind(&tape, false);
        let src = tape.constant(batch.source.clone());
        let reference = tape.constant(batch.reference.clone());
        let c = self
            .content_encoder
            .forward(&pe, src, self.domains(&batch.source_domains))?;
        let t = self
            .texture_encoder
            .forward(&pt, reference, self.domains(&batch.reference_domains))?;
        let fake = self.generator.forward(&pg, c, t)?;
        let gan = if cfg.gan_active() {
            let logits = self
                .discriminator
                .forward(&pd, fake, self.domains(&batch.reference_domains))?;
            Some(gan_loss_generator(logits)?)
        } else {
            None
        };
        let texture = match cfg.texture_loss() {
            Some(TextureLoss::Cooccurrence) => {
                let mut rng = step_rng(cfg.seed, step, Stream::Texture);
                Some(texture_cooccurrence_loss(
                    &self.patch_discriminator,
                    &pdp,
                    fake,
                    reference,
                    cfg.net.patch_count,
                    &mut rng,
                )?)
            }
            Some(TextureLoss::GramStyle) => Some(gram_style_loss(&self.extractor, fake, reference)?),
            None => None,
        };
        let spatial = match cfg.spatial_loss() {
            Some(SpatialLoss::SelfSimilarity) => {
                let mut rng = step_rng(cfg.seed, step, Stream::Spatial);
                Some(spatial_self_similarity_loss(&self.extractor, src, fake, &mut rng)?)
            }
            Some(SpatialLoss::Perceptual) => Some(perceptual_loss(&self.extractor, src, fake)?),
            None => None,
        };
        let terms = GeneratorTerms { gan, texture, spatial };
        let (total, breakdown) = total_generator_loss(terms, &cfg.weights)?;
        if update {
            let grads = tape.backward(total);
            self.adam_ec.update(&mut self.content_encoder.params, &pe.grads(&grads));
            self.adam_et.update(&mut self.texture_encoder.params, &pt.grads(&grads));
            self.adam_g.update(&mut self.generator.params, &pg.grads(&grads));
        }
        Ok(breakdown)
    }

    /// Generator loss terms for `batch` at the current step, without updating.
    pub fn evaluate_generator_loss(&mut self, batch: &PairBatch) -> Result<LossBreakdown> {
        self.generator_pass(batch, false)
    }

    /// One step: discriminator, patch discriminator, then encoders and
    /// generator jointly.
    pub fn train_step(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        if batch.len() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let started = Instant::now();
        let cfg = self.config.clone();
        let step = self.step;
        let mut metrics = StepMetrics::new();
        metrics.insert("step".into(), (step + 1) as f64);
        let ref_domains = self.domains(&batch.reference_domains).map(|d| d.to_vec());
        let fake = self.translate(
            &batch.source,
            &batch.reference,
            &batch.source_domains,
            &batch.reference_domains,
        )?;

        if cfg.gan_active() {
            let tape = Tape::new();
            let p = self.discriminator.params.bind(&tape, true);
            let real =
                self.discriminator
                    .forward(&p, tape.constant(batch.reference.clone()), ref_domains.as_deref())?;
            let fake_logits = self
                .discriminator
                .forward(&p, tape.constant(fake.clone()), ref_domains.as_deref())?;
            metrics.insert("d_real_logit".into(), mean(&real.value()));
            metrics.insert("d_fake_logit".into(), mean(&fake_logits.value()));
            let loss = gan_loss_discriminator(real, fake_logits).map_err(|_| non_finite(&metrics, "D"))?;
            metrics.insert("d_loss".into(), loss.value().item() as f64);
            let mut grads = p.grads(&tape.backward(loss));
            if cfg.r1_gamma > 0.0 && step.is_multiple_of(cfg.r1_interval) {
                let (r1, r1_grads) =
                    r1_penalty_grads(&self.discriminator, &batch.reference, ref_domains.as_deref(), 1e-2)?;
                metrics.insert("d_r1".into(), r1 as f64);
                add_scaled(&mut grads, &r1_grads, (cfg.r1_gamma * cfg.r1_interval as f64) as f32);
            }
            check_metrics(&metrics, "D")?;
            self.adam_d.update(&mut self.discriminator.params, &grads);
        }

        if cfg.uses_patch_discriminator() {
            let mut rng = step_rng(cfg.seed, step, Stream::PatchDiscriminator);
            let tape = Tape::new();
            let p = self.patch_discriminator.params.bind(&tape, true);
            let reference = tape.constant(batch.reference.clone());
            let fake_v = tape.constant(fake.clone());
            let loss = cooccurrence_loss_discriminator(
                &self.patch_discriminator,
                &p,
                (reference, reference),
                (fake_v, reference),
                cfg.net.patch_count,
                &mut rng,
            )
            .map_err(|_| non_finite(&metrics, "D_patch"))?;
            metrics.insert("dpatch_loss".into(), loss.value().item() as f64);
            check_metrics(&metrics, "D_patch")?;
            let grads = p.grads(&tape.backward(loss));
            self.adam_dp.update(&mut self.patch_discriminator.params, &grads);
        }

        let breakdown = self.generator_pass(batch, true).map_err(|e| match e {
            Error::NonFinite(_) => non_finite(&metrics, "generator"),
            other => other,
        })?;
        for (k, v) in breakdown {
            metrics.insert(format!("g_{k}"), v);
        }
        check_metrics(&metrics, "generator")?;
        self.step += 1;
        metrics.insert("step_ms".into(), started.elapsed().as_secs_f64() * 1e3);
        Ok(metrics)
    }

    fn stores(&self) -> [(&'static str, &ParamStore<f32>, &Adam<f32>); 5] {
        [
            ("ec", &self.content_encoder.params, &self.adam_ec),
            ("et", &self.texture_encoder.params, &self.adam_et),
            ("g", &self.generator.params, &self.adam_g),
            ("d", &self.discriminator.params, &self.adam_d),
            ("dp", &self.patch_discriminator.params, &self.adam_dp),
        ]
    }

    /// Write every tensor, optimizer moment and the metadata into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        for (name, store, adam) in self.stores() {
            checkpoint::save_store(dir, "", store)?;
            checkpoint::save_list(dir, &format!("adam.{name}.m."), &adam.m)?;
            checkpoint::save_list(dir, &format!("adam.{name}.v."), &adam.v)?;
        }
        self.extractor.save(&dir.join("extractor"))?;
        let config_path = dir.join("config.json");
        fs::write(&config_path, serde_json::to_string_pretty(&self.config)? + "\n").at(config_path)?;
        let mut meta = BTreeMap::new();
        meta.insert("format".to_string(), "texswap-translator-1".to_string());
        meta.insert("config_hash".to_string(), self.config.identity_hash()?);
        meta.insert("step".to_string(), self.step.to_string());
        meta.insert("seed".to_string(), self.config.seed.to_string());
        for (name, _, adam) in self.stores() {
            meta.insert(format!("adam.{name}.step"), adam.step.to_string());
        }
        checkpoint::write_metadata(dir, &meta)
    }

    /// Load a checkpoint. With `expected`, the stored configuration must
    /// have the same identity hash.
    pub fn load(dir: &Path, expected: Option<&TrainerConfig>) -> Result<Self> {
        let meta = checkpoint::read_metadata(dir)?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("{}: metadata lacks {k}", dir.display())))
        };
        let config_path = dir.join("config.json");
        let text = fs::read_to_string(&config_path).at(&config_path)?;
        let mut config: TrainerConfig = serde_json::from_str(&text)?;
        let stored_hash = field("config_hash")?;
        if &config.identity_hash()? != stored_hash {
            return Err(Error::Checkpoint(
                "config.json does not match the stored config hash".into(),
            ));
        }
        if let Some(exp) = expected {
            if &exp.identity_hash()? != stored_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {stored_hash}, expected {}",
                    exp.identity_hash()?
                )));
            }
            config = exp.clone();
        }
        // the extractor is restored from the checkpoint itself
        let mut state = Self::new(&TrainerConfig {
            extractor: None,
            ..config.clone()
        })?;
        state.config = config;
        state.extractor = FeatureExtractor::load(&dir.join("extractor"))?;
        state.step = field("step")?
            .parse()
            .map_err(|_| Error::Checkpoint("malformed step".into()))?;
        let parse_step = |name: &str| -> Result<u64> {
            field(&format!("adam.{name}.step"))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("malformed adam.{name}.step")))
        };
        for (name, store, adam) in [
            ("ec", &mut state.content_encoder.params, &mut state.adam_ec),
            ("et", &mut state.texture_encoder.params, &mut state.adam_et),
            ("g", &mut state.generator.params, &mut state.adam_g),
            ("d", &mut state.discriminator.params, &mut state.adam_d),
            ("dp", &mut state.patch_discriminator.params, &mut state.adam_dp),
        ] {
            checkpoint::load_store(dir, "", store)?;
            checkpoint::load_list(dir, &format!("adam.{name}.m."), &mut adam.m)?;
            checkpoint::load_list(dir, &format!("adam.{name}.v."), &mut adam.v)?;
            adam.step = parse_step(name)?;
        }
        Ok(state)
    }

    /// Bitwise equality of every parameter and optimizer buffer.
    pub fn same_as(&self, other: &Self) -> bool {
        self.step == other.step
            && self.stores().iter().zip(other.stores().iter()).all(|(a, b)| {
                a.1.same_as(b.1)
                    && a.2.step == b.2.step
                    && a.2
                        .m
                        .iter()
                        .zip(&b.2.m)
                        .all(|(x, y)| crate::nn::bits_equal(x.data(), y.data()))
                    && a.2
                        .v
                        .iter()
                        .zip(&b.2.v)
                        .all(|(x, y)| crate::nn::bits_equal(x.data(), y.data()))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    pub(crate) fn tiny_config() -> TrainerConfig {
        TrainerConfig {
            net: NetConfig {
                base_width: 8,
                max_width: 16,
                texture_dim: 16,
                patch_count: 4,
                ..NetConfig::digit()
            },
            batch_size: 2,
            steps: 2,
            r1_interval: 2,
            ..TrainerConfig::default()
        }
    }

    fn batch(seed: u64) -> PairBatch {
        let mut init = Init::new(seed);
        PairBatch {
            source: init.normal(&[2, 3, 32, 32], 0.5),
            reference: init.normal(&[2, 3, 32, 32], 0.5),
            source_domains: vec![0, 1],
            reference_domains: vec![1, 0],
        }
    }

    #[test]
    fn step_increments_and_is_deterministic() {
        let cfg = tiny_config();
        let mut a = TranslatorState::new(&cfg).unwrap();
        let mut b = TranslatorState::new(&cfg).unwrap();
        let m = a.train_step(&batch(1)).unwrap();
        b.train_step(&batch(1)).unwrap();
        assert_eq!(a.step, 1);
        assert!(a.same_as(&b));
        for key in [
            "d_loss",
            "d_r1",
            "dpatch_loss",
            "g_gan",
            "g_texture",
            "g_spatial",
            "g_total",
        ] {
            assert!(m.contains_key(key), "missing {key}");
        }
    }

    #[test]
    fn no_texture_leaves_patch_discriminator_untouched() {
        let cfg = TrainerConfig {
            ablation: AblationMode::NoTexture,
            ..tiny_config()
        };
        let mut s = TranslatorState::new(&cfg).unwrap();
        let before = s.patch_discriminator.params.clone();
        let m = s.train_step(&batch(2)).unwrap();
        assert!(!m.contains_key("g_texture"));
        assert!(!m.contains_key("dpatch_loss"));
        assert!(s.patch_discriminator.params.same_as(&before));
    }

    #[test]
    fn no_spatial_equals_zero_spatial_weight() {
        let a_cfg = TrainerConfig {
            ablation: AblationMode::NoSpatial,
            ..tiny_config()
        };
        let mut b_cfg = tiny_config();
        b_cfg.weights.spatial = 0.0;
        let mut a = TranslatorState::new(&a_cfg).unwrap();
        let mut b = TranslatorState::new(&b_cfg).unwrap();
        let x = batch(3);
        assert_eq!(
            a.evaluate_generator_loss(&x).unwrap(),
            b.evaluate_generator_loss(&x).unwrap()
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_config();
        let mut s = TranslatorState::new(&cfg).unwrap();
        s.train_step(&batch(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        s.save(&a).unwrap();
        let loaded = TranslatorState::load(&a, Some(&cfg)).unwrap();
        assert!(loaded.same_as(&s));
        loaded.save(&b).unwrap();
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            let (pa, pb) = (a.join(&n), b.join(&n));
            if pa.is_file() {
                assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap(), "{n:?}");
            }
        }
        let other = TrainerConfig { seed: 9, ..cfg };
        assert!(TranslatorState::load(&a, Some(&other)).is_err());
    }

    #[test]
    fn truncated_checkpoint_errors() {
        let cfg = tiny_config();
        let s = TranslatorState::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let victim = dir.path().join("g.block0.conv1.weight.f32");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
        assert!(TranslatorState::load(dir.path(), None).is_err());
    }

    #[test]
    fn ablation_names_round_trip() {
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
        }
        assert!("bogus".parse::<AblationMode>().is_err());
    }
}
