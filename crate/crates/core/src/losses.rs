//! Adversarial, texture co-occurrence and self-similarity losses, the
//! ablation replacements, and the fixed feature extractor they share.
//!
//! All logits stay logits: every `-log σ(·)` is evaluated as a softplus.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::networks::{crop_random_patches, Discriminator, PatchDiscriminator, PatchSet};
use crate::nn::{Bound, Init, ParamId, ParamStore, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

/// Rows kept when subsampling a self-similarity map.
pub const SUBSAMPLE_ROWS: usize = 256;

fn check_finite<T: Float>(v: Var<'_, T>, what: &str) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or Inf")))
    }
}

/// Non-saturating generator loss: `mean softplus(-logit)`.
pub fn gan_loss_generator<'t, T: Float>(fake_logits: Var<'t, T>) -> Result<Var<'t, T>> {
    check_finite(fake_logits, "fake logits")?;
    Ok(fake_logits.neg().softplus().mean())
}

/// `mean softplus(-real) + mean softplus(fake)`.
pub fn gan_loss_discriminator<'t, T: Float>(real_logits: Var<'t, T>, fake_logits: Var<'t, T>) -> Result<Var<'t, T>> {
    check_finite(real_logits, "real logits")?;
    check_finite(fake_logits, "fake logits")?;
    Ok(real_logits.neg().softplus().mean().add(fake_logits.softplus().mean()))
}

/// `∇_X Σ_n D(X_n)` and the logits, for a frozen discriminator.
pub fn input_gradients<T: Float>(
    d: &Discriminator<T>,
    x: &Tensor<T>,
    domains: Option<&[usize]>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let tape = Tape::new();
    let p = d.params.bind(&tape, false);
    let xv = tape.leaf(x.clone());
    let logits = d.forward(&p, xv, domains)?;
    let g = tape.backward(logits.sum());
    Ok((g.get_or_zeros(xv), (*logits.value()).clone()))
}

/// R1 penalty `½ · mean_n ‖∇_X D(X_n)‖²` on real images.
pub fn r1_penalty<T: Float>(d: &Discriminator<T>, real: &Tensor<T>, domains: Option<&[usize]>) -> Result<T> {
    let (g, _) = input_gradients(d, real, domains)?;
    let n = T::from_usize(real.dim(0)).unwrap();
    let value = g.data().iter().fold(T::zero(), |a, &v| a + v * v) / (n + n);
    if !value.is_finite() {
        return Err(Error::NonFinite("R1 penalty".into()));
    }
    Ok(value)
}

/// R1 value and its gradient with respect to the discriminator parameters.
///
/// The parameter gradient is the Hessian-vector product
/// `(1/N) ∂/∂θ [v · ∇_X Σ D(X)]` with `v = ∇_X Σ D(X)` held fixed, taken by
/// central differences along `v`: the input is moved by `±ε v` with `ε`
/// chosen so the largest pixel moves by `rel_step`.
pub fn r1_penalty_grads<T: Float>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    domains: Option<&[usize]>,
    rel_step: f64,
) -> Result<(T, Vec<Tensor<T>>)> {
    let (v, _) = input_gradients(d, real, domains)?;
    let n = real.dim(0) as f64;
    let value = v.data().iter().fold(T::zero(), |a, &x| a + x * x) / T::lit(2.0 * n);
    if !value.is_finite() {
        return Err(Error::NonFinite("R1 penalty".into()));
    }
    let vmax = v.max_abs().as_f64();
    if vmax == 0.0 {
        let zeros = d.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        return Ok((value, zeros));
    }
    let eps = rel_step / vmax;
    let param_grads = |sign: f64| -> Result<Vec<Tensor<T>>> {
        let moved = real.zip_map(&v, |x, g| x + T::lit(sign * eps) * g);
        let tape = Tape::new();
        let p = d.params.bind(&tape, true);
        let logits = d.forward(&p, tape.constant(moved), domains)?;
        Ok(p.grads(&tape.backward(logits.sum())))
    };
    let plus = param_grads(1.0)?;
    let minus = param_grads(-1.0)?;
    let scale = T::lit(1.0 / (2.0 * eps * n));
    let grads = plus
        .iter()
        .zip(&minus)
        .map(|(a, b)| a.zip_map(b, |x, y| (x - y) * scale))
        .collect();
    Ok((value, grads))
}

/// `k` random crops from each of `n` square images of side `size`, grouped
/// by image.
pub fn sample_patch_groups(n: usize, size: usize, k: usize, rng: &mut impl Rng) -> Result<PatchSet> {
    let sets = (0..n)
        .map(|i| crop_random_patches(size, size, i, k, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet::concat(sets))
}

fn batch_and_side<T: Float>(x: Var<'_, T>) -> Result<(usize, usize)> {
    match x.shape().as_slice() {
        [n, _, h, w] if h == w => Ok((*n, *h)),
        other => Err(Error::Shape(format!("expected square image batch, got {other:?}"))),
    }
}

/// Generator-side co-occurrence loss on explicit patch sets, one group per
/// image.
pub fn texture_cooccurrence_loss_with<'t, T: Float>(
    d_patch: &PatchDiscriminator<T>,
    p: &Bound<'t, T>,
    fake: Var<'t, T>,
    fake_patches: &PatchSet,
    reference: Var<'t, T>,
    ref_patches: &PatchSet,
) -> Result<Var<'t, T>> {
    let (n, _) = batch_and_side(fake)?;
    let logits = d_patch.forward(p, fake, fake_patches, reference, ref_patches, n)?;
    gan_loss_generator(logits)
}

/// Generator-side co-occurrence loss: `k` fresh crops of each generated
/// image scored against `k` fresh crops of its texture reference.
pub fn texture_cooccurrence_loss<'t, T: Float>(
    d_patch: &PatchDiscriminator<T>,
    p: &Bound<'t, T>,
    fake: Var<'t, T>,
    reference: Var<'t, T>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Var<'t, T>> {
    let (n, size) = batch_and_side(fake)?;
    let fp = sample_patch_groups(n, size, k, rng)?;
    let rp = sample_patch_groups(n, size, k, rng)?;
    texture_cooccurrence_loss_with(d_patch, p, fake, &fp, reference, &rp)
}

/// `D_patch` objective. The real pair scores two independent crop sets of
/// the same real images; the fake pair scores generated crops against crops
/// of their references.
pub fn cooccurrence_loss_discriminator<'t, T: Float>(
    d_patch: &PatchDiscriminator<T>,
    p: &Bound<'t, T>,
    real_pair: (Var<'t, T>, Var<'t, T>),
    fake_pair: (Var<'t, T>, Var<'t, T>),
    k: usize,
    rng: &mut impl Rng,
) -> Result<Var<'t, T>> {
    let (n, size) = batch_and_side(real_pair.0)?;
    let real_a = sample_patch_groups(n, size, k, rng)?;
    let real_b = sample_patch_groups(n, size, k, rng)?;
    let fake_a = sample_patch_groups(n, size, k, rng)?;
    let fake_b = sample_patch_groups(n, size, k, rng)?;
    let real = d_patch.forward(p, real_pair.0, &real_a, real_pair.1, &real_b, n)?;
    let fake = d_patch.forward(p, fake_pair.0, &fake_a, fake_pair.1, &fake_b, n)?;
    gan_loss_discriminator(real, fake)
}

/// `S = fᵀ f` for spatially flattened features `f: [C, P]` or `[N, C, P]`.
pub fn self_similarity_map<'t, T: Float>(f: Var<'t, T>) -> Var<'t, T> {
    f.matmul_ex(f, true, false)
}

/// Row indices for a subsampled map: all positions when there are at most
/// [`SUBSAMPLE_ROWS`], otherwise that many drawn without replacement.
pub fn sample_rows(positions: usize, rng: &mut impl Rng) -> Vec<usize> {
    if positions <= SUBSAMPLE_ROWS {
        (0..positions).collect()
    } else {
        index::sample(rng, positions, SUBSAMPLE_ROWS).into_vec()
    }
}

fn check_rows(rows: &[usize], positions: usize) -> Result<()> {
    let mut seen = vec![false; positions];
    for &r in rows {
        match seen.get_mut(r) {
            None => {
                return Err(Error::InvalidArgument(format!(
                    "row index {r} out of range for {positions} positions"
                )))
            }
            Some(true) => return Err(Error::InvalidArgument(format!("duplicate row index {r}"))),
            Some(s) => *s = true,
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no row indices".into()));
    }
    Ok(())
}

/// `Ŝ = f̂ᵀ f` where `f̂` keeps the positions in `rows`.
pub fn subsampled_self_similarity<'t, T: Float>(f: Var<'t, T>, rows: &[usize]) -> Result<Var<'t, T>> {
    let positions = *f.shape().last().unwrap();
    check_rows(rows, positions)?;
    Ok(f.select_last(rows).matmul_ex(f, true, false))
}

/// Mean over rows of `1 − cos(s[r], s′[r])`.
pub fn self_similarity_distance<'t, T: Float>(s: Var<'t, T>, s_prime: Var<'t, T>) -> Result<Var<'t, T>> {
    if s.shape() != s_prime.shape() {
        return Err(Error::Shape(format!(
            "self-similarity maps differ: {:?} vs {:?}",
            s.shape(),
            s_prime.shape()
        )));
    }
    Ok(s.rowwise_cosine(s_prime).neg().add_scalar(T::one()).mean())
}

/// Spatial loss on precomputed features, both maps sharing `rows`.
pub fn spatial_loss_from_features<'t, T: Float>(
    f: Var<'t, T>,
    f_prime: Var<'t, T>,
    rows: &[usize],
) -> Result<Var<'t, T>> {
    let s = subsampled_self_similarity(f, rows)?;
    let s_prime = subsampled_self_similarity(f_prime, rows)?;
    self_similarity_distance(s, s_prime)
}

fn check_same_shape<T: Float>(a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Spatial self-similarity loss between `x` and its translation `x_prime`,
/// with one fresh set of row indices shared by both maps.
pub fn spatial_self_similarity_loss<'t, T: Float>(
    extractor: &FeatureExtractor<T>,
    x: Var<'t, T>,
    x_prime: Var<'t, T>,
    rng: &mut impl Rng,
) -> Result<Var<'t, T>> {
    check_same_shape(x, x_prime)?;
    let f = extractor.features(x)?;
    let f_prime = extractor.features(x_prime)?;
    let rows = sample_rows(*f.shape().last().unwrap(), rng);
    spatial_loss_from_features(f, f_prime, &rows)
}

/// Mean squared difference of two feature tensors.
pub fn feature_mse<'t, T: Float>(f: Var<'t, T>, g: Var<'t, T>) -> Result<Var<'t, T>> {
    check_same_shape(f, g)?;
    Ok(f.sub(g).square().mean())
}

/// Mean squared difference of extractor features (replaces the spatial loss
/// in ablations).
pub fn perceptual_loss<'t, T: Float>(
    extractor: &FeatureExtractor<T>,
    x: Var<'t, T>,
    x_prime: Var<'t, T>,
) -> Result<Var<'t, T>> {
    check_same_shape(x, x_prime)?;
    feature_mse(extractor.features(x)?, extractor.features(x_prime)?)
}

/// Channel Gram matrices `f fᵀ / (C · P)` of `f: [N, C, P]`.
pub fn gram_matrix<'t, T: Float>(f: Var<'t, T>) -> Var<'t, T> {
    let shape = f.shape();
    let (c, p) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    f.matmul_ex(f, false, true).mul_scalar(T::lit(1.0 / (c * p) as f64))
}

/// Mean squared difference of Gram matrices (replaces the co-occurrence
/// loss in ablations).
pub fn gram_style_loss<'t, T: Float>(
    extractor: &FeatureExtractor<T>,
    x_prime: Var<'t, T>,
    x_ref: Var<'t, T>,
) -> Result<Var<'t, T>> {
    check_same_shape(x_prime, x_ref)?;
    let g = gram_matrix(extractor.features(x_prime)?);
    let g_ref = gram_matrix(extractor.features(x_ref)?);
    feature_mse(g, g_ref)
}

/// `(λ_g, λ_t, λ_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub gan: f64,
    pub texture: f64,
    pub spatial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gan: 0.1,
            texture: 1.0,
            spatial: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gan", self.gan), ("texture", self.texture), ("spatial", self.spatial)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} = {v} must be finite and ≥ 0"
                )));
            }
        }
        Ok(())
    }
}

/// Generator loss components; `None` marks a disabled term.
#[derive(Clone, Copy)]
pub struct GeneratorTerms<'t, T: Float> {
    pub gan: Option<Var<'t, T>>,
    pub texture: Option<Var<'t, T>>,
    pub spatial: Option<Var<'t, T>>,
}

/// Flat `name → value` record of loss terms.
pub type LossBreakdown = BTreeMap<String, f64>;

/// `λ_g L_gan + λ_t L_texture + λ_s L_spatial`, skipping terms that are
/// absent or weighted zero. The breakdown lists the raw value of every
/// included term and the total.
pub fn total_generator_loss<'t, T: Float>(
    terms: GeneratorTerms<'t, T>,
    weights: &LossWeights,
) -> Result<(Var<'t, T>, LossBreakdown)> {
    weights.validate()?;
    let mut breakdown = LossBreakdown::new();
    let mut total: Option<Var<'t, T>> = None;
    for (name, term, w) in [
        ("gan", terms.gan, weights.gan),
        ("texture", terms.texture, weights.texture),
        ("spatial", terms.spatial, weights.spatial),
    ] {
        let Some(v) = term else { continue };
        if w == 0.0 {
            continue;
        }
        check_finite(v, name)?;
        breakdown.insert(name.to_string(), v.value().item().as_f64());
        let weighted = v.mul_scalar(T::lit(w));
        total = Some(match total {
            Some(t) => t.add(weighted),
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("every generator loss term is disabled".into()))?;
    breakdown.insert("total".to_string(), total.value().item().as_f64());
    Ok((total, breakdown))
}

#[derive(Debug, Clone)]
struct ExtractorLayer {
    weight: ParamId,
    stride: usize,
    pad: usize,
}

/// Fixed convolutional feature stack.
///
/// Each layer is a bias-free convolution followed by a leaky ReLU; features
/// are read after `tap` layers and returned flattened as `[N, C, H_f·W_f]`.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T: Float> {
    params: ParamStore<T>,
    layers: Vec<ExtractorLayer>,
    tap: usize,
}

impl<T: Float> FeatureExtractor<T> {
    /// Seeded random extractor: three 3×3 layers of widths 32, 64, 128 with
    /// strides 1, 2, 2, tapped after the second.
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut init = Init::new(seed);
        let mut in_ch = in_channels;
        let weights = [(32, 1), (64, 2), (128, 2)]
            .into_iter()
            .map(|(out, stride)| {
                let w = init.he(&[out, in_ch, 3, 3], in_ch * 9);
                in_ch = out;
                (w, stride)
            })
            .collect();
        Self::from_weights(weights, 2).expect("valid default extractor")
    }

    /// Build from explicit `[out, in, k, k]` kernels and strides.
    pub fn from_weights(layers: Vec<(Tensor<T>, usize)>, tap: usize) -> Result<Self> {
        if tap == 0 || tap > layers.len() {
            return Err(Error::InvalidArgument(format!(
                "tap {tap} outside 1..={}",
                layers.len()
            )));
        }
        let mut params = ParamStore::new();
        let mut built = Vec::new();
        let mut prev: Option<usize> = None;
        for (i, (w, stride)) in layers.into_iter().enumerate() {
            let [out, inc, kh, kw] = w.shape() else {
                return Err(Error::Shape(format!("layer {i} kernel must be rank 4")));
            };
            if kh != kw || kh % 2 == 0 || stride == 0 || prev.is_some_and(|p| p != *inc) {
                return Err(Error::Shape(format!(
                    "layer {i} kernel {:?} / stride {stride}",
                    w.shape()
                )));
            }
            prev = Some(*out);
            let pad = kh / 2;
            built.push(ExtractorLayer {
                weight: params.add(format!("layer{i}.weight"), w),
                stride,
                pad,
            });
        }
        Ok(Self {
            params,
            layers: built,
            tap,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn tap_channels(&self) -> usize {
        self.params.get(self.layers[self.tap - 1].weight).dim(0)
    }

    /// Input channels expected by the first layer.
    pub fn in_channels(&self) -> usize {
        self.params.get(self.layers[0].weight).dim(1)
    }

    /// Flattened tap features `[N, C, H_f·W_f]` of an image batch.
    pub fn features<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match x.shape().as_slice() {
            [_, c, _, _] if *c == self.in_channels() => {}
            other => {
                return Err(Error::Shape(format!(
                    "extractor expects [N, {}, H, W], got {other:?}",
                    self.in_channels()
                )))
            }
        }
        let p = self.params.bind(x.tape(), false);
        let mut h = x;
        for layer in &self.layers[..self.tap] {
            h = h
                .conv2d(p.get(layer.weight), None, layer.stride, layer.pad)
                .leaky_relu(LRELU_SLOPE);
        }
        let s = h.shape();
        Ok(h.reshape(&[s[0], s[1], s[2] * s[3]]))
    }

    /// Features of a plain tensor.
    pub fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let f = self.features(tape.constant(x.clone()))?;
        let v = f.value();
        Ok((*v).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_store(dir, "", &self.params)?;
        let strides: Vec<String> = self.layers.iter().map(|l| l.stride.to_string()).collect();
        let meta = BTreeMap::from([
            ("kind".to_string(), "feature_extractor".to_string()),
            ("strides".to_string(), strides.join(",")),
            ("tap".to_string(), self.tap.to_string()),
        ]);
        checkpoint::write_metadata(dir, &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = checkpoint::read_metadata(dir)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("extractor metadata lacks {k}")))
        };
        let bad = |k: &str| Error::Checkpoint(format!("extractor metadata field {k} is malformed"));
        let tap: usize = get("tap")?.parse().map_err(|_| bad("tap"))?;
        let layers = get("strides")?
            .split(',')
            .enumerate()
            .map(|(i, s)| {
                let stride: usize = s.parse().map_err(|_| bad("strides"))?;
                let w = checkpoint::read_tensor(&dir.join(format!("layer{i}.weight.f32")))?;
                Ok((w, stride))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_weights(layers, tap)
    }
}
