use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, Linear, ParamId, ParamStore, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

use super::{infer, NetConfig};

const DEMOD_EPS: f64 = 1e-8;

/// Convolution whose input channels are scaled by a per-sample style vector,
/// optionally followed by weight demodulation.
///
/// Implemented without materializing per-sample kernels: scale the input,
/// convolve with the shared kernel, then rescale each output channel by
/// `1 / sqrt(Σ_{i,k} (w[o,i,k]·s[n,i])² + ε)`.
#[derive(Debug, Clone)]
struct ModConv {
    affine: Linear,
    weight: ParamId,
    bias: ParamId,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    demodulate: bool,
}

impl ModConv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        style_dim: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        demodulate: bool,
    ) -> Self {
        let affine = Linear::with_bias_init(store, init, &format!("{name}.affine"), style_dim, in_ch, 1.0);
        let weight = store.add(
            format!("{name}.weight"),
            init.he(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self {
            affine,
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            demodulate,
        }
    }

    fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>, w: Var<'t, T>) -> Var<'t, T> {
        let style = self.affine.forward(p, w);
        let kernel = p.get(self.weight);
        let mut y = x.scale_channels(style).conv2d(kernel, None, 1, self.kernel / 2);
        if self.demodulate {
            let kk = self.kernel * self.kernel;
            let wsq = kernel.square().reshape(&[self.out_ch, self.in_ch, kk]).sum_last();
            let demod = style
                .square()
                .matmul_ex(wsq, false, true)
                .add_scalar(T::lit(DEMOD_EPS))
                .powf(-0.5);
            y = y.scale_channels(demod);
        }
        y.bias_channels(p.get(self.bias))
    }
}

#[derive(Debug, Clone)]
struct Block {
    upsample: bool,
    conv1: ModConv,
    conv2: ModConv,
    to_rgb: ModConv,
}

/// `G`: decodes a content code under a texture vector.
///
/// The content code takes the place of the learned constant input of a
/// style-based generator. The texture vector passes through a small mapping
/// MLP, then per-layer affines produce the modulation styles. RGB skip
/// outputs are summed across resolutions and squashed with `tanh`.
#[derive(Debug, Clone)]
pub struct Generator<T: Float> {
    pub params: ParamStore<T>,
    cfg: NetConfig,
    mapping: Vec<Linear>,
    blocks: Vec<Block>,
}

impl<T: Float> Generator<T> {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let d = cfg.texture_dim;
        let mapping = (0..2)
            .map(|i| Linear::new(&mut params, &mut init, &format!("g.map{i}"), d, d, true))
            .collect();
        let mut blocks = Vec::new();
        let mut in_ch = cfg.content_channels();
        for (bi, stage) in (0..=cfg.content_stages).rev().enumerate() {
            let ch = cfg.width(stage);
            let name = format!("g.block{bi}");
            blocks.push(Block {
                upsample: bi > 0,
                conv1: ModConv::new(&mut params, &mut init, &format!("{name}.conv1"), d, in_ch, ch, 3, true),
                conv2: ModConv::new(&mut params, &mut init, &format!("{name}.conv2"), d, ch, ch, 3, true),
                to_rgb: ModConv::new(
                    &mut params,
                    &mut init,
                    &format!("{name}.to_rgb"),
                    d,
                    ch,
                    cfg.channels,
                    1,
                    false,
                ),
            });
            in_ch = ch;
        }
        Ok(Self {
            params,
            cfg: cfg.clone(),
            mapping,
            blocks,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    fn check_codes(&self, content: &Tensor<T>, texture: &Tensor<T>) -> Result<()> {
        let s = self.cfg.content_size();
        let cc = self.cfg.content_channels();
        let n = match content.shape() {
            [n, c, h, w] if *c == cc && *h == s && *w == s => *n,
            other => {
                return Err(Error::Shape(format!(
                    "content code {:?} does not match [N, {cc}, {s}, {s}]",
                    other
                )))
            }
        };
        if texture.shape() != [n, self.cfg.texture_dim] {
            return Err(Error::Shape(format!(
                "texture code {:?} does not match [{n}, {}]",
                texture.shape(),
                self.cfg.texture_dim
            )));
        }
        Ok(())
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, content: Var<'t, T>, texture: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_codes(&content.value(), &texture.value())?;
        let mut w = texture;
        for layer in &self.mapping {
            w = layer.forward(p, w).leaky_relu(LRELU_SLOPE);
        }
        let mut h = content;
        let mut rgb: Option<Var<'t, T>> = None;
        for block in &self.blocks {
            if block.upsample {
                h = h.upsample2x();
            }
            h = block.conv1.forward(p, h, w).leaky_relu(LRELU_SLOPE);
            h = block.conv2.forward(p, h, w).leaky_relu(LRELU_SLOPE);
            let skip = block.to_rgb.forward(p, h, w);
            rgb = Some(match rgb {
                Some(prev) => prev.upsample2x().add(skip),
                None => skip,
            });
        }
        Ok(rgb.expect("at least one block").tanh())
    }

    pub fn generate(&self, content: &Tensor<T>, texture: &Tensor<T>) -> Result<Tensor<T>> {
        infer(&self.params, |tape, p| {
            self.forward(p, tape.constant(content.clone()), tape.constant(texture.clone()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{ContentEncoder, TextureEncoder};

    #[test]
    fn output_matches_image_shape_and_range() {
        let cfg = NetConfig::digit_small();
        let g = Generator::<f32>::new(&cfg, 1).unwrap();
        let mut init = Init::new(2);
        let c: Tensor<f32> = init.normal(&[2, cfg.content_channels(), 16, 16], 3.0);
        let t: Tensor<f32> = init.normal(&[2, cfg.texture_dim], 3.0);
        let x = g.generate(&c, &t).unwrap();
        assert_eq!(x.shape(), &[2, 3, 32, 32]);
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(x, g.generate(&c, &t).unwrap());
    }

    #[test]
    fn round_trip_shape() {
        let cfg = NetConfig::digit_small();
        let ec = ContentEncoder::<f32>::new(&cfg, 1).unwrap();
        let et = TextureEncoder::<f32>::new(&cfg, 2).unwrap();
        let g = Generator::<f32>::new(&cfg, 3).unwrap();
        let x: Tensor<f32> = Init::new(9).normal(&[2, 3, 32, 32], 0.5);
        let out = g
            .generate(&ec.encode(&x, None).unwrap(), &et.encode(&x, None).unwrap())
            .unwrap();
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn mismatched_codes_error() {
        let cfg = NetConfig::digit_small();
        let g = Generator::<f32>::new(&cfg, 1).unwrap();
        let c = Tensor::<f32>::zeros(&[1, cfg.content_channels(), 8, 8]);
        let t = Tensor::<f32>::zeros(&[1, cfg.texture_dim]);
        assert!(g.generate(&c, &t).is_err());
        let c = Tensor::<f32>::zeros(&[1, cfg.content_channels(), 16, 16]);
        let t = Tensor::<f32>::zeros(&[2, cfg.texture_dim]);
        assert!(g.generate(&c, &t).is_err());
    }

    #[test]
    fn demodulation_cancels_style_magnitude() {
        use crate::autograd::Tape;
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(1);
        let conv = ModConv::new(&mut store, &mut init, "m", 4, 3, 5, 3, true);
        let x: Tensor<f64> = init.normal(&[2, 3, 6, 6], 1.0);
        let w: Tensor<f64> = init.normal(&[2, 4], 1.0);
        let run = |store: &ParamStore<f64>| {
            let tape = Tape::new();
            let p = store.bind(&tape, false);
            let y = conv.forward(&p, tape.constant(x.clone()), tape.constant(w.clone()));
            let v = y.value();
            (*v).clone()
        };
        let base = run(&store);
        let mut scaled = store.clone();
        for id in [conv.affine.weight, conv.affine.bias.unwrap()] {
            let t = scaled.get(id).map(|v| 3.0 * v);
            scaled.set(id, t);
        }
        let other = run(&scaled);
        let diff = base.zip_map(&other, |a, b| a - b).max_abs();
        assert!(diff < 1e-6, "diff {diff}");
    }
}
