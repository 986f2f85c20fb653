use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Bound, Conv2d, Init, Linear, ParamStore, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

use super::{conditional_modulate, infer, DomainEmbeddingTable, NetConfig};

/// Layer ids that carry domain embeddings in a trunk of `len` conv layers:
/// the second and the second-to-last.
fn conditioned_layers(len: usize) -> Vec<usize> {
    let mut v = vec![1, len.saturating_sub(2)];
    v.dedup();
    v
}

/// Conv stack shared by both encoders and the image discriminator.
#[derive(Debug, Clone)]
pub(super) struct Trunk {
    pub convs: Vec<Conv2d>,
    pub table: Option<DomainEmbeddingTable>,
    /// Whether the final conv is followed by the activation.
    pub activate_last: bool,
}

impl Trunk {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        convs: Vec<Conv2d>,
        cfg: &NetConfig,
        activate_last: bool,
    ) -> Self {
        let table = cfg.conditional.then(|| {
            let layers: Vec<(usize, usize)> = conditioned_layers(convs.len())
                .into_iter()
                .map(|l| (l, convs[l].out_ch))
                .collect();
            DomainEmbeddingTable::new(store, prefix, &layers, cfg.num_domains)
        });
        Self {
            convs,
            table,
            activate_last,
        }
    }

    pub fn forward<'t, T: Float>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        domains: Option<&[usize]>,
    ) -> Result<Var<'t, T>> {
        let mut h = x;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(p, h);
            if let (Some(table), Some(d)) = (&self.table, domains) {
                if table.has_layer(i) {
                    h = conditional_modulate(h, d, i, table, p)?;
                }
            }
            if i < last || self.activate_last {
                h = h.leaky_relu(LRELU_SLOPE);
            }
        }
        Ok(h)
    }
}

/// `E_c`: image → spatial content code at `1 / 2^content_stages` resolution.
#[derive(Debug, Clone)]
pub struct ContentEncoder<T: Float> {
    pub params: ParamStore<T>,
    cfg: NetConfig,
    trunk: Trunk,
}

impl<T: Float> ContentEncoder<T> {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut convs = vec![Conv2d::new(
            &mut params,
            &mut init,
            "ec.conv0",
            cfg.channels,
            cfg.width(0),
            3,
            1,
            true,
        )];
        for s in 1..=cfg.content_stages {
            convs.push(Conv2d::new(
                &mut params,
                &mut init,
                &format!("ec.down{s}"),
                cfg.width(s - 1),
                cfg.width(s),
                3,
                2,
                true,
            ));
        }
        let w = cfg.width(cfg.content_stages);
        convs.push(Conv2d::new(&mut params, &mut init, "ec.refine", w, w, 3, 1, true));
        convs.push(Conv2d::new(&mut params, &mut init, "ec.out", w, w, 1, 1, true));
        let trunk = Trunk::new(&mut params, "ec", convs, cfg, false);
        Ok(Self {
            params,
            cfg: cfg.clone(),
            trunk,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Shape of one content code: `[C, h, w]`.
    pub fn code_shape(&self) -> [usize; 3] {
        let s = self.cfg.content_size();
        [self.cfg.content_channels(), s, s]
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, domains: Option<&[usize]>) -> Result<Var<'t, T>> {
        let n = self.cfg.check_images(&x.value())?;
        self.cfg.check_domains(domains, n)?;
        self.trunk.forward(p, x, domains)
    }

    pub fn encode(&self, x: &Tensor<T>, domains: Option<&[usize]>) -> Result<Tensor<T>> {
        infer(&self.params, |tape, p| {
            self.forward(p, tape.constant(x.clone()), domains)
        })
    }

    pub fn embedding_table(&self) -> Option<&DomainEmbeddingTable> {
        self.trunk.table.as_ref()
    }
}

/// `E_t`: image → texture vector of length `texture_dim`, spatial axes removed
/// by global average pooling.
#[derive(Debug, Clone)]
pub struct TextureEncoder<T: Float> {
    pub params: ParamStore<T>,
    cfg: NetConfig,
    trunk: Trunk,
    head: Linear,
}

impl<T: Float> TextureEncoder<T> {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut convs = vec![Conv2d::new(
            &mut params,
            &mut init,
            "et.conv0",
            cfg.channels,
            cfg.width(0),
            3,
            1,
            true,
        )];
        for s in 1..=cfg.texture_stages {
            convs.push(Conv2d::new(
                &mut params,
                &mut init,
                &format!("et.down{s}"),
                cfg.width(s - 1),
                cfg.width(s),
                3,
                2,
                true,
            ));
        }
        let w = cfg.width(cfg.texture_stages);
        let head = Linear::new(&mut params, &mut init, "et.head", w, cfg.texture_dim, true);
        let trunk = Trunk::new(&mut params, "et", convs, cfg, true);
        Ok(Self {
            params,
            cfg: cfg.clone(),
            trunk,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, domains: Option<&[usize]>) -> Result<Var<'t, T>> {
        let n = self.cfg.check_images(&x.value())?;
        self.cfg.check_domains(domains, n)?;
        let h = self.trunk.forward(p, x, domains)?;
        Ok(self.head.forward(p, h.global_avg_pool()))
    }

    pub fn encode(&self, x: &Tensor<T>, domains: Option<&[usize]>) -> Result<Tensor<T>> {
        infer(&self.params, |tape, p| {
            self.forward(p, tape.constant(x.clone()), domains)
        })
    }

    pub fn embedding_table(&self) -> Option<&DomainEmbeddingTable> {
        self.trunk.table.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::networks::Network;

    fn images(n: usize, size: usize, seed: u64) -> Tensor<f32> {
        let mut init = Init::new(seed);
        init.normal(&[n, 3, size, size], 0.5)
    }

    #[test]
    fn content_code_is_half_resolution_for_digits() {
        let cfg = NetConfig::digit_small();
        let ec = ContentEncoder::<f32>::new(&cfg, 1).unwrap();
        let c = ec.encode(&images(2, 32, 0), None).unwrap();
        assert_eq!(c.shape(), &[2, cfg.content_channels(), 16, 16]);
        assert_eq!(ec.code_shape(), [cfg.content_channels(), 16, 16]);
    }

    #[test]
    fn large_config_content_is_quarter_resolution() {
        // parameters only; a 256-px forward is too slow for a unit test
        let ec = ContentEncoder::<f32>::new(&NetConfig::large(), 1).unwrap();
        assert_eq!(ec.code_shape()[1..], [64, 64]);
    }

    #[test]
    fn encoders_are_deterministic() {
        let cfg = NetConfig::digit_small();
        let ec = ContentEncoder::<f32>::new(&cfg, 3).unwrap();
        let et = TextureEncoder::<f32>::new(&cfg, 4).unwrap();
        let x = images(3, 32, 5);
        assert_eq!(ec.encode(&x, None).unwrap(), ec.encode(&x, None).unwrap());
        let t1 = et.encode(&x, None).unwrap();
        assert_eq!(t1, et.encode(&x, None).unwrap());
        assert_eq!(t1.shape(), &[3, cfg.texture_dim]);
        assert!(t1.all_finite());
    }

    #[test]
    fn rejects_wrong_shapes_and_domains() {
        let cfg = NetConfig::digit_small();
        let ec = ContentEncoder::<f32>::new(&cfg, 3).unwrap();
        assert!(ec.encode(&images(1, 16, 0), None).is_err());
        assert!(ec.encode(&images(1, 32, 0), Some(&[0])).is_err());
        let cond = NetConfig {
            conditional: true,
            ..cfg
        };
        let ec = ContentEncoder::<f32>::new(&cond, 3).unwrap();
        assert!(ec.encode(&images(1, 32, 0), None).is_err());
        assert!(ec.encode(&images(1, 32, 0), Some(&[2])).is_err());
        assert!(ec.encode(&images(1, 32, 0), Some(&[1])).is_ok());
    }

    #[test]
    fn embeddings_sit_on_second_and_pre_last_layers() {
        let cfg = NetConfig {
            conditional: true,
            ..NetConfig::digit_small()
        };
        let ec = ContentEncoder::<f32>::new(&cfg, 0).unwrap();
        // conv0, down1, refine, out → layers 1 and 2
        assert_eq!(ec.embedding_table().unwrap().layers(), vec![1, 2]);
        let et = TextureEncoder::<f32>::new(&cfg, 0).unwrap();
        // conv0 + 4 downs → layers 1 and 3
        assert_eq!(et.embedding_table().unwrap().layers(), vec![1, 3]);
    }

    #[test]
    fn pooling_ignores_spatial_order() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = tape.constant(a).global_avg_pool();
        assert_eq!(out.value().data(), &[2.5]);
        let b = Tensor::from_f64(&[1, 1, 2, 2], &[4.0, 3.0, 1.0, 2.0]).unwrap();
        assert_eq!(tape.constant(b).global_avg_pool().value().data(), &[2.5]);
    }

    #[test]
    fn parameter_counts_do_not_change() {
        let cfg = NetConfig::digit_small();
        let a = ContentEncoder::<f32>::new(&cfg, 0).unwrap();
        let b = ContentEncoder::<f32>::new(&cfg, 99).unwrap();
        assert_eq!(a.params().num_scalars(), b.params().num_scalars());
    }
}
