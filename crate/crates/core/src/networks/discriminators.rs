use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, Linear, ParamStore, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

use super::encoders::Trunk;
use super::{infer, NetConfig, PatchSet};

/// `D`: strided conv stack down to 4×4, then a two-layer head to one logit.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Float> {
    pub params: ParamStore<T>,
    cfg: NetConfig,
    trunk: Trunk,
    fc: Linear,
    out: Linear,
    final_width: usize,
}

impl<T: Float> Discriminator<T> {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let stages = (cfg.image_size / 4).trailing_zeros() as usize;
        let mut convs = vec![Conv2d::new(
            &mut params,
            &mut init,
            "d.conv0",
            cfg.channels,
            cfg.width(0),
            3,
            1,
            true,
        )];
        for s in 1..=stages {
            convs.push(Conv2d::new(
                &mut params,
                &mut init,
                &format!("d.down{s}"),
                cfg.width(s - 1),
                cfg.width(s),
                3,
                2,
                true,
            ));
        }
        let w = cfg.width(stages);
        let fc = Linear::new(&mut params, &mut init, "d.fc", w * 16, w, true);
        let out = Linear::new(&mut params, &mut init, "d.out", w, 1, true);
        let trunk = Trunk::new(&mut params, "d", convs, cfg, true);
        Ok(Self {
            params,
            cfg: cfg.clone(),
            trunk,
            fc,
            out,
            final_width: w,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// One logit per image, shape `[N]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, domains: Option<&[usize]>) -> Result<Var<'t, T>> {
        let n = self.cfg.check_images(&x.value())?;
        self.cfg.check_domains(domains, n)?;
        let h = self.trunk.forward(p, x, domains)?;
        let h = h.reshape(&[n, self.final_width * 16]);
        let h = self.fc.forward(p, h).leaky_relu(LRELU_SLOPE);
        Ok(self.out.forward(p, h).reshape(&[n]))
    }

    pub fn discriminate(&self, x: &Tensor<T>, domains: Option<&[usize]>) -> Result<Tensor<T>> {
        infer(&self.params, |tape, p| {
            self.forward(p, tape.constant(x.clone()), domains)
        })
    }

    /// The final linear layer; zeroing it makes `D` constant.
    pub fn output_layer(&self) -> &Linear {
        &self.out
    }
}

/// `D_patch`: scores generated patches against the averaged features of
/// reference patches.
///
/// Every patch is resampled to `image_size / 8` and encoded by a shared
/// trunk. Reference features are averaged per group, concatenated to every
/// generated-patch feature of that group, passed through the head, and the
/// head outputs are averaged per group.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator<T: Float> {
    pub params: ParamStore<T>,
    cfg: NetConfig,
    convs: Vec<Conv2d>,
    embed: Linear,
    head_hidden: Linear,
    head_out: Linear,
    flat_dim: usize,
    feature_dim: usize,
}

impl<T: Float> PatchDiscriminator<T> {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let p = cfg.patch_input_size();
        let mut convs = vec![Conv2d::new(
            &mut params,
            &mut init,
            "dp.conv0",
            cfg.channels,
            cfg.width(0),
            3,
            1,
            true,
        )];
        let mut side = p;
        let mut stage = 0;
        while side > 2 {
            stage += 1;
            convs.push(Conv2d::new(
                &mut params,
                &mut init,
                &format!("dp.down{stage}"),
                cfg.width(stage - 1),
                cfg.width(stage),
                3,
                2,
                true,
            ));
            side /= 2;
        }
        let w = cfg.width(stage);
        let flat_dim = w * side * side;
        let feature_dim = w;
        let embed = Linear::new(&mut params, &mut init, "dp.embed", flat_dim, feature_dim, true);
        let head_hidden = Linear::new(
            &mut params,
            &mut init,
            "dp.head.hidden",
            2 * feature_dim,
            feature_dim,
            true,
        );
        let head_out = Linear::new(&mut params, &mut init, "dp.head.out", feature_dim, 1, true);
        Ok(Self {
            params,
            cfg: cfg.clone(),
            convs,
            embed,
            head_hidden,
            head_out,
            flat_dim,
            feature_dim,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Per-patch features `[patches, F]`.
    pub fn features<'t>(&self, p: &Bound<'t, T>, images: Var<'t, T>, patches: &PatchSet) -> Var<'t, T> {
        let mut h = images.crop_resize(&patches.boxes, self.cfg.patch_input_size());
        for conv in &self.convs {
            h = conv.forward(p, h).leaky_relu(LRELU_SLOPE);
        }
        let h = h.reshape(&[patches.len(), self.flat_dim]);
        self.embed.forward(p, h).leaky_relu(LRELU_SLOPE)
    }

    /// One logit per group, shape `[groups]`.
    ///
    /// Both patch sets are split into `groups` consecutive runs of equal
    /// length; run `g` of `fake` is scored against run `g` of `reference`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        fake_images: Var<'t, T>,
        fake: &PatchSet,
        ref_images: Var<'t, T>,
        reference: &PatchSet,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        if fake.is_empty() || reference.is_empty() {
            return Err(Error::InvalidArgument("empty patch set".into()));
        }
        if groups == 0 || !fake.len().is_multiple_of(groups) || !reference.len().is_multiple_of(groups) {
            return Err(Error::InvalidArgument(format!(
                "patch counts {} / {} not divisible into {groups} groups",
                fake.len(),
                reference.len()
            )));
        }
        self.cfg.check_images(&fake_images.value())?;
        self.cfg.check_images(&ref_images.value())?;
        let k_fake = fake.len() / groups;
        let k_ref = reference.len() / groups;
        let f_fake = self.features(p, fake_images, fake);
        let f_ref = self
            .features(p, ref_images, reference)
            .group_mean_rows(k_ref)
            .repeat_rows(k_fake);
        let h = f_fake.concat_cols(f_ref);
        let h = self.head_hidden.forward(p, h).leaky_relu(LRELU_SLOPE);
        let logits = self.head_out.forward(p, h);
        Ok(logits.group_mean_rows(k_fake).reshape(&[groups]))
    }

    /// Score one group of generated patches against one group of reference
    /// patches.
    pub fn discriminate_patches(
        &self,
        fake_images: &Tensor<T>,
        fake: &PatchSet,
        ref_images: &Tensor<T>,
        reference: &PatchSet,
    ) -> Result<T> {
        let out = infer(&self.params, |tape, p| {
            self.forward(
                p,
                tape.constant(fake_images.clone()),
                fake,
                tape.constant(ref_images.clone()),
                reference,
                1,
            )
        })?;
        Ok(out.item())
    }

    /// The final linear layer of the head.
    pub fn output_layer(&self) -> &Linear {
        &self.head_out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::crop_random_patches;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(n: usize, seed: u64) -> Tensor<f32> {
        Init::new(seed).normal(&[n, 3, 32, 32], 0.5)
    }

    #[test]
    fn one_logit_per_image() {
        let cfg = NetConfig::digit_small();
        let d = Discriminator::<f32>::new(&cfg, 0).unwrap();
        let x = img(3, 1);
        let l = d.discriminate(&x, None).unwrap();
        assert_eq!(l.shape(), &[3]);
        assert!(l.all_finite());
        assert_eq!(l, d.discriminate(&x, None).unwrap());
    }

    #[test]
    fn patch_logit_ignores_order() {
        let cfg = NetConfig::digit_small();
        let d = PatchDiscriminator::<f32>::new(&cfg, 0).unwrap();
        let fake = img(1, 2);
        let real = img(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fp = crop_random_patches(32, 32, 0, 8, &mut rng).unwrap();
        let rp = crop_random_patches(32, 32, 0, 8, &mut rng).unwrap();
        let base = d.discriminate_patches(&fake, &fp, &real, &rp).unwrap();
        assert!(base.is_finite());
        for _ in 0..5 {
            let mut fp2 = fp.clone();
            let mut rp2 = rp.clone();
            fp2.boxes.shuffle(&mut rng);
            rp2.boxes.shuffle(&mut rng);
            assert_eq!(base, d.discriminate_patches(&fake, &fp, &real, &rp2).unwrap());
            assert_eq!(base, d.discriminate_patches(&fake, &fp2, &real, &rp).unwrap());
        }
    }

    #[test]
    fn single_patches_and_empty_sets() {
        let cfg = NetConfig::digit_small();
        let d = PatchDiscriminator::<f32>::new(&cfg, 0).unwrap();
        let x = img(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = crop_random_patches(32, 32, 0, 1, &mut rng).unwrap();
        assert!(d.discriminate_patches(&x, &one, &x, &one).unwrap().is_finite());
        let empty = PatchSet { boxes: vec![] };
        assert!(d.discriminate_patches(&x, &empty, &x, &one).is_err());
    }
}
