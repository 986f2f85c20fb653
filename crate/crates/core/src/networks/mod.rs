//! The five trainable networks of the translator.
//!
//! * [`ContentEncoder`] maps an image to a spatial content code.
//! * [`TextureEncoder`] maps an image to a spatial-free texture vector.
//! * [`Generator`] decodes a content code under a texture vector using
//!   style-modulated convolutions.
//! * [`Discriminator`] scores whole images.
//! * [`PatchDiscriminator`] scores a group of generated patches against the
//!   averaged features of reference patches.
//!
//! All networks are generic over the scalar type so that the exact same code
//! can be gradient-checked in `f64`.

mod conditional;
mod discriminators;
mod encoders;
mod generator;
mod patches;

pub use conditional::{conditional_modulate, DomainEmbeddingTable};
pub use discriminators::{Discriminator, PatchDiscriminator};
pub use encoders::{ContentEncoder, TextureEncoder};
pub use generator::Generator;
pub use patches::{crop_random_patches, patch_bounds, PatchSet};

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::tensor::{Float, Tensor};

/// Architecture hyperparameters shared by all five networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Stride-2 stages in the content encoder.
    pub content_stages: usize,
    /// Stride-2 stages in the texture encoder before global pooling.
    pub texture_stages: usize,
    pub base_width: usize,
    pub max_width: usize,
    pub texture_dim: usize,
    /// Patches per image for the co-occurrence discriminator.
    pub patch_count: usize,
    pub conditional: bool,
    pub num_domains: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::digit()
    }
}

impl NetConfig {
    /// 32-pixel digit configuration.
    pub fn digit() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            content_stages: 1,
            texture_stages: 4,
            base_width: 64,
            max_width: 256,
            texture_dim: 128,
            patch_count: 8,
            conditional: false,
            num_domains: 2,
        }
    }

    /// Narrow variant of [`NetConfig::digit`] sized for a single CPU core.
    pub fn digit_small() -> Self {
        Self {
            base_width: 16,
            max_width: 64,
            texture_dim: 64,
            ..Self::digit()
        }
    }

    /// 256-pixel configuration.
    pub fn large() -> Self {
        Self {
            image_size: 256,
            channels: 3,
            content_stages: 2,
            texture_stages: 6,
            base_width: 64,
            max_width: 512,
            texture_dim: 256,
            patch_count: 8,
            conditional: false,
            num_domains: 2,
        }
    }

    pub fn width(&self, stage: usize) -> usize {
        (self.base_width << stage.min(16)).min(self.max_width)
    }

    pub fn content_size(&self) -> usize {
        self.image_size >> self.content_stages
    }

    pub fn content_channels(&self) -> usize {
        self.width(self.content_stages)
    }

    /// Side length every patch is resampled to before scoring.
    pub fn patch_input_size(&self) -> usize {
        self.image_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.image_size;
        if h < 16 || !h.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size must be a power of two ≥ 16, got {h}"
            )));
        }
        if self.channels == 0 || self.base_width == 0 || self.max_width < self.base_width {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.content_stages == 0 || (h >> self.content_stages) < 2 {
            return Err(Error::Config(format!(
                "content_stages {} invalid for image_size {h}",
                self.content_stages
            )));
        }
        if self.texture_stages == 0 || (h >> self.texture_stages) < 1 {
            return Err(Error::Config(format!(
                "texture_stages {} invalid for image_size {h}",
                self.texture_stages
            )));
        }
        if self.texture_dim == 0 || self.patch_count == 0 {
            return Err(Error::Config("texture_dim and patch_count must be ≥ 1".into()));
        }
        if self.conditional && self.num_domains < 2 {
            return Err(Error::Config("conditional mode needs num_domains ≥ 2".into()));
        }
        Ok(())
    }

    /// Reject batches whose shape differs from the configured image shape.
    pub fn check_images<T: Float>(&self, x: &Tensor<T>) -> Result<usize> {
        match x.shape() {
            [n, c, h, w] if *c == self.channels && *h == self.image_size && *w == self.image_size => Ok(*n),
            s => Err(Error::Shape(format!(
                "expected [N, {}, {}, {}] images, got {:?}",
                self.channels, self.image_size, self.image_size, s
            ))),
        }
    }

    /// Domain labels must be supplied exactly in conditional mode.
    pub fn check_domains(&self, domains: Option<&[usize]>, batch: usize) -> Result<()> {
        match (self.conditional, domains) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::InvalidArgument(
                "domain labels given to an unconditional network".into(),
            )),
            (true, None) => Err(Error::InvalidArgument("conditional network needs domain labels".into())),
            (true, Some(d)) => {
                if d.len() != batch {
                    return Err(Error::InvalidArgument(format!(
                        "{} domain labels for batch of {batch}",
                        d.len()
                    )));
                }
                if let Some(&bad) = d.iter().find(|&&b| b >= self.num_domains) {
                    return Err(Error::InvalidArgument(format!(
                        "domain label {bad} out of range 0..{}",
                        self.num_domains
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Access to a network's parameters.
pub trait Network<T: Float> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
}

macro_rules! impl_network {
    ($($ty:ident),*) => {$(
        impl<T: Float> Network<T> for $ty<T> {
            fn params(&self) -> &ParamStore<T> {
                &self.params
            }
            fn params_mut(&mut self) -> &mut ParamStore<T> {
                &mut self.params
            }
        }
    )*};
}

impl_network!(
    ContentEncoder,
    TextureEncoder,
    Generator,
    Discriminator,
    PatchDiscriminator
);

/// Run `f` on a fresh tape with frozen parameters and return the value.
pub(crate) fn infer<T: Float>(
    params: &ParamStore<T>,
    f: impl for<'t> FnOnce(&'t Tape<T>, &Bound<'t, T>) -> Result<Var<'t, T>>,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let out = f(&tape, &bound)?;
    let value = out.value();
    Ok((*value).clone())
}
