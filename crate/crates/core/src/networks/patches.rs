use rand::Rng;

use crate::autograd::{CropBox, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Random square crops of one or more images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    pub boxes: Vec<CropBox>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Concatenate patch sets, e.g. one per image of a batch.
    pub fn concat(sets: impl IntoIterator<Item = PatchSet>) -> Self {
        Self {
            boxes: sets.into_iter().flat_map(|s| s.boxes).collect(),
        }
    }

    /// The crops themselves, each `[C, size, size]`, cut from `images`.
    pub fn extract<T: Float>(&self, images: &Tensor<T>) -> Vec<Tensor<T>> {
        let tape = Tape::new();
        let x = tape.constant(images.clone());
        self.boxes
            .iter()
            .map(|b| {
                let patch = x.crop_resize(std::slice::from_ref(b), b.size).value();
                let c = images.dim(1);
                (*patch).clone().reshape(&[c, b.size, b.size]).unwrap()
            })
            .collect()
    }
}

/// Inclusive side-length range `[H/8, H/4]` for an image of side `h`.
pub fn patch_bounds(h: usize) -> (usize, usize) {
    (h / 8, h / 4)
}

/// `k` crops of image `image` (side `h`×`w`): sides uniform in `[H/8, H/4]`,
/// offsets uniform over all positions where the crop fits.
pub fn crop_random_patches(h: usize, w: usize, image: usize, k: usize, rng: &mut impl Rng) -> Result<PatchSet> {
    let side = h.min(w);
    if side < 8 {
        return Err(Error::InvalidArgument(format!(
            "image side {side} < 8 leaves no valid patch size"
        )));
    }
    let (lo, hi) = patch_bounds(side);
    let boxes = (0..k)
        .map(|_| {
            let size = rng.gen_range(lo..=hi);
            CropBox {
                image,
                top: rng.gen_range(0..=h - size),
                left: rng.gen_range(0..=w - size),
                size,
            }
        })
        .collect();
    Ok(PatchSet { boxes })
}
