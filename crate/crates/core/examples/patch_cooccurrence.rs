//! Crop random patches from two textured digits, save them, and score their
//! co-occurrence with an untrained patch discriminator. The score is the
//! same for any ordering of the patches.
//!
//! Usage: `cargo run --release --example patch_cooccurrence -- [out_dir] [seed]`

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use texswap::datasets::{colorize_texture, render_digit, save_rgb, SOURCE_SIZE};
use texswap::networks::{crop_random_patches, NetConfig, PatchDiscriminator, PatchSet};
use texswap::tensor::Tensor;

/// Pad a rendered digit with background to the network input size.
fn pad(gray: &[f32], size: usize) -> Vec<f32> {
    let off = (size - SOURCE_SIZE) / 2;
    let mut out = vec![0.0; size * size];
    for r in 0..SOURCE_SIZE {
        let row = &gray[r * SOURCE_SIZE..(r + 1) * SOURCE_SIZE];
        out[(r + off) * size + off..][..SOURCE_SIZE].copy_from_slice(row);
    }
    out
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-patches".into()));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let cfg = NetConfig::digit_small();
    let size = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pixels = Vec::new();
    for (digit, texture) in [(5u8, seed), (6u8, seed + 1)] {
        let gray = pad(&render_digit(digit, &mut rng), size);
        pixels.extend(colorize_texture(&gray, size, size, texture)?);
    }
    let images = Tensor::new(&[2, 3, size, size], pixels)?;
    let k = cfg.patch_count;
    let fake = crop_random_patches(size, size, 0, k, &mut rng)?;
    let same = crop_random_patches(size, size, 0, k, &mut rng)?;
    let other = crop_random_patches(size, size, 1, k, &mut rng)?;

    for (i, patch) in fake.extract(&images).iter().enumerate() {
        let s = patch.dim(1);
        save_rgb(&out.join(format!("patch_{i}.png")), patch.data(), s, s)?;
    }

    let d = PatchDiscriminator::<f32>::new(&cfg, seed)?;
    let vs_same = d.discriminate_patches(&images, &fake, &images, &same)?;
    let vs_other = d.discriminate_patches(&images, &fake, &images, &other)?;
    let mut shuffled = fake.boxes.clone();
    shuffled.shuffle(&mut rng);
    let reordered = d.discriminate_patches(&images, &PatchSet { boxes: shuffled }, &images, &other)?;
    println!(
        "{k} patches of sides {:?}",
        fake.boxes.iter().map(|b| b.size).collect::<Vec<_>>()
    );
    println!("logit against patches of the same image:  {vs_same:.6}");
    println!("logit against patches of the other image: {vs_other:.6}");
    println!("after shuffling the patches:               {reordered:.6}");
    println!("{}", out.display());
    Ok(())
}
