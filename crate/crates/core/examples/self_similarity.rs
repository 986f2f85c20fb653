//! Compare how the spatial self-similarity loss, the perceptual loss and the
//! Gram loss react to a texture change versus a structure change.
//!
//! Usage: `cargo run --release --example self_similarity -- [seed]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use texswap::autograd::Tape;
use texswap::datasets::{colorize_texture, gray_to_rgb, render_digit, SOURCE_SIZE};
use texswap::losses::{gram_style_loss, perceptual_loss, spatial_self_similarity_loss, FeatureExtractor};
use texswap::tensor::Tensor;

fn image(chw: Vec<f32>) -> Tensor<f32> {
    Tensor::new(&[1, 3, SOURCE_SIZE, SOURCE_SIZE], chw).unwrap()
}

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let three = render_digit(3, &mut rng);
    let eight = render_digit(8, &mut rng);
    let s = SOURCE_SIZE;

    let x = image(gray_to_rgb(&three));
    let candidates = [
        ("same digit, new texture", image(colorize_texture(&three, s, s, seed)?)),
        ("other digit, same texture", image(gray_to_rgb(&eight))),
        ("other digit, new texture", image(colorize_texture(&eight, s, s, seed)?)),
    ];

    let extractor = FeatureExtractor::<f32>::new(3, seed);
    println!(
        "{:<28} {:>9} {:>11} {:>9}",
        "candidate", "spatial", "perceptual", "gram"
    );
    for (name, xp) in &candidates {
        let tape = Tape::new();
        let (a, b) = (tape.constant(x.clone()), tape.constant(xp.clone()));
        let spatial = spatial_self_similarity_loss(&extractor, a, b, &mut rng)?.value().item();
        let perceptual = perceptual_loss(&extractor, a, b)?.value().item();
        let gram = gram_style_loss(&extractor, a, b)?.value().item();
        println!("{name:<28} {spatial:>9.4} {perceptual:>11.4} {gram:>9.5}");
    }
    Ok(())
}
