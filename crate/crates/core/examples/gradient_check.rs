//! Check the tape gradients of the translator losses against central finite
//! differences in double precision.
//!
//! Usage: `cargo run --release --example gradient_check -- [seed]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texswap::gradcheck::check_gradients;
use texswap::losses::{gram_style_loss, perceptual_loss, spatial_self_similarity_loss, FeatureExtractor};
use texswap::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = || {
        let data: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_f64(&[1, 3, 8, 8], &data).unwrap()
    };
    let (x, xp) = (image(), image());
    let extractor = FeatureExtractor::<f64>::new(3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let inputs = [x.clone(), xp];

    let spatial = check_gradients(&inputs[1..], 1e-5, Some(32), &mut rng, |t, v| {
        let mut rows = ChaCha8Rng::seed_from_u64(seed);
        spatial_self_similarity_loss(&extractor, t.constant(x.clone()), v[0], &mut rows)
    })?;
    let perceptual = check_gradients(&inputs, 1e-5, Some(32), &mut rng, |_, v| {
        perceptual_loss(&extractor, v[0], v[1])
    })?;
    let gram = check_gradients(&inputs, 1e-5, Some(32), &mut rng, |_, v| {
        gram_style_loss(&extractor, v[0], v[1])
    })?;
    for (name, r) in [("spatial", spatial), ("perceptual", perceptual), ("gram", gram)] {
        println!(
            "{name:<11} relative error {:.2e} over {} coordinates ({} re-measured)",
            r.max_rel_error, r.coordinates, r.refined
        );
    }
    Ok(())
}
