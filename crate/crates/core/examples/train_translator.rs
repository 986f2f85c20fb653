//! Train the texture translator on a five-vs-six dataset and write panels,
//! metrics and checkpoints.
//!
//! Usage: `cargo run --release --example train_translator -- <dataset_dir> <out_dir> [steps] [preset] [ablation]`
//! where `preset` is `digit` or `digit_small` (default) and `ablation` is an
//! ablation mode such as `no_texture`.

use std::path::PathBuf;

use texswap::datasets::{DatasetManifest, Split};
use texswap::networks::NetConfig;
use texswap::trainer::{train_translator, AblationMode, TrainerConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "target/example-data/five_six".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-translator".into()));
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let net = match args.next().as_deref() {
        Some("digit") => NetConfig::digit(),
        _ => NetConfig::digit_small(),
    };
    let ablation: AblationMode = args.next().map(|s| s.parse()).transpose()?.unwrap_or_default();
    let config = TrainerConfig {
        net,
        ablation,
        steps,
        checkpoint_every: 0,
        panel_every: (steps / 4).max(1),
        ..TrainerConfig::default()
    };
    let train = DatasetManifest::load(&data, Split::Train)?;
    let val = DatasetManifest::load(&data, Split::Val)?;
    let started = std::time::Instant::now();
    let outcome = train_translator(&config, &train, &val, &out, None)?;
    let secs = started.elapsed().as_secs_f64();
    println!(
        "{} steps in {secs:.1}s ({:.0} ms/step)",
        outcome.steps_run,
        1e3 * secs / outcome.steps_run.max(1) as f64
    );
    println!("{}", outcome.checkpoint.display());
    Ok(())
}
