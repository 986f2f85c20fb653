//! Train classifiers on a biased dataset with and without augmented data and
//! compare their macro-F1 on the inverted-bias test split.
//!
//! Usage: `cargo run --release --example debias_experiment -- <dataset_dir> <out_dir> [name=augmented_dir ...]`
//!
//! A `baseline` arm trained on the original split alone is always included.

use std::path::PathBuf;

use texswap::downstream::{run_debias_experiment, ArmSpec, ClassifierConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "target/example-data/five_six".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-experiment".into()));
    let mut arms = vec![ArmSpec::baseline("baseline")];
    for spec in args {
        let (name, dir) = spec
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("arm `{spec}` is not name=dir"))?;
        arms.push(ArmSpec::augmented(name, dir));
    }
    let report = run_debias_experiment(&data, &arms, &ClassifierConfig::default(), 1)?;
    print!("{}", report.summary());
    println!("{}", report.save(&out)?.display());
    Ok(())
}
