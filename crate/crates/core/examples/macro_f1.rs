//! Macro-F1 of a prediction list against ground truth.
//!
//! Usage: `cargo run --example macro_f1 -- <truth> <pred>` with comma-separated
//! class indices, e.g. `0,0,1,1 0,1,1,1`. Without arguments, scores the
//! constant predictor on a balanced binary set.

use texswap::downstream::macro_f1;

fn parse(list: &str) -> anyhow::Result<Vec<usize>> {
    Ok(list.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (truth, pred) = match args.as_slice() {
        [t, p] => (parse(t)?, parse(p)?),
        [] => (vec![0, 0, 1, 1], vec![0, 0, 0, 0]),
        _ => anyhow::bail!("usage: macro_f1 <truth> <pred>"),
    };
    let k = truth.iter().chain(&pred).max().map_or(1, |m| m + 1);
    let report = macro_f1(&truth, &pred, k)?;
    for (c, f1) in report.per_class.iter().enumerate() {
        println!("class {c}: F1 {f1:.4}");
    }
    println!("accuracy {:.4}", report.accuracy);
    println!("macro-F1 {:.4}", report.macro_f1);
    Ok(())
}
