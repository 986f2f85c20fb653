use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::datasets::{load_all, save_rgb, Batch, CrossBiasSampler, DatasetManifest, Split};
use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

use super::{step_rng, PairBatch, Stream, TrainerConfig, TranslatorState};

pub const METRICS_FILE: &str = "metrics.ndjson";
/// Every dataset file the run opened, one path per line.
pub const FILES_READ_FILE: &str = "files_read.txt";
const PANEL_PAIRS: usize = 8;

#[derive(Debug)]
pub struct TrainOutcome {
    /// Directory of the final checkpoint.
    pub checkpoint: PathBuf,
    pub state: TranslatorState,
    /// Steps executed by this call (fewer than `config.steps` on resume).
    pub steps_run: u64,
}

pub fn checkpoint_dir(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:06}"))
}

fn pair_batch(data: &Batch, src: &[usize], refs: &[usize]) -> PairBatch {
    PairBatch {
        source: data.images.gather_outer(src),
        reference: data.images.gather_outer(refs),
        source_domains: src.iter().map(|&i| data.b[i]).collect(),
        reference_domains: refs.iter().map(|&i| data.b[i]).collect(),
    }
}

fn check_manifest(cfg: &TrainerConfig, m: &DatasetManifest) -> Result<()> {
    if m.split == Split::Test {
        return Err(Error::Dataset(
            "translator training must not read the test split".into(),
        ));
    }
    let want = [cfg.net.channels, cfg.net.image_size, cfg.net.image_size];
    if m.meta.image_shape() != want {
        return Err(Error::Dataset(format!(
            "{} images are {:?}, network expects {:?}",
            m.split,
            m.meta.image_shape(),
            want
        )));
    }
    if cfg.net.conditional && m.meta.num_domains > cfg.net.num_domains {
        return Err(Error::Dataset(format!(
            "dataset has {} domains, network embeds {}",
            m.meta.num_domains, cfg.net.num_domains
        )));
    }
    Ok(())
}

/// Side-by-side rows of sources, references and translations.
fn write_panel(path: &Path, rows: &[&Tensor<f32>]) -> Result<()> {
    let (n, c, s) = (rows[0].dim(0), rows[0].dim(1), rows[0].dim(2));
    let gap = 2;
    let (h, w) = (rows.len() * (s + gap) - gap, n * (s + gap) - gap);
    let mut buf = vec![-1.0f32; 3 * h * w];
    for (r, t) in rows.iter().enumerate() {
        for i in 0..n {
            for ch in 0..3 {
                let src_ch = ch.min(c - 1);
                for y in 0..s {
                    for x in 0..s {
                        let v = t.data()[((i * c + src_ch) * s + y) * s + x];
                        buf[(ch * h + r * (s + gap) + y) * w + i * (s + gap) + x] = v;
                    }
                }
            }
        }
    }
    save_rgb(path, &buf, h, w)
}

/// Keep the metric records of steps already covered by a resumed state.
fn truncated_metrics(path: &Path, upto: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).at(path)?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.at(path)?;
        let rec: serde_json::Value = serde_json::from_str(&line)?;
        if rec
            .get("step")
            .and_then(|s| s.as_f64())
            .is_some_and(|s| s <= upto as f64)
        {
            kept.push(line);
        }
    }
    Ok(kept)
}

/// Train for `config.steps` steps in total, writing checkpoints, a metrics
/// log, validation panels and the list of files read under `out`.
///
/// With `resume`, training continues from that checkpoint.
pub fn train_translator(
    config: &TrainerConfig,
    train: &DatasetManifest,
    val: &DatasetManifest,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_manifest(config, train)?;
    check_manifest(config, val)?;
    let sampler = CrossBiasSampler::new(train)?;
    let val_sampler = CrossBiasSampler::new(val)?;
    fs::create_dir_all(out).at(out)?;
    let config_path = out.join("trainer_config.json");
    fs::write(&config_path, serde_json::to_string_pretty(config)? + "\n").at(config_path)?;

    let mut files_read = vec![train.manifest_path(), val.manifest_path()];
    let data = load_all(train)?;
    files_read.extend((0..train.len()).map(|i| train.image_path(i)));

    // frozen validation pairs
    let mut rng = step_rng(config.seed, 0, Stream::Panel);
    let panel_pairs: Vec<_> = (0..PANEL_PAIRS.min(val.len()))
        .map(|_| val_sampler.sample(&mut rng))
        .collect();
    let mut panel_idx: Vec<usize> = panel_pairs.iter().flat_map(|p| [p.source, p.texture_ref]).collect();
    panel_idx.sort_unstable();
    panel_idx.dedup();
    let val_data = crate::datasets::load_batch(val, &panel_idx)?;
    files_read.extend(panel_idx.iter().map(|&i| val.image_path(i)));
    let pos = |i: usize| panel_idx.binary_search(&i).unwrap();
    let panel = pair_batch(
        &val_data,
        &panel_pairs.iter().map(|p| pos(p.source)).collect::<Vec<_>>(),
        &panel_pairs.iter().map(|p| pos(p.texture_ref)).collect::<Vec<_>>(),
    );

    let mut state = match resume {
        Some(dir) => TranslatorState::load(dir, Some(config))?,
        None => TranslatorState::new(config)?,
    };
    state.config = config.clone();
    let start = state.step;
    if start > config.steps {
        return Err(Error::Config(format!(
            "checkpoint is at step {start}, beyond the configured {} steps",
            config.steps
        )));
    }

    let metrics_path = out.join(METRICS_FILE);
    let kept = truncated_metrics(&metrics_path, start)?;
    let mut metrics_out = BufWriter::new(File::create(&metrics_path).at(&metrics_path)?);
    for line in kept {
        writeln!(metrics_out, "{line}").at(&metrics_path)?;
    }

    let mut last_saved = None;
    while state.step < config.steps {
        let mut rng = step_rng(config.seed, state.step, Stream::Pairs);
        let pairs: Vec<_> = (0..config.batch_size).map(|_| sampler.sample(&mut rng)).collect();
        let src: Vec<usize> = pairs.iter().map(|p| p.source).collect();
        let refs: Vec<usize> = pairs.iter().map(|p| p.texture_ref).collect();
        let metrics = state.train_step(&pair_batch(&data, &src, &refs))?;
        writeln!(metrics_out, "{}", serde_json::to_string(&metrics)?).at(&metrics_path)?;
        let step = state.step;
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            metrics_out.flush().at(&metrics_path)?;
            state.save(&checkpoint_dir(out, step))?;
            last_saved = Some(step);
        }
        if config.panel_every > 0 && step % config.panel_every == 0 {
            let fake = state.translate(
                &panel.source,
                &panel.reference,
                &panel.source_domains,
                &panel.reference_domains,
            )?;
            let path = out.join("panels").join(format!("step_{step:06}.png"));
            write_panel(&path, &[&panel.source, &panel.reference, &fake])?;
        }
    }
    metrics_out.flush().at(&metrics_path)?;
    let final_dir = checkpoint_dir(out, state.step);
    if last_saved != Some(state.step) {
        state.save(&final_dir)?;
    }
    let list: String = files_read.iter().map(|p| format!("{}\n", p.display())).collect();
    let list_path = out.join(FILES_READ_FILE);
    fs::write(&list_path, list).at(list_path)?;
    Ok(TrainOutcome {
        checkpoint: final_dir,
        steps_run: state.step - start,
        state,
    })
}
