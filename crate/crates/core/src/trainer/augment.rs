use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{load_all, save_rgb, CrossBiasSampler, DatasetManifest, DatasetMeta, Record, Split};
use crate::error::{Error, IoContext, Result};

use super::TranslatorState;

/// Provenance of every augmented image, stored next to the manifest.
pub const AUGMENT_SOURCES_FILE: &str = "sources.tsv";
/// Translator and source dataset behind an augmented set.
pub const PROVENANCE_FILE: &str = "provenance.json";
const CHUNK: usize = 32;

/// Where one augmented image came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentSource {
    pub source: usize,
    pub texture_ref: usize,
    pub source_b: usize,
    pub texture_b: usize,
}

fn sources_tsv(sources: &[AugmentSource]) -> String {
    let mut s = String::from("index\tsource\ttexture_ref\tsource_b\ttexture_b\n");
    for (i, a) in sources.iter().enumerate() {
        s.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\n",
            a.source, a.texture_ref, a.source_b, a.texture_b
        ));
    }
    s
}

/// One translated image per record of `manifest`: content from the record,
/// texture from a uniformly drawn record with a different bias label. Each
/// output keeps its source's class label and takes the bias label of its
/// texture reference.
pub fn build_augmented_dataset(
    checkpoint: &Path,
    manifest: &DatasetManifest,
    out: &Path,
    seed: u64,
) -> Result<(DatasetManifest, Vec<AugmentSource>)> {
    let state = TranslatorState::load(checkpoint, None)?;
    let sampler = CrossBiasSampler::new(manifest)?;
    let [c, h, w] = manifest.meta.image_shape();
    let net = &state.config.net;
    if [c, h, w] != [net.channels, net.image_size, net.image_size] {
        return Err(Error::Dataset(format!(
            "manifest images {:?} do not match the translator",
            [c, h, w]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<usize> = (0..manifest.len())
        .map(|i| sampler.sample_reference(i, &mut rng))
        .collect();
    let data = load_all(manifest)?;
    let meta = DatasetMeta {
        name: format!("{}_augmented", manifest.meta.name),
        seed,
        ..manifest.meta.clone()
    };
    fs::create_dir_all(out).at(out)?;
    meta.write(out)?;
    let provenance = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "translator_config_hash": state.config.identity_hash()?,
        "translator_step": state.step,
        "source_dataset": manifest.root.display().to_string(),
        "source_digest": manifest.digest(),
        "seed": seed,
    });
    let prov_path = out.join(PROVENANCE_FILE);
    fs::write(&prov_path, serde_json::to_string_pretty(&provenance)? + "\n").at(prov_path)?;
    let mut records = Vec::with_capacity(manifest.len());
    let mut sources = Vec::with_capacity(manifest.len());
    let idx: Vec<usize> = (0..manifest.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let r: Vec<usize> = chunk.iter().map(|&i| refs[i]).collect();
        let fake = state.translate(
            &data.images.gather_outer(chunk),
            &data.images.gather_outer(&r),
            &chunk.iter().map(|&i| data.b[i]).collect::<Vec<_>>(),
            &r.iter().map(|&i| data.b[i]).collect::<Vec<_>>(),
        )?;
        for (k, (&i, &j)) in chunk.iter().zip(&r).enumerate() {
            let rel = format!("{}/{i:05}.png", Split::Train.as_str());
            save_rgb(&out.join(&rel), fake.slice_outer(k).data(), h, w)?;
            records.push(Record {
                path: rel,
                y: data.y[i],
                b: data.b[j],
            });
            sources.push(AugmentSource {
                source: i,
                texture_ref: j,
                source_b: data.b[i],
                texture_b: data.b[j],
            });
        }
    }
    let m = DatasetManifest {
        root: out.to_path_buf(),
        split: Split::Train,
        meta,
        records,
    };
    m.write()?;
    let path = out.join(Split::Train.as_str()).join(AUGMENT_SOURCES_FILE);
    fs::write(&path, sources_tsv(&sources)).at(path)?;
    Ok((m, sources))
}
