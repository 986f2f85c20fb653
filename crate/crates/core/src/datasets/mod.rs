//! Texture-biased digit datasets with inverted test splits.
//!
//! A dataset directory holds `meta.json` and one folder per split, each with
//! numbered PNGs and a `manifest.tsv` of `path`, `y`, `b` rows. Paths are
//! relative to the dataset directory. Pixel values are mapped to `[-1, 1]`
//! on load.

mod colorize;
mod synth;

pub use colorize::{colorize_texture, gray_to_rgb, luminance, luminance_mask};
pub use synth::{render_digit, write_digit_source, SOURCE_SIZE};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

/// Side length of every image in the digit datasets.
pub const IMAGE_SIZE: usize = 32;
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?}"))),
        }
    }
}

/// The two built-in biased datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Two classes: five (textured on train) and six (gray on train).
    FiveSix,
    /// Ten classes: 0–4 gray and 5–9 textured on train.
    Digit,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::FiveSix => "five_six",
            DatasetKind::Digit => "digit",
        }
    }

    /// Source digit for each class label.
    pub fn class_digits(self) -> Vec<u8> {
        match self {
            DatasetKind::FiveSix => vec![5, 6],
            DatasetKind::Digit => (0..10).collect(),
        }
    }

    /// Domain names indexed by bias label.
    pub fn domain_names(self) -> Vec<String> {
        let names = match self {
            DatasetKind::FiveSix => ["textured", "gray"],
            DatasetKind::Digit => ["gray", "textured"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Bias label of class `y` on the training distribution.
    pub fn train_domain(self, y: usize) -> usize {
        match self {
            DatasetKind::FiveSix => y,
            DatasetKind::Digit => usize::from(y >= 5),
        }
    }

    /// Bias label of class `y` in `split`; the test split inverts training.
    pub fn domain(self, y: usize, split: Split) -> usize {
        let b = self.train_domain(y);
        match split {
            Split::Test => 1 - b,
            Split::Train | Split::Val => b,
        }
    }

    fn is_textured(self, b: usize) -> bool {
        self.domain_names()[b] == "textured"
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub path: String,
    pub y: usize,
    pub b: usize,
}

/// Dataset-wide header stored in `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    #[serde(default)]
    pub domain_names: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetMeta {
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(META_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).at(root)?;
        let path = root.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").at(path)
    }
}

/// One split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Dataset directory that record paths are relative to.
    pub root: PathBuf,
    pub split: Split,
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(self.split.as_str()).join(MANIFEST_FILE)
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.records[i].path)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("path\ty\tb\n");
        for r in &self.records {
            s.push_str(&format!("{}\t{}\t{}\n", r.path, r.y, r.b));
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Vec<Record>> {
        let mut lines = text.lines();
        if lines.next() != Some("path\ty\tb") {
            return Err(Error::Dataset("manifest header must be `path\\ty\\tb`".into()));
        }
        lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                let bad = || Error::Dataset(format!("manifest line {}: {l:?}", i + 2));
                let mut parts = l.split('\t');
                let path = parts.next().ok_or_else(bad)?.to_string();
                let y = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                let b = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Record { path, y, b })
            })
            .collect()
    }

    /// Check label ranges against the header.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.y >= self.meta.num_classes || r.b >= self.meta.num_domains {
                return Err(Error::Dataset(format!(
                    "{} record {i}: (y={}, b={}) outside K={}, M={}",
                    self.split, r.y, r.b, self.meta.num_classes, self.meta.num_domains
                )));
            }
        }
        Ok(())
    }

    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let meta = DatasetMeta::read(root)?;
        let path = root.join(split.as_str()).join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        let m = Self {
            root: root.to_path_buf(),
            split,
            meta,
            records: Self::parse_tsv(&text)?,
        };
        m.validate()?;
        Ok(m)
    }

    /// Write `manifest.tsv` for this split (the header is written separately).
    pub fn write(&self) -> Result<()> {
        let path = self.manifest_path();
        let dir = path.parent().unwrap();
        fs::create_dir_all(dir).at(dir)?;
        fs::write(&path, self.to_tsv()).at(path)
    }

    /// Distinct bias labels present, sorted.
    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.records.iter().map(|r| r.b).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Class labels of all records.
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// Hex SHA-256 of the manifest text, used as a dataset identifier.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// A decoded batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, C, H, W]` in `[-1, 1]`.
    pub images: Tensor<f32>,
    pub y: Vec<usize>,
    pub b: Vec<usize>,
}

fn decode_image(path: &Path, shape: [usize; 3]) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let [c, h, w] = shape;
    if img.width() as usize != w || img.height() as usize != h {
        return Err(Error::Dataset(format!(
            "{}: {}×{} image, expected {w}×{h}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    let plane = h * w;
    let mut out = vec![0.0; c * plane];
    match c {
        3 => {
            for (i, px) in img.to_rgb8().pixels().enumerate() {
                for ch in 0..3 {
                    out[ch * plane + i] = px.0[ch] as f32 / 127.5 - 1.0;
                }
            }
        }
        1 => {
            for (i, px) in img.to_luma8().pixels().enumerate() {
                out[i] = px.0[0] as f32 / 127.5 - 1.0;
            }
        }
        _ => return Err(Error::Dataset(format!("unsupported channel count {c}"))),
    }
    Ok(out)
}

/// Encode `[3, H, W]` values in `[-1, 1]` as an 8-bit RGB image.
pub fn to_rgb_image(chw: &[f32], h: usize, w: usize) -> RgbImage {
    let plane = h * w;
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for ch in 0..3 {
            let v = (chw[ch * plane + i].clamp(-1.0, 1.0) + 1.0) * 127.5;
            px.0[ch] = v.round() as u8;
        }
    }
    img
}

pub fn save_rgb(path: &Path, chw: &[f32], h: usize, w: usize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    to_rgb_image(chw, h, w).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Decode the images at `indices` into one batch.
pub fn load_batch(manifest: &DatasetManifest, indices: &[usize]) -> Result<Batch> {
    let shape = manifest.meta.image_shape();
    let mut data = Vec::with_capacity(indices.len() * shape.iter().product::<usize>());
    let (mut y, mut b) = (Vec::new(), Vec::new());
    for &i in indices {
        let r = manifest
            .records
            .get(i)
            .ok_or_else(|| Error::Dataset(format!("index {i} out of range for {} records", manifest.len())))?;
        data.extend(decode_image(&manifest.image_path(i), shape)?);
        y.push(r.y);
        b.push(r.b);
    }
    let [c, h, w] = shape;
    Ok(Batch {
        images: Tensor::new(&[indices.len(), c, h, w], data)?,
        y,
        b,
    })
}

/// Decode every record of a split.
pub fn load_all(manifest: &DatasetManifest) -> Result<Batch> {
    let idx: Vec<usize> = (0..manifest.len()).collect();
    load_batch(manifest, &idx)
}

/// Indices of a source image and a texture reference with a different bias
/// label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossBiasPair {
    pub source: usize,
    pub texture_ref: usize,
}

/// Uniform sampler of cross-bias pairs over one manifest.
#[derive(Debug, Clone)]
pub struct CrossBiasSampler {
    bias: Vec<usize>,
    /// Record indices sorted by bias label, with the start offset of each
    /// label's run.
    by_domain: Vec<usize>,
    starts: Vec<usize>,
}

impl CrossBiasSampler {
    pub fn new(manifest: &DatasetManifest) -> Result<Self> {
        Self::from_bias(manifest.records.iter().map(|r| r.b).collect())
    }

    pub fn from_bias(bias: Vec<usize>) -> Result<Self> {
        let m = bias.iter().copied().max().map_or(0, |v| v + 1);
        let mut by_domain: Vec<usize> = (0..bias.len()).collect();
        by_domain.sort_by_key(|&i| (bias[i], i));
        let mut starts = vec![0; m + 1];
        for &v in &bias {
            starts[v + 1] += 1;
        }
        for i in 0..m {
            starts[i + 1] += starts[i];
        }
        let distinct = (0..m).filter(|&d| starts[d + 1] > starts[d]).count();
        if distinct < 2 {
            return Err(Error::Dataset(
                "cross-bias sampling needs at least two distinct bias labels".into(),
            ));
        }
        Ok(Self {
            bias,
            by_domain,
            starts,
        })
    }

    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }

    /// A texture reference for `source`, uniform over records with a
    /// different bias label.
    pub fn sample_reference(&self, source: usize, rng: &mut impl Rng) -> usize {
        let b = self.bias[source];
        let (lo, hi) = (self.starts[b], self.starts[b + 1]);
        let others = self.bias.len() - (hi - lo);
        let mut k = rng.gen_range(0..others);
        if k >= lo {
            k += hi - lo;
        }
        self.by_domain[k]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> CrossBiasPair {
        let source = rng.gen_range(0..self.bias.len());
        CrossBiasPair {
            source,
            texture_ref: self.sample_reference(source, rng),
        }
    }
}

/// Draw one cross-bias pair from `manifest`.
pub fn sample_cross_bias_pair(manifest: &DatasetManifest, rng: &mut impl Rng) -> Result<CrossBiasPair> {
    Ok(CrossBiasSampler::new(manifest)?.sample(rng))
}

/// Per-split counts for a given per-class training count.
pub fn split_counts(per_class: usize) -> [(Split, usize); 3] {
    [
        (Split::Train, per_class),
        (Split::Val, (per_class / 10).max(1)),
        (Split::Test, per_class),
    ]
}

fn list_digit_images(source: &Path, digit: u8) -> Result<Vec<PathBuf>> {
    let dir = source.join(digit.to_string());
    if !dir.is_dir() {
        return Err(Error::Dataset(format!(
            "digit source {} lacks a directory for class {digit}",
            source.display()
        )));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .at(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn read_gray(path: &Path) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mut g: GrayImage = img.to_luma8();
    if g.width() as usize != IMAGE_SIZE || g.height() as usize != IMAGE_SIZE {
        g = image::imageops::resize(&g, IMAGE_SIZE as u32, IMAGE_SIZE as u32, FilterType::Triangle);
    }
    Ok(g.pixels().map(|p| p.0[0] as f32 / 255.0).collect())
}

fn record_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(split.as_str().as_bytes());
    h.update((index as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Build a biased dataset from `<source>/<digit>/*.png`.
///
/// Each class gets `per_class` train, `max(1, per_class / 10)` val and
/// `per_class` test images, drawn without overlap. Training and validation
/// follow the kind's bias mapping; the test split inverts it.
pub fn build_biased_dataset(
    kind: DatasetKind,
    source: &Path,
    out: &Path,
    per_class: usize,
    seed: u64,
) -> Result<Vec<DatasetManifest>> {
    if !source.is_dir() {
        return Err(Error::Dataset(format!(
            "digit source {} does not exist",
            source.display()
        )));
    }
    if per_class < 2 {
        return Err(Error::InvalidArgument("per_class_count must be ≥ 2".into()));
    }
    let counts = split_counts(per_class);
    let needed: usize = counts.iter().map(|(_, n)| n).sum();
    let digits = kind.class_digits();
    let mut pools = Vec::new();
    for (y, &digit) in digits.iter().enumerate() {
        let mut files = list_digit_images(source, digit)?;
        if files.len() < needed {
            return Err(Error::Dataset(format!(
                "class {digit} has {} images, {needed} needed for per_class_count {per_class}",
                files.len()
            )));
        }
        files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(y as u64)));
        pools.push(files);
    }
    let meta = DatasetMeta {
        name: kind.name().to_string(),
        channels: 3,
        height: IMAGE_SIZE,
        width: IMAGE_SIZE,
        num_classes: digits.len(),
        num_domains: 2,
        domain_names: kind.domain_names(),
        seed,
    };
    fs::create_dir_all(out).at(out)?;
    meta.write(out)?;
    let mut manifests = Vec::new();
    let mut offset = 0;
    for (split, n) in counts {
        let mut records = Vec::new();
        for (y, pool) in pools.iter().enumerate() {
            for file in &pool[offset..offset + n] {
                let index = records.len();
                let b = kind.domain(y, split);
                let gray = read_gray(file)?;
                let rgb = if kind.is_textured(b) {
                    colorize_texture(&gray, IMAGE_SIZE, IMAGE_SIZE, record_seed(seed, split, index))?
                } else {
                    gray_to_rgb(&gray)
                };
                let rel = format!("{}/{index:05}.png", split.as_str());
                save_rgb(&out.join(&rel), &rgb, IMAGE_SIZE, IMAGE_SIZE)?;
                records.push(Record { path: rel, y, b });
            }
        }
        offset += n;
        let m = DatasetManifest {
            root: out.to_path_buf(),
            split,
            meta: meta.clone(),
            records,
        };
        m.write()?;
        manifests.push(m);
    }
    Ok(manifests)
}

/// Five vs. six: class 0 (five) textured and class 1 (six) gray on
/// train/val, swapped on test.
pub fn build_five_vs_six(source: &Path, out: &Path, per_class: usize, seed: u64) -> Result<Vec<DatasetManifest>> {
    build_biased_dataset(DatasetKind::FiveSix, source, out, per_class, seed)
}

/// All ten digits: 0–4 gray and 5–9 textured on train/val, swapped on test.
pub fn build_digit_multidomain(source: &Path, out: &Path, per_class: usize, seed: u64) -> Result<Vec<DatasetManifest>> {
    build_biased_dataset(DatasetKind::Digit, source, out, per_class, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(bias: &[usize]) -> DatasetManifest {
        DatasetManifest {
            root: PathBuf::from("."),
            split: Split::Train,
            meta: DatasetMeta {
                name: "toy".into(),
                channels: 3,
                height: 4,
                width: 4,
                num_classes: 2,
                num_domains: 4,
                domain_names: vec![],
                seed: 0,
            },
            records: bias
                .iter()
                .enumerate()
                .map(|(i, &b)| Record {
                    path: format!("train/{i}.png"),
                    y: i % 2,
                    b,
                })
                .collect(),
        }
    }

    #[test]
    fn tsv_round_trip() {
        let m = manifest(&[0, 1, 1, 0, 3]);
        assert_eq!(DatasetManifest::parse_tsv(&m.to_tsv()).unwrap(), m.records);
        assert!(DatasetManifest::parse_tsv("bad\n").is_err());
        assert!(DatasetManifest::parse_tsv("path\ty\tb\nx\t1\n").is_err());
    }

    #[test]
    fn sampler_never_pairs_equal_bias() {
        let m = manifest(&[0, 0, 1, 2, 2, 2, 3]);
        let s = CrossBiasSampler::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let p = s.sample(&mut rng);
            assert_ne!(m.records[p.source].b, m.records[p.texture_ref].b);
        }
        assert!(CrossBiasSampler::new(&manifest(&[1, 1, 1])).is_err());
    }

    #[test]
    fn domain_mapping_inverts_on_test() {
        for kind in [DatasetKind::FiveSix, DatasetKind::Digit] {
            for y in 0..kind.class_digits().len() {
                assert_eq!(kind.domain(y, Split::Test), 1 - kind.domain(y, Split::Train));
                assert_eq!(kind.domain(y, Split::Val), kind.domain(y, Split::Train));
            }
        }
        assert_eq!(DatasetKind::FiveSix.domain(0, Split::Train), 0);
        assert!(DatasetKind::FiveSix.is_textured(0));
        assert!(DatasetKind::Digit.is_textured(1));
    }

    #[test]
    fn rgb_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![0.3f32; 3 * 16];
        save_rgb(&dir.path().join("x.png"), &v, 4, 4).unwrap();
        let back = decode_image(&dir.path().join("x.png"), [3, 4, 4]).unwrap();
        assert!(back.iter().all(|&x| (x - 0.3).abs() <= 1.0 / 255.0));
    }
}
