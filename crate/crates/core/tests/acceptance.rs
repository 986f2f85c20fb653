//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use texswap::autograd::Tape;
use texswap::datasets::{build_five_vs_six, write_digit_source, DatasetManifest, Split};
use texswap::downstream::{macro_f1, run_debias_experiment, ArmSpec, ClassifierConfig, ExperimentReport};
use texswap::gradcheck::{check_gradients, GradCheck};
use texswap::losses::{
    gan_loss_discriminator, gan_loss_generator, gram_matrix, gram_style_loss, perceptual_loss,
    self_similarity_distance, self_similarity_map, spatial_loss_from_features, spatial_self_similarity_loss,
    texture_cooccurrence_loss_with, total_generator_loss, FeatureExtractor, GeneratorTerms, LossWeights,
};
use texswap::networks::{crop_random_patches, ContentEncoder, Discriminator, NetConfig, PatchDiscriminator, PatchSet};
use texswap::tensor::Tensor;
use texswap::trainer::{build_augmented_dataset, train_translator, AblationMode, TrainerConfig, AUGMENT_SOURCES_FILE};

type Check = Result<String, String>;

const TOYS: usize = 100;
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const PER_CLASS: usize = 500;
const TRANSLATOR_STEPS: u64 = 3000;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Direct oracle `S[i][j] = Σ_c f[c][i] f[c][j]`.
fn ssm_oracle(f: &[f64], c: usize, p: usize) -> Vec<f64> {
    let mut s = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            s[i * p + j] = (0..c).map(|k| f[k * p + i] * f[k * p + j]).sum();
        }
    }
    s
}

fn eval(
    f: impl for<'t> FnOnce(&'t Tape<f64>) -> texswap::Result<texswap::autograd::Var<'t, f64>>,
) -> Result<Tensor<f64>, String> {
    let tape = Tape::new();
    let v = ok(f(&tape))?;
    let out = (*v.value()).clone();
    Ok(out)
}

fn toy_extractor(rng: &mut ChaCha8Rng, in_ch: usize) -> FeatureExtractor<f64> {
    FeatureExtractor::from_weights(
        vec![
            (randn(&[4, in_ch, 3, 3], rng).map(|v| v * 0.4), 1),
            (randn(&[5, 4, 3, 3], rng).map(|v| v * 0.3), 2),
        ],
        2,
    )
    .unwrap()
}

fn toy_patch_config() -> NetConfig {
    NetConfig {
        image_size: 16,
        base_width: 4,
        max_width: 8,
        texture_dim: 8,
        patch_count: 2,
        ..NetConfig::digit()
    }
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // self-similarity map on small integer-valued toys: exact
    for _ in 0..TOYS {
        let (c, p) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let data: Vec<f64> = (0..c * p).map(|_| rng.gen_range(-4..=4) as f64).collect();
        let f = Tensor::new(&[c, p], data.clone()).unwrap();
        let s = eval(|t| Ok(self_similarity_map(t.constant(f.clone()))))?;
        ensure!(
            s.data() == ssm_oracle(&data, c, p).as_slice(),
            "S mismatch for {c}x{p} toy"
        );
    }
    // distance on hand-built maps against a scalar oracle
    let mut worst: f64 = 0.0;
    for _ in 0..TOYS {
        let (r, p) = (rng.gen_range(1..=4), rng.gen_range(2..=5));
        let a = uniform(&[r, p], -2.0, 2.0, &mut rng);
        let b = uniform(&[r, p], -2.0, 2.0, &mut rng);
        let got = eval(|t| self_similarity_distance(t.constant(a.clone()), t.constant(b.clone())))?.item();
        let want = (0..r)
            .map(|i| 1.0 - cosine(&a.data()[i * p..(i + 1) * p], &b.data()[i * p..(i + 1) * p]))
            .sum::<f64>()
            / r as f64;
        worst = worst.max((got - want).abs());
    }
    ensure!(worst < 1e-6, "spatial distance off by {worst:e}");
    // Gram and perceptual toys
    let mut worst_gram: f64 = 0.0;
    for _ in 0..TOYS {
        let (c, p) = (rng.gen_range(1..=4), rng.gen_range(1..=6));
        let f = randn(&[1, c, p], &mut rng);
        let g = eval(|t| Ok(gram_matrix(t.constant(f.clone()))))?;
        for i in 0..c {
            for j in 0..c {
                let want: f64 = (0..p).map(|k| f.data()[i * p + k] * f.data()[j * p + k]).sum::<f64>() / (c * p) as f64;
                worst_gram = worst_gram.max((g.data()[i * c + j] - want).abs());
            }
        }
    }
    ensure!(worst_gram < 1e-6, "gram off by {worst_gram:e}");
    let mut worst_perc: f64 = 0.0;
    for _ in 0..TOYS {
        // 1×1 conv extractor: features are leaky_relu(W x) per pixel
        let (cin, cout, hw) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=3));
        let w = randn(&[cout, cin, 1, 1], &mut rng);
        let ext = FeatureExtractor::from_weights(vec![(w.clone(), 1)], 1).unwrap();
        let x = randn(&[1, cin, hw, hw], &mut rng);
        let y = randn(&[1, cin, hw, hw], &mut rng);
        let got = eval(|t| perceptual_loss(&ext, t.constant(x.clone()), t.constant(y.clone())))?.item();
        let feat = |img: &Tensor<f64>, o: usize, px: usize| {
            let z: f64 = (0..cin)
                .map(|i| w.data()[o * cin + i] * img.data()[i * hw * hw + px])
                .sum();
            if z >= 0.0 {
                z
            } else {
                0.2 * z
            }
        };
        let mut want = 0.0;
        for o in 0..cout {
            for px in 0..hw * hw {
                want += (feat(&x, o, px) - feat(&y, o, px)).powi(2);
            }
        }
        want /= (cout * hw * hw) as f64;
        worst_perc = worst_perc.max((got - want).abs());
    }
    ensure!(worst_perc < 1e-6, "perceptual off by {worst_perc:e}");
    Ok(format!(
        "S exact on {TOYS} toys; max errors: spatial {worst:.1e}, gram {worst_gram:.1e}, perceptual {worst_perc:.1e}"
    ))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = BTreeMap::<&str, f64>::new();
    let (mut coords, mut refined) = (0, 0);
    let mut record = |name: &'static str, r: GradCheck| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(r.max_rel_error);
        coords += r.coordinates;
        refined += r.refined;
    };
    let patch_cfg = toy_patch_config();
    for toy in 0..TOYS {
        // spatial loss on raw features, both arguments
        let (c, p) = (rng.gen_range(2..=6), rng.gen_range(3..=9));
        let rows: Vec<usize> = (0..p).filter(|_| rng.gen_bool(0.7)).collect();
        let rows = if rows.is_empty() { vec![0] } else { rows };
        let f = randn(&[1, c, p], &mut rng);
        let g = randn(&[1, c, p], &mut rng);
        let r = ok(check_gradients(&[f, g], FD_STEP, None, &mut rng, |_, v| {
            spatial_loss_from_features(v[0], v[1], &rows)
        }))?;
        record("spatial", r);

        // spatial loss through an extractor, with respect to the translation
        let ext = toy_extractor(&mut rng, 3);
        let x = uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng);
        let xp = uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng);
        let seed = rng.gen();
        let r = ok(check_gradients(&[xp], FD_STEP, Some(24), &mut rng, |t, v| {
            let mut rows_rng = ChaCha8Rng::seed_from_u64(seed);
            spatial_self_similarity_loss(&ext, t.constant(x.clone()), v[0], &mut rows_rng)
        }))?;
        record("spatial (extractor)", r);

        // texture path through a toy patch discriminator
        let dp = ok(PatchDiscriminator::<f64>::new(&patch_cfg, 100 + toy as u64))?;
        let fake = uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
        let reference = uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
        let fp = PatchSet::concat((0..2).map(|i| crop_random_patches(16, 16, i, 2, &mut rng).unwrap()));
        let rp = PatchSet::concat((0..2).map(|i| crop_random_patches(16, 16, i, 2, &mut rng).unwrap()));
        let r = ok(check_gradients(
            &[fake, reference],
            FD_STEP,
            Some(24),
            &mut rng,
            |t, v| {
                let p = dp.params.bind(t, false);
                texture_cooccurrence_loss_with(&dp, &p, v[0], &fp, v[1], &rp)
            },
        ))?;
        record("texture", r);

        // adversarial losses on logits and through a discriminator
        let n = rng.gen_range(1..=5);
        let real = randn(&[n], &mut rng).map(|v| 3.0 * v);
        let fake_logits = randn(&[n], &mut rng).map(|v| 3.0 * v);
        let r = ok(check_gradients(
            std::slice::from_ref(&fake_logits),
            FD_STEP,
            None,
            &mut rng,
            |_, v| gan_loss_generator(v[0]),
        ))?;
        record("gan (generator)", r);
        let r = ok(check_gradients(
            &[real, fake_logits],
            FD_STEP,
            None,
            &mut rng,
            |_, v| gan_loss_discriminator(v[0], v[1]),
        ))?;
        record("gan (discriminator)", r);
        let d = ok(Discriminator::<f64>::new(&patch_cfg, 200 + toy as u64))?;
        let img = uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
        let r = ok(check_gradients(&[img], FD_STEP, Some(24), &mut rng, |t, v| {
            let p = d.params.bind(t, false);
            gan_loss_generator(d.forward(&p, v[0], None)?)
        }))?;
        record("gan (through D)", r);

        // Gram and perceptual replacements
        let ext = toy_extractor(&mut rng, 3);
        let a = uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng);
        let b = uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng);
        let r = ok(check_gradients(
            &[a.clone(), b.clone()],
            FD_STEP,
            Some(24),
            &mut rng,
            |_, v| gram_style_loss(&ext, v[0], v[1]),
        ))?;
        record("gram", r);
        let r = ok(check_gradients(&[a, b], FD_STEP, Some(24), &mut rng, |_, v| {
            perceptual_loss(&ext, v[0], v[1])
        }))?;
        record("perceptual", r);
    }
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, &e)| !(e < GRAD_TOL))
        .map(|(k, e)| format!("{k} {e:.1e}"))
        .collect();
    let summary: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    ensure!(
        failing.is_empty(),
        "relative error ≥ {GRAD_TOL:e}: {}",
        failing.join(", ")
    );
    Ok(format!(
        "{TOYS} toys each; max relative error: {}; {refined}/{coords} coordinates re-measured at a finer step",
        summary.join(", ")
    ))
}

/// Orthonormal columns by Gram-Schmidt of a random square matrix.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q.concat()
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // S(Qf) = S(f) for orthogonal Q acting on channels
    let mut rot_err: f64 = 0.0;
    for _ in 0..TOYS {
        let (c, p) = (rng.gen_range(2..=8), rng.gen_range(2..=16));
        let f = randn(&[c, p], &mut rng);
        let q = random_orthogonal(c, &mut rng);
        let mut qf = vec![0.0; c * p];
        for i in 0..c {
            for j in 0..p {
                qf[i * p + j] = (0..c).map(|k| q[i * c + k] * f.data()[k * p + j]).sum();
            }
        }
        let qf = Tensor::new(&[c, p], qf).unwrap();
        let s = eval(|t| Ok(self_similarity_map(t.constant(f.clone()))))?;
        let s_rot = eval(|t| Ok(self_similarity_map(t.constant(qf.clone()))))?;
        rot_err = rot_err.max(s.zip_map(&s_rot, |a, b| a - b).max_abs());
    }
    ensure!(rot_err <= 1e-5, "rotation changed S by {rot_err:e}");

    // spatial loss range and zero on identical inputs
    let ext = FeatureExtractor::<f64>::new(3, 7);
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut self_max: f64 = 0.0;
    for _ in 0..TOYS {
        let x = uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
        let y = uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
        let seed = rng.gen();
        let l = eval(|t| {
            spatial_self_similarity_loss(
                &ext,
                t.constant(x.clone()),
                t.constant(y.clone()),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
        })?
        .item();
        range = (range.0.min(l), range.1.max(l));
        let f = randn(&[1, 4, 9], &mut rng);
        let anti = f.map(|v| -v);
        let rows: Vec<usize> = (0..9).collect();
        let opposite =
            eval(|t| spatial_loss_from_features(t.constant(f.clone()), t.constant(anti.clone()), &rows))?.item();
        range = (range.0.min(opposite), range.1.max(opposite));
        let same = eval(|t| {
            spatial_self_similarity_loss(
                &ext,
                t.constant(x.clone()),
                t.constant(x.clone()),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
        })?
        .item();
        self_max = self_max.max(same.abs());
    }
    ensure!(range.0 >= 0.0 && range.1 <= 2.0, "spatial loss left [0, 2]: {range:?}");
    ensure!(self_max == 0.0, "spatial loss on identical inputs reached {self_max:e}");

    // patch side bounds
    let mut sides = (usize::MAX, 0);
    for _ in 0..10_000 {
        let set = ok(crop_random_patches(32, 32, 0, 1, &mut rng))?;
        let b = &set.boxes[0];
        ensure!(
            b.top + b.size <= 32 && b.left + b.size <= 32,
            "crop {b:?} leaves the image"
        );
        sides = (sides.0.min(b.size), sides.1.max(b.size));
    }
    ensure!(sides.0 >= 4 && sides.1 <= 8, "patch sides {sides:?} outside [4, 8]");

    // co-occurrence logit ignores patch order, exactly
    let dp = ok(PatchDiscriminator::<f32>::new(&NetConfig::digit_small(), 11))?;
    let img = |seed: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            &[1, 3, 32, 32],
            (0..3 * 32 * 32).map(|_| r.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap()
    };
    let (fake, real) = (img(1), img(2));
    for _ in 0..20 {
        let fp = ok(crop_random_patches(32, 32, 0, 8, &mut rng))?;
        let rp = ok(crop_random_patches(32, 32, 0, 8, &mut rng))?;
        let base = ok(dp.discriminate_patches(&fake, &fp, &real, &rp))?;
        let (mut fp2, mut rp2) = (fp.clone(), rp.clone());
        rand::seq::SliceRandom::shuffle(fp2.boxes.as_mut_slice(), &mut rng);
        rand::seq::SliceRandom::shuffle(rp2.boxes.as_mut_slice(), &mut rng);
        let permuted = ok(dp.discriminate_patches(&fake, &fp2, &real, &rp2))?;
        ensure!(
            base.to_bits() == permuted.to_bits(),
            "logit {base} became {permuted} after permuting patches"
        );
    }

    // conditional networks with fresh tables equal their unconditional twins
    let plain = NetConfig::digit_small();
    let cond = NetConfig {
        conditional: true,
        ..plain.clone()
    };
    let x2 = Tensor::stack_outer(&[img(3), img(4)]).unwrap();
    let domains = [0, 1];
    let e0 = ok(ContentEncoder::<f32>::new(&plain, 5))?;
    let e1 = ok(ContentEncoder::<f32>::new(&cond, 5))?;
    let a = ok(e0.encode(&x2, None))?;
    let b = ok(e1.encode(&x2, Some(&domains)))?;
    ensure!(a.data() == b.data(), "conditional content encoder differs at init");
    let d0 = ok(Discriminator::<f32>::new(&plain, 6))?;
    let d1 = ok(Discriminator::<f32>::new(&cond, 6))?;
    ensure!(
        ok(d0.discriminate(&x2, None))?.data() == ok(d1.discriminate(&x2, Some(&domains)))?.data(),
        "conditional discriminator differs at init"
    );

    // total loss is linear in each weight
    let mut lin_err: f64 = 0.0;
    for _ in 0..TOYS {
        let vals: [f64; 3] = [
            rng.gen_range(0.0..3.0),
            rng.gen_range(0.0..3.0),
            rng.gen_range(0.0..2.0),
        ];
        let base = LossWeights {
            gan: rng.gen_range(0.01..1.0),
            texture: rng.gen_range(0.01..2.0),
            spatial: rng.gen_range(0.01..200.0),
        };
        let total = |w: &LossWeights| -> Result<f64, String> {
            let tape = Tape::new();
            let terms = GeneratorTerms {
                gan: Some(tape.scalar(vals[0])),
                texture: Some(tape.scalar(vals[1])),
                spatial: Some(tape.scalar(vals[2])),
            };
            Ok(ok(total_generator_loss(terms, w))?.0.value().item())
        };
        let l0 = total(&base)?;
        for (slot, val) in vals.iter().enumerate() {
            let delta = rng.gen_range(0.1..5.0);
            let mut w = base;
            match slot {
                0 => w.gan += delta,
                1 => w.texture += delta,
                _ => w.spatial += delta,
            }
            lin_err = lin_err.max((total(&w)? - l0 - delta * val).abs());
        }
    }
    ensure!(lin_err < 1e-9, "total loss not linear in λ: {lin_err:e}");
    Ok(format!(
        "rotation {rot_err:.1e}; spatial range [{:.3}, {:.3}], identical 0; sides [{}, {}] over 10^4 crops; \
         order-invariant logits; identity-initialised conditioning exact; λ-linearity {lin_err:.1e}",
        range.0, range.1, sides.0, sides.1
    ))
}

fn dirs_identical(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = ok(fs::read_dir(a))?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = ok(fs::read_dir(b))?.map(|e| e.unwrap().file_name()).collect();
    other.sort();
    ensure!(names == other, "checkpoint file lists differ");
    let mut count = 0;
    for name in names {
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_dir() {
            count += dirs_identical(&pa, &pb)?;
        } else {
            ensure!(
                ok(fs::read(&pa))? == ok(fs::read(&pb))?,
                "{} differs",
                name.to_string_lossy()
            );
            count += 1;
        }
    }
    Ok(count)
}

fn criterion_4(data: &Path, work: &Path) -> Check {
    let config = TrainerConfig {
        net: NetConfig::digit(),
        steps: 200,
        checkpoint_every: 0,
        panel_every: 0,
        seed: 4,
        ..TrainerConfig::default()
    };
    let train = ok(DatasetManifest::load(data, Split::Train))?;
    let val = ok(DatasetManifest::load(data, Split::Val))?;
    let started = Instant::now();
    let a = ok(train_translator(&config, &train, &val, &work.join("det_a"), None))?;
    let b = ok(train_translator(&config, &train, &val, &work.join("det_b"), None))?;
    let secs = started.elapsed().as_secs_f64();
    let files = dirs_identical(&a.checkpoint, &b.checkpoint)?;
    ensure!(a.state.same_as(&b.state), "in-memory states differ");
    Ok(format!(
        "two 200-step digit-config runs, {files} checkpoint files byte-identical ({secs:.0}s)"
    ))
}

struct Debias {
    report: ExperimentReport,
    train: DatasetManifest,
    augmented: PathBuf,
    translator_secs: f64,
}

fn debias_pipeline(data: &Path, work: &Path) -> Result<Debias, String> {
    let train = ok(DatasetManifest::load(data, Split::Train))?;
    let val = ok(DatasetManifest::load(data, Split::Val))?;
    let started = Instant::now();
    let mut arms = vec![ArmSpec::baseline("baseline")];
    let mut proposed = PathBuf::new();
    for (name, ablation) in [
        ("proposed", AblationMode::Full),
        ("no_texture", AblationMode::NoTexture),
    ] {
        let config = TrainerConfig {
            net: NetConfig::digit_small(),
            steps: TRANSLATOR_STEPS,
            checkpoint_every: 0,
            panel_every: TRANSLATOR_STEPS / 4,
            ablation,
            ..TrainerConfig::default()
        };
        let run = ok(train_translator(
            &config,
            &train,
            &val,
            &work.join(format!("translator_{name}")),
            None,
        ))?;
        let out = work.join(format!("augmented_{name}"));
        ok(build_augmented_dataset(&run.checkpoint, &train, &out, 0))?;
        if name == "proposed" {
            proposed = out.clone();
        }
        arms.push(ArmSpec::augmented(name, out));
    }
    let translator_secs = started.elapsed().as_secs_f64();
    let report = ok(run_debias_experiment(data, &arms, &ClassifierConfig::default(), 1))?;
    ok(report.save(&work.join("experiment")))?;
    Ok(Debias {
        report,
        train,
        augmented: proposed,
        translator_secs,
    })
}

fn criterion_5(d: &Debias) -> Check {
    let base = d.report.arm("baseline").unwrap();
    let gain = d.report.gain("proposed", "baseline").unwrap();
    let detail = format!(
        "{PER_CLASS}/class, baseline {:.3} ± {:.3}, D ∪ D′ {:.3} ± {:.3}, gain {gain:.3} over {} seeds",
        base.mean,
        base.std,
        d.report.arm("proposed").unwrap().mean,
        d.report.arm("proposed").unwrap().std,
        base.seeds.len()
    );
    ensure!(base.seeds.len() == 3, "expected 3 seeds: {detail}");
    ensure!(base.mean < 0.25, "baseline too high: {detail}");
    ensure!(gain >= 0.30, "gain below 0.30: {detail}");
    Ok(detail)
}

fn criterion_6(d: &Debias) -> Check {
    let full = d.report.gain("proposed", "baseline").unwrap();
    let ablated = d.report.gain("no_texture", "baseline").unwrap();
    let detail = format!("no_texture gain {ablated:.3}, full gain {full:.3}");
    ensure!(ablated < 0.10, "ablation gained too much: {detail}");
    ensure!(full >= 0.30, "full arm gained too little: {detail}");
    Ok(detail)
}

fn criterion_7(d: &Debias) -> Check {
    let aug = ok(DatasetManifest::load(&d.augmented, Split::Train))?;
    ensure!(
        aug.len() == d.train.len(),
        "|D′| = {} but |D| = {}",
        aug.len(),
        d.train.len()
    );
    let text = ok(fs::read_to_string(d.augmented.join("train").join(AUGMENT_SOURCES_FILE)))?;
    let mut rows = 0;
    for (i, line) in text.lines().skip(1).enumerate() {
        let f: Vec<usize> = line.split('\t').map(|v| v.parse().unwrap()).collect();
        let (idx, source, texture) = (f[0], f[1], f[2]);
        ensure!(idx == i, "provenance row {i} out of order");
        let out = &aug.records[i];
        let (src, tex) = (&d.train.records[source], &d.train.records[texture]);
        ensure!(out.y == src.y, "image {i}: label {} but source label {}", out.y, src.y);
        ensure!(tex.b != src.b, "image {i}: texture source shares bias label {}", src.b);
        ensure!(
            out.b == tex.b,
            "image {i}: bias label not taken from its texture source"
        );
        ensure!(d.augmented.join(&out.path).is_file(), "image {i} missing on disk");
        rows += 1;
    }
    ensure!(rows == aug.len(), "{rows} provenance rows for {} images", aug.len());
    Ok(format!(
        "{rows} images: labels kept, every texture source from the other bias group"
    ))
}

fn criterion_8() -> Check {
    let truth: Vec<usize> = (0..100).map(|i| i % 2).collect();
    let perfect = ok(macro_f1(&truth, &truth, 2))?.macro_f1;
    ensure!(perfect == 1.0, "perfect predictions gave {perfect}");
    for class in 0..2 {
        let constant = ok(macro_f1(&truth, &vec![class; 100], 2))?.macro_f1;
        ensure!(constant == 1.0 / 3.0, "constant predictor gave {constant}");
    }
    ensure!(macro_f1(&[], &[], 2).is_err(), "empty set accepted");
    Ok("perfect = 1.0, constant predictor = 1/3 exactly".into())
}

struct Outcome {
    id: usize,
    name: &'static str,
    result: Check,
    secs: f64,
}

fn run(id: usize, name: &'static str, f: impl FnOnce() -> Check) -> Outcome {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let o = Outcome {
        id,
        name,
        result,
        secs: started.elapsed().as_secs_f64(),
    };
    let (tag, msg) = match &o.result {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("criterion {} [{tag}] {} ({:.1}s): {msg}", o.id, o.name, o.secs);
    o
}

fn skipped(id: usize, name: &'static str) -> Outcome {
    println!("criterion {id} [SKIP] {name}: not selected by ACCEPTANCE_ONLY");
    Outcome {
        id,
        name,
        result: Ok("skipped".into()),
        secs: 0.0,
    }
}

/// Criteria to run: all of them unless `ACCEPTANCE_ONLY` lists a subset,
/// e.g. `ACCEPTANCE_ONLY=1,2,3`.
fn selection() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) if !list.trim().is_empty() => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        _ => (1..=8).collect(),
    }
}

/// Criterion number, name and check.
type Criterion = (usize, &'static str, fn() -> Check);

fn main() {
    let selected = selection();
    let want = |id: usize| selected.contains(&id);
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).unwrap();
    println!("acceptance artifacts: {}", work.display());

    let mut outcomes = Vec::new();
    let quick: [Criterion; 4] = [
        (1, "loss-math oracles", criterion_1),
        (2, "gradient checks", criterion_2),
        (3, "invariants", criterion_3),
        (8, "macro-F1 closed forms", criterion_8),
    ];
    for (id, name, f) in quick {
        outcomes.push(if want(id) { run(id, name, f) } else { skipped(id, name) });
    }

    let data = work.join("five_six");
    let pipeline = [
        (5, "directional debiasing"),
        (6, "ablation direction"),
        (7, "augmented-set contract"),
    ];
    let needs_data = [4, 5, 6, 7].iter().any(|&id| want(id));
    let prepared: Result<(), String> = if needs_data {
        let needed = 2 * PER_CLASS + PER_CLASS / 10;
        ok(write_digit_source(&work.join("source"), needed, 0))
            .and_then(|_| ok(build_five_vs_six(&work.join("source"), &data, PER_CLASS, 0)).map(|_| ()))
    } else {
        Ok(())
    };

    if !want(4) {
        outcomes.push(skipped(4, "determinism"));
    } else if let Err(e) = &prepared {
        outcomes.push(run(4, "determinism", || Err(format!("dataset build failed: {e}"))));
    } else {
        outcomes.push(run(4, "determinism", || criterion_4(&data, &work)));
    }

    if !pipeline.iter().any(|&(id, _)| want(id)) {
        outcomes.extend(pipeline.iter().map(|&(id, name)| skipped(id, name)));
    } else {
        let started = Instant::now();
        let debias = prepared.clone().and_then(|_| debias_pipeline(&data, &work));
        match &debias {
            Ok(d) => println!(
                "debias pipeline: {:.0}s total, {:.0}s translators and augmentation",
                started.elapsed().as_secs_f64(),
                d.translator_secs
            ),
            Err(e) => println!("debias pipeline failed: {e}"),
        }
        let checks: [fn(&Debias) -> Check; 3] = [criterion_5, criterion_6, criterion_7];
        for (&(id, name), check) in pipeline.iter().zip(checks) {
            outcomes.push(match &debias {
                Ok(d) => run(id, name, || check(d)),
                Err(e) => run(id, name, || Err(format!("pipeline failed: {e}"))),
            });
        }
    }

    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in &outcomes {
        let tag = match &o.result {
            Ok(m) if m == "skipped" => "SKIP",
            Ok(_) => "PASS",
            Err(_) => "FAIL",
        };
        println!("  criterion {}: {tag} ({}, {:.0}s)", o.id, o.name, o.secs);
    }
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("no criterion failed");
}
