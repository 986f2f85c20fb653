//! Procedural grayscale digits, used as the local digit-image source.

use std::fs;
use std::path::Path;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IoContext, Result};

/// Side of rendered source digits, matching the classic handwritten-digit
/// format.
pub const SOURCE_SIZE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64) -> Stroke {
    let steps = 24;
    (0..=steps)
        .map(|i| {
            let a = (a0 + (a1 - a0) * i as f64 / steps as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke skeletons in the unit square, y pointing down.
fn skeleton(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 360.0)],
        1 => vec![vec![(0.34, 0.26), (0.52, 0.1), (0.52, 0.9)]],
        2 => {
            let mut s = arc(0.5, 0.32, 0.25, 0.22, 180.0, 390.0);
            s.extend([(0.24, 0.9), (0.8, 0.9)]);
            vec![s]
        }
        3 => vec![
            arc(0.48, 0.3, 0.25, 0.2, 200.0, 450.0),
            arc(0.48, 0.69, 0.28, 0.21, 270.0, 520.0),
        ],
        4 => vec![vec![(0.64, 0.9), (0.64, 0.1), (0.2, 0.64), (0.82, 0.64)]],
        5 => {
            let mut s = vec![(0.76, 0.1), (0.32, 0.1), (0.29, 0.46)];
            s.extend(arc(0.5, 0.66, 0.27, 0.24, 220.0, 500.0));
            vec![s]
        }
        6 => {
            let mut s = arc(0.62, 0.5, 0.3, 0.4, 270.0, 180.0);
            s.extend(arc(0.5, 0.68, 0.22, 0.21, 180.0, 540.0));
            vec![s]
        }
        7 => vec![vec![(0.22, 0.1), (0.8, 0.1), (0.42, 0.9)]],
        8 => vec![
            arc(0.5, 0.3, 0.21, 0.2, 0.0, 360.0),
            arc(0.5, 0.7, 0.25, 0.21, 0.0, 360.0),
        ],
        9 => vec![arc(0.5, 0.32, 0.22, 0.21, 0.0, 360.0), vec![(0.72, 0.32), (0.66, 0.9)]],
        _ => unreachable!("digit out of range"),
    }
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// One randomly deformed digit as `SOURCE_SIZE²` intensities in `[0, 1]`.
pub fn render_digit(digit: u8, rng: &mut impl Rng) -> Vec<f32> {
    assert!(digit < 10, "digit {digit} out of range");
    let angle: f64 = rng.gen_range(-0.2..0.2);
    let shear: f64 = rng.gen_range(-0.25..0.25);
    let sx: f64 = rng.gen_range(0.8..1.05);
    let sy: f64 = rng.gen_range(0.85..1.05);
    let tx: f64 = rng.gen_range(-0.06..0.06);
    let ty: f64 = rng.gen_range(-0.06..0.06);
    let radius: f64 = rng.gen_range(0.05..0.09);
    let (sin, cos) = angle.sin_cos();
    let strokes: Vec<Stroke> = skeleton(digit)
        .into_iter()
        .map(|s| {
            // one smooth wobble per stroke
            let (wx, wy): (f64, f64) = (rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03));
            s.into_iter()
                .map(|(x, y)| {
                    let (x, y) = (x - 0.5 + wx * y, y - 0.5 + wy * x);
                    let (x, y) = ((x + shear * y) * sx, y * sy);
                    (cos * x - sin * y + 0.5 + tx, sin * x + cos * y + 0.5 + ty)
                })
                .collect()
        })
        .collect();
    // the unit square maps to the central 20×20 box
    let box_px = 20.0;
    let offset = (SOURCE_SIZE as f64 - box_px) / 2.0;
    let mut out = vec![0.0f32; SOURCE_SIZE * SOURCE_SIZE];
    for (i, v) in out.iter_mut().enumerate() {
        let (r, c) = (i / SOURCE_SIZE, i % SOURCE_SIZE);
        let p = ((c as f64 + 0.5 - offset) / box_px, (r as f64 + 0.5 - offset) / box_px);
        let d = strokes
            .iter()
            .flat_map(|s| s.windows(2).map(move |w| seg_dist(p, w[0], w[1])))
            .fold(f64::INFINITY, f64::min);
        // about one pixel of anti-aliasing
        *v = ((radius - d) * box_px + 0.5).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Write `per_class` rendered digits of every class to
/// `<dir>/<digit>/<index>.png`.
pub fn write_digit_source(dir: &Path, per_class: usize, seed: u64) -> Result<()> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be ≥ 1".into()));
    }
    for digit in 0..10u8 {
        let class_dir = dir.join(digit.to_string());
        fs::create_dir_all(&class_dir).at(&class_dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(digit) << 56));
        for i in 0..per_class {
            let px = render_digit(digit, &mut rng);
            let bytes = px.iter().map(|&v| (v * 255.0).round() as u8).collect();
            let img = GrayImage::from_raw(SOURCE_SIZE as u32, SOURCE_SIZE as u32, bytes).expect("buffer matches size");
            let path = class_dir.join(format!("{i:05}.png"));
            img.save(&path).map_err(|source| Error::Image { path, source })?;
        }
    }
    Ok(())
}
