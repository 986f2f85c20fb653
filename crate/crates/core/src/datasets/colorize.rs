//! Seeded color texturing of grayscale digits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];
/// Background luminance range; the foreground mirrors it around 0.5.
const BG_LUMA: (f32, f32) = (0.1, 0.35);
const NOISE_GRID: usize = 4;

pub fn luminance(rgb: [f32; 3]) -> f32 {
    rgb[0] * LUMA[0] + rgb[1] * LUMA[1] + rgb[2] * LUMA[2]
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Scale toward black or mix toward white until the luminance is `target`.
/// Both moves keep the hue.
fn with_luminance(c: [f32; 3], target: f32) -> [f32; 3] {
    let y = luminance(c);
    if target <= y {
        let k = target / y;
        c.map(|v| v * k)
    } else {
        let t = (target - y) / (1.0 - y);
        c.map(|v| v + t * (1.0 - v))
    }
}

/// Smooth value noise in `[0, 1]` on an `h × w` grid.
fn value_noise(h: usize, w: usize, rng: &mut impl Rng) -> Vec<f32> {
    let g = NOISE_GRID + 1;
    let knots: Vec<f32> = (0..g * g).map(|_| rng.gen()).collect();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let fy = r as f32 / (h.max(2) - 1) as f32 * NOISE_GRID as f32;
        let y0 = (fy.floor() as usize).min(NOISE_GRID - 1);
        let ty = fy - y0 as f32;
        for c in 0..w {
            let fx = c as f32 / (w.max(2) - 1) as f32 * NOISE_GRID as f32;
            let x0 = (fx.floor() as usize).min(NOISE_GRID - 1);
            let tx = fx - x0 as f32;
            let k = |y: usize, x: usize| knots[y * g + x];
            let top = k(y0, x0) * (1.0 - tx) + k(y0, x0 + 1) * tx;
            let bot = k(y0 + 1, x0) * (1.0 - tx) + k(y0 + 1, x0 + 1) * tx;
            out[r * w + c] = (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0);
        }
    }
    out
}

/// Paint a grayscale digit (`h × w`, values in `[0, 1]`) with a random
/// background and foreground hue, returning `[3, h, w]` in `[-1, 1]`.
///
/// The background luminance `L_b` follows low-frequency noise inside
/// `[0.1, 0.35]` and the foreground luminance is `1 − L_b`, so the output
/// luminance is `L_b + x (1 − 2 L_b)`, which crosses 0.5 exactly where the
/// input does.
pub fn colorize_texture(gray: &[f32], h: usize, w: usize, seed: u64) -> Result<Vec<f32>> {
    if gray.len() != h * w {
        return Err(Error::Shape(format!("{} pixels for a {h}×{w} image", gray.len())));
    }
    if let Some(bad) = gray.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gray pixel {bad}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_hue: f32 = rng.gen();
    let fg_hue = bg_hue + rng.gen_range(0.25..0.75);
    let bg_base = hsv_to_rgb(bg_hue, rng.gen_range(0.6..1.0), 1.0);
    let fg_base = hsv_to_rgb(fg_hue, rng.gen_range(0.6..1.0), 1.0);
    let noise = value_noise(h, w, &mut rng);
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    for (i, (&x, &n)) in gray.iter().zip(&noise).enumerate() {
        let x = x.clamp(0.0, 1.0);
        let lb = BG_LUMA.0 + (BG_LUMA.1 - BG_LUMA.0) * n;
        let bg = with_luminance(bg_base, lb);
        let fg = with_luminance(fg_base, 1.0 - lb);
        for ch in 0..3 {
            let v = x * fg[ch] + (1.0 - x) * bg[ch];
            out[ch * plane + i] = 2.0 * v.clamp(0.0, 1.0) - 1.0;
        }
    }
    Ok(out)
}

/// Replicate a grayscale image (`[0, 1]`) to three channels in `[-1, 1]`.
pub fn gray_to_rgb(gray: &[f32]) -> Vec<f32> {
    let mapped: Vec<f32> = gray.iter().map(|&v| 2.0 * v.clamp(0.0, 1.0) - 1.0).collect();
    mapped.repeat(3)
}

/// Binary mask of `[3, h, w]` values in `[-1, 1]` by luminance ≥ 0.5.
pub fn luminance_mask(rgb: &[f32]) -> Vec<bool> {
    let plane = rgb.len() / 3;
    (0..plane)
        .map(|i| {
            let px = [0, 1, 2].map(|c| (rgb[c * plane + i] + 1.0) / 2.0);
            luminance(px) >= 0.5
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth::{render_digit, SOURCE_SIZE};

    fn hue(rgb: [f32; 3]) -> f32 {
        let max = rgb.iter().cloned().fold(f32::MIN, f32::max);
        let min = rgb.iter().cloned().fold(f32::MAX, f32::min);
        let d = max - min;
        let h = if max == rgb[0] {
            ((rgb[1] - rgb[2]) / d).rem_euclid(6.0)
        } else if max == rgb[1] {
            (rgb[2] - rgb[0]) / d + 2.0
        } else {
            (rgb[0] - rgb[1]) / d + 4.0
        };
        h / 6.0
    }

    #[test]
    fn empty_digit_gives_constant_hue_background() {
        let n = 16;
        let out = colorize_texture(&vec![0.0; n * n], n, n, 3).unwrap();
        assert!(luminance_mask(&out).iter().all(|&m| !m));
        let px = |i: usize| [0, 1, 2].map(|c| (out[c * n * n + i] + 1.0) / 2.0);
        let h0 = hue(px(0));
        for i in 0..n * n {
            assert!((hue(px(i)) - h0).abs() < 1e-3);
        }
    }

    #[test]
    fn seeds_change_the_colors() {
        let n = 8;
        let g = vec![0.3; n * n];
        let a = colorize_texture(&g, n, n, 1).unwrap();
        let b = colorize_texture(&g, n, n, 2).unwrap();
        let mean = |v: &[f32], c: usize| v[c * n * n..(c + 1) * n * n].iter().sum::<f32>() / (n * n) as f32;
        let diff: f32 = (0..3).map(|c| (mean(&a, c) - mean(&b, c)).abs()).sum();
        assert!(diff > 1e-3);
        assert_eq!(a, colorize_texture(&g, n, n, 1).unwrap());
    }

    #[test]
    fn mask_is_preserved_over_many_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = SOURCE_SIZE;
        for i in 0..100u64 {
            let d = render_digit((i % 10) as u8, &mut rng);
            let out = colorize_texture(&d, s, s, i).unwrap();
            assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
            let want: Vec<bool> = d.iter().map(|&v| v >= 0.5).collect();
            assert_eq!(luminance_mask(&out), want);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(colorize_texture(&[f32::NAN], 1, 1, 0).is_err());
    }
}
