use image::{Rgb, RgbImage};

use super::ExperimentReport;

const SLOT: u32 = 96;
const PLOT_H: u32 = 160;
const TOP: u32 = 28;
const BOTTOM: u32 = 28;
const LEFT: u32 = 16;
const SCALE: u32 = 2;

const PALETTE: [[u8; 3]; 6] = [
    [120, 120, 120],
    [46, 117, 182],
    [214, 96, 77],
    [90, 160, 90],
    [150, 110, 190],
    [230, 170, 50],
];

/// 3×5 bitmap glyph, one row per byte, most significant of three bits left.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        _ => [0; 5],
    }
}

fn fill(img: &mut RgbImage, x0: i64, y0: i64, w: i64, h: i64, color: [u8; 3]) {
    for y in y0.max(0)..(y0 + h).min(img.height() as i64) {
        for x in x0.max(0)..(x0 + w).min(img.width() as i64) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

fn text(img: &mut RgbImage, center_x: i64, y: i64, s: &str, color: [u8; 3]) {
    let advance = 4 * SCALE as i64;
    let mut x = center_x - advance * s.chars().count() as i64 / 2;
    for c in s.chars() {
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    let k = SCALE as i64;
                    fill(img, x + col * k, y + row as i64 * k, k, k, color);
                }
            }
        }
        x += advance;
    }
}

/// Bar chart of per-arm mean macro-F1 with ±std whiskers and per-seed dots,
/// on a fixed [0, 1] axis.
pub fn render_chart(report: &ExperimentReport) -> RgbImage {
    let n = report.arms.len().max(1) as u32;
    let (w, h) = (2 * LEFT + n * SLOT, TOP + PLOT_H + BOTTOM);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let base = (TOP + PLOT_H) as i64;
    let y_of = |v: f64| base - (v.clamp(0.0, 1.0) * PLOT_H as f64).round() as i64;
    for tick in 0..=4 {
        let y = y_of(tick as f64 / 4.0);
        fill(&mut img, LEFT as i64, y, (n * SLOT) as i64, 1, [225, 225, 225]);
    }
    for (i, arm) in report.arms.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x0 = (LEFT + i as u32 * SLOT) as i64;
        let center = x0 + SLOT as i64 / 2;
        let top = y_of(arm.mean);
        fill(&mut img, x0 + 16, top, SLOT as i64 - 32, base - top, color);
        let (lo, hi) = (y_of(arm.mean - arm.std), y_of(arm.mean + arm.std));
        fill(&mut img, center, hi, 1, lo - hi + 1, [0, 0, 0]);
        fill(&mut img, center - 6, hi, 13, 1, [0, 0, 0]);
        fill(&mut img, center - 6, lo, 13, 1, [0, 0, 0]);
        for s in &arm.seeds {
            fill(&mut img, center + 10, y_of(s.macro_f1) - 1, 3, 3, [0, 0, 0]);
        }
        text(
            &mut img,
            center,
            hi.min(top) - 14,
            &format!("{:.3}", arm.mean),
            [0, 0, 0],
        );
        let label: String = arm.name.chars().take((SLOT / (4 * SCALE)) as usize - 1).collect();
        text(&mut img, center, base + 8, &label, [0, 0, 0]);
    }
    fill(&mut img, LEFT as i64, base, (n * SLOT) as i64, 1, [0, 0, 0]);
    img
}
