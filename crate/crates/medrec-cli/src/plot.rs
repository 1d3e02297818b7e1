//! Minimal PNG rendering for histograms and copy-probability heatmaps.
//! Deliberately thin: fixed layout, no text, deterministic pixels.

use std::path::Path;

use image::{Rgb, RgbImage};
use medrec_core::error::{Error, Result};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const BAR: Rgb<u8> = Rgb([70, 110, 180]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);

fn save(img: RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .map_err(|e| Error::validation(format!("cannot write plot {}: {e}", path.display())))
}

/// Render bin counts as a bar chart.
pub fn bar_chart(counts: &[usize], path: &Path) -> Result<()> {
    let (w, h, margin) = (640u32, 360u32, 20u32);
    let mut img = RgbImage::from_pixel(w, h, BG);
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = w - 2 * margin;
    let plot_h = h - 2 * margin;
    let bar_w = (plot_w as f64 / counts.len().max(1) as f64).floor().max(1.0) as u32;
    for (i, &count) in counts.iter().enumerate() {
        let bar_h = ((count as f64 / peak) * plot_h as f64).round() as u32;
        let x0 = margin + i as u32 * bar_w;
        for x in x0..(x0 + bar_w.saturating_sub(1)).min(w - margin) {
            for y in (h - margin - bar_h)..(h - margin) {
                img.put_pixel(x, y, BAR);
            }
        }
    }
    for x in margin..(w - margin) {
        img.put_pixel(x, h - margin, AXIS);
    }
    for y in margin..=(h - margin) {
        img.put_pixel(margin, y, AXIS);
    }
    save(img, path)
}

/// Render a row-major matrix of values in [0, 1] as a heatmap; brighter
/// cells carry more probability mass.
pub fn heatmap(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    let rows = matrix.len().max(1);
    let cols = matrix.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
    let cell = 24u32;
    let border = 2u32;
    let mut img = RgbImage::from_pixel(
        cols as u32 * cell + 2 * border,
        rows as u32 * cell + 2 * border,
        BG,
    );
    let peak = matrix
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    for (r, row) in matrix.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = (v / peak).clamp(0.0, 1.0);
            // White → deep blue ramp.
            let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
            let color = Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)]);
            for dx in 0..cell - 1 {
                for dy in 0..cell - 1 {
                    img.put_pixel(
                        border + c as u32 * cell + dx,
                        border + r as u32 * cell + dy,
                        color,
                    );
                }
            }
        }
    }
    save(img, path)
}
