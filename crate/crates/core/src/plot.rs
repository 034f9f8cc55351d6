//! Minimal PNG output: line charts and matrix heat maps.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Overlaid `(x, y)` series with a light frame; each series gets its own
/// color. Axes are scaled to the joint data range.
pub fn line_plot(path: &Path, series: &[(&[f64], &[f64])], width: u32, height: u32) -> Result<()> {
    let pts = series.iter().flat_map(|(x, y)| x.iter().zip(y.iter()));
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&x, &y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        return Err(Error::Statistics("nothing to plot".into()));
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    if ymax == ymin {
        ymax = ymin + 1.0;
    }
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 20i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let frame = Rgb([160, 160, 160]);
    let corners = [(margin, margin), (margin + w, margin), (margin + w, margin + h), (margin, margin + h)];
    for k in 0..4 {
        draw_line(&mut img, corners[k], corners[(k + 1) % 4], frame);
    }
    let to_px = |x: f64, y: f64| {
        (
            margin + ((x - xmin) / (xmax - xmin) * w as f64).round() as i64,
            margin + h - ((y - ymin) / (ymax - ymin) * h as f64).round() as i64,
        )
    };
    for (k, (xs, ys)) in series.iter().enumerate() {
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        let mut prev = None;
        for (&x, &y) in xs.iter().zip(ys.iter()) {
            if !(x.is_finite() && y.is_finite()) {
                prev = None;
                continue;
            }
            let p = to_px(x, y);
            if let Some(q) = prev {
                draw_line(&mut img, q, p, c);
            }
            prev = Some(p);
        }
    }
    save(&img, path)
}

/// Diverging blue-white-red map, symmetric about zero.
fn diverging(v: f64, vmax: f64) -> Rgb<u8> {
    let t = (v / vmax).clamp(-1.0, 1.0);
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t >= 0.0 {
        Rgb([255, lerp(255.0, 40.0, t), lerp(255.0, 40.0, t)])
    } else {
        Rgb([lerp(255.0, 40.0, -t), lerp(255.0, 40.0, -t), 255])
    }
}

/// Heat map of a row-major `rows x cols` matrix, `cell` pixels per entry.
pub fn heatmap(path: &Path, values: &[f64], rows: usize, cols: usize, cell: u32) -> Result<()> {
    if rows == 0 || cols == 0 || values.len() != rows * cols || cell == 0 {
        return Err(Error::Dimension(format!("heatmap of {} values as {rows} x {cols}", values.len())));
    }
    let vmax = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let img = RgbImage::from_fn(cols as u32 * cell, rows as u32 * cell, |x, y| {
        diverging(values[(y / cell) as usize * cols + (x / cell) as usize], vmax)
    });
    save(&img, path)
}
