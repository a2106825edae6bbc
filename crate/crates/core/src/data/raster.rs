//! Shape rasterization. Each shape is a membership test over coordinates
//! normalized to `[-1, 1]` across its box, sampled at pixel centers.

use std::f64::consts::PI;

pub const SHAPE_NAMES: [&str; 8] = [
    "circle", "square", "triangle", "cross", "ring", "diamond", "bar", "star",
];

pub const BAR: usize = 6;

/// Width over height of a shape's box.
pub fn aspect(shape: usize) -> f64 {
    if shape == BAR {
        2.0
    } else {
        1.0
    }
}

pub fn contains(shape: usize, u: f64, v: f64) -> bool {
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 1.0 && v.abs() <= 1.0,
        // Slightly blunt apex so the top row is never empty.
        2 => u.abs() <= (v + 1.0) / 2.0 + 0.05,
        3 => u.abs() <= 0.3 || v.abs() <= 0.3,
        4 => {
            let r2 = u * u + v * v;
            (0.3025..=1.0).contains(&r2)
        }
        5 => u.abs() + v.abs() <= 1.0,
        // A stadium: its box is twice as wide as tall, so 2|u| is in
        // units of the half-height.
        BAR => {
            let a = 2.0 * u.abs();
            a <= 1.0 || (a - 1.0).powi(2) + v * v <= 1.0
        }
        7 => {
            let r = (u * u + v * v).sqrt();
            let theta = v.atan2(u) + PI / 2.0;
            r <= 0.4 + 0.6 * (0.5 + 0.5 * (5.0 * theta).cos())
        }
        _ => false,
    }
}

/// Binary mask of `shape` inside a `w x h` box: row-major, `h * w` entries.
pub fn shape_mask(shape: usize, w: usize, h: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let u = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
            let v = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0;
            out.push(contains(shape, u, v));
        }
    }
    out
}

/// Interleaved 8-bit RGB canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        RgbImage { width, height, data }
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` values in `[0, 1]`.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = f64::from(self.data[3 * p + c]) / 255.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_fills_its_box() {
        for s in [1, 7, 14, 30] {
            assert_eq!(shape_mask(1, s, s).iter().filter(|&&b| b).count(), s * s);
        }
    }

    #[test]
    fn every_shape_spans_most_of_its_box() {
        for shape in 0..8 {
            let (w, h) = ((20.0 * aspect(shape)) as usize, 20);
            let m = shape_mask(shape, w, h);
            let on: Vec<(usize, usize)> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| m[y * w + x])
                .collect();
            let span = |f: fn(&(usize, usize)) -> usize| {
                on.iter().map(f).max().unwrap() - on.iter().map(f).min().unwrap() + 1
            };
            let name = SHAPE_NAMES[shape];
            assert!(span(|p| p.0) * 10 >= w * 8, "{name}");
            assert!(span(|p| p.1) * 10 >= h * 8, "{name}");
            assert!(on.len() * 5 >= w * h, "{name}");
        }
    }

    #[test]
    fn shapes_are_pairwise_distinct() {
        let masks: Vec<_> = (0..8).map(|s| shape_mask(s, 24, 24)).collect();
        for a in 0..8 {
            for b in a + 1..8 {
                assert_ne!(masks[a], masks[b], "{} vs {}", SHAPE_NAMES[a], SHAPE_NAMES[b]);
            }
        }
    }
}
