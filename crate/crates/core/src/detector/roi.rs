//! Box-to-grid mapping and the fixed candidate grid used at inference.

use icpe_tensor::ops::{self, Window};
use icpe_tensor::Tensor;

use crate::boxes::BBox;
use crate::detector::backbone::STRIDE;
use crate::error::Result;

/// Maps an image-space box onto a `feat_h x feat_w` grid, rounding outward.
/// A box that collapses after clamping becomes the cell nearest its center.
pub fn box_to_window(b: &BBox, feat_h: usize, feat_w: usize) -> Window {
    let s = STRIDE as f64;
    let axis = |lo: f64, hi: f64, n: usize| {
        let a = (lo / s).floor().clamp(0.0, n as f64) as usize;
        let z = (hi / s).ceil().clamp(0.0, n as f64) as usize;
        if a < z {
            (a, z)
        } else {
            let c = ((0.5 * (lo + hi)) / s).floor().clamp(0.0, (n - 1) as f64) as usize;
            (c, c + 1)
        }
    };
    let (x0, x1) = axis(b.x1, b.x2, feat_w);
    let (y0, y1) = axis(b.y1, b.y2, feat_h);
    Window { y0, y1, x0, x1 }
}

/// `[R, C]` RoI vectors: the mean of the feature cells each box covers.
pub fn extract_roi_features(feat: &Tensor, boxes: &[BBox]) -> Result<Tensor> {
    let (h, w) = (feat.shape()[1], feat.shape()[2]);
    let windows: Vec<Window> = boxes.iter().map(|b| box_to_window(b, h, w)).collect();
    Ok(ops::roi_pool(feat, &windows)?)
}

pub const GRID_SCALES: [f64; 3] = [16.0, 24.0, 32.0];

/// Candidate boxes: every scale at aspect 1:1 and 2:1 (wide), centered on
/// each stride cell, clipped to the image.
pub fn sliding_grid(image_size: usize) -> Vec<BBox> {
    let cells = image_size / STRIDE;
    let size = image_size as f64;
    let mut out = Vec::with_capacity(cells * cells * GRID_SCALES.len() * 2);
    for i in 0..cells {
        for j in 0..cells {
            let cy = (i as f64 + 0.5) * STRIDE as f64;
            let cx = (j as f64 + 0.5) * STRIDE as f64;
            for s in GRID_SCALES {
                for (bw, bh) in [(s, s), (s * 2f64.sqrt(), s / 2f64.sqrt())] {
                    let b = BBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0);
                    out.push(b.clip(size, size));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_box_equals_gap() {
        let feat = Tensor::new((0..2 * 4 * 4).map(|v| v as f64).collect(), &[2, 4, 4]).unwrap();
        let r = extract_roi_features(&feat, &[BBox::new(0.0, 0.0, 32.0, 32.0)]).unwrap();
        assert_eq!(r.to_vec(), ops::gap(&feat).unwrap().to_vec());
    }

    #[test]
    fn two_cell_crop() {
        // Channel 0 is [[1, 2], [3, 4]]; a box over the left column averages 1 and 3.
        let feat = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        let r = extract_roi_features(&feat, &[BBox::new(1.0, 0.0, 7.0, 16.0)]).unwrap();
        assert_eq!(r.to_vec(), vec![2.0]);
    }

    #[test]
    fn degenerate_box_maps_to_nearest_cell() {
        let w = box_to_window(&BBox::new(70.0, 70.0, 90.0, 90.0), 8, 8);
        assert_eq!(w, Window { y0: 7, y1: 8, x0: 7, x1: 8 });
        let w = box_to_window(&BBox::new(9.0, 9.0, 9.0, 9.0), 8, 8);
        assert_eq!(w.area(), 1);
    }

    #[test]
    fn grid_is_inside_the_image() {
        let g = sliding_grid(64);
        assert_eq!(g.len(), 8 * 8 * 6);
        assert!(g.iter().all(|b| !b.is_degenerate() && b.x1 >= 0.0 && b.x2 <= 64.0));
    }
}
