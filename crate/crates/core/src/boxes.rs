//! Axis-aligned boxes, IoU, and the center/size delta parameterization used
//! by the regression head.

pub type ClassId = usize;

/// `[x1, x2) x [y1, y2)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            self.width() * self.height()
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x1 < self.x2 && self.y1 < self.y2)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox {
            x1: width - self.x2,
            y1: self.y1,
            x2: width - self.x1,
            y2: self.y2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxAnnotation {
    pub bbox: BBox,
    pub class_id: ClassId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: ClassId,
    pub score: f64,
}

/// Intersection over union; 0 whenever either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Regression target taking `proposal` onto `target`:
/// `(dx, dy)` are center offsets relative to the proposal size and
/// `(dw, dh)` are log size ratios.
pub fn encode_deltas(proposal: &BBox, target: &BBox) -> [f64; 4] {
    let (px, py) = proposal.center();
    let (gx, gy) = target.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    [
        (gx - px) / pw,
        (gy - py) / ph,
        (target.width() / pw).ln(),
        (target.height() / ph).ln(),
    ]
}

/// Widest log-ratio accepted when decoding, so untrained heads cannot
/// produce overflowing boxes.
const MAX_LOG_RATIO: f64 = 4.0;

pub fn decode_deltas(proposal: &BBox, deltas: &[f64]) -> BBox {
    let (px, py) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let cx = px + deltas[0] * pw;
    let cy = py + deltas[1] * ph;
    let w = pw * deltas[2].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let h = ph * deltas[3].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)), 0.0);
    }

    #[test]
    fn deltas_round_trip() {
        let p = BBox::new(4.0, 6.0, 20.0, 18.0);
        let g = BBox::new(5.0, 3.0, 27.0, 19.0);
        let d = encode_deltas(&p, &g);
        let back = decode_deltas(&p, &d);
        for (a, b) in [(back.x1, g.x1), (back.y1, g.y1), (back.x2, g.x2), (back.y2, g.y2)] {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(encode_deltas(&g, &g), [0.0; 4]);
    }

    #[test]
    fn flip_is_an_involution() {
        let b = BBox::new(3.0, 1.0, 10.0, 7.0);
        assert_eq!(b.flip_horizontal(64.0).flip_horizontal(64.0), b);
        assert_eq!(b.flip_horizontal(64.0).x1, 54.0);
    }
}
