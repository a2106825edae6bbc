use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Stride-1 convolution of a `[C_in, H, W]` map with a `[C_out, C_in, k, k]`
/// kernel, `k` in {1, 3}. The 3×3 case zero-pads by one so the spatial size
/// is preserved.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [cin, h, w] = *x.shape() else {
        return Err(TensorError::shapes("conv2d", x.shape(), weight.shape()));
    };
    let [cout, wcin, k, k2] = *weight.shape() else {
        return Err(TensorError::shapes("conv2d", x.shape(), weight.shape()));
    };
    if wcin != cin {
        return Err(TensorError::shapes("conv2d", x.shape(), weight.shape()));
    }
    if k != k2 || !(k == 1 || k == 3) {
        return Err(TensorError::invalid(
            "conv2d",
            format!("kernel must be 1x1 or 3x3, got {k}x{k2}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(TensorError::shapes("conv2d", weight.shape(), bias.shape()));
    }
    let geom = Geometry { cin, cout, h, w, k };
    let out = geom.forward(&x.data(), &weight.data(), &bias.data());
    let (px, pw) = (x.clone(), weight.clone());
    Ok(Tensor::from_op(
        out,
        &[cout, h, w],
        "conv2d",
        vec![x.clone(), weight.clone(), bias.clone()],
        || {
            Box::new(move |g| {
                let gx = px
                    .requires_grad()
                    .then(|| geom.grad_input(g, &pw.data()));
                let gw = pw
                    .requires_grad()
                    .then(|| geom.grad_weight(g, &px.data()));
                let gb = g.chunks(h * w).map(|c| c.iter().sum()).collect();
                vec![gx, gw, Some(gb)]
            })
        },
    ))
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geometry {
    /// Iterates kernel taps as (tap index, dy, dx) with offsets in -pad..=pad.
    fn taps(&self) -> impl Iterator<Item = (usize, isize, isize)> {
        let k = self.k;
        let pad = (k / 2) as isize;
        (0..k * k).map(move |t| (t, (t / k) as isize - pad, (t % k) as isize - pad))
    }

    /// Valid output range along one axis for a shift of `d`.
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d.max(0)) as usize;
        (lo, hi)
    }

    fn forward(&self, x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
        let Geometry { cin, cout, h, w, k } = *self;
        let plane = h * w;
        let mut out = vec![0.0; cout * plane];
        for co in 0..cout {
            let o = &mut out[co * plane..(co + 1) * plane];
            o.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..cin {
                let xin = &x[ci * plane..(ci + 1) * plane];
                for (t, dy, dx) in self.taps() {
                    let wv = wt[((co * cin + ci) * k * k) + t];
                    if wv == 0.0 {
                        continue;
                    }
                    let (y0, y1) = Self::span(h, dy);
                    let (x0, x1) = Self::span(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let irow = &xin[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_input(&self, g: &[f64], wt: &[f64]) -> Vec<f64> {
        let Geometry { cin, cout, h, w, k } = *self;
        let plane = h * w;
        let mut gx = vec![0.0; cin * plane];
        for co in 0..cout {
            let go = &g[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let gi = &mut gx[ci * plane..(ci + 1) * plane];
                for (t, dy, dx) in self.taps() {
                    let wv = wt[((co * cin + ci) * k * k) + t];
                    if wv == 0.0 {
                        continue;
                    }
                    let (y0, y1) = Self::span(h, dy);
                    let (x0, x1) = Self::span(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &go[y * w + x0..y * w + x1];
                        let irow = &mut gi[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (iv, gv) in irow.iter_mut().zip(grow) {
                            *iv += wv * gv;
                        }
                    }
                }
            }
        }
        gx
    }

    fn grad_weight(&self, g: &[f64], x: &[f64]) -> Vec<f64> {
        let Geometry { cin, cout, h, w, k } = *self;
        let plane = h * w;
        let mut gw = vec![0.0; cout * cin * k * k];
        for co in 0..cout {
            let go = &g[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let xin = &x[ci * plane..(ci + 1) * plane];
                for (t, dy, dx) in self.taps() {
                    let (y0, y1) = Self::span(h, dy);
                    let (x0, x1) = Self::span(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &go[y * w + x0..y * w + x1];
                        let irow = &xin[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[((co * cin + ci) * k * k) + t] = acc;
                }
            }
        }
        gw
    }
}

/// Non-overlapping 2×2 average pooling of a `[C, H, W]` map (H, W even).
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *x.shape() else {
        return Err(TensorError::invalid(
            "avg_pool2",
            format!("expected [C,H,W], got {:?}", x.shape()),
        ));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::invalid(
            "avg_pool2",
            format!("spatial size {h}x{w} is not even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let dx = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * xo;
                out[(ch * oh + y) * ow + xo] =
                    0.25 * (dx[base] + dx[base + 1] + dx[base + w] + dx[base + w + 1]);
            }
        }
    }
    Ok(Tensor::from_op(out, &[c, oh, ow], "avg_pool2", vec![x.clone()], || {
        Box::new(move |g| {
            let mut gx = vec![0.0; c * h * w];
            for ch in 0..c {
                for y in 0..oh {
                    for xo in 0..ow {
                        let v = 0.25 * g[(ch * oh + y) * ow + xo];
                        let base = ch * h * w + 2 * y * w + 2 * xo;
                        gx[base] = v;
                        gx[base + 1] = v;
                        gx[base + w] = v;
                        gx[base + w + 1] = v;
                    }
                }
            }
            vec![Some(gx)]
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let x = Tensor::new((0..12).map(|v| v as f64 * 0.5 - 2.0).collect(), &[3, 2, 2]).unwrap();
        let mut wt = vec![0.0; 9];
        for c in 0..3 {
            wt[c * 3 + c] = 1.0;
        }
        let wt = Tensor::new(wt, &[3, 3, 1, 1]).unwrap();
        let y = conv2d(&x, &wt, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn three_by_three_ones_padding() {
        let x = Tensor::full(&[1, 4, 4], 1.0);
        let wt = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &wt, &Tensor::zeros(&[1])).unwrap();
        let d = y.to_vec();
        assert_eq!(d[0], 4.0);
        assert_eq!(d[3], 4.0);
        assert_eq!(d[12], 4.0);
        assert_eq!(d[15], 4.0);
        assert_eq!(d[5], 9.0);
        assert_eq!(d[10], 9.0);
        assert_eq!(d[1], 6.0);
    }

    #[test]
    fn channel_mismatch_errors() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let wt = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(conv2d(&x, &wt, &Tensor::zeros(&[1])).is_err());
        let wt = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(conv2d(&x, &wt, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn pooling_halves_and_averages() {
        let x = Tensor::new((0..16).map(f64::from).collect(), &[1, 4, 4]).unwrap();
        let y = avg_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.to_vec(), vec![2.5, 4.5, 10.5, 12.5]);
        assert!(avg_pool2(&Tensor::zeros(&[1, 3, 4])).is_err());
    }
}
