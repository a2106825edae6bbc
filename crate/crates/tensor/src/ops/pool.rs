use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn chw(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::invalid(
            op,
            format!("expected [C,H,W], got {:?}", x.shape()),
        )),
    }
}

/// Global average pooling: `[C, H, W] -> [C]`.
pub fn gap(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw("gap", x)?;
    let n = h * w;
    let inv = 1.0 / n as f64;
    let out = x
        .data()
        .chunks(n)
        .map(|plane| plane.iter().sum::<f64>() * inv)
        .collect();
    Ok(Tensor::from_op(out, &[c], "gap", vec![x.clone()], || {
        Box::new(move |g| {
            let mut gx = Vec::with_capacity(c * n);
            for gc in g {
                gx.extend(std::iter::repeat_n(gc * inv, n));
            }
            vec![Some(gx)]
        })
    }))
}

/// Global max pooling: `[C, H, W] -> [C]`. The gradient goes to the first
/// maximal position of each channel.
pub fn gmp(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw("gmp", x)?;
    let n = h * w;
    let mut arg = Vec::with_capacity(c);
    let mut out = Vec::with_capacity(c);
    for plane in x.data().chunks(n) {
        let (i, v) = plane
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        arg.push(i);
        out.push(v);
    }
    Ok(Tensor::from_op(out, &[c], "gmp", vec![x.clone()], || {
        Box::new(move |g| {
            let mut gx = vec![0.0; c * n];
            for (ch, (&i, gc)) in arg.iter().zip(g).enumerate() {
                gx[ch * n + i] = *gc;
            }
            vec![Some(gx)]
        })
    }))
}

/// A half-open window `[y0, y1) x [x0, x1)` on a feature grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Window {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

/// Averages `x: [C, H, W]` over each window, giving one row per window:
/// `[R, C]`.
pub fn roi_pool(x: &Tensor, windows: &[Window]) -> Result<Tensor> {
    let (c, h, w) = chw("roi_pool", x)?;
    if windows.is_empty() {
        return Err(TensorError::invalid("roi_pool", "no windows"));
    }
    for win in windows {
        if win.y0 >= win.y1 || win.x0 >= win.x1 || win.y1 > h || win.x1 > w {
            return Err(TensorError::invalid(
                "roi_pool",
                format!("window {win:?} outside {h}x{w} grid or empty"),
            ));
        }
    }
    let dx = x.data();
    let r = windows.len();
    let mut out = vec![0.0; r * c];
    for (ri, win) in windows.iter().enumerate() {
        let inv = 1.0 / win.area() as f64;
        for ch in 0..c {
            let mut acc = 0.0;
            for y in win.y0..win.y1 {
                let row = ch * h * w + y * w;
                acc += dx[row + win.x0..row + win.x1].iter().sum::<f64>();
            }
            out[ri * c + ch] = acc * inv;
        }
    }
    let windows = windows.to_vec();
    Ok(Tensor::from_op(out, &[r, c], "roi_pool", vec![x.clone()], || {
        Box::new(move |g| {
            let mut gx = vec![0.0; c * h * w];
            for (ri, win) in windows.iter().enumerate() {
                let inv = 1.0 / win.area() as f64;
                for ch in 0..c {
                    let v = g[ri * c + ch] * inv;
                    for y in win.y0..win.y1 {
                        let row = ch * h * w + y * w;
                        gx[row + win.x0..row + win.x1].iter_mut().for_each(|e| *e += v);
                    }
                }
            }
            vec![Some(gx)]
        })
    }))
}

pub const DEFAULT_COSINE_EPS: f64 = 1e-8;

/// Cosine similarity between `v: [C]` and every position of `x: [C, H, W]`,
/// giving `[H, W]`. Norms are floored at `eps`, so zero vectors score 0.
pub fn cosine_map(v: &Tensor, x: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, h, w) = chw("cosine_map", x)?;
    if v.shape() != [c] {
        return Err(TensorError::shapes("cosine_map", v.shape(), x.shape()));
    }
    if eps <= 0.0 {
        return Err(TensorError::invalid("cosine_map", "eps must be positive"));
    }
    let n = h * w;
    let (dv, dx) = (v.data(), x.data());
    let vnorm = dv.iter().map(|a| a * a).sum::<f64>().sqrt();
    let a = vnorm.max(eps);
    let mut dots = vec![0.0; n];
    let mut norms = vec![0.0; n];
    for ch in 0..c {
        let plane = &dx[ch * n..(ch + 1) * n];
        let vc = dv[ch];
        for p in 0..n {
            dots[p] += vc * plane[p];
            norms[p] += plane[p] * plane[p];
        }
    }
    norms.iter_mut().for_each(|s| *s = s.sqrt());
    let out: Vec<f64> = (0..n).map(|p| dots[p] / (a * norms[p].max(eps))).collect();
    let (pv, px) = (v.clone(), x.clone());
    Ok(Tensor::from_op(out, &[h, w], "cosine_map", vec![v.clone(), x.clone()], || {
        Box::new(move |g| {
            let (dv, dx) = (pv.data(), px.data());
            // d/dv: x_p / (a b_p) - dot_p / (a^2 b_p) * dA/dv, with dA/dv = v/|v|
            // only when the norm is above the floor; symmetric for x_p.
            let v_active = vnorm > eps;
            let mut gv = vec![0.0; c];
            let mut gx = vec![0.0; c * n];
            for p in 0..n {
                let b = norms[p].max(eps);
                let x_active = norms[p] > eps;
                let gp = g[p];
                if gp == 0.0 {
                    continue;
                }
                let inv_ab = 1.0 / (a * b);
                let cv = if v_active { dots[p] * inv_ab / (vnorm * vnorm) } else { 0.0 };
                let cx = if x_active { dots[p] * inv_ab / (norms[p] * norms[p]) } else { 0.0 };
                for ch in 0..c {
                    let xv = dx[ch * n + p];
                    gv[ch] += gp * (xv * inv_ab - cv * dv[ch]);
                    gx[ch * n + p] = gp * (dv[ch] * inv_ab - cx * xv);
                }
            }
            vec![Some(gv), Some(gx)]
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_of_constant_and_hand_case() {
        let x = Tensor::full(&[3, 2, 5], 2.5);
        assert_eq!(gap(&x).unwrap().to_vec(), vec![2.5; 3]);
        let x = Tensor::new(vec![1.0, 3.0, 5.0, 7.0], &[1, 2, 2]).unwrap();
        assert_eq!(gap(&x).unwrap().to_vec(), vec![4.0]);
    }

    #[test]
    fn gap_gradient_is_uniform() {
        let x = Tensor::param(vec![0.3; 2 * 3 * 4], &[2, 3, 4]).unwrap();
        crate::ops::sum(&gap(&x).unwrap()).backward().unwrap();
        assert!(x.grad().unwrap().iter().all(|&g| (g - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn gmp_picks_channel_max() {
        let x = Tensor::new(vec![1.0, 5.0, -2.0, 0.0, -1.0, -3.0, -0.5, -4.0], &[2, 2, 2]).unwrap();
        assert_eq!(gmp(&x).unwrap().to_vec(), vec![5.0, -0.5]);
    }

    #[test]
    fn cosine_cases() {
        let v = Tensor::new(vec![1.0, 0.0], &[2]).unwrap();
        let x = Tensor::new(vec![0.0, 1.0], &[2, 1, 1]).unwrap();
        assert_eq!(cosine_map(&v, &x, DEFAULT_COSINE_EPS).unwrap().item(), 0.0);

        let v = Tensor::new(vec![1.0, 1.0], &[2]).unwrap();
        let x = Tensor::new(vec![1.0, 0.0], &[2, 1, 1]).unwrap();
        let s = cosine_map(&v, &x, DEFAULT_COSINE_EPS).unwrap().item();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_self_similarity_is_one() {
        let v = vec![0.3, -1.2, 2.0];
        let mut data = Vec::new();
        for c in 0..3 {
            data.extend(std::iter::repeat_n(v[c], 4));
        }
        let x = Tensor::new(data, &[3, 2, 2]).unwrap();
        let v = Tensor::new(v, &[3]).unwrap();
        let s = cosine_map(&v, &x, DEFAULT_COSINE_EPS).unwrap();
        assert!(s.data().iter().all(|&o| (o - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        let v = Tensor::zeros(&[2]);
        let x = Tensor::new(vec![1.0, 2.0], &[2, 1, 1]).unwrap();
        assert_eq!(cosine_map(&v, &x, DEFAULT_COSINE_EPS).unwrap().item(), 0.0);
        let v = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let x = Tensor::zeros(&[2, 1, 1]);
        assert_eq!(cosine_map(&v, &x, DEFAULT_COSINE_EPS).unwrap().item(), 0.0);
    }

    #[test]
    fn roi_pool_two_cells() {
        let x = Tensor::new(vec![1.0, 3.0, 10.0, 20.0], &[1, 2, 2]).unwrap();
        let win = Window { y0: 1, y1: 2, x0: 0, x1: 2 };
        assert_eq!(roi_pool(&x, &[win]).unwrap().to_vec(), vec![15.0]);
        let bad = Window { y0: 1, y1: 3, x0: 0, x1: 2 };
        assert!(roi_pool(&x, &[bad]).is_err());
    }
}
