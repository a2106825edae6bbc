use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// The only broadcast the engine supports: equal shapes, or a `[H, W]` mask
/// against a `[C, H, W]` tensor on either side.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    MaskRight { hw: usize },
    MaskLeft { hw: usize },
}

impl Pairing {
    fn resolve(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Self, Vec<usize>)> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa == sb {
            return Ok((Pairing::Same, sa.to_vec()));
        }
        if sa.len() == 3 && sb.len() == 2 && sa[1..] == *sb {
            return Ok((Pairing::MaskRight { hw: sb[0] * sb[1] }, sa.to_vec()));
        }
        if sa.len() == 2 && sb.len() == 3 && sb[1..] == *sa {
            return Ok((Pairing::MaskLeft { hw: sa[0] * sa[1] }, sb.to_vec()));
        }
        Err(TensorError::shapes(op, sa, sb))
    }

    #[inline]
    fn index(self, i: usize) -> (usize, usize) {
        match self {
            Pairing::Same => (i, i),
            Pairing::MaskRight { hw } => (i, i % hw),
            Pairing::MaskLeft { hw } => (i % hw, i),
        }
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (pairing, shape) = Pairing::resolve("add", a, b)?;
    let (da, db) = (a.data(), b.data());
    let n: usize = shape.iter().product();
    let out = (0..n)
        .map(|i| {
            let (ia, ib) = pairing.index(i);
            da[ia] + db[ib]
        })
        .collect();
    let (na, nb) = (a.numel(), b.numel());
    Ok(Tensor::from_op(out, &shape, "add", vec![a.clone(), b.clone()], || {
        Box::new(move |g| {
            let mut ga = vec![0.0; na];
            let mut gb = vec![0.0; nb];
            for (i, gi) in g.iter().enumerate() {
                let (ia, ib) = pairing.index(i);
                ga[ia] += gi;
                gb[ib] += gi;
            }
            vec![Some(ga), Some(gb)]
        })
    }))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    add(a, &scale(b, -1.0))
}

/// Elementwise product (Hadamard), with the mask broadcast.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (pairing, shape) = Pairing::resolve("hadamard", a, b)?;
    let (da, db) = (a.data(), b.data());
    let n: usize = shape.iter().product();
    let out = (0..n)
        .map(|i| {
            let (ia, ib) = pairing.index(i);
            da[ia] * db[ib]
        })
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out, &shape, "hadamard", vec![a.clone(), b.clone()], || {
        Box::new(move |g| {
            let (da, db) = (pa.data(), pb.data());
            let mut ga = vec![0.0; da.len()];
            let mut gb = vec![0.0; db.len()];
            for (i, gi) in g.iter().enumerate() {
                let (ia, ib) = pairing.index(i);
                ga[ia] += gi * db[ib];
                gb[ib] += gi * da[ia];
            }
            vec![Some(ga), Some(gb)]
        })
    }))
}

pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let out = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(out, x.shape(), "scale", vec![x.clone()], || {
        Box::new(move |g| vec![Some(g.iter().map(|v| v * factor).collect())])
    })
}

/// Multiplies every element of `x` by the single value held in `s`.
pub fn scale_by(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(TensorError::shapes("scale_by", x.shape(), s.shape()));
    }
    let factor = s.item();
    let out = x.data().iter().map(|v| v * factor).collect();
    let xs = x.clone();
    Ok(Tensor::from_op(out, x.shape(), "scale_by", vec![x.clone(), s.clone()], || {
        Box::new(move |g| {
            let gx = g.iter().map(|v| v * factor).collect();
            let gs = g.iter().zip(xs.data().iter()).map(|(a, b)| a * b).sum();
            vec![Some(gx), Some(vec![gs])]
        })
    }))
}

/// Scales each row of `x: [R, C]` elementwise by `s: [C]`.
pub fn mul_rows(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (xs, ss) = (x.shape(), s.shape());
    if xs.len() != 2 || ss.len() != 1 || xs[1] != ss[0] {
        return Err(TensorError::shapes("mul_rows", xs, ss));
    }
    let c = ss[0];
    let (dx, ds) = (x.data(), s.data());
    let out = dx.iter().enumerate().map(|(i, v)| v * ds[i % c]).collect();
    let (px, ps) = (x.clone(), s.clone());
    Ok(Tensor::from_op(out, xs, "mul_rows", vec![x.clone(), s.clone()], || {
        Box::new(move |g| {
            let (dx, ds) = (px.data(), ps.data());
            let gx = g.iter().enumerate().map(|(i, v)| v * ds[i % c]).collect();
            let mut gs = vec![0.0; c];
            for (i, v) in g.iter().enumerate() {
                gs[i % c] += v * dx[i];
            }
            vec![Some(gx), Some(gs)]
        })
    }))
}

/// Elementwise `1 / x`.
pub fn recip(x: &Tensor) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|v| 1.0 / v).collect();
    let y = out.clone();
    Tensor::from_op(out, x.shape(), "recip", vec![x.clone()], || {
        Box::new(move |g| vec![Some(g.iter().zip(&y).map(|(gi, yi)| -gi * yi * yi).collect())])
    })
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let y = out.clone();
    Tensor::from_op(out, x.shape(), "sigmoid", vec![x.clone()], || {
        Box::new(move |g| {
            vec![Some(
                g.iter().zip(&y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect(),
            )]
        })
    })
}

/// max(x, 0); the gradient at exactly 0 is 0.
pub fn relu(x: &Tensor) -> Tensor {
    let out = x.data().iter().map(|&v| v.max(0.0)).collect();
    let xs = x.clone();
    Tensor::from_op(out, x.shape(), "relu", vec![x.clone()], || {
        Box::new(move |g| {
            let dx = xs.data();
            vec![Some(
                g.iter()
                    .zip(dx.iter())
                    .map(|(gi, &v)| if v > 0.0 { *gi } else { 0.0 })
                    .collect(),
            )]
        })
    })
}

pub fn sum(x: &Tensor) -> Tensor {
    let total = x.data().iter().sum();
    let n = x.numel();
    Tensor::from_op(vec![total], &[1], "sum", vec![x.clone()], || {
        Box::new(move |g| vec![Some(vec![g[0]; n])])
    })
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel();
    scale(&sum(x), 1.0 / n as f64)
}

/// Sum of equally shaped tensors, accumulated left to right.
pub fn add_n(xs: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = xs
        .split_first()
        .ok_or_else(|| TensorError::invalid("add_n", "empty input"))?;
    rest.iter().try_fold(first.clone(), |acc, x| {
        if acc.shape() != x.shape() {
            return Err(TensorError::shapes("add_n", acc.shape(), x.shape()));
        }
        add(&acc, x)
    })
}
