use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// (outer, len, inner) strides for reducing along `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_buf(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..len {
                out[at(j)] /= z;
            }
        }
    }
    out
}

/// Softmax along `axis`, computed after subtracting each slice's maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            op: "softmax",
            axis,
            rank: x.rank(),
        });
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let out = softmax_buf(&x.data(), outer, len, inner);
    let y = out.clone();
    Ok(Tensor::from_op(out, x.shape(), "softmax", vec![x.clone()], || {
        Box::new(move |g| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        })
    }))
}

/// Mean over rows of `-log softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [n, m] = *logits.shape() else {
        return Err(TensorError::invalid(
            "cross_entropy",
            format!("expected [N,M] logits, got {:?}", logits.shape()),
        ));
    };
    if labels.len() != n {
        return Err(TensorError::invalid(
            "cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(TensorError::LabelOutOfRange {
            op: "cross_entropy",
            label: bad,
            classes: m,
        });
    }
    let probs = softmax_buf(&logits.data(), n, m, 1);
    let loss = {
        let d = logits.data();
        labels
            .iter()
            .enumerate()
            .map(|(r, &l)| {
                let row = &d[r * m..(r + 1) * m];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (max - row[l]) + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
            })
            .sum::<f64>()
            / n as f64
    };
    let labels = labels.to_vec();
    Ok(Tensor::from_op(vec![loss], &[1], "cross_entropy", vec![logits.clone()], || {
        Box::new(move |g| {
            let scale = g[0] / n as f64;
            let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &l) in labels.iter().enumerate() {
                gx[r * m + l] -= scale;
            }
            vec![Some(gx)]
        })
    }))
}

/// Mean absolute difference. The target is treated as a constant and the
/// subgradient at equality is 0.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(TensorError::shapes("l1_loss", pred.shape(), target.shape()));
    }
    let n = pred.numel();
    let diff: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(p, t)| p - t)
        .collect();
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    Ok(Tensor::from_op(vec![loss], &[1], "l1_loss", vec![pred.clone(), target.clone()], || {
        Box::new(move |g| {
            let scale = g[0] / n as f64;
            let gp = diff
                .iter()
                .map(|&d| {
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![Some(gp), None]
        })
    }))
}
