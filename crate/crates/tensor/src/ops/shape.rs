use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) || numel(shape) != x.numel() {
        return Err(TensorError::shapes("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op(x.to_vec(), shape, "reshape", vec![x.clone()], || {
        Box::new(|g| vec![Some(g.to_vec())])
    }))
}

/// Joins tensors along `axis`; all other dimensions must agree.
pub fn concat(xs: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "empty input"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange {
            op: "concat",
            axis,
            rank,
        });
    }
    for x in &xs[1..] {
        let same_rank = x.rank() == rank;
        let agrees = same_rank
            && (0..rank).all(|d| d == axis || x.shape()[d] == first.shape()[d]);
        if !agrees {
            return Err(TensorError::shapes("concat", first.shape(), x.shape()));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let widths: Vec<usize> = xs.iter().map(|x| x.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(outer * total);
    let guards: Vec<_> = xs.iter().map(|x| x.data()).collect();
    for o in 0..outer {
        for (d, &wd) in guards.iter().zip(&widths) {
            out.extend_from_slice(&d[o * wd..(o + 1) * wd]);
        }
    }
    drop(guards);
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    Ok(Tensor::from_op(out, &shape, "concat", xs.to_vec(), || {
        Box::new(move |g| {
            let mut grads: Vec<Vec<f64>> =
                widths.iter().map(|w| Vec::with_capacity(w * outer)).collect();
            let mut at = 0;
            for _ in 0..outer {
                for (gx, &wd) in grads.iter_mut().zip(&widths) {
                    gx.extend_from_slice(&g[at..at + wd]);
                    at += wd;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }))
}

/// Gathers rows of `x: [R, D]` by index, giving `[idx.len(), D]`.
pub fn select_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let [r, d] = *x.shape() else {
        return Err(TensorError::invalid(
            "select_rows",
            format!("expected rank 2, got {:?}", x.shape()),
        ));
    };
    if idx.is_empty() {
        return Err(TensorError::invalid("select_rows", "no rows selected"));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
        return Err(TensorError::invalid(
            "select_rows",
            format!("row {bad} out of range for {r} rows"),
        ));
    }
    let dx = x.data();
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend_from_slice(&dx[i * d..(i + 1) * d]);
    }
    let idx = idx.to_vec();
    Ok(Tensor::from_op(out, &[idx.len(), d], "select_rows", vec![x.clone()], || {
        Box::new(move |g| {
            let mut gx = vec![0.0; r * d];
            for (k, &i) in idx.iter().enumerate() {
                gx[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&g[k * d..(k + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(gx)]
        })
    }))
}
