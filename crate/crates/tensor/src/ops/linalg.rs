use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `out[m,n] += a[m,k] * b[k,n]` on raw row-major buffers.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`.
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn dims2(op: &'static str, t: &Tensor, other: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(TensorError::shapes(op, t.shape(), other.shape())),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a, b)?;
    let (k2, n) = dims2("matmul", b, a)?;
    if k != k2 {
        return Err(TensorError::shapes("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(&a.data(), &b.data(), &mut out, m, k, n);
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out, &[m, n], "matmul", vec![a.clone(), b.clone()], || {
        Box::new(move |g| {
            let ga = pa.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm_nt_acc(g, &pb.data(), &mut ga, m, n, k);
                ga
            });
            let gb = pb.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm_tn_acc(&pa.data(), g, &mut gb, m, k, n);
                gb
            });
            vec![ga, gb]
        })
    }))
}

fn transpose_buf(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    let [r, c] = *x.shape() else {
        return Err(TensorError::invalid(
            "transpose",
            format!("expected rank 2, got {:?}", x.shape()),
        ));
    };
    let out = transpose_buf(&x.data(), r, c);
    Ok(Tensor::from_op(out, &[c, r], "transpose", vec![x.clone()], || {
        Box::new(move |g| vec![Some(transpose_buf(g, c, r))])
    }))
}

/// Affine map `weight · x + bias`. `x` is either a vector `[C]` or a batch
/// of row vectors `[N, C]`; the weight is `[D, C]` and the bias `[D]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d, c) = dims2("linear", weight, x)?;
    let (rows, out_shape) = match *x.shape() {
        [cx] if cx == c => (1, vec![d]),
        [nx, cx] if cx == c => (nx, vec![nx, d]),
        _ => return Err(TensorError::shapes("linear", x.shape(), weight.shape())),
    };
    if bias.shape() != [d] {
        return Err(TensorError::shapes("linear", weight.shape(), bias.shape()));
    }
    let mut out = vec![0.0; rows * d];
    {
        let db = bias.data();
        for row in out.chunks_mut(d) {
            row.copy_from_slice(&db);
        }
    }
    gemm_nt_acc(&x.data(), &weight.data(), &mut out, rows, c, d);
    let (px, pw) = (x.clone(), weight.clone());
    Ok(Tensor::from_op(
        out,
        &out_shape,
        "linear",
        vec![x.clone(), weight.clone(), bias.clone()],
        || {
            Box::new(move |g| {
                let gx = px.requires_grad().then(|| {
                    let mut gx = vec![0.0; rows * c];
                    gemm_acc(g, &pw.data(), &mut gx, rows, d, c);
                    gx
                });
                let gw = pw.requires_grad().then(|| {
                    let mut gw = vec![0.0; d * c];
                    gemm_tn_acc(g, &px.data(), &mut gw, rows, d, c);
                    gw
                });
                let mut gb = vec![0.0; d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![gx, gw, Some(gb)]
            })
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let i = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let b = t(&[5.0, 6.0, 7.0, 8.0], &[2, 2]);
        assert_eq!(matmul(&i, &b).unwrap().to_vec(), vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn row_times_column() {
        let a = t(&[1.0, 2.0], &[1, 2]);
        let b = t(&[3.0, 4.0], &[2, 1]);
        let y = matmul(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.item(), 11.0);
    }

    #[test]
    fn matmul_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn linear_zero_and_identity() {
        let x = t(&[1.0, -2.0, 3.0], &[3]);
        let y = linear(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 0.0]);
        let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let y = linear(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn linear_batched_rows() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let w = t(&[1.0, 1.0], &[1, 2]);
        let b = t(&[0.5], &[1]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.to_vec(), vec![3.5, 7.5]);
    }

    #[test]
    fn linear_shape_errors() {
        let x = Tensor::zeros(&[4]);
        assert!(linear(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
        let x = Tensor::zeros(&[3]);
        assert!(linear(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let y = transpose(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(transpose(&y).unwrap().to_vec(), x.to_vec());
    }
}
