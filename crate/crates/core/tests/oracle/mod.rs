//! Loop-level reference implementations on flat `Vec<f64>` buffers in
//! channel-major layout. Deliberately naive: no tensor library calls.
#![allow(dead_code)]

use icpe::boxes::BBox;
use rand::Rng;

pub fn random_vec<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// `w: [co, ci]`, `b: [co]`, `x: [ci, n]` -> `[co, n]`.
pub fn conv1x1(w: &[f64], b: &[f64], x: &[f64], ci: usize, co: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * n];
    for o in 0..co {
        for p in 0..n {
            let mut acc = b[o];
            for i in 0..ci {
                acc += w[o * ci + i] * x[i * n + p];
            }
            out[o * n + p] = acc;
        }
    }
    out
}

pub fn gap(x: &[f64], c: usize, n: usize) -> Vec<f64> {
    (0..c).map(|ch| (0..n).map(|p| x[ch * n + p]).sum::<f64>() / n as f64).collect()
}

pub fn gmp(x: &[f64], c: usize, n: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| (0..n).map(|p| x[ch * n + p]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Cosine between `v` and position `p` of `x`, norms floored at 1e-8.
pub fn cosine_at(v: &[f64], x: &[f64], c: usize, n: usize, p: usize) -> f64 {
    let mut dot = 0.0;
    let mut nv = 0.0;
    let mut nx = 0.0;
    for ch in 0..c {
        dot += v[ch] * x[ch * n + p];
        nv += v[ch] * v[ch];
        nx += x[ch * n + p] * x[ch * n + p];
    }
    dot / (nv.sqrt().max(1e-8) * nx.sqrt().max(1e-8))
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Projection weights of the coupling step, all 1x1.
pub struct CouplingWeights {
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

/// Row `i` (support position) softmax over query positions `j` of
/// `Σ_e q[e, i] k[e, j]`. Returns `[ns][nq]`.
pub fn attention(q: &[f64], k: &[f64], d: usize, ns: usize, nq: usize) -> Vec<Vec<f64>> {
    (0..ns)
        .map(|i| {
            let scores: Vec<f64> = (0..nq)
                .map(|j| (0..d).map(|e| q[e * ns + i] * k[e * nq + j]).sum())
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            ex.iter().map(|e| e / z).collect()
        })
        .collect()
}

pub struct CouplingOracle {
    pub attention: Vec<Vec<f64>>,
    pub x_hat_q: Vec<f64>,
    pub condition: Vec<f64>,
    pub x_hat_s: Vec<f64>,
}

/// The whole coupling step: attention, re-assembly, condition, injection.
pub fn coupling(
    x_q: &[f64],
    x_s: &[f64],
    c: usize,
    d: usize,
    nq: usize,
    ns: usize,
    w: &CouplingWeights,
    use_condition: bool,
    clamp: bool,
) -> CouplingOracle {
    let q = conv1x1(&w.wq, &w.bq, x_s, c, d, ns);
    let k = conv1x1(&w.wk, &w.bk, x_q, c, d, nq);
    let v = conv1x1(&w.wv, &w.bv, x_q, c, d, nq);
    let att = attention(&q, &k, d, ns, nq);
    let mut gathered = vec![0.0; d * ns];
    for e in 0..d {
        for i in 0..ns {
            gathered[e * ns + i] = (0..nq).map(|j| att[i][j] * v[e * nq + j]).sum();
        }
    }
    let x_hat_q = conv1x1(&w.wo, &w.bo, &gathered, d, c, ns);
    let g = gap(x_q, c, nq);
    let condition: Vec<f64> = (0..ns)
        .map(|p| {
            if !use_condition {
                return 1.0;
            }
            let s = cosine_at(&g, x_s, c, ns, p);
            if clamp { s.max(0.0) } else { s }
        })
        .collect();
    let mut x_hat_s = vec![0.0; c * ns];
    for ch in 0..c {
        for p in 0..ns {
            x_hat_s[ch * ns + p] = condition[p] * x_hat_q[ch * ns + p] + x_s[ch * ns + p];
        }
    }
    CouplingOracle {
        attention: att,
        x_hat_q,
        condition,
        x_hat_s,
    }
}

/// Image prototype with the similarity-weighted extra term; returns
/// `(v, weights)`.
pub fn intra(x: &[f64], c: usize, n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let g = gap(x, c, n);
    let w: Vec<f64> = (0..n).map(|p| cosine_at(&g, x, c, n, p)).collect();
    let v = (0..c)
        .map(|ch| {
            let extra: f64 = (0..n).map(|p| w[p] * x[ch * n + p]).sum();
            g[ch] + alpha / n as f64 * extra
        })
        .collect();
    (v, w)
}

/// Contribution probabilities of each image prototype.
pub fn contributions(protos: &[Vec<f64>], fc_w: &[f64], fc_b: f64) -> Vec<f64> {
    protos
        .iter()
        .map(|v| sigmoid(v.iter().zip(fc_w).map(|(a, b)| a * b).sum::<f64>() + fc_b))
        .collect()
}

pub fn weighted_sum(protos: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    let c = protos[0].len();
    (0..c).map(|ch| protos.iter().zip(p).map(|(v, pi)| pi * v[ch]).sum()).collect()
}

/// All-point interpolated AP by brute force: for every recall level reached
/// by some prefix, the best precision of any prefix at or beyond it.
pub fn naive_ap(dets: &[(usize, BBox, f64)], gts: &[(usize, BBox)]) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort keeps insertion order on ties.
    order.sort_by(|&a, &b| dets[b].2.partial_cmp(&dets[a].2).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut hits = Vec::new();
    for &i in &order {
        let (img, b, _) = dets[i];
        let mut best = -1.0;
        let mut best_j = None;
        for (j, (gi, g)) in gts.iter().enumerate() {
            if *gi != img {
                continue;
            }
            let o = icpe::boxes::iou(&b, g);
            if o > best {
                best = o;
                best_j = Some(j);
            }
        }
        let hit = match best_j {
            Some(j) if best >= 0.5 && !taken[j] => {
                taken[j] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }
    let n = hits.len();
    let mut prec = Vec::with_capacity(n);
    let mut rec = Vec::with_capacity(n);
    for m in 1..=n {
        let tp = hits[..m].iter().filter(|&&h| h).count() as f64;
        prec.push(tp / m as f64);
        rec.push(tp / gts.len() as f64);
    }
    // Sum over each prefix that adds a true positive: recall step times
    // the best precision at any later-or-equal prefix.
    let mut ap = 0.0;
    let mut last_rec = 0.0;
    for m in 0..n {
        if hits[m] {
            let best = (m..n).map(|t| prec[t]).fold(0.0, f64::max);
            ap += (rec[m] - last_rec) * best;
            last_rec = rec[m];
        }
    }
    Some(ap)
}

/// Zero-padded 3x3 convolution. `w: [co, ci, 3, 3]`.
pub fn conv3x3(x: &[f64], ci: usize, h: usize, w: usize, wt: &[f64], b: &[f64], co: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b[o];
                for i in 0..ci {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += wt[((o * ci + i) * 3 + dy) * 3 + dx] * x[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

pub fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(ch * oh + y) * ow + xx] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
            }
        }
    }
    out
}

/// Three conv-relu-pool stages over RGB (normalized by mean 0.5, std 0.25)
/// plus a mask channel. `stages[i] = (weight, bias, c_out)`.
pub fn backbone(rgb: &[f64], mask: Option<&[f64]>, h: usize, w: usize, stages: &[(Vec<f64>, Vec<f64>, usize)]) -> Vec<f64> {
    let n = h * w;
    let mut x: Vec<f64> = rgb.iter().map(|v| (v - 0.5) / 0.25).collect();
    match mask {
        Some(m) => x.extend_from_slice(m),
        None => x.extend(std::iter::repeat_n(0.0, n)),
    }
    let (mut c, mut hh, mut ww) = (4, h, w);
    for (wt, b, co) in stages {
        let y: Vec<f64> = conv3x3(&x, c, hh, ww, wt, b, *co).into_iter().map(|v| v.max(0.0)).collect();
        x = avg_pool2(&y, *co, hh, ww);
        c = *co;
        hh /= 2;
        ww /= 2;
    }
    x
}

/// Feature cells covered by an image box at stride 8, rounded outward;
/// an empty window falls back to the cell under the box center.
pub fn window(b: &BBox, fh: usize, fw: usize) -> (usize, usize, usize, usize) {
    let span = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = ((lo / 8.0).floor().max(0.0) as usize).min(n);
        let z = ((hi / 8.0).ceil().max(0.0) as usize).min(n);
        if a < z {
            (a, z)
        } else {
            let c = (((lo + hi) / 16.0).floor().max(0.0) as usize).min(n - 1);
            (c, c + 1)
        }
    };
    let (y0, y1) = span(b.y1, b.y2, fh);
    let (x0, x1) = span(b.x1, b.x2, fw);
    (y0, y1, x0, x1)
}

pub fn roi_vector(feat: &[f64], c: usize, fh: usize, fw: usize, b: &BBox) -> Vec<f64> {
    let (y0, y1, x0, x1) = window(b, fh, fw);
    let cells = ((y1 - y0) * (x1 - x0)) as f64;
    (0..c)
        .map(|ch| {
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += feat[(ch * fh + y) * fw + x];
                }
            }
            s / cells
        })
        .collect()
}

/// `w: [out, in]`.
pub fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
        .collect()
}
