//! Raw numeric kernels on flat row-major `f64` slices.
//!
//! These are shared by the forward ops and their vector-Jacobian products.
//! Plain triple loops, single-threaded: bit-deterministic by construction.

/// out[m,n] = a[m,k] @ b[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// out[n,m] = a[m,n]^T
pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same-length 1-D convolution over the row axis.
///
/// `x` is frames×cin, `w` is cout×cin×k (row-major), `b` is cout,
/// output is frames×cout. Padding is `(k-1)/2` zeros on each side; `k` odd.
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    frames: usize,
    cin: usize,
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; frames * cout];
    for t in 0..frames {
        for co in 0..cout {
            let mut acc = b[co];
            for j in 0..k {
                // input frame index t + j - pad, zero outside [0, frames)
                let ti = t as isize + j as isize - pad as isize;
                if ti < 0 || ti >= frames as isize {
                    continue;
                }
                let xrow = &x[ti as usize * cin..(ti as usize + 1) * cin];
                let wrow = &w[(co * cin * k) + j..];
                for ci in 0..cin {
                    acc += xrow[ci] * wrow[ci * k];
                }
            }
            out[t * cout + co] = acc;
        }
    }
    out
}

/// Gradients of [`conv1d`] w.r.t. input, weights and bias.
pub fn conv1d_backward(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    frames: usize,
    cin: usize,
    cout: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = (k - 1) / 2;
    let mut dx = vec![0.0; frames * cin];
    let mut dw = vec![0.0; cout * cin * k];
    let mut db = vec![0.0; cout];
    for t in 0..frames {
        for co in 0..cout {
            let gv = g[t * cout + co];
            if gv == 0.0 {
                continue;
            }
            db[co] += gv;
            for j in 0..k {
                let ti = t as isize + j as isize - pad as isize;
                if ti < 0 || ti >= frames as isize {
                    continue;
                }
                let ti = ti as usize;
                for ci in 0..cin {
                    dx[ti * cin + ci] += gv * w[co * cin * k + ci * k + j];
                    dw[co * cin * k + ci * k + j] += gv * x[ti * cin + ci];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Row-wise softmax of a frames×c matrix, with max subtraction.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        for o in &mut out[r * cols..(r + 1) * cols] {
            *o /= sum;
        }
    }
    out
}
