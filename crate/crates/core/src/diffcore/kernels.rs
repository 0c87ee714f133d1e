//! Plain-slice numeric kernels shared by the forward and backward passes.

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if n == 1 {
        return a.chunks_exact(k).map(|row| dot(row, b)).collect();
    }
    let mut c = vec![0.0; m * n];
    for (crow, arow) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
        for (&aik, brow) in arow.iter().zip(b.chunks_exact(n)) {
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aik * bj;
            }
        }
    }
    c
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `c[m×k] = g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if n == 1 {
        // outer product of g and b
        let mut c = Vec::with_capacity(m * k);
        for &gi in g {
            c.extend(b.iter().map(|bj| gi * bj));
        }
        return c;
    }
    // bᵀ is small (a weight matrix); with it the product is a plain matmul
    // whose inner loop vectorizes
    let mut bt = vec![0.0; n * k];
    for (kk, brow) in b.chunks_exact(n).enumerate() {
        for (j, &v) in brow.iter().enumerate() {
            bt[j * k + kk] = v;
        }
    }
    matmul(g, &bt, m, n, k)
}

/// `c[k×n] = a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_at(a: &[f64], g: &[f64], _m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    if n == 1 {
        for (arow, &gi) in a.chunks_exact(k).zip(g) {
            for (cj, aj) in c.iter_mut().zip(arow) {
                *cj += aj * gi;
            }
        }
        return c;
    }
    for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
        for (&aik, crow) in arow.iter().zip(c.chunks_exact_mut(n)) {
            for (cj, gj) in crow.iter_mut().zip(grow) {
                *cj += aik * gj;
            }
        }
    }
    c
}

/// Splits `shape` around `axis` into (outer, axis length, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
