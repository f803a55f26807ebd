//! Dense kernels with a fixed summation order.
//!
//! Every output element accumulates its inner products in increasing `k`
//! starting from zero, independent of how many rows are processed together.
//! That makes a batched forward pass bitwise identical to a per-row one.

use ndarray::Array2;

/// `a (n×k) · b (k×m)`.
pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "matmul inner dimensions");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.as_slice().unwrap();
    let bv = b.as_slice().unwrap();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = av[i * k + p];
            let brow = &bv[p * m..(p + 1) * m];
            for (o, &w) in row.iter_mut().zip(brow) {
                *o += x * w;
            }
        }
    }
    Array2::from_shape_vec((n, m), out).unwrap()
}

/// `aᵀ (k×n) · b (n×m)` for `a: n×k`.
pub fn matmul_tn(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (n2, m) = b.dim();
    assert_eq!(n, n2, "matmul_tn outer dimensions");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.as_slice().unwrap();
    let bv = b.as_slice().unwrap();
    let mut out = vec![0.0; k * m];
    for r in 0..n {
        let brow = &bv[r * m..(r + 1) * m];
        for p in 0..k {
            let x = av[r * k + p];
            if x == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Array2::from_shape_vec((k, m), out).unwrap()
}

/// `a (n×m) · bᵀ (m×k)` for `b: k×m`.
pub fn matmul_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, m) = a.dim();
    let (k, m2) = b.dim();
    assert_eq!(m, m2, "matmul_nt inner dimensions");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.as_slice().unwrap();
    let bv = b.as_slice().unwrap();
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &av[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &bv[p * m..(p + 1) * m];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] = acc;
        }
    }
    Array2::from_shape_vec((n, k), out).unwrap()
}

/// `A x` for a row-major matrix stored as rows of `cols` entries.
pub fn matvec(a: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let (n, m) = a.dim();
    assert_eq!(m, x.len());
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..m {
                acc += a[[i, j]] * x[j];
            }
            acc
        })
        .collect()
}

/// Inverse of a small dense matrix by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs()))?;
        if m[[piv, c]].abs() < 1e-300 {
            return None;
        }
        if piv != c {
            for j in 0..n {
                m.swap([piv, j], [c, j]);
                inv.swap([piv, j], [c, j]);
            }
        }
        let d = m[[c, c]];
        for j in 0..n {
            m[[c, j]] /= d;
            inv[[c, j]] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[[i, c]];
                if f != 0.0 {
                    for j in 0..n {
                        m[[i, j]] -= f * m[[c, j]];
                        inv[[i, j]] -= f * inv[[c, j]];
                    }
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_small() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 6.0], [7.0, 8.0]];
        assert_eq!(matmul(&a, &b), array![[19.0, 22.0], [43.0, 50.0]]);
        assert_eq!(matmul_tn(&a, &b), a.t().dot(&b));
        assert_eq!(matmul_nt(&a, &b), a.dot(&b.t()));
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let a = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
        let b = Array2::from_shape_fn((7, 3), |(i, j)| ((i * 3 + j) as f64 * 1.3).cos());
        let full = matmul(&a, &b);
        for i in 0..5 {
            let row = a.row(i).to_owned().insert_axis(ndarray::Axis(0));
            assert_eq!(matmul(&row, &b).row(0), full.row(i));
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let inv = invert(&a).unwrap();
        let id = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - e).abs() < 1e-12);
            }
        }
        assert!(invert(&array![[1.0, 2.0], [2.0, 4.0]]).is_none());
    }
}
