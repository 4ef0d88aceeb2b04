//! Row-wise building blocks with hand-written backward passes. Rows are
//! tokens, columns are features.

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

/// Layer-norm variance regularizer.
pub const LN_EPS: f64 = 1e-5;

/// `x·W + b` with `b` broadcast over rows (`b` is 1×n).
pub fn linear(x: &Mat, w: &Mat, b: Option<&Mat>) -> Mat {
    let mut y = x * w;
    if let Some(b) = b {
        for mut row in y.row_iter_mut() {
            row += b;
        }
    }
    y
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(x: &Mat, w: &Mat, dy: &Mat) -> (Mat, Mat, Mat) {
    let dx = dy * w.transpose();
    let dw = x.transpose() * dy;
    let db = row_sum(dy);
    (dx, dw, db)
}

/// Column sums as a 1×n matrix.
pub fn row_sum(m: &Mat) -> Mat {
    let mut s = Mat::zeros(1, m.ncols());
    for row in m.row_iter() {
        s += row;
    }
    s
}

pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Mat, g: &Mat, b: &Mat) -> (Mat, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / n;
        let s = 1.0 / (var + LN_EPS).sqrt();
        row *= s;
        inv_std.push(s);
    }
    let mut y = xhat.clone();
    for mut row in y.row_iter_mut() {
        row.component_mul_assign(g);
        row += b;
    }
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dg, db)`.
pub fn layer_norm_backward(dy: &Mat, cache: &LnCache, g: &Mat) -> (Mat, Mat, Mat) {
    let n = dy.ncols() as f64;
    let dg = row_sum(&dy.component_mul(&cache.xhat));
    let db = row_sum(dy);
    let mut dx = Mat::zeros(dy.nrows(), dy.ncols());
    for r in 0..dy.nrows() {
        let dxhat = dy.row(r).component_mul(g);
        let xhat = cache.xhat.row(r);
        let m1 = dxhat.sum() / n;
        let m2 = dxhat.dot(&xhat) / n;
        let row = (dxhat - xhat * m2).add_scalar(-m1) * cache.inv_std[r];
        dx.set_row(r, &row);
    }
    (dx, dg, db)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Softmax of each row.
pub fn softmax_rows(s: &Mat) -> Mat {
    let mut a = s.clone();
    for mut row in a.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let z = row.sum();
        row /= z;
    }
    a
}

/// Given `A = softmax_rows(S)` and `dA`, returns `dS`.
pub fn softmax_rows_backward(a: &Mat, da: &Mat) -> Mat {
    let mut ds = a.component_mul(da);
    for r in 0..a.nrows() {
        let dot = ds.row(r).sum();
        let fix = a.row(r) * dot;
        let mut row = ds.row_mut(r);
        row -= fix;
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_rows_normalized() {
        let s = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]);
        let a = softmax_rows(&s);
        for r in 0..2 {
            assert_abs_diff_eq!(a.row(r).sum(), 1.0, epsilon = 1e-15);
        }
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn layer_norm_of_zeros_is_bias() {
        let x = Mat::zeros(2, 4);
        let g = Mat::from_element(1, 4, 3.0);
        let b = Mat::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let (y, _) = layer_norm(&x, &g, &b);
        assert_eq!(y.row(1), b.row(0));
    }
}
