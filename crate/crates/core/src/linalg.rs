//! Small dense linear-algebra helpers shared by the geometric modules.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::Point;

/// Central-difference step used for Jacobians and first derivatives.
pub const FD_STEP: f64 = 1e-5;

/// `‖MᵀM − I‖_∞` (max absolute entry).
pub fn orthogonality_residual(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    let gram = m.transpose() * m;
    (gram - DMatrix::<f64>::identity(n, n)).amax()
}

/// Orthogonal polar factor `U Vᵀ` of a square matrix.
pub fn polar_orthogonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    u * v_t
}

/// Orthonormal basis of the numerical null space of `m` (columns act on ℝⁿ,
/// `n = m.ncols()`); singular values below `tol` count as zero.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> Vec<Point> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return (0..n).map(|i| unit(n, i)).collect();
    }
    // Pad to at least n rows so the SVD returns a full set of right vectors.
    let mut padded = DMatrix::<f64>::zeros(m.nrows().max(n), n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let mut basis = Vec::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s < tol {
            basis.push(v_t.row(k).transpose().into_owned());
        }
    }
    basis
}

pub fn unit(n: usize, i: usize) -> Point {
    let mut e = Point::zeros(n);
    e[i] = 1.0;
    e
}

/// Lexicographic comparison where coordinates closer than `eps` tie.
pub fn lex_cmp(a: &[f64], b: &[f64], eps: f64) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() >= eps {
            return x.partial_cmp(y).unwrap_or(Ordering::Equal);
        }
    }
    a.len().cmp(&b.len())
}

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian(f: &dyn Fn(&Point) -> Point, x: &Point, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::<f64>::zeros(m, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Orthonormal basis of the orthogonal complement of `x` in ℝⁿ.
pub fn complement_basis(x: &Point) -> Vec<Point> {
    let row = DMatrix::from_row_slice(1, x.len(), x.as_slice());
    null_space(&row, 1e-9)
}

/// Largest distance from a vector in span(`a`) to span(`b`), for orthonormal
/// bases. Zero iff span(a) ⊆ span(b).
pub fn projection_gap(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .map(|v| {
            let mut r = v.clone();
            for w in b {
                r -= w * w.dot(v);
            }
            r.norm()
        })
        .fold(0.0, f64::max)
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Evenly spaced values on `[lo, hi]`, `count ≥ 2` points including ends.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|i| lo + step * i as f64).collect()
}

/// All points of the cube grid `[-1,1]^dim` with `per_axis` points per axis.
pub fn cube_grid(dim: usize, per_axis: usize) -> Vec<Point> {
    let axis = linspace(-1.0, 1.0, per_axis);
    let mut out = Vec::with_capacity(per_axis.pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        out.push(Point::from_iterator(dim, idx.iter().map(|&i| axis[i])));
        let mut k = 0;
        loop {
            if k == dim {
                return out;
            }
            idx[k] += 1;
            if idx[k] < axis.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Grid points of the closed unit ball in ℝ^dim.
pub fn ball_grid(dim: usize, per_axis: usize) -> Vec<Point> {
    cube_grid(dim, per_axis)
        .into_iter()
        .filter(|p| p.norm() <= 1.0 + 1e-12)
        .collect()
}
