//! Dense complex matrix helpers shared by the simulator.
//!
//! Arrays are `ndarray` row-major; Hermitian eigendecompositions and SVDs are
//! delegated to `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(dim: usize) -> Array2<C64> {
    Array2::from_diag_elem(dim, ONE)
}

/// Conjugate transpose.
pub fn dagger(a: &ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn max_abs(a: &ArrayView2<C64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Largest elementwise deviation of `a` from `a†`.
pub fn hermitian_deviation(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// `max |U†U − I|`.
pub fn unitarity_deviation(u: &ArrayView2<C64>) -> f64 {
    let prod = dagger(u).dot(u);
    let n = prod.nrows();
    max_abs(&(prod - identity(n)).view())
}

pub fn trace(a: &ArrayView2<C64>) -> C64 {
    a.diag().sum()
}

pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == ZERO {
            continue;
        }
        let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
        block.zip_mut_with(b, |o, &y| *o = x * y);
    }
    out
}

pub fn outer(a: &Array1<C64>, b: &Array1<C64>) -> Array2<C64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j].conj())
}

/// `⟨a|b⟩`
pub fn inner(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn to_nalgebra(a: &ArrayView2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn eigh(a: &ArrayView2<C64>) -> (Vec<f64>, Array2<C64>) {
    let m = to_nalgebra(a);
    // symmetrize before handing over, nalgebra only reads one triangle
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = a.nrows();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn eigvalsh(a: &ArrayView2<C64>) -> Vec<f64> {
    eigh(a).0
}

/// Trace distance `½‖a − b‖₁` between two Hermitian matrices.
pub fn trace_distance(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> f64 {
    let diff = a.to_owned() - b;
    0.5 * eigvalsh(&diff.view()).iter().map(|x| x.abs()).sum::<f64>()
}

fn one_norm(a: &ArrayView2<C64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// General matrix exponential by scaling and squaring of a truncated Taylor
/// series. The scaled matrix has 1-norm at most 1/2 so the series is summed
/// until the next term drops below machine precision.
pub fn expm(a: &ArrayView2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z * 0.5f64.powi(squarings));
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..40 {
        term = term.dot(&scaled).mapv(|z| z / k as f64);
        result += &term;
        if max_abs(&term.view()) < 1e-18 * max_abs(&result.view()) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// `exp(i·h)` for Hermitian `h` via its eigendecomposition; unitary to
/// working precision.
pub fn expi_hermitian(h: &ArrayView2<C64>) -> Array2<C64> {
    let (values, vectors) = eigh(h);
    let phases = Array1::from_iter(values.iter().map(|&x| C64::from_polar(1.0, x)));
    let scaled = &vectors * &phases.view().insert_axis(ndarray::Axis(0));
    scaled.dot(&dagger(&vectors.view()))
}

/// Orthonormal basis (columns) of the numerical null space of `a`,
/// using singular values below `tol` times the largest one.
pub fn null_space(a: &ArrayView2<C64>, tol: f64) -> Array2<C64> {
    let m = to_nalgebra(a);
    let cols = m.ncols();
    // pad to at least square so the full right-singular basis is available
    let padded = if m.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(&m);
        p
    } else {
        m
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= tol * largest.max(1.0))
        .collect();
    Array2::from_shape_fn((cols, keep.len()), |(r, c)| v_t[(keep[c], r)].conj())
}
