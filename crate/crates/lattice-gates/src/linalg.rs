//! Small dense linear-algebra helpers shared by the physics and
//! optimization layers: sorted Hermitian eigendecompositions, unitary
//! exponentials `exp(-iHt)`, and their directional (Fréchet) derivatives.

use crate::{C64, CMat, CVec, Error, Result};
use nalgebra::DVector;

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// `vectors` holds one orthonormal eigenvector per column, in the same order
/// as `values`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMat,
}

/// Full eigendecomposition of a Hermitian matrix with eigenvalues sorted
/// ascending. Fails if the underlying iteration does not converge.
pub fn hermitian_eigen(matrix: &CMat) -> Result<HermitianEigen> {
    let dim = matrix.nrows();
    if dim != matrix.ncols() {
        return Err(Error::invalid("hermitian_eigen: matrix must be square"));
    }
    let eig = matrix
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical("hermitian eigensolver did not converge"))?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let values = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(dim, dim);
    for (col, &src) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEigen { values, vectors })
}

/// `sin(u)/u` with the removable singularity filled in.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-6 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

/// Unitary `exp(-i·H·t)` from a precomputed eigendecomposition of `H`.
pub fn unitary_exp(eig: &HermitianEigen, t: f64) -> CMat {
    let dim = eig.values.len();
    let mut scaled = eig.vectors.clone();
    for col in 0..dim {
        let phase = C64::from_polar(1.0, -eig.values[col] * t);
        for row in 0..dim {
            scaled[(row, col)] *= phase;
        }
    }
    &scaled * eig.vectors.adjoint()
}

/// Divided-difference table for the Fréchet derivative of `exp(-i·H·t)`.
///
/// Entry `(a, b)` is `(e^{-iλ_a t} - e^{-iλ_b t})/(λ_a - λ_b)`, evaluated in
/// the numerically stable product form `-i·t·e^{-i(λ_a+λ_b)t/2}·sinc(δt/2)`
/// with `δ = λ_a - λ_b`, which is exact for both separated and coincident
/// eigenvalues.
pub fn phase_divided_differences(values: &DVector<f64>, t: f64) -> CMat {
    let dim = values.len();
    let mut table = CMat::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let mean = 0.5 * (values[a] + values[b]);
            let half_gap = 0.5 * (values[a] - values[b]);
            table[(a, b)] =
                C64::new(0.0, -t) * C64::from_polar(1.0, -mean * t) * sinc(half_gap * t);
        }
    }
    table
}

/// Directional derivative of `exp(-i·H·t)` along the Hermitian direction
/// `direction`, given the eigendecomposition of `H` and the divided-difference
/// table from [`phase_divided_differences`].
pub fn unitary_exp_derivative(eig: &HermitianEigen, table: &CMat, direction: &CMat) -> CMat {
    let in_eigenbasis = eig.vectors.adjoint() * direction * &eig.vectors;
    let weighted = in_eigenbasis.zip_map(table, |m, phi| m * phi);
    &eig.vectors * weighted * eig.vectors.adjoint()
}

/// Eigendecomposition of a real symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagonalEigen {
    pub values: DVector<f64>,
    pub vectors: nalgebra::DMatrix<f64>,
}

/// All eigenpairs of a real symmetric tridiagonal matrix by the implicit-QL
/// iteration with Wilkinson shifts. `diag` has length n, `off` length n-1.
/// Eigenvalues are returned ascending with matching eigenvector columns.
pub fn symmetric_tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<TridiagonalEigen> {
    let n = diag.len();
    assert_eq!(off.len() + 1, n.max(1), "off-diagonal length must be n-1");
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let mut z = nalgebra::DMatrix::<f64>::identity(n, n);

    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 60 {
                return Err(Error::numerical(
                    "tridiagonal QL iteration failed to converge",
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| d[i]));
    let mut vectors = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        vectors.set_column(col, &z.column(src));
    }
    Ok(TridiagonalEigen { values, vectors })
}

/// `A · B` for real `A` and complex `B`, done as two SIMD real products.
pub fn real_complex_mul(a: &nalgebra::DMatrix<f64>, b: &CMat) -> CMat {
    let (re, im) = split_complex(b);
    merge_complex(&(a * re), &(a * im))
}

/// `Aᵀ · B` for real `A` and complex `B`.
pub fn real_tr_complex_mul(a: &nalgebra::DMatrix<f64>, b: &CMat) -> CMat {
    let (re, im) = split_complex(b);
    merge_complex(&(a.transpose() * re), &(a.transpose() * im))
}

pub fn split_complex(m: &CMat) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

pub fn merge_complex(re: &nalgebra::DMatrix<f64>, im: &nalgebra::DMatrix<f64>) -> CMat {
    CMat::from_iterator(
        re.nrows(),
        re.ncols(),
        re.iter().zip(im.iter()).map(|(&r, &i)| C64::new(r, i)),
    )
}

/// Pack a complex matrix into a real slice as column-major (re, im) pairs.
pub fn pack_complex(matrix: &CMat, out: &mut [f64]) {
    debug_assert_eq!(out.len(), 2 * matrix.len());
    for (k, z) in matrix.iter().enumerate() {
        out[2 * k] = z.re;
        out[2 * k + 1] = z.im;
    }
}

/// Inverse of [`pack_complex`].
pub fn unpack_complex(data: &[f64], rows: usize, cols: usize) -> CMat {
    debug_assert_eq!(data.len(), 2 * rows * cols);
    CMat::from_iterator(
        rows,
        cols,
        data.chunks_exact(2).map(|p| C64::new(p[0], p[1])),
    )
}

/// Real inner product of two packed complex blocks: `Re⟨a|b⟩` over all
/// entries, which equals the Euclidean inner product of their packings.
pub fn packed_dot(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Maximum absolute entry of `M† M - 1`, a unitarity defect measure.
pub fn unitarity_defect(matrix: &CMat) -> f64 {
    let gram = matrix.adjoint() * matrix;
    let dim = matrix.ncols();
    let mut defect = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            defect = defect.max((gram[(i, j)] - target).norm());
        }
    }
    defect
}

/// Normalized state from a complex vector.
pub fn normalize(vector: &CVec) -> CVec {
    let norm = vector.norm();
    vector / C64::new(norm, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hermitian(dim: usize, seed: u64) -> CMat {
        // xorshift-based fill; only used to generate reproducible test data
        let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).max(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut m = CMat::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let z = C64::new(next(), if i == j { 0.0 } else { next() });
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    #[test]
    fn eigen_reconstructs_and_sorts() {
        let h = random_hermitian(12, 7);
        let eig = hermitian_eigen(&h).unwrap();
        for k in 1..12 {
            assert!(eig.values[k] >= eig.values[k - 1]);
        }
        let mut recon = CMat::zeros(12, 12);
        for k in 0..12 {
            let v = eig.vectors.column(k);
            recon += (v * v.adjoint()).map(|z| z * eig.values[k]);
        }
        assert!((recon - h).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn exp_is_unitary_and_matches_series_for_small_t() {
        let h = random_hermitian(8, 3);
        let eig = hermitian_eigen(&h).unwrap();
        let t = 1e-5;
        let u = unitary_exp(&eig, t);
        assert!(unitarity_defect(&u) < 1e-12);
        // exp(-iHt) ≈ 1 - iHt - H²t²/2 for small t
        let series = CMat::identity(8, 8) - h.map(|z| z * C64::new(0.0, t))
            - (&h * &h).map(|z| z * C64::new(t * t / 2.0, 0.0));
        let err = (&u - series).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13, "series mismatch {err:e}");
    }

    #[test]
    fn frechet_derivative_matches_finite_difference() {
        let h = random_hermitian(9, 11);
        let dir = random_hermitian(9, 13);
        let t = 0.37;
        let eig = hermitian_eigen(&h).unwrap();
        let table = phase_divided_differences(&eig.values, t);
        let analytic = unitary_exp_derivative(&eig, &table, &dir);

        let step = 1e-6;
        let plus = unitary_exp(&hermitian_eigen(&(&h + &dir * C64::new(step, 0.0))).unwrap(), t);
        let minus = unitary_exp(&hermitian_eigen(&(&h - &dir * C64::new(step, 0.0))).unwrap(), t);
        let fd = (plus - minus) / C64::new(2.0 * step, 0.0);
        let err = (&analytic - fd).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "frechet mismatch {err:e}");
    }

    #[test]
    fn frechet_derivative_handles_degenerate_pairs() {
        // diag(1, 1) has a fully degenerate spectrum; the divided-difference
        // table must fall back to the -i·t·e^{-iλt} limit without blowup
        let h = CMat::identity(2, 2);
        let eig = hermitian_eigen(&h).unwrap();
        let table = phase_divided_differences(&eig.values, 2.0);
        let expected = C64::new(0.0, -2.0) * C64::from_polar(1.0, -2.0);
        assert!((table[(0, 1)] - expected).norm() < 1e-15);
    }

    #[test]
    fn pack_round_trip() {
        let m = random_hermitian(5, 21);
        let mut buf = vec![0.0; 50];
        pack_complex(&m, &mut buf);
        let back = unpack_complex(&buf, 5, 5);
        assert_eq!(m, back);
    }

    #[test]
    fn tridiagonal_eigen_matches_dense_solver() {
        for seed in 0..5u64 {
            let n = 21;
            let mut state = seed.wrapping_mul(0x2545_f491_4f6c_dd1d).max(3);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
            };
            let diag: Vec<f64> = (0..n).map(|_| 10.0 * next()).collect();
            let off: Vec<f64> = (0..n - 1).map(|_| next()).collect();
            let eig = symmetric_tridiagonal_eigen(&diag, &off).unwrap();

            let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                dense[(i, i)] = diag[i];
            }
            for i in 0..n - 1 {
                dense[(i + 1, i)] = off[i];
                dense[(i, i + 1)] = off[i];
            }
            let mut reference = dense.clone().symmetric_eigen().eigenvalues.as_slice().to_vec();
            reference.sort_by(f64::total_cmp);
            for (a, b) in eig.values.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
            // eigenvector quality: T v = λ v
            for k in 0..n {
                let v = eig.vectors.column(k);
                let tv = &dense * v;
                let err = (tv - v * eig.values[k]).norm();
                assert!(err < 1e-10, "residual {err:e} for pair {k}");
            }
            // orthonormality
            let gram = eig.vectors.transpose() * &eig.vectors;
            let defect = (gram - nalgebra::DMatrix::<f64>::identity(n, n))
                .iter()
                .map(|x| x.abs())
                .fold(0.0, f64::max);
            assert!(defect < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_eigen_handles_degenerate_and_tiny_cases() {
        let eig = symmetric_tridiagonal_eigen(&[3.0], &[]).unwrap();
        assert_eq!(eig.values[0], 3.0);
        // exactly decoupled doublet
        let eig = symmetric_tridiagonal_eigen(&[4.0, 4.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(eig.values.as_slice(), &[0.0, 4.0, 4.0]);
    }

    #[test]
    fn real_complex_products_match_generic_path() {
        let a = nalgebra::DMatrix::<f64>::from_fn(7, 7, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let b = random_hermitian(7, 9);
        let ac = a.map(|x| C64::new(x, 0.0));
        let err = (real_complex_mul(&a, &b) - &ac * &b)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);
        let err = (real_tr_complex_mul(&a, &b) - ac.transpose() * &b)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);
    }
}
