//! Shared test support: an independent Hermitian eigenvalue oracle and a
//! seeded waveform generator. The oracle is a classical cyclic Jacobi
//! iteration, deliberately sharing no code with the library's eigensolver.

#![allow(dead_code)]

use lattice_gates::{C64, CMat};

/// All eigenvalues of a Hermitian matrix by cyclic Jacobi rotations,
/// returned ascending. Accuracy is machine precision for the sizes used in
/// tests; convergence is quadratic once off-diagonal mass is small.
pub fn jacobi_eigenvalues(matrix: &CMat) -> Vec<f64> {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols());
    let mut a = matrix.clone();

    let off_norm = |a: &CMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..200 {
        if off_norm(&a) < 1e-14 * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                if apq.norm() <= 1e-150_f64.max(1e-20 * (app.abs() + aqq.abs())) {
                    continue;
                }
                // unitary 2x2 rotation annihilating a[(p,q)]:
                // first strip the phase of a_pq, then a real Jacobi rotation
                let phase = C64::from_polar(1.0, apq.arg());
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // columns: [p q] -> [c·p - s·phase*·q, s·phase·p + c·q]
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c - akq * phase.conj() * s;
                    a[(k, q)] = akp * phase * s + akq * c;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c - aqk * phase * s;
                    a[(q, k)] = apk * phase.conj() * s + aqk * c;
                }
            }
        }
    }

    let mut values: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Band-limited random waveform with pinned zero endpoints: a low-order sine
/// series with coefficients drawn from a splitmix-style generator.
pub fn random_band_limited_waveform(
    steps: usize,
    dt: f64,
    amplitude: f64,
    seed: u64,
) -> lattice_gates::propagator::Waveform {
    let mut state = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut next = move || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let coeffs: Vec<f64> = (0..5).map(|_| amplitude * next()).collect();
    let phases: Vec<f64> = (0..=steps)
        .map(|l| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    a * (std::f64::consts::PI * (k + 1) as f64 * l as f64 / steps as f64).sin()
                })
                .sum()
        })
        .collect();
    lattice_gates::propagator::Waveform::new(dt, phases).unwrap()
}
