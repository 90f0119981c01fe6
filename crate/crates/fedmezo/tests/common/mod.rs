//! Shared test oracles, independent of the library's implementation paths.

#![allow(dead_code)]

use fedmezo::data::Batch;
use fedmezo::linalg::DenseMatrix;
use fedmezo::objective::ObjectiveHandle;
use fedmezo::params::ParamsView;

/// Full eigendecomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order of magnitude. Oracle
/// for power-iteration and effective-rank checks; O(d^3) per sweep, meant for
/// d <= 16.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    assert!(m.is_symmetric(), "jacobi oracle needs a symmetric matrix");
    let n = m.rows();
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let idx = |r: usize, c: usize| r * n + c;

    for _sweep in 0..200 {
        let mut off_diag: f64 = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off_diag += a[idx(r, c)].abs();
            }
        }
        if off_diag < 1e-300 || off_diag < 1e-15 * frobenius(&a) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
    eigs.sort_by(|x, y| y.abs().partial_cmp(&x.abs()).unwrap());
    eigs
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central finite-difference gradient of the loss, the analytic-gradient
/// oracle's own oracle.
pub fn fd_gradient(obj: &ObjectiveHandle, params: &ParamsView, batch: &Batch, h: f64) -> Vec<f64> {
    let mut probe = params.snapshot();
    let d = params.len();
    let mut grad = vec![0.0; d];
    for j in 0..d {
        let original = probe.as_slice()[j];
        probe.as_mut_slice()[j] = original + h;
        let plus = obj.eval_loss(&probe, batch).unwrap();
        probe.as_mut_slice()[j] = original - h;
        let minus = obj.eval_loss(&probe, batch).unwrap();
        probe.as_mut_slice()[j] = original;
        grad[j] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error between vectors, scale-protected at 1.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Deterministic random symmetric PSD matrix `G G' / d + ridge I`.
pub fn random_psd(d: usize, seed: u64, ridge: f64) -> DenseMatrix {
    let mut stream = fedmezo::rng::SeedStream::from_seed(seed);
    let mut g = vec![0.0; d * d];
    stream.fill_gaussian(&mut g);
    let gm = DenseMatrix::new(d, d, g).unwrap();
    let mut psd = gm.matmul(&gm.transpose()).unwrap();
    psd.scale(1.0 / d as f64);
    for i in 0..d {
        *psd.get_mut(i, i) += ridge;
    }
    psd
}

/// Deterministic random symmetric (not necessarily definite) matrix.
pub fn random_symmetric(d: usize, seed: u64) -> DenseMatrix {
    let mut stream = fedmezo::rng::SeedStream::from_seed(seed);
    let mut m = DenseMatrix::zeros(d, d).unwrap();
    for r in 0..d {
        for c in r..d {
            let (v, _) = stream.gaussian_pair();
            *m.get_mut(r, c) = v;
            *m.get_mut(c, r) = v;
        }
    }
    m
}

/// Least-squares slope of `ys` on `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    sxy / sxx
}
