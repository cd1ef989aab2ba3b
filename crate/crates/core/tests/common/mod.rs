#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(&mut r))
}

/// Correlated data: a rank-`k` signal plus small isotropic noise, shifted off zero.
pub fn low_rank_data(d: usize, n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let basis = gaussian_matrix(d, k, seed);
    let codes = gaussian_matrix(k, n, seed.wrapping_add(1));
    let noise = gaussian_matrix(d, n, seed.wrapping_add(2)) * 0.1;
    let mut x = basis * codes + noise;
    x.add_scalar_mut(0.5);
    x
}

/// Two interleaved half circles in the plane, `n / 2` per class (labels 0, 1).
pub fn moons(n: usize, noise: f64, seed: u64) -> (DMatrix<f64>, Vec<i64>) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    let mut x = DMatrix::zeros(2, n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t: f64 = r.random::<f64>() * std::f64::consts::PI;
        let (a, b, label) = if i % 2 == 0 { (t.cos(), t.sin(), 0) } else { (1.0 - t.cos(), 0.5 - t.sin(), 1) };
        x[(0, i)] = a + normal.sample(&mut r);
        x[(1, i)] = b + normal.sample(&mut r);
        y.push(label);
    }
    (x, y)
}

/// Well separated Gaussian blobs, round-robin labels `0..k`.
pub fn blobs(n: usize, k: usize, spread: f64, seed: u64) -> (DMatrix<f64>, Vec<i64>) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let x = DMatrix::from_fn(2, n, |row, c| {
        let angle = 2.0 * std::f64::consts::PI * (c % k) as f64 / k as f64;
        let center = if row == 0 { 4.0 * angle.cos() } else { 4.0 * angle.sin() };
        center + normal.sample(&mut r)
    });
    (x, (0..n).map(|c| (c % k) as i64).collect())
}

/// Dense projected-gradient solver for the C-SVM dual
/// `max sum a - 0.5 a^T H a` over `0 <= a <= c`, `y^T a = 0`.
/// Returns the optimal dual value and the maximizer.
pub fn brute_force_dual(k: &DMatrix<f64>, y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let h = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]);
    let lmax = h.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let step = 1.0 / lmax;
    let mut a = vec![0.0; n];
    let objective = |a: &[f64]| {
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += a[i] * a[j] * h[(i, j)];
            }
        }
        a.iter().sum::<f64>() - 0.5 * q
    };
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| h[(i, j)] * a[j]).sum::<f64>()).collect();
        let v: Vec<f64> = (0..n).map(|i| a[i] + step * grad[i]).collect();
        let next = project(&v, y, c);
        let moved: f64 = next.iter().zip(&a).map(|(p, q)| (p - q).abs()).sum();
        a = next;
        if moved < 1e-15 {
            break;
        }
    }
    (objective(&a), a)
}

/// Euclidean projection onto `{0 <= a <= c, y^T a = 0}` by bisection on the multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c)).collect() };
    let g = |lambda: f64| -> f64 { at(lambda).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Exact expected second moments by enumerating every corruption mask.
pub fn enumerate_moments(x: &DMatrix<f64>, p: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, n) = x.shape();
    let mut q = DMatrix::zeros(d + 1, d + 1);
    let mut pm = DMatrix::zeros(d + 1, d + 1);
    for mask in 0u32..(1 << d) {
        let kept = mask.count_ones() as i32;
        let weight = p.powi(kept) * (1.0 - p).powi(d as i32 - kept);
        for i in 0..n {
            let clean: Vec<f64> = (0..=d).map(|r| if r < d { x[(r, i)] } else { 1.0 }).collect();
            let noisy: Vec<f64> = (0..=d).map(|r| if r == d || mask & (1 << r) != 0 { clean[r] } else { 0.0 }).collect();
            for a in 0..=d {
                for b in 0..=d {
                    q[(a, b)] += weight * noisy[a] * noisy[b];
                    pm[(a, b)] += weight * clean[a] * noisy[b];
                }
            }
        }
    }
    (q, pm)
}

/// Exact expected reconstruction loss `E sum_i ||x_i - W [x~_i; 1]||^2`.
pub fn expected_loss(x: &DMatrix<f64>, w: &DMatrix<f64>, p: f64) -> f64 {
    let (d, n) = x.shape();
    let mut total = 0.0;
    for mask in 0u32..(1 << d) {
        let kept = mask.count_ones() as i32;
        let weight = p.powi(kept) * (1.0 - p).powi(d as i32 - kept);
        for i in 0..n {
            for r in 0..d {
                let mut pred = w[(r, d)];
                for c in 0..d {
                    if mask & (1 << c) != 0 {
                        pred += w[(r, c)] * x[(c, i)];
                    }
                }
                total += weight * (x[(r, i)] - pred).powi(2);
            }
        }
    }
    total
}
