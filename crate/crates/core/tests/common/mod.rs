#![allow(dead_code)]

use qdecay::model::{Potential, RadialGrid};

/// Eigenvalues of the tridiagonal finite-difference Hamiltonian below
/// `e`, counted by Sturm sequence.
pub fn sturm_count(diag: &[f64], off: f64, e: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for (i, d) in diag.iter().enumerate() {
        q = d - e - if i == 0 { 0.0 } else { off * off / q };
        if q == 0.0 {
            q = 1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

pub fn fd_hamiltonian(p: &Potential, r_max: f64, h: f64) -> Vec<f64> {
    let n = (r_max / h).round() as usize;
    let grid = RadialGrid::new(r_max, n + 1).unwrap();
    let mut diag: Vec<f64> = (1..n).map(|i| 2.0 / (h * h) + p.value(grid.r(i))).collect();
    for s in p.shells() {
        diag[grid.nearest_index(s.radius) - 1] += s.strength / h;
    }
    diag
}

pub fn lowest_fd_eigenvalue(p: &Potential, r_max: f64, h: f64) -> f64 {
    let diag = fd_hamiltonian(p, r_max, h);
    let off = -1.0 / (h * h);
    let (mut lo, mut hi) = (-1e4, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(&diag, off, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
