//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dtwgi::TimeSeries;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Every admissible path of a `tx x ty` grid, built by forward recursion.
pub fn enumerate_paths(tx: usize, ty: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(cur: Vec<(usize, usize)>, tx: usize, ty: usize, out: &mut Vec<Vec<(usize, usize)>>) {
        let &(i, j) = cur.last().unwrap();
        if i == tx - 1 && j == ty - 1 {
            out.push(cur);
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < tx && nj < ty {
                let mut next = cur.clone();
                next.push((ni, nj));
                walk(next, tx, ty, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(vec![(0, 0)], tx, ty, &mut out);
    out
}

/// Path cost summed from the first pair onwards.
pub fn path_sum(c: &DMatrix<f64>, path: &[(usize, usize)]) -> f64 {
    path.iter().fold(0.0, |acc, &(i, j)| acc + c[(i, j)])
}

pub fn brute_dtw(c: &DMatrix<f64>) -> f64 {
    enumerate_paths(c.nrows(), c.ncols())
        .iter()
        .map(|p| path_sum(c, p))
        .fold(f64::INFINITY, f64::min)
}

/// `-gamma log sum_paths exp(-cost / gamma)` over enumerated paths.
pub fn brute_soft_dtw(c: &DMatrix<f64>, gamma: f64) -> f64 {
    let costs: Vec<f64> = enumerate_paths(c.nrows(), c.ncols())
        .iter()
        .map(|p| path_sum(c, p))
        .collect();
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = costs.iter().map(|v| (-(v - lo) / gamma).exp()).sum();
    lo - gamma * s.ln()
}

/// Squared-Euclidean cost matrix by a direct double loop.
pub fn brute_costs(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        (0..x.ncols())
            .map(|k| (x[(i, k)] - y[(j, k)]).powi(2))
            .sum()
    })
}

/// softDTW between `x` and `y P^T + b` for an arbitrary (not necessarily orthonormal) `P`.
pub fn soft_gi_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    p: &DMatrix<f64>,
    b: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let mut fy = y * p.transpose();
    for mut row in fy.row_iter_mut() {
        row += b.transpose();
    }
    soft_dtw_dp(&brute_costs(x, &fy), gamma)
}

/// Plain soft-min recursion written out with an explicit log-sum-exp.
pub fn soft_dtw_dp(c: &DMatrix<f64>, gamma: f64) -> f64 {
    let (n, m) = c.shape();
    let mut r = DMatrix::from_element(n + 1, m + 1, f64::INFINITY);
    r[(0, 0)] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let a = [r[(i - 1, j - 1)], r[(i - 1, j)], r[(i, j - 1)]];
            let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = a.iter().map(|v| (-(v - lo) / gamma).exp()).sum();
            r[(i, j)] = c[(i - 1, j - 1)] + lo - gamma * s.ln();
        }
    }
    r[(n, m)]
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_series<R: Rng>(rng: &mut R, len: usize, dims: usize) -> TimeSeries {
    TimeSeries::new(gaussian(rng, len, dims)).unwrap()
}

/// Random matrix with orthonormal columns (QR of a Gaussian matrix, sign-fixed).
pub fn random_stiefel<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, rows, cols).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..cols {
        if r[(k, k)] < 0.0 {
            let col = -q.column(k);
            q.set_column(k, &col);
        }
    }
    q
}

/// `||a - b|| / max(||b||, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}
