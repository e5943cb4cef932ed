//! Hard and smooth dynamic time warping on precomputed cost matrices.
//!
//! Both kernels run the classic recurrence over an `(n+1) x (m+1)` accumulator
//! with an infinite border. The smooth variant replaces the three-way `min` by
//! `min_gamma(a, b, c) = -gamma * log(exp(-a/gamma) + exp(-b/gamma) + exp(-c/gamma))`
//! evaluated with a max shift, and its backward pass yields the expected
//! alignment matrix, which is also the gradient of the value w.r.t. the costs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Squared Euclidean distances between every pair of observations, `T_x x T_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
}

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::EmptySeries);
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if entries.iter().any(|&c| c < 0.0) {
            return Err(Error::invalid("cost matrix", "entries must be nonnegative"));
        }
        Ok(Self { entries })
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "cost matrix",
                format!("expected {} entries, got {}", rows * cols, data.len()),
            ));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        Self {
            entries: self.entries.transpose(),
        }
    }
}

/// `C[i][j] = ||x_i - y_j||^2`.
pub fn cost_matrix(x: &TimeSeries, y: &TimeSeries) -> Result<CostMatrix> {
    if x.dims() != y.dims() {
        return Err(Error::Dimensions {
            x: x.dims(),
            y: y.dims(),
            requirement: "cost matrix needs equal dimensionalities",
        });
    }
    // One observation per column so the inner loop is contiguous.
    let xt = x.values().transpose();
    let yt = y.values().transpose();
    let entries = DMatrix::from_fn(x.len(), y.len(), |i, j| {
        xt.column(i)
            .iter()
            .zip(yt.column(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    });
    Ok(CostMatrix { entries })
}

/// An admissible warping path: `(0, 0)` to `(T_x - 1, T_y - 1)` through unit steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Validates admissibility against a `rows x cols` grid.
    pub fn new(pairs: Vec<(usize, usize)>, rows: usize, cols: usize) -> Result<Self> {
        let path = Self { pairs };
        if !path.is_admissible(rows, cols) {
            return Err(Error::invalid(
                "alignment path",
                format!("not admissible for a {rows}x{cols} grid"),
            ));
        }
        Ok(path)
    }

    /// The one-to-one path `(t, t)` for `t < len`.
    pub fn diagonal(len: usize) -> Self {
        Self {
            pairs: (0..len).map(|t| (t, t)).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Endpoint, monotonicity and connectivity conditions.
    pub fn is_admissible(&self, rows: usize, cols: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.pairs.first(), self.pairs.last()) else {
            return false;
        };
        if rows == 0 || cols == 0 || first != (0, 0) || last != (rows - 1, cols - 1) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            matches!(
                (b.0.wrapping_sub(a.0), b.1.wrapping_sub(a.1)),
                (0, 1) | (1, 0) | (1, 1)
            )
        })
    }

    /// The binary matrix `W` with ones on path cells.
    pub fn weight_matrix(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(rows, cols);
        for &(i, j) in &self.pairs {
            w[(i, j)] = 1.0;
        }
        w
    }

    /// `<W, C>`: the summed cost along the path.
    pub fn cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| costs.get(i, j)).sum()
    }

    /// Number of path cells in each row (`W` row sums).
    pub fn row_counts(&self, rows: usize) -> Vec<usize> {
        let mut counts = vec![0; rows];
        for &(i, _) in &self.pairs {
            counts[i] += 1;
        }
        counts
    }

    /// Number of path cells in each column (`W` column sums).
    pub fn col_counts(&self, cols: usize) -> Vec<usize> {
        let mut counts = vec![0; cols];
        for &(_, j) in &self.pairs {
            counts[j] += 1;
        }
        counts
    }
}

/// Result of a hard DTW alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub cost: f64,
    pub path: AlignmentPath,
}

/// Exact DTW by dynamic programming with backtracking.
///
/// Ties during backtracking prefer the diagonal predecessor, then `(i-1, j)`, then `(i, j-1)`.
pub fn dtw(costs: &CostMatrix) -> Alignment {
    let (n, m) = (costs.nrows(), costs.ncols());
    let w = m + 1;
    let mut acc = vec![f64::INFINITY; (n + 1) * w];
    acc[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = acc[(i - 1) * w + j - 1]
                .min(acc[(i - 1) * w + j])
                .min(acc[i * w + j - 1]);
            acc[i * w + j] = costs.get(i - 1, j - 1) + best;
        }
    }

    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    loop {
        pairs.push((i - 1, j - 1));
        if i == 1 && j == 1 {
            break;
        }
        let diag = acc[(i - 1) * w + j - 1];
        let up = acc[(i - 1) * w + j];
        let left = acc[i * w + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    Alignment {
        cost: acc[n * w + m],
        path: AlignmentPath { pairs },
    }
}

/// Convenience: `dtw(cost_matrix(x, y))`.
pub fn dtw_series(x: &TimeSeries, y: &TimeSeries) -> Result<Alignment> {
    Ok(dtw(&cost_matrix(x, y)?))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

#[inline]
fn softmin3(gamma: f64, a: f64, b: f64, c: f64) -> f64 {
    let m = a.min(b).min(c);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

/// Forward accumulator of soft-DTW, `(n+2) x (m+2)` row-major so the backward pass can reuse it.
fn soft_forward(costs: &CostMatrix, gamma: f64) -> Vec<f64> {
    let (n, m) = (costs.nrows(), costs.ncols());
    let w = m + 2;
    let mut acc = vec![f64::INFINITY; (n + 2) * w];
    acc[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let soft = softmin3(
                gamma,
                acc[(i - 1) * w + j - 1],
                acc[(i - 1) * w + j],
                acc[i * w + j - 1],
            );
            acc[i * w + j] = costs.get(i - 1, j - 1) + soft;
        }
    }
    acc
}

/// Soft-DTW value with smoothing `gamma > 0`.
pub fn soft_dtw(costs: &CostMatrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let acc = soft_forward(costs, gamma);
    Ok(acc[costs.nrows() * (costs.ncols() + 2) + costs.ncols()])
}

/// Soft-DTW value and its gradient w.r.t. every cost entry.
///
/// The gradient is the expected alignment matrix under the Gibbs distribution over
/// paths, so every entry is in `[0, 1]`.
pub fn soft_dtw_value_and_grad(costs: &CostMatrix, gamma: f64) -> Result<(f64, DMatrix<f64>)> {
    check_gamma(gamma)?;
    let (n, m) = (costs.nrows(), costs.ncols());
    let w = m + 2;
    let mut acc = soft_forward(costs, gamma);
    let value = acc[n * w + m];

    for i in 1..=n {
        acc[i * w + m + 1] = f64::NEG_INFINITY;
    }
    for j in 1..=m {
        acc[(n + 1) * w + j] = f64::NEG_INFINITY;
    }
    acc[(n + 1) * w + m + 1] = value;

    // Costs padded with a zero border on the far side.
    let cost_at = |i: usize, j: usize| -> f64 {
        if i > n || j > m {
            0.0
        } else {
            costs.get(i - 1, j - 1)
        }
    };

    let mut occ = vec![0.0; (n + 2) * w];
    occ[(n + 1) * w + m + 1] = 1.0;
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let here = acc[i * w + j];
            let down = ((acc[(i + 1) * w + j] - here - cost_at(i + 1, j)) / gamma).exp();
            let right = ((acc[i * w + j + 1] - here - cost_at(i, j + 1)) / gamma).exp();
            let diag = ((acc[(i + 1) * w + j + 1] - here - cost_at(i + 1, j + 1)) / gamma).exp();
            occ[i * w + j] = occ[(i + 1) * w + j] * down
                + occ[i * w + j + 1] * right
                + occ[(i + 1) * w + j + 1] * diag;
        }
    }
    let grad = DMatrix::from_fn(n, m, |i, j| occ[(i + 1) * w + j + 1]);
    Ok((value, grad))
}

/// Gradient of [`soft_dtw`] w.r.t. the cost matrix.
pub fn soft_dtw_grad(costs: &CostMatrix, gamma: f64) -> Result<DMatrix<f64>> {
    soft_dtw_value_and_grad(costs, gamma).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enumerate_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
        fn walk(
            i: usize,
            j: usize,
            n: usize,
            m: usize,
            cur: &mut Vec<(usize, usize)>,
            out: &mut Vec<Vec<(usize, usize)>>,
        ) {
            cur.push((i, j));
            if i == n - 1 && j == m - 1 {
                out.push(cur.clone());
            } else {
                for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                    if i + di < n && j + dj < m {
                        walk(i + di, j + dj, n, m, cur, out);
                    }
                }
            }
            cur.pop();
        }
        let mut out = Vec::new();
        walk(0, 0, n, m, &mut Vec::new(), &mut out);
        out
    }

    fn random_costs(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrix {
        let data: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..3.0)).collect();
        CostMatrix::from_row_slice(n, m, &data).unwrap()
    }

    #[test]
    fn cost_matrix_examples() {
        let x = TimeSeries::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(cost_matrix(&x, &x).unwrap().as_matrix()[(0, 0)], 0.0);

        let x = TimeSeries::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = TimeSeries::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let c = cost_matrix(&x, &y).unwrap();
        assert_eq!(c.as_matrix(), &DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
    }

    #[test]
    fn cost_matrix_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let c = cost_matrix(
            &TimeSeries::from_rows(&x).unwrap(),
            &TimeSeries::from_rows(&y).unwrap(),
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut expected = 0.0;
                for k in 0..3 {
                    expected += (x[i][k] - y[j][k]).powi(2);
                }
                assert!((c.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cost_matrix_dimension_error_names_both() {
        let x = TimeSeries::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let y = TimeSeries::from_rows(&[vec![0.0, 1.0, 2.0]]).unwrap();
        let msg = cost_matrix(&x, &y).unwrap_err().to_string();
        assert!(msg.contains("p_x = 2") && msg.contains("p_y = 3"), "{msg}");
    }

    #[test]
    fn dtw_single_cell() {
        let c = CostMatrix::from_row_slice(1, 1, &[0.0]).unwrap();
        let a = dtw(&c);
        assert_eq!(a.cost, 0.0);
        assert_eq!(a.path.pairs(), &[(0, 0)]);
    }

    #[test]
    fn self_alignment_is_free_and_diagonal() {
        let x = TimeSeries::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let a = dtw_series(&x, &x).unwrap();
        assert_eq!(a.cost, 0.0);
        assert_eq!(a.path, AlignmentPath::diagonal(3));
    }

    #[test]
    fn three_by_three_has_thirteen_paths() {
        assert_eq!(enumerate_paths(3, 3).len(), 13);
    }

    #[test]
    fn dtw_matches_enumeration_on_small_integer_grids() {
        let paths = enumerate_paths(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let data: Vec<f64> = (0..9).map(|_| rng.random_range(0..3) as f64).collect();
            let c = CostMatrix::from_row_slice(3, 3, &data).unwrap();
            let brute = paths
                .iter()
                .map(|p| p.iter().map(|&(i, j)| c.get(i, j)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let a = dtw(&c);
            assert_eq!(a.cost, brute);
            assert_eq!(a.path.cost(&c), a.cost);
        }
    }

    #[test]
    fn backtracking_prefers_diagonal_then_vertical() {
        // All-zero costs: every path is optimal, the diagonal must win.
        let c = CostMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(dtw(&c).path, AlignmentPath::diagonal(3));
        // 3x2 zero grid: from (2,1) diagonal goes to (1,0), then vertical to (0,0).
        let c = CostMatrix::new(DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(dtw(&c).path.pairs(), &[(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn soft_dtw_single_cell_and_bad_gamma() {
        let c = CostMatrix::from_row_slice(1, 1, &[2.5]).unwrap();
        for gamma in [0.01, 1.0, 100.0] {
            assert_eq!(soft_dtw(&c, gamma).unwrap(), 2.5);
        }
        assert!(matches!(soft_dtw(&c, 0.0), Err(Error::InvalidGamma(_))));
        assert!(matches!(
            soft_dtw_grad(&c, -1.0),
            Err(Error::InvalidGamma(_))
        ));
        assert_eq!(soft_dtw_grad(&c, 1.0).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn soft_dtw_matches_path_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, m) in [(2, 3), (3, 3), (4, 4), (4, 2)] {
            let c = random_costs(&mut rng, n, m);
            let gamma = 1.0;
            let path_costs: Vec<f64> = enumerate_paths(n, m)
                .iter()
                .map(|p| p.iter().map(|&(i, j)| c.get(i, j)).sum())
                .collect();
            let lo = path_costs.iter().cloned().fold(f64::INFINITY, f64::min);
            let sum: f64 = path_costs.iter().map(|v| (-(v - lo) / gamma).exp()).sum();
            let expected = lo - gamma * sum.ln();
            let got = soft_dtw(&c, gamma).unwrap();
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn soft_dtw_approaches_dtw_from_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let c = random_costs(&mut rng, 4, 4);
            let hard = dtw(&c).cost;
            let soft = soft_dtw(&c, 1e-3).unwrap();
            assert!(soft <= hard);
            assert!(hard - soft <= 1e-2);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = random_costs(&mut rng, 5, 6);
        let grad = soft_dtw_grad(&c, 1.0).unwrap();
        let h = 1e-5;
        for i in 0..5 {
            for j in 0..6 {
                let mut plus = c.as_matrix().clone();
                let mut minus = c.as_matrix().clone();
                plus[(i, j)] += h;
                minus[(i, j)] -= h;
                let fd = (soft_dtw(&CostMatrix::new(plus).unwrap(), 1.0).unwrap()
                    - soft_dtw(&CostMatrix::new(minus).unwrap(), 1.0).unwrap())
                    / (2.0 * h);
                let err = (grad[(i, j)] - fd).abs() / fd.abs().max(1e-3);
                assert!(err <= 1e-4, "({i},{j}): {} vs {fd}", grad[(i, j)]);
            }
        }
    }

    #[test]
    fn gradient_concentrates_on_unique_optimal_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_costs(&mut rng, 5, 6);
        let hard = dtw(&c);
        let grad = soft_dtw_grad(&c, 1e-3).unwrap();
        for &(i, j) in hard.path.pairs() {
            assert!(grad[(i, j)] > 0.99, "({i},{j}) = {}", grad[(i, j)]);
        }
    }

    proptest! {
        #[test]
        fn dtw_paths_are_admissible_and_transpose_symmetric(
            n in 1usize..7, m in 1usize..7, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_costs(&mut rng, n, m);
            let a = dtw(&c);
            prop_assert!(a.path.is_admissible(n, m));
            prop_assert_eq!(dtw(&c.transpose()).cost, a.cost);
        }

        #[test]
        fn soft_dtw_bounded_by_dtw_and_grad_in_unit_interval(
            n in 1usize..6, m in 1usize..6, gamma in 0.01f64..10.0, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_costs(&mut rng, n, m);
            let (v, g) = soft_dtw_value_and_grad(&c, gamma).unwrap();
            prop_assert!(v <= dtw(&c).cost + 1e-12);
            for e in g.iter() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(e));
            }
        }
    }
}
