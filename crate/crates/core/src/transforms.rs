//! Feature-space transform families and their registration solvers.
//!
//! Every family maps the features of `y` (dimension `p_y`) into the space of `x`
//! (dimension `p_x >= p_y`). Linear parts are `p_x x p_y` matrices with orthonormal
//! columns and act on a column observation as `f(y_j) = P y_j (+ b)`.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::align::AlignmentPath;
use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Tolerance on `||P^T P - I||_F` accepted when constructing a [`StiefelLinear`].
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

fn orthonormality_defect(p: &DMatrix<f64>) -> f64 {
    (p.transpose() * p - DMatrix::identity(p.ncols(), p.ncols())).norm()
}

/// Linear map with orthonormal columns: a point of the Stiefel manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelLinear {
    matrix: DMatrix<f64>,
}

impl StiefelLinear {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() < matrix.ncols() || matrix.ncols() == 0 {
            return Err(Error::Dimensions {
                x: matrix.nrows(),
                y: matrix.ncols(),
                requirement: "a Stiefel map needs p_x >= p_y >= 1",
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Stiefel matrix"));
        }
        let defect = orthonormality_defect(&matrix);
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::invalid(
                "Stiefel matrix",
                format!("columns are not orthonormal (||P^T P - I|| = {defect:e})"),
            ));
        }
        Ok(Self { matrix })
    }

    /// The first `p_y` columns of the `p_x x p_x` identity.
    pub fn identity_embedding(p_x: usize, p_y: usize) -> Result<Self> {
        Self::new(DMatrix::identity(p_x, p_y))
    }

    /// A random point obtained from the QR factorization of a Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(p_x: usize, p_y: usize, rng: &mut R) -> Result<Self> {
        if p_x < p_y || p_y == 0 {
            return Err(Error::Dimensions {
                x: p_x,
                y: p_y,
                requirement: "a Stiefel map needs p_x >= p_y >= 1",
            });
        }
        let g = DMatrix::from_fn(p_x, p_y, |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(Self {
            matrix: qr_retract(g),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `p_x`.
    pub fn output_dims(&self) -> usize {
        self.matrix.nrows()
    }

    /// `p_y`.
    pub fn input_dims(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply_point(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// `v -> P v + b` with `P` on the Stiefel manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStiefel {
    pub linear: StiefelLinear,
    pub offset: DVector<f64>,
}

impl AffineStiefel {
    pub fn new(linear: StiefelLinear, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != linear.output_dims() {
            return Err(Error::Dimensions {
                x: linear.output_dims(),
                y: offset.len(),
                requirement: "offset length must equal the output dimensionality",
            });
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine offset"));
        }
        Ok(Self { linear, offset })
    }

    pub fn from_linear(linear: StiefelLinear) -> Self {
        let offset = DVector::zeros(linear.output_dims());
        Self { linear, offset }
    }

    pub fn identity_embedding(p_x: usize, p_y: usize) -> Result<Self> {
        StiefelLinear::identity_embedding(p_x, p_y).map(Self::from_linear)
    }

    pub fn apply_point(&self, v: &DVector<f64>) -> DVector<f64> {
        self.linear.apply_point(v) + &self.offset
    }
}

/// Circular shift of the feature coordinates: coordinate `c` moves to `(c + shift) mod dims`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChromaTransposition {
    shift: usize,
    dims: usize,
}

impl ChromaTransposition {
    pub fn new(shift: usize, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::EmptySeries);
        }
        Ok(Self {
            shift: shift % dims,
            dims,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn apply_point(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims);
        for c in 0..self.dims {
            out[(c + self.shift) % self.dims] = v[c];
        }
        out
    }
}

/// Any member of the supported transform families.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Stiefel(StiefelLinear),
    AffineStiefel(AffineStiefel),
    Transposition(ChromaTransposition),
}

impl Transform {
    pub fn input_dims(&self) -> usize {
        match self {
            Transform::Stiefel(f) => f.input_dims(),
            Transform::AffineStiefel(f) => f.linear.input_dims(),
            Transform::Transposition(f) => f.dims(),
        }
    }

    pub fn output_dims(&self) -> usize {
        match self {
            Transform::Stiefel(f) => f.output_dims(),
            Transform::AffineStiefel(f) => f.linear.output_dims(),
            Transform::Transposition(f) => f.dims(),
        }
    }

    /// The linear part as a dense matrix (a permutation matrix for transpositions).
    pub fn linear_matrix(&self) -> DMatrix<f64> {
        match self {
            Transform::Stiefel(f) => f.matrix().clone(),
            Transform::AffineStiefel(f) => f.linear.matrix().clone(),
            Transform::Transposition(f) => {
                let mut m = DMatrix::zeros(f.dims, f.dims);
                for c in 0..f.dims {
                    m[((c + f.shift) % f.dims, c)] = 1.0;
                }
                m
            }
        }
    }

    /// The translation part (zero for linear families).
    pub fn offset(&self) -> DVector<f64> {
        match self {
            Transform::AffineStiefel(f) => f.offset.clone(),
            _ => DVector::zeros(self.output_dims()),
        }
    }

    pub fn apply_point(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Transform::Stiefel(f) => f.apply_point(v),
            Transform::AffineStiefel(f) => f.apply_point(v),
            Transform::Transposition(f) => f.apply_point(v),
        }
    }

    /// Applies the map to every observation of `y`.
    pub fn apply(&self, y: &TimeSeries) -> Result<TimeSeries> {
        if y.dims() != self.input_dims() {
            return Err(Error::Dimensions {
                x: self.input_dims(),
                y: y.dims(),
                requirement: "series dimensionality must match the transform input",
            });
        }
        let values = match self {
            Transform::Transposition(f) => {
                let v = y.values();
                DMatrix::from_fn(y.len(), f.dims, |t, c| {
                    v[(t, (c + f.dims - f.shift) % f.dims)]
                })
            }
            _ => {
                let mut out = y.values() * self.linear_matrix().transpose();
                let b = self.offset();
                for mut row in out.row_iter_mut() {
                    row += b.transpose();
                }
                out
            }
        };
        TimeSeries::new(values)
    }
}

/// A registration result with a flag for degenerate (rank-deficient) problems.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T> {
    pub transform: T,
    pub rank_deficient: bool,
}

/// Orthonormalizes the columns of `a` by QR, flipping columns so `diag(R) > 0`.
pub fn qr_retract(a: DMatrix<f64>) -> DMatrix<f64> {
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..q.ncols() {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Maximizer of `<M, S>` over Stiefel matrices `S`: `U V^T` from the thin SVD of `M`.
pub fn stiefel_argmax(m: &DMatrix<f64>) -> Result<Registration<StiefelLinear>> {
    if m.nrows() < m.ncols() {
        return Err(Error::Dimensions {
            x: m.nrows(),
            y: m.ncols(),
            requirement: "Stiefel registration needs p_x >= p_y",
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("registration matrix"));
    }
    let svd = SVD::new(m.clone(), true, true);
    let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        unreachable!("SVD was asked for both singular bases")
    };
    let top = svd.singular_values.max();
    let bottom = svd.singular_values.min();
    let rank_deficient = bottom <= 1e-12 * top.max(f64::MIN_POSITIVE);
    let matrix = u * v_t;
    Ok(Registration {
        transform: StiefelLinear { matrix },
        rank_deficient,
    })
}

fn check_pair(x: &TimeSeries, y: &TimeSeries, path: &AlignmentPath) -> Result<()> {
    if x.dims() < y.dims() {
        return Err(Error::Dimensions {
            x: x.dims(),
            y: y.dims(),
            requirement: "Stiefel families need p_x >= p_y",
        });
    }
    if !path.is_admissible(x.len(), y.len()) {
        return Err(Error::invalid(
            "alignment path",
            format!("not admissible for lengths {} and {}", x.len(), y.len()),
        ));
    }
    Ok(())
}

/// `x^T W y` accumulated over the path cells, shape `p_x x p_y`.
fn cross_moment(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
    x_center: Option<&DVector<f64>>,
    y_center: Option<&DVector<f64>>,
) -> DMatrix<f64> {
    let (xv, yv) = (x.values(), y.values());
    let (px, py) = (x.dims(), y.dims());
    let mut m = DMatrix::zeros(px, py);
    for &(i, j) in path.pairs() {
        for a in 0..px {
            let xa = xv[(i, a)] - x_center.map_or(0.0, |c| c[a]);
            for b in 0..py {
                let yb = yv[(j, b)] - y_center.map_or(0.0, |c| c[b]);
                m[(a, b)] += xa * yb;
            }
        }
    }
    m
}

/// Best Stiefel map of `y` onto `x` for a fixed alignment.
pub fn procrustes_solve(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
) -> Result<Registration<StiefelLinear>> {
    check_pair(x, y, path)?;
    stiefel_argmax(&cross_moment(x, y, path, None, None))
}

/// Path-weighted means of `x` and `y` (each observation weighted by its number of matches).
pub fn path_means(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
) -> (DVector<f64>, DVector<f64>) {
    let mut mx = DVector::zeros(x.dims());
    let mut my = DVector::zeros(y.dims());
    for &(i, j) in path.pairs() {
        mx += x.values().row(i).transpose();
        my += y.values().row(j).transpose();
    }
    let n = path.len() as f64;
    (mx / n, my / n)
}

/// Best affine-Stiefel map of `y` onto `x` for a fixed alignment.
///
/// Centers both series by their path-weighted means, registers the centered data,
/// then sets `b = mean(x) - P mean(y)`.
pub fn affine_procrustes_solve(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
) -> Result<Registration<AffineStiefel>> {
    check_pair(x, y, path)?;
    let (mx, my) = path_means(x, y, path);
    let reg = stiefel_argmax(&cross_moment(x, y, path, Some(&mx), Some(&my)))?;
    let offset = &mx - reg.transform.apply_point(&my);
    Ok(Registration {
        transform: AffineStiefel {
            linear: reg.transform,
            offset,
        },
        rank_deficient: reg.rank_deficient,
    })
}

/// Cost of each circular shift along the path; entry `k` is `<W, C(x, shift_k(y))>`.
pub fn transposition_costs(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
) -> Result<Vec<f64>> {
    if x.dims() != y.dims() {
        return Err(Error::Dimensions {
            x: x.dims(),
            y: y.dims(),
            requirement: "transpositions need equal dimensionalities",
        });
    }
    let p = x.dims();
    let (xv, yv) = (x.values(), y.values());
    Ok((0..p)
        .map(|k| {
            path.pairs()
                .iter()
                .map(|&(i, j)| {
                    (0..p)
                        .map(|c| {
                            let d = xv[(i, (c + k) % p)] - yv[(j, c)];
                            d * d
                        })
                        .sum::<f64>()
                })
                .sum()
        })
        .collect())
}

/// Optimal circular shift of `y` along the path, smallest shift on ties.
pub fn transposition_solve(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
) -> Result<ChromaTransposition> {
    let costs = transposition_costs(x, y, path)?;
    let mut best = 0;
    for (k, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = k;
        }
    }
    ChromaTransposition::new(best, x.dims())
}

/// `<W, C(x, f(y))>` evaluated directly from the path.
pub fn path_cost(
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
    f: &Transform,
) -> Result<f64> {
    let fy = f.apply(y)?;
    if fy.dims() != x.dims() {
        return Err(Error::Dimensions {
            x: x.dims(),
            y: fy.dims(),
            requirement: "transform output must live in the space of x",
        });
    }
    let (xv, fv) = (x.values(), fy.values());
    Ok(path
        .pairs()
        .iter()
        .map(|&(i, j)| (xv.row(i) - fv.row(j)).norm_squared())
        .sum())
}

/// Tangent projection at `p`: `G - P sym(P^T G)`.
pub fn project_tangent(p: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let ptg = p.transpose() * g;
    let sym = (&ptg + ptg.transpose()) * 0.5;
    g - p * sym
}

/// One Riemannian descent step on the linear part (QR retraction) and a plain step on the offset.
pub fn riemannian_grad_step(
    f: &AffineStiefel,
    euclid_grad_p: &DMatrix<f64>,
    euclid_grad_b: &DVector<f64>,
    step: f64,
) -> Result<AffineStiefel> {
    let p = f.linear.matrix();
    if euclid_grad_p.shape() != p.shape() || euclid_grad_b.len() != f.offset.len() {
        return Err(Error::invalid(
            "gradient",
            format!(
                "shape {:?}/{} does not match transform {:?}/{}",
                euclid_grad_p.shape(),
                euclid_grad_b.len(),
                p.shape(),
                f.offset.len()
            ),
        ));
    }
    if !step.is_finite()
        || euclid_grad_p
            .iter()
            .chain(euclid_grad_b.iter())
            .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("gradient step"));
    }
    let tangent = project_tangent(p, euclid_grad_p);
    let matrix = if tangent.iter().all(|&v| v == 0.0) || step == 0.0 {
        p.clone()
    } else {
        qr_retract(p - tangent * step)
    };
    Ok(AffineStiefel {
        linear: StiefelLinear { matrix },
        offset: &f.offset - euclid_grad_b * step,
    })
}
