//! DTW-GI and softDTW-GI solvers.
//!
//! [`dtw_gi_bcd`] alternates an exact DTW alignment with the family's exact
//! registration step until the alignment stops changing. [`soft_dtw_gi_grad`]
//! runs projected gradient descent on the softDTW loss of `x` against `f(y)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::align::{cost_matrix, dtw, soft_dtw_value_and_grad, Alignment, AlignmentPath};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::series::TimeSeries;
use crate::transforms::{
    affine_procrustes_solve, procrustes_solve, riemannian_grad_step, transposition_solve,
    AffineStiefel, ChromaTransposition, StiefelLinear, Transform,
};

/// Transform family searched by the GI solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// `f(v) = P v` with orthonormal columns.
    Stiefel,
    /// `f(v) = P v + b` with orthonormal columns.
    AffineStiefel,
    /// Circular shifts of the feature coordinates.
    Transposition,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Stiefel => "stiefel",
            Family::AffineStiefel => "affine-stiefel",
            Family::Transposition => "transposition",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stiefel" => Ok(Family::Stiefel),
            "affine" | "affine-stiefel" | "affine_stiefel" => Ok(Family::AffineStiefel),
            "transposition" | "oti" => Ok(Family::Transposition),
            other => Err(Error::invalid(
                "family",
                format!("unknown family `{other}`"),
            )),
        }
    }
}

/// Shared configuration of the iterative solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Early-stopping patience of the gradient solvers, in iterations.
    pub patience: usize,
    pub step_size: f64,
    pub gamma: f64,
    /// Minimal improvement that resets the patience counter (and stops DBA-GI).
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Minibatch size for the soft barycenter; `None` uses every input.
    pub batch_size: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            patience: 100,
            step_size: 1e-2,
            gamma: 1.0,
            tolerance: 1e-9,
            restarts: 1,
            seed: 0,
            batch_size: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(
                "step_size",
                format!("{} is not positive", self.step_size),
            ));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::invalid("tolerance", "must be nonnegative"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    fn validate_gamma(&self) -> Result<()> {
        if self.gamma > 0.0 && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidGamma(self.gamma))
        }
    }
}

/// Outcome of a GI solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GiResult {
    /// `<W_path, C(x, f(y))>` for BCD, the final softDTW value for the gradient solver.
    pub cost: f64,
    pub transform: Transform,
    /// Final alignment; `None` for the gradient solver (see [`align_with`]).
    pub path: Option<AlignmentPath>,
    pub iterations: usize,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
    /// Set when a registration step hit a rank-deficient cross moment.
    pub rank_deficient: bool,
}

/// Hard DTW between `x` and `f(y)`.
pub fn align_with(x: &TimeSeries, y: &TimeSeries, f: &Transform) -> Result<Alignment> {
    let fy = f.apply(y)?;
    Ok(dtw(&cost_matrix(x, &fy)?))
}

fn check_family_dims(x: &TimeSeries, y: &TimeSeries, family: Family) -> Result<()> {
    match family {
        Family::Stiefel | Family::AffineStiefel if x.dims() < y.dims() => Err(Error::Dimensions {
            x: x.dims(),
            y: y.dims(),
            requirement: "Stiefel families need p_x >= p_y",
        }),
        Family::Transposition if x.dims() != y.dims() => Err(Error::Dimensions {
            x: x.dims(),
            y: y.dims(),
            requirement: "transpositions need equal dimensionalities",
        }),
        _ => Ok(()),
    }
}

/// Identity-like starting point of a family.
pub fn identity_transform(family: Family, p_x: usize, p_y: usize) -> Result<Transform> {
    Ok(match family {
        Family::Stiefel => Transform::Stiefel(StiefelLinear::identity_embedding(p_x, p_y)?),
        Family::AffineStiefel => {
            Transform::AffineStiefel(AffineStiefel::identity_embedding(p_x, p_y)?)
        }
        Family::Transposition => Transform::Transposition(ChromaTransposition::new(0, p_x)?),
    })
}

/// Starting point for restart `r >= 1`.
///
/// Stiefel families draw `P` from the QR of a Gaussian matrix with `b = 0`;
/// transpositions enumerate the shifts `r mod p` deterministically.
fn restart_transform(
    family: Family,
    p_x: usize,
    p_y: usize,
    seed: u64,
    r: usize,
) -> Result<Transform> {
    let mut rng = rng_for(seed, &[0xB0CD, r as u64]);
    Ok(match family {
        Family::Stiefel => Transform::Stiefel(StiefelLinear::random(p_x, p_y, &mut rng)?),
        Family::AffineStiefel => Transform::AffineStiefel(AffineStiefel::from_linear(
            StiefelLinear::random(p_x, p_y, &mut rng)?,
        )),
        Family::Transposition => Transform::Transposition(ChromaTransposition::new(r % p_x, p_x)?),
    })
}

fn register(
    family: Family,
    x: &TimeSeries,
    y: &TimeSeries,
    path: &AlignmentPath,
) -> Result<(Transform, bool)> {
    Ok(match family {
        Family::Stiefel => {
            let reg = procrustes_solve(x, y, path)?;
            (Transform::Stiefel(reg.transform), reg.rank_deficient)
        }
        Family::AffineStiefel => {
            let reg = affine_procrustes_solve(x, y, path)?;
            (Transform::AffineStiefel(reg.transform), reg.rank_deficient)
        }
        Family::Transposition => (
            Transform::Transposition(transposition_solve(x, y, path)?),
            false,
        ),
    })
}

fn bcd_single(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    init: Transform,
    max_iter: usize,
) -> Result<GiResult> {
    let mut transform = init;
    let mut trace = Vec::new();
    let mut previous: Option<AlignmentPath> = None;
    let mut rank_deficient = false;
    for iteration in 1..=max_iter {
        let alignment = align_with(x, y, &transform)?;
        trace.push(alignment.cost);
        let fixed_point = previous.as_ref() == Some(&alignment.path);
        if fixed_point || iteration == max_iter {
            return Ok(GiResult {
                cost: alignment.cost,
                transform,
                path: Some(alignment.path),
                iterations: iteration,
                converged: fixed_point,
                cost_trace: trace,
                rank_deficient,
            });
        }
        let (next, degenerate) = register(family, x, y, &alignment.path)?;
        rank_deficient |= degenerate;
        transform = next;
        previous = Some(alignment.path);
    }
    unreachable!("max_iter >= 1 is validated")
}

fn check_transform_fits(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    f: &Transform,
) -> Result<()> {
    let family_matches = matches!(
        (family, f),
        (Family::Stiefel, Transform::Stiefel(_))
            | (Family::AffineStiefel, Transform::AffineStiefel(_))
            | (Family::Transposition, Transform::Transposition(_))
    );
    if !family_matches {
        return Err(Error::invalid(
            "init",
            format!("transform is not in the {} family", family.name()),
        ));
    }
    if f.input_dims() != y.dims() || f.output_dims() != x.dims() {
        return Err(Error::Dimensions {
            x: f.output_dims(),
            y: f.input_dims(),
            requirement: "initial transform must map p_y onto p_x",
        });
    }
    Ok(())
}

/// DTW-GI by block-coordinate descent, started from the identity-like map.
///
/// With `cfg.restarts > 1` the extra runs start from random maps and the best cost wins.
pub fn dtw_gi_bcd(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    cfg: &SolverConfig,
) -> Result<GiResult> {
    check_family_dims(x, y, family)?;
    let init = identity_transform(family, x.dims(), y.dims())?;
    dtw_gi_bcd_from(x, y, family, init, cfg)
}

/// [`dtw_gi_bcd`] with an explicit first starting point (warm start).
pub fn dtw_gi_bcd_from(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    init: Transform,
    cfg: &SolverConfig,
) -> Result<GiResult> {
    cfg.validate()?;
    check_family_dims(x, y, family)?;
    check_transform_fits(x, y, family, &init)?;
    let mut best = bcd_single(x, y, family, init, cfg.max_iter)?;
    for r in 1..cfg.restarts {
        let start = restart_transform(family, x.dims(), y.dims(), cfg.seed, r)?;
        let run = bcd_single(x, y, family, start, cfg.max_iter)?;
        if run.cost < best.cost {
            best = run;
        }
    }
    Ok(best)
}

/// softDTW value of `x` against `f(y)` with gradients w.r.t. the parameters of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftGiEval {
    pub value: f64,
    /// Euclidean gradient w.r.t. `P` (`p_x x p_y`), before tangent projection.
    pub grad_linear: DMatrix<f64>,
    /// Gradient w.r.t. `b`.
    pub grad_offset: DVector<f64>,
    /// Gradient w.r.t. the observations of `y` (`T_y x p_y`).
    pub grad_input: DMatrix<f64>,
}

/// Evaluates `softDTW_gamma(x, P y + b)` and its gradients.
pub fn soft_dtw_gi_value_and_grad(
    x: &TimeSeries,
    y: &TimeSeries,
    f: &AffineStiefel,
    gamma: f64,
) -> Result<SoftGiEval> {
    let fy = Transform::AffineStiefel(f.clone()).apply(y)?;
    let costs = cost_matrix(x, &fy)?;
    let (value, occupancy) = soft_dtw_value_and_grad(&costs, gamma)?;
    // dL/dz_j = -2 sum_i E_ij (x_i - z_j) with z = f(y).
    let col_mass = occupancy.row_sum();
    let mut grad_z = occupancy.transpose() * x.values();
    for j in 0..grad_z.nrows() {
        let mass = col_mass[j];
        for k in 0..grad_z.ncols() {
            grad_z[(j, k)] = -2.0 * (grad_z[(j, k)] - mass * fy.values()[(j, k)]);
        }
    }
    let grad_linear = grad_z.transpose() * y.values();
    let grad_offset = grad_z.row_sum().transpose();
    let grad_input = &grad_z * f.linear.matrix();
    Ok(SoftGiEval {
        value,
        grad_linear,
        grad_offset,
        grad_input,
    })
}

fn as_affine(f: &Transform) -> Result<AffineStiefel> {
    match f {
        Transform::Stiefel(s) => Ok(AffineStiefel::from_linear(s.clone())),
        Transform::AffineStiefel(a) => Ok(a.clone()),
        Transform::Transposition(_) => Err(Error::invalid(
            "family",
            "the gradient solver needs a differentiable (Stiefel) family",
        )),
    }
}

fn wrap(family: Family, f: AffineStiefel) -> Transform {
    match family {
        Family::Stiefel => Transform::Stiefel(f.linear),
        _ => Transform::AffineStiefel(f),
    }
}

/// Step size schedule and early stopping shared by the gradient-based solvers.
#[derive(Debug, Clone)]
pub(crate) struct DescentState {
    pub step: f64,
    pub best: f64,
    pub stall: usize,
}

impl DescentState {
    pub fn new(cfg: &SolverConfig, initial: f64) -> Self {
        Self {
            step: cfg.step_size,
            best: initial,
            stall: 0,
        }
    }

    /// Records the loss after an iteration; returns true once patience is exhausted.
    pub fn record(&mut self, cfg: &SolverConfig, loss: f64) -> bool {
        if self.best - loss >= cfg.tolerance {
            self.best = loss;
            self.stall = 0;
        } else {
            self.best = self.best.min(loss);
            self.stall += 1;
        }
        self.stall >= cfg.patience
    }
}

fn gradient_single(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    init: AffineStiefel,
    cfg: &SolverConfig,
) -> Result<GiResult> {
    let mut current = init;
    let mut eval = soft_dtw_gi_value_and_grad(x, y, &current, cfg.gamma)?;
    let mut state = DescentState::new(cfg, eval.value);
    let mut trace = vec![eval.value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let grad_offset = match family {
            Family::Stiefel => DVector::zeros(current.offset.len()),
            _ => eval.grad_offset.clone(),
        };
        let candidate =
            riemannian_grad_step(&current, &eval.grad_linear, &grad_offset, state.step)?;
        let candidate_eval = soft_dtw_gi_value_and_grad(x, y, &candidate, cfg.gamma)?;
        if candidate_eval.value < eval.value {
            current = candidate;
            eval = candidate_eval;
        } else {
            state.step *= 0.5;
        }
        trace.push(eval.value);
        if state.record(cfg, eval.value) {
            converged = true;
            break;
        }
    }
    Ok(GiResult {
        cost: eval.value,
        transform: wrap(family, current),
        path: None,
        iterations,
        converged,
        cost_trace: trace,
        rank_deficient: false,
    })
}

/// softDTW-GI by Riemannian gradient descent from the identity-like map.
///
/// Steps that do not decrease the loss are rejected and halve the step size;
/// the run stops after `patience` iterations without an improvement of at least
/// `tolerance`. Extra restarts start from random Stiefel maps.
pub fn soft_dtw_gi_grad(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    cfg: &SolverConfig,
) -> Result<GiResult> {
    if family == Family::Transposition {
        return Err(Error::invalid(
            "family",
            "the gradient solver needs a differentiable (Stiefel) family",
        ));
    }
    check_family_dims(x, y, family)?;
    let init = identity_transform(family, x.dims(), y.dims())?;
    soft_dtw_gi_grad_from(x, y, family, init, cfg)
}

/// [`soft_dtw_gi_grad`] with an explicit first starting point.
pub fn soft_dtw_gi_grad_from(
    x: &TimeSeries,
    y: &TimeSeries,
    family: Family,
    init: Transform,
    cfg: &SolverConfig,
) -> Result<GiResult> {
    cfg.validate()?;
    cfg.validate_gamma()?;
    check_family_dims(x, y, family)?;
    check_transform_fits(x, y, family, &init)?;
    let mut best = gradient_single(x, y, family, as_affine(&init)?, cfg)?;
    for r in 1..cfg.restarts {
        let start = as_affine(&restart_transform(family, x.dims(), y.dims(), cfg.seed, r)?)?;
        let run = gradient_single(x, y, family, start, cfg)?;
        if run.cost < best.cost {
            best = run;
        }
    }
    Ok(best)
}

/// Pairwise DTW-GI costs; each pair is oriented so the higher-dimensional series is `x`.
pub fn dtw_gi_distance_matrix(
    dataset: &[TimeSeries],
    family: Family,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let n = dataset.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let costs: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = if dataset[i].dims() >= dataset[j].dims() {
                (&dataset[i], &dataset[j])
            } else {
                (&dataset[j], &dataset[i])
            };
            dtw_gi_bcd(a, b, family, cfg).map(|r| r.cost)
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), &c) in pairs.iter().zip(&costs) {
        out[(i, j)] = c;
        out[(j, i)] = c;
    }
    Ok(out)
}
