//! Barycenters under the DTW-GI geometry.
//!
//! [`dba_gi`] alternates DTW-GI alignments of every input onto the current
//! barycenter with a closed-form per-timestamp update. For a fixed alignment
//! the objective at timestamp `t` is
//! `sum_i w_i sum_{(s,t) in path_i} ||x_i,s - P_i b_t - c_i||^2`;
//! since `P_i^T P_i = I` its Hessian is `2 (sum_i w_i n_i,t) I`, so the minimizer is
//! `b_t = (sum_i w_i n_i,t)^-1 sum_i w_i sum_s P_i^T (x_i,s - c_i)`
//! where `n_i,t` counts the cells of path `i` in column `t`.
//!
//! [`soft_barycenter_gi`] runs joint gradient descent on the barycenter and the
//! per-input maps, optionally over random minibatches of inputs.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::align::{cost_matrix, dtw, AlignmentPath};
use crate::error::{Error, Result};
use crate::gi::{
    align_with, dtw_gi_bcd_from, identity_transform, soft_dtw_gi_value_and_grad, DescentState,
    Family, SolverConfig,
};
use crate::rng::rng_for;
use crate::series::TimeSeries;
use crate::transforms::{riemannian_grad_step, AffineStiefel, Transform};

/// Inputs, weights and the requested barycenter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterProblem {
    inputs: Vec<TimeSeries>,
    weights: Vec<f64>,
    length: usize,
    dims: usize,
    family: Family,
}

impl BarycenterProblem {
    /// Uniform weights, median input length and minimal input dimensionality.
    pub fn new(inputs: Vec<TimeSeries>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("inputs", "need at least one series"));
        }
        let mut lengths: Vec<usize> = inputs.iter().map(TimeSeries::len).collect();
        lengths.sort_unstable();
        let length = lengths[(lengths.len() - 1) / 2];
        let dims = inputs.iter().map(TimeSeries::dims).min().unwrap_or(1);
        let n = inputs.len();
        Ok(Self {
            inputs,
            weights: vec![1.0 / n as f64; n],
            length,
            dims,
            family: Family::AffineStiefel,
        })
    }

    /// Nonnegative weights, normalized to sum to one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.inputs.len() {
            return Err(Error::invalid(
                "weights",
                format!("{} weights for {} inputs", weights.len(), self.inputs.len()),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(
                "weights",
                "at least one weight must be positive",
            ));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(self)
    }

    pub fn with_length(mut self, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("length", "must be at least 1"));
        }
        self.length = length;
        Ok(self)
    }

    pub fn with_dims(mut self, dims: usize) -> Result<Self> {
        let min = self.inputs.iter().map(TimeSeries::dims).min().unwrap_or(0);
        if dims == 0 || dims > min {
            return Err(Error::Dimensions {
                x: min,
                y: dims,
                requirement: "barycenter dimensionality must not exceed any input's",
            });
        }
        self.dims = dims;
        Ok(self)
    }

    /// Registration family of the GI solvers (transpositions are not supported here).
    pub fn with_family(mut self, family: Family) -> Result<Self> {
        if family == Family::Transposition {
            return Err(Error::invalid(
                "family",
                "barycenters need a Stiefel family",
            ));
        }
        self.family = family;
        Ok(self)
    }

    pub fn inputs(&self) -> &[TimeSeries] {
        &self.inputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn family(&self) -> Family {
        self.family
    }

    fn require_common_space(&self) -> Result<()> {
        let dims: Vec<usize> = self.inputs.iter().map(TimeSeries::dims).collect();
        if dims.iter().any(|&d| d != self.dims) {
            return Err(Error::MixedDimensions(dims));
        }
        Ok(())
    }
}

/// A barycenter with the maps and alignments that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Barycenter {
    pub series: TimeSeries,
    /// `f_i` mapping the barycenter into the space of input `i`.
    pub transforms: Vec<Transform>,
    /// Hard alignments of each input with `f_i(series)`.
    pub paths: Vec<AlignmentPath>,
    /// Final objective: hard for DBA variants, softDTW for gradient variants.
    pub loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Geometry {
    Plain,
    Gi(Family),
}

/// Starting barycenter: a seeded choice of input, resampled to `T` and cut to `p` features.
pub fn initial_barycenter(problem: &BarycenterProblem, seed: u64) -> Result<TimeSeries> {
    let mut rng = rng_for(seed, &[0xBA2C]);
    let pick = rng.random_range(0..problem.inputs.len());
    problem.inputs[pick]
        .resample(problem.length)?
        .truncate_dims(problem.dims)
}

/// Closed-form timestamp update for fixed maps and alignments.
pub fn dba_update(
    problem: &BarycenterProblem,
    transforms: &[Transform],
    paths: &[AlignmentPath],
) -> Result<TimeSeries> {
    let (len, dims) = (problem.length, problem.dims);
    let mut numer = DMatrix::<f64>::zeros(len, dims);
    let mut mass = vec![0.0; len];
    for (((x, &w), f), path) in problem
        .inputs
        .iter()
        .zip(&problem.weights)
        .zip(transforms)
        .zip(paths)
    {
        let p = f.linear_matrix();
        let c = f.offset();
        for &(s, t) in path.pairs() {
            let pulled = p.tr_mul(&(x.point(s) - &c));
            for k in 0..dims {
                numer[(t, k)] += w * pulled[k];
            }
            mass[t] += w;
        }
    }
    for (t, &m) in mass.iter().enumerate() {
        assert!(m > 0.0, "timestamp {t} has no alignment mass");
        for k in 0..dims {
            numer[(t, k)] /= m;
        }
    }
    TimeSeries::new(numer)
}

fn identity_maps(problem: &BarycenterProblem, geometry: Geometry) -> Result<Vec<Transform>> {
    let family = match geometry {
        Geometry::Plain => Family::Stiefel,
        Geometry::Gi(f) => f,
    };
    problem
        .inputs
        .iter()
        .map(|x| identity_transform(family, x.dims(), problem.dims))
        .collect()
}

fn run_dba(
    problem: &BarycenterProblem,
    cfg: &SolverConfig,
    geometry: Geometry,
) -> Result<Barycenter> {
    cfg.validate()?;
    let mut series = initial_barycenter(problem, cfg.seed)?;
    let mut transforms = identity_maps(problem, geometry)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        iterations += 1;
        let fits: Vec<(Transform, AlignmentPath, f64)> = problem
            .inputs
            .par_iter()
            .zip(transforms.par_iter())
            .map(|(x, f)| match geometry {
                Geometry::Plain => {
                    let a = dtw(&cost_matrix(x, &series)?);
                    Ok((f.clone(), a.path, a.cost))
                }
                Geometry::Gi(family) => {
                    let r = dtw_gi_bcd_from(x, &series, family, f.clone(), cfg)?;
                    let path = r.path.expect("BCD always returns a path");
                    Ok((r.transform, path, r.cost))
                }
            })
            .collect::<Result<_>>()?;
        let loss: f64 = fits
            .iter()
            .zip(&problem.weights)
            .map(|((_, _, c), w)| w * c)
            .sum();
        let previous = trace.last().copied();
        trace.push(loss);
        let (fs, paths): (Vec<Transform>, Vec<AlignmentPath>) =
            fits.into_iter().map(|(f, p, _)| (f, p)).unzip();
        transforms = fs;
        if previous.is_some_and(|prev: f64| prev - loss < cfg.tolerance) {
            converged = true;
        }
        if converged || iterations >= cfg.max_iter {
            return Ok(Barycenter {
                series,
                transforms,
                paths,
                loss,
                loss_trace: trace,
                iterations,
                converged,
            });
        }
        series = dba_update(problem, &transforms, &paths)?;
    }
}

/// DBA-GI: alternates DTW-GI alignments (warm-started from the previous maps) and exact updates.
pub fn dba_gi(problem: &BarycenterProblem, cfg: &SolverConfig) -> Result<Barycenter> {
    run_dba(problem, cfg, Geometry::Gi(problem.family))
}

/// Plain DBA baseline (identity maps); every input must share the barycenter dimensionality.
pub fn dba(problem: &BarycenterProblem, cfg: &SolverConfig) -> Result<Barycenter> {
    problem.require_common_space()?;
    run_dba(problem, cfg, Geometry::Plain)
}

fn to_affine(f: &Transform) -> AffineStiefel {
    match f {
        Transform::Stiefel(s) => AffineStiefel::from_linear(s.clone()),
        Transform::AffineStiefel(a) => a.clone(),
        Transform::Transposition(_) => unreachable!("barycenter families are Stiefel"),
    }
}

fn from_affine(geometry: Geometry, f: AffineStiefel) -> Transform {
    match geometry {
        Geometry::Gi(Family::AffineStiefel) => Transform::AffineStiefel(f),
        _ => Transform::Stiefel(f.linear),
    }
}

/// Per-input softDTW evaluations used by the gradient barycenter.
struct SoftTerm {
    value: f64,
    grad_input: DMatrix<f64>,
    grad_linear: DMatrix<f64>,
    grad_offset: DVector<f64>,
}

fn soft_terms(
    problem: &BarycenterProblem,
    series: &TimeSeries,
    transforms: &[Transform],
    members: &[usize],
    gamma: f64,
) -> Result<Vec<SoftTerm>> {
    members
        .par_iter()
        .map(|&i| {
            let e = soft_dtw_gi_value_and_grad(
                &problem.inputs[i],
                series,
                &to_affine(&transforms[i]),
                gamma,
            )?;
            Ok(SoftTerm {
                value: e.value,
                grad_input: e.grad_input,
                grad_linear: e.grad_linear,
                grad_offset: e.grad_offset,
            })
        })
        .collect()
}

/// `sum_i w_i softDTW(x_i, f_i(b))` and its gradient w.r.t. the barycenter coordinates.
pub fn soft_barycenter_loss_and_grad(
    problem: &BarycenterProblem,
    series: &TimeSeries,
    transforms: &[Transform],
    gamma: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let all: Vec<usize> = (0..problem.inputs.len()).collect();
    let terms = soft_terms(problem, series, transforms, &all, gamma)?;
    let mut grad = DMatrix::zeros(series.len(), series.dims());
    let mut loss = 0.0;
    for (term, &w) in terms.iter().zip(&problem.weights) {
        loss += w * term.value;
        grad += &term.grad_input * w;
    }
    Ok((loss, grad))
}

fn soft_loss(
    problem: &BarycenterProblem,
    series: &TimeSeries,
    transforms: &[Transform],
    gamma: f64,
) -> Result<f64> {
    soft_barycenter_loss_and_grad(problem, series, transforms, gamma).map(|(l, _)| l)
}

fn run_soft(
    problem: &BarycenterProblem,
    cfg: &SolverConfig,
    geometry: Geometry,
) -> Result<Barycenter> {
    cfg.validate()?;
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::InvalidGamma(cfg.gamma));
    }
    let n = problem.inputs.len();
    let mut series = initial_barycenter(problem, cfg.seed)?;
    // GI maps start from a hard DTW-GI registration onto the initial barycenter.
    let mut transforms = match geometry {
        Geometry::Plain => identity_maps(problem, geometry)?,
        Geometry::Gi(family) => problem
            .inputs
            .par_iter()
            .map(|x| {
                let init = identity_transform(family, x.dims(), problem.dims)?;
                dtw_gi_bcd_from(x, &series, family, init, cfg).map(|r| r.transform)
            })
            .collect::<Result<_>>()?,
    };
    let batch = cfg.batch_size.map_or(n, |b| b.min(n));
    let mut rng = rng_for(cfg.seed, &[0x50F7]);
    let mut loss = soft_loss(problem, &series, &transforms, cfg.gamma)?;
    let mut state = DescentState::new(cfg, loss);
    let mut trace = vec![loss];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let members: Vec<usize> = if batch == n {
            (0..n).collect()
        } else {
            let mut m = sample(&mut rng, n, batch).into_vec();
            m.sort_unstable();
            m
        };
        let scale = n as f64 / batch as f64;
        let terms = soft_terms(problem, &series, &transforms, &members, cfg.gamma)?;

        let mut grad_b = DMatrix::zeros(series.len(), series.dims());
        for (term, &i) in terms.iter().zip(&members) {
            grad_b += &term.grad_input * (problem.weights[i] * scale);
        }
        let candidate_series = TimeSeries::new(series.values() - grad_b * state.step)?;
        let mut candidate_maps = transforms.clone();
        if let Geometry::Gi(family) = geometry {
            for (term, &i) in terms.iter().zip(&members) {
                let w = problem.weights[i] * scale;
                let grad_offset = match family {
                    Family::AffineStiefel => &term.grad_offset * w,
                    _ => DVector::zeros(term.grad_offset.len()),
                };
                let stepped = riemannian_grad_step(
                    &to_affine(&transforms[i]),
                    &(&term.grad_linear * w),
                    &grad_offset,
                    state.step,
                )?;
                candidate_maps[i] = from_affine(geometry, stepped);
            }
        }
        let candidate_loss = soft_loss(problem, &candidate_series, &candidate_maps, cfg.gamma)?;
        if candidate_loss < loss {
            series = candidate_series;
            transforms = candidate_maps;
            loss = candidate_loss;
        } else {
            state.step *= 0.5;
        }
        trace.push(loss);
        if state.record(cfg, loss) {
            converged = true;
            break;
        }
    }
    let paths = problem
        .inputs
        .iter()
        .zip(&transforms)
        .map(|(x, f)| align_with(x, &series, f).map(|a| a.path))
        .collect::<Result<_>>()?;
    Ok(Barycenter {
        series,
        transforms,
        paths,
        loss,
        loss_trace: trace,
        iterations,
        converged,
    })
}

/// softDTW-GI barycenter by joint gradient descent on coordinates and maps.
pub fn soft_barycenter_gi(problem: &BarycenterProblem, cfg: &SolverConfig) -> Result<Barycenter> {
    run_soft(problem, cfg, Geometry::Gi(problem.family))
}

/// Plain softDTW barycenter baseline (identity maps).
pub fn soft_barycenter(problem: &BarycenterProblem, cfg: &SolverConfig) -> Result<Barycenter> {
    problem.require_common_space()?;
    run_soft(problem, cfg, Geometry::Plain)
}

/// `sum_i w_i <W_i, C(x_i, f_i(b))>` recomputed from scratch.
pub fn hard_loss(problem: &BarycenterProblem, bary: &Barycenter) -> Result<f64> {
    let mut total = 0.0;
    for (((x, &w), f), path) in problem
        .inputs
        .iter()
        .zip(&problem.weights)
        .zip(&bary.transforms)
        .zip(&bary.paths)
    {
        total += w * crate::transforms::path_cost(x, &bary.series, path, f)?;
    }
    Ok(total)
}
