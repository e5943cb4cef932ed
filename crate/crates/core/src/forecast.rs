//! Attention-kernel forecasting.
//!
//! The future of a query is predicted as `sum_i a_i f_i(x_i,end)`, where the
//! weights are a softmax of `-lambda * d(y_begin, x_i,begin)` and `f_i` maps the
//! features of training series `i` onto those of the query. The similarity
//! backend decides both `d` and `f_i`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::align::{cost_matrix, soft_dtw, AlignmentPath};
use crate::error::{Error, Result};
use crate::gi::{dtw_gi_bcd, soft_dtw_gi_grad_from, Family, SolverConfig};
use crate::series::TimeSeries;
use crate::transforms::{affine_procrustes_solve, AffineStiefel, StiefelLinear, Transform};

/// Training series sharing one length, one dimensionality and one split point.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCorpus {
    series: Vec<TimeSeries>,
    split: usize,
}

impl ForecastCorpus {
    pub fn new(series: Vec<TimeSeries>, split: usize) -> Result<Self> {
        let Some(first) = series.first() else {
            return Err(Error::invalid(
                "corpus",
                "need at least one training series",
            ));
        };
        let (len, dims) = (first.len(), first.dims());
        for s in &series {
            if s.dims() != dims {
                return Err(Error::Dimensions {
                    x: dims,
                    y: s.dims(),
                    requirement: "training series must share their dimensionality",
                });
            }
            if s.len() != len {
                return Err(Error::Length {
                    x: len,
                    y: s.len(),
                    context: "training series must share their length",
                });
            }
        }
        if split == 0 || split >= len {
            return Err(Error::invalid(
                "split",
                format!("need 1 <= split < {len}, got {split}"),
            ));
        }
        Ok(Self { series, split })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn split(&self) -> usize {
        self.split
    }

    /// Full length `T` of every training series.
    pub fn series_len(&self) -> usize {
        self.series[0].len()
    }

    pub fn dims(&self) -> usize {
        self.series[0].dims()
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    pub fn begin(&self, i: usize) -> TimeSeries {
        self.series[i]
            .slice(0, self.split)
            .expect("split validated")
    }

    pub fn end(&self, i: usize) -> TimeSeries {
        self.series[i]
            .slice(self.split, self.series_len())
            .expect("split validated")
    }
}

/// Similarity measure and transform used to weight and map training futures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    L2,
    L2Procrustes,
    SoftDtw,
    SoftDtwProcrustes,
    SoftDtwGi,
}

impl Backend {
    pub const ALL: [Backend; 5] = [
        Backend::L2,
        Backend::L2Procrustes,
        Backend::SoftDtw,
        Backend::SoftDtwProcrustes,
        Backend::SoftDtwGi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Backend::L2 => "L2",
            Backend::L2Procrustes => "L2+Procrustes",
            Backend::SoftDtw => "softDTW",
            Backend::SoftDtwProcrustes => "softDTW+Procrustes",
            Backend::SoftDtwGi => "softDTW-GI",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("backend", format!("unknown backend `{s}`")))
    }
}

/// Settings of the soft backends.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    /// Solver settings; `solver.gamma` is the softDTW smoothing.
    pub solver: SolverConfig,
    /// Start the softDTW-GI descent from the hard DTW-GI (BCD) solution instead of the identity.
    pub bcd_warm_start: bool,
    /// Restarts of the warm-start BCD run.
    pub warm_start_restarts: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            bcd_warm_start: true,
            warm_start_restarts: 8,
        }
    }
}

/// A training series scored against a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub distance: f64,
    /// Map from training features onto query features.
    pub transform: Transform,
}

/// Softmax of `-lambda * d_i`, computed with a max shift.
pub fn attention_weights(distances: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::invalid("distances", "need at least one distance"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "lambda",
            format!("must be positive, got {lambda}"),
        ));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("distances"));
    }
    let lowest = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = distances
        .iter()
        .map(|d| (-lambda * (d - lowest)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// Orthogonal Procrustes with translation under one-to-one time correspondence.
///
/// Returns `min_{P, b} ||x P^T + b - y||^2` and the optimal map taking `x` onto `y`.
pub fn procrustes_distance(y: &TimeSeries, x: &TimeSeries) -> Result<(f64, AffineStiefel)> {
    if y.len() != x.len() {
        return Err(Error::Length {
            x: y.len(),
            y: x.len(),
            context: "Procrustes needs one-to-one time correspondence",
        });
    }
    if y.dims() != x.dims() {
        return Err(Error::Dimensions {
            x: y.dims(),
            y: x.dims(),
            requirement: "Procrustes distance needs equal dimensionalities",
        });
    }
    let reg = affine_procrustes_solve(y, x, &AlignmentPath::diagonal(y.len()))?;
    let mapped = Transform::AffineStiefel(reg.transform.clone()).apply(x)?;
    Ok((y.squared_distance(&mapped)?, reg.transform))
}

fn identity(p: usize) -> Transform {
    Transform::Stiefel(StiefelLinear::identity_embedding(p, p).expect("p >= 1"))
}

/// Distance and map of one training beginning `x` for the query beginning `y`.
pub fn score_pair(
    y: &TimeSeries,
    x: &TimeSeries,
    backend: Backend,
    cfg: &BackendConfig,
) -> Result<Match> {
    let gamma = cfg.solver.gamma;
    Ok(match backend {
        Backend::L2 => Match {
            distance: y.squared_distance(x)?,
            transform: identity(x.dims()),
        },
        Backend::L2Procrustes => {
            let (distance, f) = procrustes_distance(y, x)?;
            Match {
                distance,
                transform: Transform::AffineStiefel(f),
            }
        }
        Backend::SoftDtw => Match {
            distance: soft_dtw(&cost_matrix(y, x)?, gamma)?,
            transform: identity(x.dims()),
        },
        Backend::SoftDtwProcrustes => {
            let (_, f) = procrustes_distance(y, x)?;
            let f = Transform::AffineStiefel(f);
            Match {
                distance: soft_dtw(&cost_matrix(y, &f.apply(x)?)?, gamma)?,
                transform: f,
            }
        }
        Backend::SoftDtwGi => {
            let family = Family::AffineStiefel;
            let init = if cfg.bcd_warm_start {
                let hard = SolverConfig {
                    restarts: cfg.warm_start_restarts.max(1),
                    ..cfg.solver.clone()
                };
                dtw_gi_bcd(y, x, family, &hard)?.transform
            } else {
                Transform::AffineStiefel(AffineStiefel::identity_embedding(y.dims(), x.dims())?)
            };
            let r = soft_dtw_gi_grad_from(y, x, family, init, &cfg.solver)?;
            Match {
                distance: r.cost,
                transform: r.transform,
            }
        }
    })
}

/// Scores every training series against the query (in parallel, order preserved).
pub fn score(
    y_begin: &TimeSeries,
    corpus: &ForecastCorpus,
    backend: Backend,
    cfg: &BackendConfig,
) -> Result<Vec<Match>> {
    check_query(y_begin, corpus)?;
    (0..corpus.len())
        .into_par_iter()
        .map(|i| score_pair(y_begin, &corpus.begin(i), backend, cfg))
        .collect()
}

fn check_query(y_begin: &TimeSeries, corpus: &ForecastCorpus) -> Result<()> {
    if y_begin.dims() != corpus.dims() {
        return Err(Error::Dimensions {
            x: y_begin.dims(),
            y: corpus.dims(),
            requirement: "query and corpus must share their dimensionality",
        });
    }
    if y_begin.len() != corpus.split() {
        return Err(Error::Length {
            x: y_begin.len(),
            y: corpus.split(),
            context: "query length must equal the corpus split",
        });
    }
    Ok(())
}

/// Weighted sum of transformed futures for precomputed matches.
pub fn combine(matches: &[Match], corpus: &ForecastCorpus, lambda: f64) -> Result<TimeSeries> {
    if matches.len() != corpus.len() {
        return Err(Error::invalid(
            "matches",
            format!(
                "{} matches for {} training series",
                matches.len(),
                corpus.len()
            ),
        ));
    }
    let distances: Vec<f64> = matches.iter().map(|m| m.distance).collect();
    let weights = attention_weights(&distances, lambda)?;
    let horizon = corpus.series_len() - corpus.split();
    let mut out = DMatrix::zeros(horizon, corpus.dims());
    for (i, (m, w)) in matches.iter().zip(&weights).enumerate() {
        out += m.transform.apply(&corpus.end(i))?.values() * *w;
    }
    TimeSeries::new(out)
}

/// Predicts the continuation of `y_begin`.
pub fn forecast(
    y_begin: &TimeSeries,
    corpus: &ForecastCorpus,
    backend: Backend,
    lambda: f64,
    cfg: &BackendConfig,
) -> Result<TimeSeries> {
    let matches = score(y_begin, corpus, backend, cfg)?;
    combine(&matches, corpus, lambda)
}
