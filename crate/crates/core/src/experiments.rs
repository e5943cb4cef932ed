//! Experiment runners producing plot-ready result tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::align::{cost_matrix, dtw, soft_dtw};
use crate::barycenter::{
    dba, dba_gi, soft_barycenter, soft_barycenter_gi, Barycenter, BarycenterProblem,
};
use crate::error::{Error, Result};
use crate::forecast::{combine, score, Backend, BackendConfig, ForecastCorpus};
use crate::gi::{
    dtw_gi_bcd, soft_dtw_gi_grad, soft_dtw_gi_grad_from, Family, GiResult, SolverConfig,
};
use crate::io::{read_series, ResultTable};
use crate::rng::{derive_seed, rng_for};
use crate::series::TimeSeries;
use crate::synth::{
    angle_grid, generate, generate_pairs_for_rotation_study, planar_rotation, GeneratorSpec, Kind,
    Rotation, RotationStudySpec,
};
use crate::transforms::{ChromaTransposition, Transform};

/// Median and 20th / 80th percentiles (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub p20: f64,
    pub p80: f64,
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn spread(values: &[f64]) -> Spread {
    Spread {
        median: quantile(values, 0.5),
        p20: quantile(values, 0.2),
        p80: quantile(values, 0.8),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need two points for a slope");
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

// ---------------------------------------------------------------------------
// Forecasting

/// Synthetic rotated / warped motion corpus and study settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastStudySpec {
    pub trials: usize,
    pub lambdas: Vec<f64>,
    pub backends: Vec<Backend>,
    /// Distinct motion shapes per trial.
    pub classes: usize,
    pub train_size: usize,
    pub queries: usize,
    pub length: usize,
    pub split: usize,
    pub noise_std: f64,
    pub warp_strength: f64,
    pub backend: BackendConfig,
    pub seed: u64,
}

impl Default for ForecastStudySpec {
    fn default() -> Self {
        Self {
            trials: 20,
            lambdas: vec![1e-3, 1e-2, 1e-1, 1.0],
            backends: Backend::ALL.to_vec(),
            classes: 4,
            train_size: 16,
            queries: 4,
            length: 40,
            split: 28,
            noise_std: 0.05,
            warp_strength: 0.32,
            backend: BackendConfig {
                solver: SolverConfig {
                    gamma: 0.1,
                    ..SolverConfig::default()
                },
                ..BackendConfig::default()
            },
            seed: 0,
        }
    }
}

impl ForecastStudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.train_size == 0 || self.queries == 0 || self.classes == 0 {
            return Err(Error::invalid(
                "forecast study",
                "trials, train size, queries and classes must be positive",
            ));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambda grid", "need positive finite values"));
        }
        if self.backends.is_empty() {
            return Err(Error::invalid("backends", "need at least one backend"));
        }
        if self.split == 0 || self.split >= self.length {
            return Err(Error::invalid("split", "need 1 <= split < length"));
        }
        self.backend.solver.validate()
    }
}

/// Training corpus (randomly rotated about the z axis) and unrotated queries of one trial.
pub fn forecast_trial_data(
    spec: &ForecastStudySpec,
    trial: usize,
) -> Result<(ForecastCorpus, Vec<TimeSeries>)> {
    let base = derive_seed(spec.seed, &[0xF0CA, trial as u64]);
    let class_seeds: Vec<u64> = (0..spec.classes as u64)
        .map(|c| derive_seed(base, &[c]))
        .collect();
    let mut rng = rng_for(base, &[0xC1A5]);
    let mut sample = |k: u64, rotated: bool| -> Result<TimeSeries> {
        let class = rng.random_range(0..spec.classes);
        let theta = if rotated {
            rng.random_range(0.0..std::f64::consts::TAU)
        } else {
            0.0
        };
        generate(
            &GeneratorSpec::new(Kind::MotionLike, spec.length)
                .with_seed(class_seeds[class])
                .with_noise(spec.noise_std)
                .with_noise_seed(derive_seed(base, &[1, k]))
                .with_warp(derive_seed(base, &[2, k]))
                .with_warp_strength(spec.warp_strength)
                .with_rotation(Rotation::Matrix(planar_rotation(3, theta))),
        )
    };
    let train = (0..spec.train_size as u64)
        .map(|k| sample(k, true))
        .collect::<Result<Vec<_>>>()?;
    let queries = (0..spec.queries as u64)
        .map(|k| sample(1 << 32 | k, false))
        .collect::<Result<Vec<_>>>()?;
    Ok((ForecastCorpus::new(train, spec.split)?, queries))
}

/// One row per (backend, lambda, trial): mean squared-l2 error of the predicted future over the trial's queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub backend: Backend,
    pub lambda: f64,
    pub trial: usize,
    pub l2_error: f64,
}

pub fn forecast_study(spec: &ForecastStudySpec) -> Result<Vec<ForecastRow>> {
    spec.validate()?;
    let per_trial: Vec<Vec<ForecastRow>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<ForecastRow>> {
            let (corpus, queries) = forecast_trial_data(spec, trial)?;
            let mut rows = Vec::new();
            for &backend in &spec.backends {
                let mut errors = vec![0.0; spec.lambdas.len()];
                for q in &queries {
                    let begin = q.slice(0, spec.split)?;
                    let truth = q.slice(spec.split, spec.length)?;
                    let matches = score(&begin, &corpus, backend, &spec.backend)?;
                    for (e, &lambda) in errors.iter_mut().zip(&spec.lambdas) {
                        *e += combine(&matches, &corpus, lambda)?.squared_distance(&truth)?;
                    }
                }
                for (&lambda, e) in spec.lambdas.iter().zip(errors) {
                    rows.push(ForecastRow {
                        backend,
                        lambda,
                        trial,
                        l2_error: e / queries.len() as f64,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ForecastRow> = per_trial.into_iter().flatten().collect();
    let order = |b: Backend| {
        Backend::ALL
            .iter()
            .position(|x| *x == b)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by(|a, b| {
        order(a.backend)
            .cmp(&order(b.backend))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.trial.cmp(&b.trial))
    });
    Ok(rows)
}

/// Median error per backend and lambda.
pub fn forecast_medians(rows: &[ForecastRow]) -> Vec<(Backend, f64, f64)> {
    let mut groups: Vec<(Backend, f64, Vec<f64>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.backend && g.1 == r.lambda)
        {
            Some(g) => g.2.push(r.l2_error),
            None => groups.push((r.backend, r.lambda, vec![r.l2_error])),
        }
    }
    groups
        .into_iter()
        .map(|(b, l, v)| (b, l, median(&v)))
        .collect()
}

/// Best (lowest) median error per backend and the lambda reaching it.
pub fn forecast_best(rows: &[ForecastRow]) -> Vec<(Backend, f64, f64)> {
    let mut best: Vec<(Backend, f64, f64)> = Vec::new();
    for (b, l, m) in forecast_medians(rows) {
        match best.iter_mut().find(|g| g.0 == b) {
            Some(g) if m < g.2 => *g = (b, l, m),
            Some(_) => {}
            None => best.push((b, l, m)),
        }
    }
    best
}

pub fn forecast_table(rows: &[ForecastRow]) -> ResultTable {
    let mut t = ResultTable::new(["backend", "lambda", "trial", "l2_error"]);
    for r in rows {
        t.push([
            r.backend.name().to_string(),
            fmt(r.lambda),
            r.trial.to_string(),
            fmt(r.l2_error),
        ]);
    }
    t
}

// ---------------------------------------------------------------------------
// Pairwise distances

/// Pairwise dissimilarity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dtw,
    SoftDtw,
    DtwGi,
    SoftDtwGi,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Dtw,
        Method::SoftDtw,
        Method::DtwGi,
        Method::SoftDtwGi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dtw => "dtw",
            Method::SoftDtw => "softdtw",
            Method::DtwGi => "dtw-gi",
            Method::SoftDtwGi => "softdtw-gi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("method", format!("unknown method `{s}`")))
    }
}

/// Settings shared by the pairwise methods.
#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub solver: SolverConfig,
    pub family: Family,
    /// Start softDTW-GI from the DTW-GI (BCD) solution.
    pub warm_start: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            family: Family::AffineStiefel,
            warm_start: false,
        }
    }
}

fn same_space(x: &TimeSeries, y: &TimeSeries) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Dimensions {
            x: x.dims(),
            y: y.dims(),
            requirement: "methods without a feature map need p_x = p_y",
        });
    }
    Ok(())
}

/// Cost of `method` between `x` and `y`, with the map and path when the method produces them.
pub fn pair_distance(
    x: &TimeSeries,
    y: &TimeSeries,
    method: Method,
    cfg: &PairConfig,
) -> Result<GiResult> {
    let plain = |cost: f64, path| -> Result<GiResult> {
        Ok(GiResult {
            cost,
            transform: crate::gi::identity_transform(Family::Stiefel, x.dims(), y.dims())?,
            path,
            iterations: 0,
            converged: true,
            cost_trace: vec![cost],
            rank_deficient: false,
        })
    };
    match method {
        Method::Dtw => {
            same_space(x, y)?;
            let a = dtw(&cost_matrix(x, y)?);
            plain(a.cost, Some(a.path))
        }
        Method::SoftDtw => {
            same_space(x, y)?;
            plain(soft_dtw(&cost_matrix(x, y)?, cfg.solver.gamma)?, None)
        }
        Method::DtwGi => dtw_gi_bcd(x, y, cfg.family, &cfg.solver),
        Method::SoftDtwGi if cfg.warm_start => {
            let hard = dtw_gi_bcd(x, y, cfg.family, &cfg.solver)?;
            let single = SolverConfig {
                restarts: 1,
                ..cfg.solver.clone()
            };
            soft_dtw_gi_grad_from(x, y, cfg.family, hard.transform, &single)
        }
        Method::SoftDtwGi => soft_dtw_gi_grad(x, y, cfg.family, &cfg.solver),
    }
}

// ---------------------------------------------------------------------------
// Timing

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSpec {
    pub methods: Vec<Method>,
    /// Length sweep, at `length_sweep_dims` features.
    pub lengths: Vec<usize>,
    /// Dimensionality sweep, at `dim_sweep_length` timestamps.
    pub dims: Vec<usize>,
    pub length_sweep_dims: usize,
    pub dim_sweep_length: usize,
    pub trials: usize,
    pub pair: PairConfig,
    pub seed: u64,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            lengths: vec![8, 16, 32, 64, 128, 256, 512, 1024],
            dims: vec![2, 4, 8, 16, 32, 64, 128],
            length_sweep_dims: 8,
            dim_sweep_length: 32,
            trials: 5,
            // A fixed, small iteration budget so timings measure per-iteration scaling.
            pair: PairConfig {
                solver: SolverConfig {
                    max_iter: 5,
                    patience: 5,
                    ..SolverConfig::default()
                },
                family: Family::Stiefel,
                warm_start: false,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub method: Method,
    pub length: usize,
    pub dims: usize,
    pub trial: usize,
    pub seconds: f64,
}

fn gaussian_series(len: usize, dims: usize, seed: u64) -> TimeSeries {
    let mut rng = rng_for(seed, &[0x7123]);
    let values = nalgebra::DMatrix::from_fn(len, dims, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    TimeSeries::new(values).expect("len, dims >= 1")
}

fn time_cell(method: Method, len: usize, dims: usize, spec: &TimingSpec) -> Result<Vec<TimingRow>> {
    let tag = Method::ALL.iter().position(|m| *m == method).unwrap_or(0) as u64;
    let mut rows = Vec::with_capacity(spec.trials);
    // Trial 0 is a discarded warm-up.
    for trial in 0..=spec.trials {
        let seed = derive_seed(spec.seed, &[tag, len as u64, dims as u64, trial as u64]);
        let x = gaussian_series(len, dims, derive_seed(seed, &[0]));
        let y = gaussian_series(len, dims, derive_seed(seed, &[1]));
        let start = Instant::now();
        std::hint::black_box(pair_distance(&x, &y, method, &spec.pair)?);
        let seconds = start.elapsed().as_secs_f64().max(1e-9);
        if trial > 0 {
            rows.push(TimingRow {
                method,
                length: len,
                dims,
                trial: trial - 1,
                seconds,
            });
        }
    }
    Ok(rows)
}

/// Runs the length and dimensionality sweeps sequentially (timings must not compete for cores).
pub fn bench_timing(spec: &TimingSpec) -> Result<Vec<TimingRow>> {
    if spec.trials == 0 || spec.methods.is_empty() {
        return Err(Error::invalid(
            "timing",
            "need at least one trial and one method",
        ));
    }
    if spec.lengths.contains(&0) || spec.dims.contains(&0) {
        return Err(Error::invalid(
            "timing",
            "lengths and dims must be positive",
        ));
    }
    let mut rows = Vec::new();
    for &method in &spec.methods {
        for &len in &spec.lengths {
            rows.extend(time_cell(method, len, spec.length_sweep_dims, spec)?);
        }
        for &dims in &spec.dims {
            rows.extend(time_cell(method, spec.dim_sweep_length, dims, spec)?);
        }
    }
    Ok(rows)
}

/// Timing spread per (method, T, p).
pub fn timing_summary(rows: &[TimingRow]) -> Vec<(Method, usize, usize, Spread)> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let m = Method::ALL.iter().position(|x| *x == r.method).unwrap_or(0);
        groups
            .entry((m, r.length, r.dims))
            .or_default()
            .push(r.seconds);
    }
    groups
        .into_iter()
        .map(|((m, t, p), v)| (Method::ALL[m], t, p, spread(&v)))
        .collect()
}

/// Log-log slope of median time against length (`by_length`) or dimensionality.
pub fn timing_slope(
    rows: &[TimingRow],
    method: Method,
    by_length: bool,
    fixed: usize,
) -> Option<f64> {
    let pts: Vec<(f64, f64)> = timing_summary(rows)
        .into_iter()
        .filter(|(m, t, p, _)| *m == method && if by_length { *p == fixed } else { *t == fixed })
        .map(|(_, t, p, s)| (if by_length { t } else { p } as f64, s.median))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(log_log_slope(&x, &y))
}

pub fn timing_table(rows: &[TimingRow]) -> ResultTable {
    let mut t = ResultTable::new(["method", "T", "p", "trial", "seconds"]);
    for r in rows {
        t.push([
            r.method.name().to_string(),
            r.length.to_string(),
            r.dims.to_string(),
            r.trial.to_string(),
            fmt(r.seconds),
        ]);
    }
    t
}

// ---------------------------------------------------------------------------
// Rotation study

#[derive(Debug, Clone, PartialEq)]
pub struct RotationBenchSpec {
    pub trials: usize,
    pub angles: usize,
    pub methods: Vec<Method>,
    pub data: RotationStudySpec,
    pub pair: PairConfig,
}

impl Default for RotationBenchSpec {
    fn default() -> Self {
        Self {
            trials: 50,
            angles: 16,
            methods: vec![Method::Dtw, Method::DtwGi],
            data: RotationStudySpec::default(),
            pair: PairConfig {
                solver: SolverConfig {
                    restarts: 12,
                    ..SolverConfig::default()
                },
                family: Family::Stiefel,
                warm_start: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationRow {
    pub method: Method,
    pub theta: f64,
    pub angle_index: usize,
    pub trial: usize,
    pub cost: f64,
    pub ratio_to_theta0: f64,
}

/// Costs of every method on the rotated spiral pairs, normalized per method by its mean `theta = 0` cost.
pub fn bench_rotation(spec: &RotationBenchSpec) -> Result<Vec<RotationRow>> {
    if spec.angles == 0 || spec.methods.is_empty() {
        return Err(Error::invalid(
            "rotation study",
            "need at least one angle and one method",
        ));
    }
    let pairs =
        generate_pairs_for_rotation_study(spec.trials, &angle_grid(spec.angles), &spec.data)?;
    let mut rows = Vec::new();
    for &method in &spec.methods {
        let costs: Vec<f64> = pairs
            .par_iter()
            .map(|p| pair_distance(&p.x, &p.y, method, &spec.pair).map(|r| r.cost))
            .collect::<Result<_>>()?;
        let base: Vec<f64> = pairs
            .iter()
            .zip(&costs)
            .filter(|(p, _)| p.angle_index == 0)
            .map(|(_, c)| *c)
            .collect();
        let base = base.iter().sum::<f64>() / base.len() as f64;
        for (p, cost) in pairs.iter().zip(costs) {
            rows.push(RotationRow {
                method,
                theta: p.theta,
                angle_index: p.angle_index,
                trial: p.trial,
                cost,
                ratio_to_theta0: cost / base,
            });
        }
    }
    Ok(rows)
}

/// Median ratio per (method, angle), in angle order.
pub fn rotation_medians(rows: &[RotationRow], method: Method) -> Vec<(f64, f64)> {
    let mut groups: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method) {
        groups
            .entry(r.angle_index)
            .or_insert((r.theta, Vec::new()))
            .1
            .push(r.ratio_to_theta0);
    }
    groups
        .into_values()
        .map(|(theta, v)| (theta, median(&v)))
        .collect()
}

pub fn rotation_table(rows: &[RotationRow]) -> ResultTable {
    let mut t = ResultTable::new(["method", "theta", "trial", "cost", "ratio_to_theta0"]);
    for r in rows {
        t.push([
            r.method.name().to_string(),
            fmt(r.theta),
            r.trial.to_string(),
            fmt(r.cost),
            fmt(r.ratio_to_theta0),
        ]);
    }
    t
}

// ---------------------------------------------------------------------------
// Barycenters

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BarycenterMethod {
    DbaGi,
    SoftGi,
    Dba,
    SoftDtw,
}

impl BarycenterMethod {
    pub const ALL: [BarycenterMethod; 4] = [
        BarycenterMethod::DbaGi,
        BarycenterMethod::SoftGi,
        BarycenterMethod::Dba,
        BarycenterMethod::SoftDtw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BarycenterMethod::DbaGi => "dba-gi",
            BarycenterMethod::SoftGi => "soft-gi",
            BarycenterMethod::Dba => "dba",
            BarycenterMethod::SoftDtw => "softdtw",
        }
    }
}

impl std::str::FromStr for BarycenterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BarycenterMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("barycenter method", format!("unknown method `{s}`")))
    }
}

/// Builds the problem (optionally overriding length and dimensionality) and runs `method`.
pub fn run_barycenter(
    inputs: Vec<TimeSeries>,
    method: BarycenterMethod,
    length: Option<usize>,
    dims: Option<usize>,
    family: Family,
    cfg: &SolverConfig,
) -> Result<Barycenter> {
    let mut problem = BarycenterProblem::new(inputs)?;
    if let Some(t) = length {
        problem = problem.with_length(t)?;
    }
    if let Some(p) = dims {
        problem = problem.with_dims(p)?;
    }
    match method {
        BarycenterMethod::DbaGi => dba_gi(&problem.with_family(family)?, cfg),
        BarycenterMethod::SoftGi => soft_barycenter_gi(&problem.with_family(family)?, cfg),
        BarycenterMethod::Dba => dba(&problem, cfg),
        BarycenterMethod::SoftDtw => soft_barycenter(&problem, cfg),
    }
}

pub fn loss_trace_table(bary: &Barycenter) -> ResultTable {
    let mut t = ResultTable::new(["iteration", "loss"]);
    for (i, l) in bary.loss_trace.iter().enumerate() {
        t.push([i.to_string(), fmt(*l)]);
    }
    t
}

/// Noisy, warped folium loops, each rotated by a random planar angle.
pub fn rotated_folium_set(
    n: usize,
    length: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<TimeSeries>> {
    let mut rng = rng_for(seed, &[0xF011]);
    (0..n as u64)
        .map(|k| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            generate(
                &GeneratorSpec::new(Kind::Folium, length)
                    .with_angle(theta)
                    .with_noise(noise_std)
                    .with_seed(derive_seed(seed, &[k]))
                    .with_warp(derive_seed(seed, &[1 << 20 | k])),
            )
        })
        .collect()
}

/// Alternating 2d and 3d spirals under random orthogonal maps and warps.
pub fn mixed_spiral_set(
    n: usize,
    length: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<TimeSeries>> {
    let mut rng = rng_for(seed, &[0x5312]);
    (0..n as u64)
        .map(|k| {
            let kind = if k % 2 == 0 {
                Kind::Spiral2d
            } else {
                Kind::Spiral3d
            };
            let p = kind.native_dims().unwrap_or(2);
            let q = crate::transforms::StiefelLinear::random(p, p, &mut rng)?;
            generate(
                &GeneratorSpec::new(kind, length)
                    .with_rotation(Rotation::Matrix(q.matrix().clone()))
                    .with_noise(noise_std)
                    .with_seed(derive_seed(seed, &[k]))
                    .with_warp(derive_seed(seed, &[1 << 20 | k])),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Retrieval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RetrievalMethod {
    Dtw,
    DtwOti,
    DtwGiStiefel,
    DtwGiOti,
}

impl RetrievalMethod {
    pub const ALL: [RetrievalMethod; 4] = [
        RetrievalMethod::Dtw,
        RetrievalMethod::DtwOti,
        RetrievalMethod::DtwGiStiefel,
        RetrievalMethod::DtwGiOti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetrievalMethod::Dtw => "dtw",
            RetrievalMethod::DtwOti => "dtw+oti",
            RetrievalMethod::DtwGiStiefel => "dtw-gi-stiefel",
            RetrievalMethod::DtwGiOti => "dtw-gi-oti",
        }
    }
}

impl std::str::FromStr for RetrievalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrievalMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("retrieval method", format!("unknown method `{s}`")))
    }
}

/// A series identified by its file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSeries {
    pub name: String,
    pub series: TimeSeries,
}

/// Reads every regular file of `dir` as a series file, sorted by name.
///
/// Unreadable files are reported as diagnostics and skipped.
pub fn load_dir(dir: &Path) -> Result<(Vec<NamedSeries>, Vec<String>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for path in paths {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match read_series(&path) {
            Ok(series) => out.push(NamedSeries { name, series }),
            Err(e) => diagnostics.push(format!("{}: {e}", path.display())),
        }
    }
    Ok((out, diagnostics))
}

/// Shift `k` maximizing the correlation of the mean chroma profiles (ties: smallest `k`).
pub fn global_oti(x: &TimeSeries, y: &TimeSeries) -> Result<ChromaTransposition> {
    same_space(x, y)?;
    let p = x.dims();
    let mx = x.values().row_mean();
    let my = y.values().row_mean();
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..p {
        let score: f64 = (0..p).map(|c| mx[(c + k) % p] * my[c]).sum();
        if score > best.0 {
            best = (score, k);
        }
    }
    ChromaTransposition::new(best.1, p)
}

pub fn retrieval_distance(
    query: &TimeSeries,
    candidate: &TimeSeries,
    method: RetrievalMethod,
    cfg: &SolverConfig,
) -> Result<f64> {
    match method {
        RetrievalMethod::Dtw => {
            same_space(query, candidate)?;
            Ok(dtw(&cost_matrix(query, candidate)?).cost)
        }
        RetrievalMethod::DtwOti => {
            let shift = Transform::Transposition(global_oti(query, candidate)?);
            Ok(dtw(&cost_matrix(query, &shift.apply(candidate)?)?).cost)
        }
        RetrievalMethod::DtwGiStiefel => {
            same_space(query, candidate)?;
            Ok(dtw_gi_bcd(query, candidate, Family::Stiefel, cfg)?.cost)
        }
        RetrievalMethod::DtwGiOti => {
            Ok(dtw_gi_bcd(query, candidate, Family::Transposition, cfg)?.cost)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRow {
    pub query: String,
    /// 1-based rank of the corpus item sharing the query's name (ties count against it).
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub method: RetrievalMethod,
    pub rows: Vec<RetrievalRow>,
    pub ks: Vec<usize>,
    pub diagnostics: Vec<String>,
}

impl RetrievalReport {
    /// Mean rank of the true match.
    pub fn mr1(&self) -> f64 {
        self.rows.iter().map(|r| r.rank as f64).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// Fraction of queries whose match ranks within the top `k`.
    pub fn recall_at(&self, k: usize) -> f64 {
        self.rows.iter().filter(|r| r.rank <= k).count() as f64 / self.rows.len().max(1) as f64
    }

    pub fn table(&self) -> ResultTable {
        let mut header = vec!["query".to_string(), "rank_of_true_match".to_string()];
        header.extend(self.ks.iter().map(|k| format!("recall_at_{k}")));
        let mut t = ResultTable::new(header);
        for r in &self.rows {
            let mut row = vec![r.query.clone(), r.rank.to_string()];
            row.extend(
                self.ks
                    .iter()
                    .map(|&k| if r.rank <= k { "1" } else { "0" }.to_string()),
            );
            t.push(row);
        }
        let mut agg = vec!["MR1".to_string(), fmt(self.mr1())];
        agg.extend(self.ks.iter().map(|&k| fmt(self.recall_at(k))));
        t.push(agg);
        t
    }
}

/// Ranks the corpus for every query; the true match is the corpus item with the query's name.
pub fn retrieval(
    queries: &[NamedSeries],
    corpus: &[NamedSeries],
    method: RetrievalMethod,
    cfg: &SolverConfig,
    ks: &[usize],
) -> Result<RetrievalReport> {
    if ks.contains(&0) {
        return Err(Error::invalid("k", "recall cut-offs must be at least 1"));
    }
    let mut diagnostics = Vec::new();
    let mut targets = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        match corpus.iter().position(|c| c.name == q.name) {
            Some(ci) => targets.push((qi, ci)),
            None => diagnostics.push(format!("{}: no corpus item with this name", q.name)),
        }
    }
    let cells: Vec<(usize, usize)> = targets
        .iter()
        .flat_map(|&(qi, _)| (0..corpus.len()).map(move |ci| (qi, ci)))
        .collect();
    let dists: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(qi, ci)| retrieval_distance(&queries[qi].series, &corpus[ci].series, method, cfg))
        .collect();
    let mut rows = Vec::new();
    for (n, &(qi, ci)) in targets.iter().enumerate() {
        let block = &dists[n * corpus.len()..(n + 1) * corpus.len()];
        let truth = match &block[ci] {
            Ok(d) => *d,
            Err(e) => {
                diagnostics.push(format!("{}: {e}", queries[qi].name));
                continue;
            }
        };
        let mut rank = 1;
        for (cj, d) in block.iter().enumerate() {
            match d {
                Ok(d) if cj != ci && *d <= truth => rank += 1,
                Err(e) if cj != ci => {
                    diagnostics.push(format!("{} vs {}: {e}", queries[qi].name, corpus[cj].name))
                }
                _ => {}
            }
        }
        rows.push(RetrievalRow {
            query: queries[qi].name.clone(),
            rank,
        });
    }
    Ok(RetrievalReport {
        method,
        rows,
        ks: ks.to_vec(),
        diagnostics,
    })
}

/// Synthetic cover-song corpus: chord-progression chroma songs and their covers.
///
/// A cover is the song transposed by a random nonzero shift, with its last
/// `modulated_fraction` of frames moved by a further small modulation, played
/// at a warped tempo with additive (clipped) noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverCorpusSpec {
    pub pairs: usize,
    pub length: usize,
    pub dims: usize,
    pub noise_std: f64,
    pub warp_strength: f64,
    pub modulated_fraction: f64,
    pub seed: u64,
}

impl Default for CoverCorpusSpec {
    fn default() -> Self {
        Self {
            pairs: 40,
            length: 64,
            dims: 12,
            noise_std: 0.05,
            warp_strength: 0.3,
            modulated_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Returns `(queries, corpus)`; item `i` of both is named `song_<i>`.
pub fn cover_corpus(spec: &CoverCorpusSpec) -> Result<(Vec<NamedSeries>, Vec<NamedSeries>)> {
    if spec.pairs == 0 || spec.dims < 2 || !(0.0..=1.0).contains(&spec.modulated_fraction) {
        return Err(Error::invalid(
            "cover corpus",
            "need pairs >= 1, dims >= 2 and a modulated fraction in [0, 1]",
        ));
    }
    let p = spec.dims;
    let mut queries = Vec::with_capacity(spec.pairs);
    let mut covers = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let name = format!("song_{i:03}");
        let seed = derive_seed(spec.seed, &[0xC0FE, i as u64]);
        let song = generate(
            &GeneratorSpec::new(Kind::ChromaLike, spec.length)
                .with_dims(p)
                .with_seed(seed),
        )?;
        let mut rng = rng_for(seed, &[0x7A25]);
        let shift = rng.random_range(1..p);
        let modulation = [1, 2, p - 1, p - 2][rng.random_range(0..4)];
        let start = ((1.0 - spec.modulated_fraction) * spec.length as f64).round() as usize;
        let mut values = nalgebra::DMatrix::zeros(spec.length, p);
        for t in 0..spec.length {
            let k = if t >= start {
                shift + modulation
            } else {
                shift
            };
            for c in 0..p {
                values[(t, (c + k) % p)] = song.values()[(t, c)];
            }
        }
        let normal = rand_distr::Normal::new(0.0, spec.noise_std.max(0.0))
            .map_err(|e| Error::invalid("noise", e.to_string()))?;
        for v in values.iter_mut() {
            *v = (*v + rng.sample(normal)).max(0.0);
        }
        crate::synth::normalize_rows(&mut values);
        let cover = crate::synth::warp(
            &TimeSeries::new(values)?,
            derive_seed(seed, &[2]),
            spec.warp_strength,
        );
        queries.push(NamedSeries {
            name: name.clone(),
            series: song,
        });
        covers.push(NamedSeries {
            name,
            series: cover,
        });
    }
    Ok((queries, covers))
}

/// Writes `queries/` and `corpus/` subdirectories of series files under `dir`.
pub fn write_cover_corpus(dir: &Path, spec: &CoverCorpusSpec) -> Result<()> {
    let (queries, corpus) = cover_corpus(spec)?;
    for (sub, items) in [("queries", &queries), ("corpus", &corpus)] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d)?;
        for item in items {
            crate::io::write_series(d.join(format!("{}.csv", item.name)), &item.series)?;
        }
    }
    Ok(())
}
