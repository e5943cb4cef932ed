//! Seeded generators for the synthetic datasets used by the studies.
//!
//! Curves are fixed fixtures: an Archimedean spiral (`r = phi / 4pi` over two
//! turns, so samples crowd toward the center), a conical helix for the 3d
//! spiral, and a folium of Descartes `r = 3a sin cos / (sin^3 + cos^3)` with
//! short tails. Rotation, isotropic Gaussian noise and a smooth monotone time
//! warp are applied in that order.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Spiral2d,
    Spiral3d,
    Folium,
    RandomWalk,
    ChromaLike,
    MotionLike,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Spiral2d => "spiral2d",
            Kind::Spiral3d => "spiral3d",
            Kind::Folium => "folium",
            Kind::RandomWalk => "random_walk",
            Kind::ChromaLike => "chroma_like",
            Kind::MotionLike => "motion_like",
        }
    }

    /// Feature dimensionality for kinds with a fixed one.
    pub fn native_dims(self) -> Option<usize> {
        match self {
            Kind::Spiral2d | Kind::Folium => Some(2),
            Kind::Spiral3d | Kind::MotionLike => Some(3),
            Kind::RandomWalk | Kind::ChromaLike => None,
        }
    }
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spiral2d" => Kind::Spiral2d,
            "spiral3d" => Kind::Spiral3d,
            "folium" => Kind::Folium,
            "random_walk" | "random-walk" => Kind::RandomWalk,
            "chroma_like" | "chroma-like" => Kind::ChromaLike,
            "motion_like" | "motion-like" => Kind::MotionLike,
            other => {
                return Err(Error::invalid(
                    "kind",
                    format!("unknown generator `{other}`"),
                ))
            }
        })
    }
}

/// Global rotation applied to every observation (`v -> Q v`).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Rotation {
    #[default]
    None,
    /// Planar rotation of the first two coordinates (about the z-axis in 3d).
    Angle(f64),
    /// A full orthogonal `p x p` matrix.
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: Kind,
    pub length: usize,
    /// Used by kinds without a native dimensionality.
    pub dims: usize,
    pub noise_std: f64,
    pub rotation: Rotation,
    /// Seed of the optional monotone time reparametrization.
    pub warp: Option<u64>,
    /// Amplitude of the warp; must stay below 1/3 to keep it strictly increasing.
    pub warp_strength: f64,
    /// Seed of the curve shape (random kinds) and, unless overridden, of the noise.
    pub seed: u64,
    /// Separate noise stream, so samples can share a shape but not their noise.
    pub noise_seed: Option<u64>,
}

impl GeneratorSpec {
    pub fn new(kind: Kind, length: usize) -> Self {
        Self {
            kind,
            length,
            dims: kind
                .native_dims()
                .unwrap_or(if kind == Kind::ChromaLike { 12 } else { 8 }),
            noise_std: 0.0,
            rotation: Rotation::None,
            warp: None,
            warp_strength: 0.3,
            seed: 0,
            noise_seed: None,
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_rotation(mut self, rotation: Rotation) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn with_angle(self, theta: f64) -> Self {
        self.with_rotation(Rotation::Angle(theta))
    }

    pub fn with_warp(mut self, warp_seed: u64) -> Self {
        self.warp = Some(warp_seed);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise_seed = Some(seed);
        self
    }

    pub fn with_warp_strength(mut self, strength: f64) -> Self {
        self.warp_strength = strength;
        self
    }

    pub fn with_dims(mut self, dims: usize) -> Self {
        self.dims = dims;
        self
    }

    pub fn output_dims(&self) -> usize {
        self.kind.native_dims().unwrap_or(self.dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::invalid(
                "length",
                "generators need at least 2 timestamps",
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(
                "noise_std",
                "must be finite and nonnegative",
            ));
        }
        if self.output_dims() == 0 {
            return Err(Error::invalid("dims", "must be at least 1"));
        }
        if !(0.0..1.0 / 3.0).contains(&self.warp_strength) {
            return Err(Error::invalid("warp_strength", "must lie in [0, 1/3)"));
        }
        let p = self.output_dims();
        match &self.rotation {
            Rotation::None => {}
            Rotation::Angle(theta) => {
                if !theta.is_finite() {
                    return Err(Error::NonFinite("rotation angle"));
                }
                if p < 2 {
                    return Err(Error::invalid("rotation", "planar rotations need p >= 2"));
                }
            }
            Rotation::Matrix(q) => {
                if q.shape() != (p, p) {
                    return Err(Error::invalid(
                        "rotation",
                        format!("expected a {p}x{p} matrix, got {:?}", q.shape()),
                    ));
                }
                if (q.transpose() * q - DMatrix::identity(p, p)).norm() > 1e-8 {
                    return Err(Error::invalid("rotation", "matrix is not orthogonal"));
                }
            }
        }
        Ok(())
    }
}

/// `p x p` matrix rotating the first two coordinates by `theta`.
pub fn planar_rotation(p: usize, theta: f64) -> DMatrix<f64> {
    let mut q = DMatrix::identity(p, p);
    let (s, c) = theta.sin_cos();
    q[(0, 0)] = c;
    q[(0, 1)] = -s;
    q[(1, 0)] = s;
    q[(1, 1)] = c;
    q
}

/// Applies `v -> Q v` to every observation.
pub fn rotate(series: &TimeSeries, q: &DMatrix<f64>) -> Result<TimeSeries> {
    if q.shape() != (series.dims(), series.dims()) {
        return Err(Error::Dimensions {
            x: q.nrows(),
            y: series.dims(),
            requirement: "rotation must be square in the series dimensionality",
        });
    }
    TimeSeries::new(series.values() * q.transpose())
}

fn unit_grid(length: usize) -> impl Iterator<Item = f64> {
    (0..length).map(move |k| k as f64 / (length - 1) as f64)
}

fn base_curve(spec: &GeneratorSpec) -> DMatrix<f64> {
    let n = spec.length;
    let mut rng = rng_for(spec.seed, &[0xBA5E]);
    match spec.kind {
        Kind::Spiral2d => {
            let rows: Vec<f64> = unit_grid(n)
                .flat_map(|u| {
                    let phi = 4.0 * PI * u;
                    [u * phi.cos(), u * phi.sin()]
                })
                .collect();
            DMatrix::from_row_slice(n, 2, &rows)
        }
        Kind::Spiral3d => {
            let rows: Vec<f64> = unit_grid(n)
                .flat_map(|u| {
                    let phi = 4.0 * PI * u;
                    [u * phi.cos(), u * phi.sin(), u]
                })
                .collect();
            DMatrix::from_row_slice(n, 3, &rows)
        }
        Kind::Folium => {
            let a = 0.5;
            let (start, end) = (-0.2, PI / 2.0 + 0.2);
            let rows: Vec<f64> = unit_grid(n)
                .flat_map(|u| {
                    let th = start + (end - start) * u;
                    let (s, c) = th.sin_cos();
                    let r = 3.0 * a * s * c / (s.powi(3) + c.powi(3));
                    [r * c, r * s]
                })
                .collect();
            DMatrix::from_row_slice(n, 2, &rows)
        }
        Kind::RandomWalk => {
            let p = spec.dims;
            let scale = 1.0 / (n as f64).sqrt();
            let mut out = DMatrix::zeros(n, p);
            for t in 1..n {
                for k in 0..p {
                    let step: f64 = rng.sample(StandardNormal);
                    out[(t, k)] = out[(t - 1, k)] + scale * step;
                }
            }
            out
        }
        Kind::ChromaLike => chroma_song(n, spec.dims, &mut rng),
        Kind::MotionLike => {
            let freq = [1.0, 2.0, 3.0];
            let amp: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
            let phase: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let rows: Vec<f64> = unit_grid(n)
                .flat_map(|u| {
                    let tau = 2.0 * PI * u;
                    [
                        amp[0] * (freq[0] * tau + phase[0]).sin(),
                        amp[1] * (freq[1] * tau + phase[1]).sin(),
                        amp[2] * (freq[2] * tau + phase[2]).sin(),
                    ]
                })
                .collect();
            DMatrix::from_row_slice(n, 3, &rows)
        }
    }
}

/// A chord progression rendered as unit-norm chroma frames.
fn chroma_song<R: Rng>(len: usize, dims: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(len, dims);
    let mut t = 0;
    while t < len {
        let root = rng.random_range(0..dims);
        let third = if rng.random_bool(0.5) { 4 } else { 3 };
        let hold = rng.random_range(3..10).min(len - t);
        for row in t..t + hold {
            for c in 0..dims {
                out[(row, c)] = 0.05;
            }
            out[(row, root)] = 1.0;
            out[(row, (root + third) % dims)] = 0.8;
            out[(row, (root + 7) % dims)] = 0.6;
        }
        t += hold;
    }
    normalize_rows(&mut out);
    out
}

pub(crate) fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Fractional positions `w(k)` of a smooth strictly increasing warp with `w(0) = 0`, `w(T-1) = T-1`.
pub fn warp_positions(length: usize, seed: u64, strength: f64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[0x3A4F]);
    let coeffs: Vec<f64> = (0..3)
        .map(|_| rng.random_range(-strength..=strength))
        .collect();
    unit_grid(length)
        .map(|s| {
            let bend: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let w = (k + 1) as f64 * PI;
                    a * (w * s).sin() / w
                })
                .sum();
            (s + bend).clamp(0.0, 1.0) * (length - 1) as f64
        })
        .collect()
}

/// Resamples a series at warped positions.
pub fn warp(series: &TimeSeries, seed: u64, strength: f64) -> TimeSeries {
    series.sample_at(&warp_positions(series.len(), seed, strength))
}

/// Builds the series described by `spec`.
pub fn generate(spec: &GeneratorSpec) -> Result<TimeSeries> {
    spec.validate()?;
    if spec.kind == Kind::ChromaLike && spec.rotation != Rotation::None {
        return Err(Error::invalid(
            "rotation",
            "chroma series are transposed, not rotated",
        ));
    }
    let mut values = base_curve(spec);
    let p = values.ncols();
    match &spec.rotation {
        Rotation::None => {}
        Rotation::Angle(theta) => values *= planar_rotation(p, *theta).transpose(),
        Rotation::Matrix(q) => values *= q.transpose(),
    }
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("validated noise level");
        let mut rng = rng_for(spec.noise_seed.unwrap_or(spec.seed), &[0x0015E]);
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let series = TimeSeries::new(values)?;
    Ok(match spec.warp {
        Some(seed) => warp(&series, seed, spec.warp_strength),
        None => series,
    })
}

/// One pair of the rotation study.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPair {
    pub x: TimeSeries,
    pub y: TimeSeries,
    pub theta: f64,
    pub angle_index: usize,
    pub trial: usize,
}

/// Settings of the rotation study dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationStudySpec {
    pub length: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for RotationStudySpec {
    fn default() -> Self {
        Self {
            length: 60,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

/// `angles` evenly spaced over `[0, 2 pi)`.
pub fn angle_grid(angles: usize) -> Vec<f64> {
    (0..angles)
        .map(|k| 2.0 * PI * k as f64 / angles as f64)
        .collect()
}

/// `trials` noisy spiral pairs per angle; `y` is the reference spiral rotated by `theta`.
///
/// Noise seeds are derived from `(seed, trial, angle_index)`, so the `theta = 0`
/// pairs are two independent noisy copies of the same spiral.
pub fn generate_pairs_for_rotation_study(
    trials: usize,
    angles: &[f64],
    spec: &RotationStudySpec,
) -> Result<Vec<RotationPair>> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(trials * angles.len());
    for (angle_index, &theta) in angles.iter().enumerate() {
        for trial in 0..trials {
            let base = crate::rng::derive_seed(spec.seed, &[trial as u64, angle_index as u64]);
            let x = generate(
                &GeneratorSpec::new(Kind::Spiral2d, spec.length)
                    .with_noise(spec.noise_std)
                    .with_seed(crate::rng::derive_seed(base, &[0])),
            )?;
            let y = generate(
                &GeneratorSpec::new(Kind::Spiral2d, spec.length)
                    .with_noise(spec.noise_std)
                    .with_angle(theta)
                    .with_seed(crate::rng::derive_seed(base, &[1])),
            )?;
            out.push(RotationPair {
                x,
                y,
                theta,
                angle_index,
                trial,
            });
        }
    }
    Ok(out)
}
