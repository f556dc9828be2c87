//! Deterministic Gaussian sampling.
//!
//! Every sample stream is split into fixed-size chunks. Chunk `c` of a stream
//! tagged `tag` is drawn from a ChaCha8 generator keyed by the configuration
//! seed with stream id `(tag << 40) | c`, so any chunk can be regenerated in
//! isolation. Reductions evaluate chunks in parallel and merge the partial
//! accumulators in chunk order, which makes every result independent of the
//! rayon thread count.
//!
//! Normals come from the inverse CDF applied to open-interval uniforms. With
//! antithetic sampling each chunk holds half as many base points and every
//! base point `x` is paired with its reflection `-x`; the pair counts as one
//! observation when forming standard errors.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream tags. Distinct tags give statistically independent streams under
/// the same seed.
pub mod tags {
    pub const VOLUME: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const PERTURB: u64 = 3;
    pub const DISCRETE: u64 = 4;
    pub const ALIGN: u64 = 5;
    pub const MINKOWSKI: u64 = 6;
    pub const OPTIMIZE: u64 = 7;
    /// Facet streams use `FACET_BASE + pair_index`.
    pub const FACET_BASE: u64 = 1 << 12;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub sample_count: u64,
    pub seed: u64,
    pub dimension: usize,
    pub chunk_size: u64,
    pub antithetic: bool,
}

impl IntegrationConfig {
    pub const DEFAULT_CHUNK: u64 = 10_000;

    pub fn new(sample_count: u64, seed: u64, dimension: usize) -> Self {
        let chunk_size = if sample_count % Self::DEFAULT_CHUNK == 0 {
            Self::DEFAULT_CHUNK
        } else {
            sample_count
        };
        Self {
            sample_count,
            seed,
            dimension,
            chunk_size,
            antithetic: false,
        }
    }

    pub fn with_antithetic(mut self, antithetic: bool) -> Self {
        self.antithetic = antithetic;
        self
    }

    pub fn with_chunk_size(mut self, chunk_size: u64) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn with_samples(mut self, sample_count: u64) -> Self {
        self.sample_count = sample_count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::Config("sample_count must be positive".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be positive".into()));
        }
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if self.sample_count % self.chunk_size != 0 {
            return Err(Error::Config(format!(
                "sample_count {} is not a multiple of chunk_size {}",
                self.sample_count, self.chunk_size
            )));
        }
        if self.antithetic && self.chunk_size % 2 != 0 {
            return Err(Error::Config(
                "antithetic sampling needs an even chunk_size".into(),
            ));
        }
        Ok(())
    }

    pub fn chunk_count(&self) -> u64 {
        self.sample_count / self.chunk_size
    }

    /// Base points drawn per chunk (half the chunk when antithetic).
    pub fn base_points_per_chunk(&self) -> usize {
        if self.antithetic {
            (self.chunk_size / 2) as usize
        } else {
            self.chunk_size as usize
        }
    }

    /// Number of independent observations behind a standard error.
    pub fn observation_count(&self) -> u64 {
        self.chunk_count() * self.base_points_per_chunk() as u64
    }
}

/// Generator for chunk `chunk` of stream `tag`.
pub fn chunk_rng(seed: u64, tag: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) | chunk);
    rng
}

/// Uniform on the open interval (0, 1) with 52 random bits.
#[inline]
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

#[inline]
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    inverse_normal_cdf(open_uniform(rng))
}

pub fn fill_normals<R: RngCore + ?Sized>(rng: &mut R, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = standard_normal(rng);
    }
}

/// Inverse of the standard normal CDF (Wichura, AS 241, PPND16).
/// Relative accuracy about 1e-16 on (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                + 67265.770927008700853)
                * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                + 39307.89580009271061)
                * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// A view of one chunk of base points, each `width` coordinates long.
pub struct Chunk<'a> {
    pub points: &'a [f64],
    pub width: usize,
    pub antithetic: bool,
}

impl Chunk<'_> {
    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.width)
    }
}

/// Evaluates `build` for every chunk index in parallel and merges the
/// results in index order.
pub fn reduce_ordered<A, B, M>(chunks: u64, build: B, mut merge: M) -> Option<A>
where
    A: Send,
    B: Fn(u64) -> A + Sync + Send,
    M: FnMut(&mut A, A),
{
    let parts: Vec<A> = (0..chunks).into_par_iter().map(build).collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next()?;
    for part in iter {
        merge(&mut acc, part);
    }
    Some(acc)
}

/// Streams `cfg` through `fold`, regenerating each chunk of `width`-wide
/// normal vectors from the counter-based generator.
pub fn stream_fold<A, I, F, M>(
    cfg: &IntegrationConfig,
    width: usize,
    tag: u64,
    init: I,
    fold: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &Chunk<'_>) + Sync + Send,
    M: FnMut(&mut A, A),
{
    cfg.validate()?;
    let per_chunk = cfg.base_points_per_chunk();
    let acc = reduce_ordered(
        cfg.chunk_count(),
        |c| {
            let mut rng = chunk_rng(cfg.seed, tag, c);
            let mut buf = vec![0.0; per_chunk * width];
            fill_normals(&mut rng, &mut buf);
            let mut acc = init();
            fold(
                &mut acc,
                &Chunk {
                    points: &buf,
                    width,
                    antithetic: cfg.antithetic,
                },
            );
            acc
        },
        merge,
    );
    Ok(acc.expect("validated config has at least one chunk"))
}

/// A materialized sample stream. Folding over a `SampleSet` gives results
/// identical to [`stream_fold`] with the same configuration, width and tag,
/// and is cheaper when the same points are evaluated many times (common
/// random numbers inside calibration and optimization loops).
#[derive(Debug, Clone)]
pub struct SampleSet {
    cfg: IntegrationConfig,
    width: usize,
    points: Vec<f64>,
}

impl SampleSet {
    pub fn generate(cfg: &IntegrationConfig, width: usize, tag: u64) -> Result<Self> {
        cfg.validate()?;
        let per_chunk = cfg.base_points_per_chunk() * width;
        let chunks: Vec<Vec<f64>> = (0..cfg.chunk_count())
            .into_par_iter()
            .map(|c| {
                let mut rng = chunk_rng(cfg.seed, tag, c);
                let mut buf = vec![0.0; per_chunk];
                fill_normals(&mut rng, &mut buf);
                buf
            })
            .collect();
        Ok(Self {
            cfg: *cfg,
            width,
            points: chunks.concat(),
        })
    }

    /// Standard Gaussian points in `cfg.dimension` dimensions.
    pub fn gaussian(cfg: &IntegrationConfig) -> Result<Self> {
        Self::generate(cfg, cfg.dimension, tags::VOLUME)
    }

    pub fn config(&self) -> &IntegrationConfig {
        &self.cfg
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn antithetic(&self) -> bool {
        self.cfg.antithetic
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn observation_count(&self) -> u64 {
        self.cfg.observation_count()
    }

    pub fn fold<A, I, F, M>(&self, init: I, fold: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, &Chunk<'_>) + Sync + Send,
        M: FnMut(&mut A, A),
    {
        let per_chunk = self.cfg.base_points_per_chunk() * self.width;
        reduce_ordered(
            self.cfg.chunk_count(),
            |c| {
                let start = c as usize * per_chunk;
                let mut acc = init();
                fold(
                    &mut acc,
                    &Chunk {
                        points: &self.points[start..start + per_chunk],
                        width: self.width,
                        antithetic: self.cfg.antithetic,
                    },
                );
                acc
            },
            merge,
        )
        .expect("validated config has at least one chunk")
    }
}

/// Running mean and variance of a scalar observation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ScalarStats {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    }

    /// Sample standard deviation over √N.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Correlated standard Gaussian pairs `(X, Y)` with `Y = ρX + √(1−ρ²)Z`.
#[derive(Debug, Clone)]
pub struct CorrelatedPairs {
    pub rho: f64,
    pub dimension: usize,
    /// Row-major `X` samples, reflections included when antithetic.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl CorrelatedPairs {
    pub fn len(&self) -> usize {
        self.x.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn pair(&self, k: usize) -> (&[f64], &[f64]) {
        let d = self.dimension;
        (&self.x[k * d..(k + 1) * d], &self.y[k * d..(k + 1) * d])
    }
}

pub fn check_correlation(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::Domain(format!(
            "correlation must satisfy |rho| < 1, got {rho}"
        )));
    }
    Ok(())
}

/// Builds `y = ρx + √(1−ρ²)z` from a `2d`-wide base point `[x, z]`.
#[inline]
pub fn correlate(base: &[f64], rho: f64, y: &mut [f64]) {
    let d = y.len();
    let s = (1.0 - rho * rho).sqrt();
    for k in 0..d {
        y[k] = rho * base[k] + s * base[d + k];
    }
}

/// Materializes the correlated pair stream used by the noise-stability
/// estimators.
pub fn sample_correlated_pairs(rho: f64, cfg: &IntegrationConfig) -> Result<CorrelatedPairs> {
    check_correlation(rho)?;
    let d = cfg.dimension;
    let set = SampleSet::generate(cfg, 2 * d, tags::PAIRS)?;
    let mut x = Vec::with_capacity(cfg.sample_count as usize * d);
    let mut y = Vec::with_capacity(cfg.sample_count as usize * d);
    let mut yk = vec![0.0; d];
    for base in set.points().chunks_exact(2 * d) {
        correlate(base, rho, &mut yk);
        x.extend_from_slice(&base[..d]);
        y.extend_from_slice(&yk);
        if cfg.antithetic {
            x.extend(base[..d].iter().map(|v| -v));
            y.extend(yk.iter().map(|v| -v));
        }
    }
    Ok(CorrelatedPairs {
        rho,
        dimension: d,
        x,
        y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn inverse_cdf_matches_reference_cdf() {
        let normal = Normal::standard();
        for &p in &[1e-300, 1e-12, 1e-4, 0.02, 0.3, 0.5, 0.7, 0.975, 1.0 - 1e-9] {
            let x = inverse_normal_cdf(p);
            let back = normal.cdf(x);
            assert!(
                ((back - p) / p.min(1.0 - p)).abs() < 1e-9,
                "p={p} x={x} back={back}"
            );
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn uniforms_stay_open() {
        struct Fixed(u64);
        impl RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {}
        }
        assert!(open_uniform(&mut Fixed(0)) > 0.0);
        assert!(open_uniform(&mut Fixed(u64::MAX)) < 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(IntegrationConfig::new(1000, 0, 2).validate().is_ok());
        let bad = IntegrationConfig::new(1000, 0, 2).with_chunk_size(300);
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let odd = IntegrationConfig::new(999, 0, 2)
            .with_chunk_size(333)
            .with_antithetic(true);
        assert!(odd.validate().is_err());
        assert!(IntegrationConfig::new(0, 0, 2).validate().is_err());
    }

    #[test]
    fn stream_and_sample_set_agree() {
        let cfg = IntegrationConfig::new(4000, 9, 3).with_chunk_size(1000);
        let sum = |acc: &mut f64, c: &Chunk<'_>| {
            for x in c.iter() {
                *acc += x[0] - 0.5 * x[2];
            }
        };
        let a = stream_fold(&cfg, 3, tags::VOLUME, || 0.0, sum, |a, b| *a += b).unwrap();
        let set = SampleSet::gaussian(&cfg).unwrap();
        let b = set.fold(|| 0.0, sum, |a, b| *a += b);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn chunks_are_independent_of_thread_count() {
        let cfg = IntegrationConfig::new(20_000, 3, 2).with_chunk_size(1000);
        let run = || {
            stream_fold(
                &cfg,
                2,
                tags::VOLUME,
                ScalarStats::default,
                |s, c| {
                    for x in c.iter() {
                        s.push(x[0] * x[1]);
                    }
                },
                |a, b| a.merge(&b),
            )
            .unwrap()
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(one, four);
    }

    #[test]
    fn independent_pairs_at_zero_correlation() {
        let n = 200_000;
        let cfg = IntegrationConfig::new(n, 11, 1);
        let pairs = sample_correlated_pairs(0.0, &cfg).unwrap();
        let mean: f64 = (0..pairs.len())
            .map(|k| {
                let (x, y) = pairs.pair(k);
                x[0] * y[0]
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn near_unit_correlation_is_accepted() {
        let cfg = IntegrationConfig::new(10_000, 1, 2);
        let rho = 1.0 - 1e-12;
        let pairs = sample_correlated_pairs(rho, &cfg).unwrap();
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for k in 0..pairs.len() {
            let (x, y) = pairs.pair(k);
            sxy += x[0] * y[0];
            sxx += x[0] * x[0];
            syy += y[0] * y[0];
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!((corr - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unit_correlation_rejected() {
        let cfg = IntegrationConfig::new(100, 1, 2);
        assert!(matches!(
            sample_correlated_pairs(1.0, &cfg),
            Err(Error::Domain(_))
        ));
        assert!(sample_correlated_pairs(-1.5, &cfg).is_err());
    }

    #[test]
    fn half_correlation_band() {
        let n = 1_000_000;
        let cfg = IntegrationConfig::new(n, 5, 2);
        let pairs = sample_correlated_pairs(0.5, &cfg).unwrap();
        let mut stats = ScalarStats::default();
        for k in 0..pairs.len() {
            let (x, y) = pairs.pair(k);
            stats.push(x[0] * y[0]);
        }
        // Var(X₁Y₁) = 1 + ρ² for jointly Gaussian unit variables.
        let band = 3.0 * (1.25f64 / n as f64).sqrt();
        assert!((stats.mean() - 0.5).abs() <= band, "{}", stats.mean());
        assert!(stats.mean() >= 0.497 && stats.mean() <= 0.503);
    }

    #[test]
    fn antithetic_pairs_reflect_exactly() {
        let cfg = IntegrationConfig::new(100, 2, 2).with_antithetic(true);
        let pairs = sample_correlated_pairs(0.3, &cfg).unwrap();
        for k in (0..pairs.len()).step_by(2) {
            let (x0, y0) = pairs.pair(k);
            let (x1, y1) = pairs.pair(k + 1);
            for j in 0..2 {
                assert_eq!(x0[j], -x1[j]);
                assert_eq!(y0[j], -y1[j]);
            }
        }
    }
}
