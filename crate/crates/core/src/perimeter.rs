//! Gaussian perimeter of partitions and sets.
//!
//! Two independent estimators are provided. The facet estimator uses the
//! product structure of the Gaussian: on the hyperplane `⟨x, N⟩ = b` the
//! density factors as `γ_1(b) · γ_{d−1}(y)` in an orthonormal frame of the
//! hyperplane, so each interface mass is `γ_1(b)` times the in-plane
//! Gaussian measure of the points where both cells are the joint argmax.
//! The Minkowski estimator measures outer ε-collars and extrapolates to
//! ε → 0.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gauss::{dot, norm, normal_pdf, unit_sphere_area};
use crate::partition::AffinePartition;
use crate::region::Region;
use crate::sampling::{stream_fold, tags, IntegrationConfig, ScalarStats};

/// Top-two gap tolerance for joint-argmax membership on a facet.
pub const JOINT_ARGMAX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerimeterMethod {
    Facet,
    Minkowski,
    ClosedForm,
}

impl PerimeterMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Facet => "facet",
            Self::Minkowski => "minkowski",
            Self::ClosedForm => "closed-form",
        }
    }
}

/// Interface between cells `i < j`, lying in `{⟨x, normal⟩ = offset}` with
/// `normal` the unit normal pointing from `Ω_i` into `Ω_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceFacet {
    pub i: usize,
    pub j: usize,
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl InterfaceFacet {
    /// `None` when the two functionals are parallel with distinct offsets
    /// (the interface is empty).
    pub fn between(partition: &AffinePartition, i: usize, j: usize) -> Result<Option<Self>> {
        let diff: Vec<f64> = partition
            .direction(j)
            .iter()
            .zip(partition.direction(i))
            .map(|(b, a)| b - a)
            .collect();
        let len = norm(&diff);
        let dc = partition.offsets[i] - partition.offsets[j];
        if len == 0.0 {
            if dc == 0.0 {
                return Err(Error::DegeneratePair { i, j });
            }
            return Ok(None);
        }
        Ok(Some(Self {
            i,
            j,
            normal: diff.iter().map(|v| v / len).collect(),
            offset: dc / len,
        }))
    }

    /// Orthonormal basis of the hyperplane's direction space, row-major
    /// `(d−1) × d`, by Gram–Schmidt on the coordinate axes least aligned
    /// with the normal.
    pub fn plane_basis(&self) -> Vec<f64> {
        let d = self.normal.len();
        let skip = (0..d)
            .max_by(|&a, &b| self.normal[a].abs().total_cmp(&self.normal[b].abs()))
            .unwrap_or(0);
        let mut basis: Vec<Vec<f64>> = vec![self.normal.clone()];
        for axis in (0..d).filter(|&a| a != skip) {
            let mut v = vec![0.0; d];
            v[axis] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        basis[1..].concat()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMass {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
    pub stderr: f64,
    /// Unit normal from `Ω_i` into `Ω_j`; zero for empty interfaces.
    pub normal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerimeterReport {
    pub method: PerimeterMethod,
    pub pairs: Vec<PairMass>,
    pub total: f64,
    pub total_stderr: f64,
}

impl PerimeterReport {
    fn from_pairs(method: PerimeterMethod, pairs: Vec<PairMass>) -> Self {
        let total = pairs.iter().map(|p| p.mass).sum();
        let total_stderr = pairs.iter().map(|p| p.stderr * p.stderr).sum::<f64>().sqrt();
        Self {
            method,
            pairs,
            total,
            total_stderr,
        }
    }

    pub fn mass(&self, i: usize, j: usize) -> Option<f64> {
        let (i, j) = (i.min(j), i.max(j));
        self.pairs.iter().find(|p| p.i == i && p.j == j).map(|p| p.mass)
    }

    /// CSV rows `i,j,mass,stderr,method` with a header.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["i", "j", "mass", "stderr", "method"])?;
        for p in &self.pairs {
            w.write_record([
                p.i.to_string(),
                p.j.to_string(),
                p.mass.to_string(),
                p.stderr.to_string(),
                self.method.as_str().to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Restriction of a facet integral to `‖x − center‖ > radius`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RadialCut<'a> {
    pub center: &'a [f64],
    pub radius: f64,
}

fn pair_index(m: usize, i: usize, j: usize) -> u64 {
    (i * m + j) as u64
}

fn joint_argmax(partition: &AffinePartition, i: usize, j: usize, x: &[f64]) -> bool {
    let level = 0.5 * (partition.score(i, x) + partition.score(j, x));
    (0..partition.m)
        .filter(|&k| k != i && k != j)
        .all(|k| partition.score(k, x) <= level + JOINT_ARGMAX_TOL)
}

/// A facet prepared for in-plane sampling: `y ∈ R^{d−1}` maps to
/// `base + Σ y_k e_k` on the hyperplane.
struct FacetProbe<'a> {
    partition: &'a AffinePartition,
    i: usize,
    j: usize,
    base: Vec<f64>,
    basis: Vec<f64>,
    weight: f64,
}

impl<'a> FacetProbe<'a> {
    fn new(partition: &'a AffinePartition, facet: &InterfaceFacet) -> Self {
        Self {
            partition,
            i: facet.i,
            j: facet.j,
            base: facet.normal.iter().map(|v| v * facet.offset).collect(),
            basis: facet.plane_basis(),
            weight: normal_pdf(facet.offset),
        }
    }

    /// `weight` if the image of `sign · y` is a joint argmax outside the
    /// cut, else 0. `x` is scratch of length `d`.
    fn hit(&self, y: &[f64], sign: f64, x: &mut [f64], cut: Option<RadialCut<'_>>) -> f64 {
        let d = x.len();
        x.copy_from_slice(&self.base);
        for (k, yk) in y.iter().enumerate() {
            let e = &self.basis[k * d..(k + 1) * d];
            x.iter_mut().zip(e).for_each(|(a, b)| *a += sign * yk * b);
        }
        let outside = match cut {
            None => true,
            Some(c) => {
                x.iter()
                    .zip(c.center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    > c.radius * c.radius
            }
        };
        if outside && joint_argmax(self.partition, self.i, self.j, x) {
            self.weight
        } else {
            0.0
        }
    }
}

pub(crate) fn facet_mass(
    partition: &AffinePartition,
    facet: &InterfaceFacet,
    cfg: &IntegrationConfig,
    cut: Option<RadialCut<'_>>,
) -> Result<(f64, f64)> {
    let d = partition.d;
    let probe = FacetProbe::new(partition, facet);
    if d == 1 {
        let mut x = vec![0.0; 1];
        return Ok((probe.hit(&[], 1.0, &mut x, cut), 0.0));
    }
    let width = d - 1;
    let tag = tags::FACET_BASE + pair_index(partition.m, facet.i, facet.j);
    let stats = stream_fold(
        &cfg.with_dimension(width),
        width,
        tag,
        ScalarStats::default,
        |stats, chunk| {
            let mut x = vec![0.0; d];
            for y in chunk.iter() {
                let v = if chunk.antithetic {
                    0.5 * (probe.hit(y, 1.0, &mut x, cut) + probe.hit(y, -1.0, &mut x, cut))
                } else {
                    probe.hit(y, 1.0, &mut x, cut)
                };
                stats.push(v);
            }
        },
        |a, b| a.merge(&b),
    )?;
    Ok((stats.mean(), stats.stderr()))
}

/// `P(candidate) − P(reference)` by the facet estimator, with each cell
/// pair of both partitions driven by the same in-plane stream. Returns the
/// difference and its paired standard error.
pub fn facet_perimeter_difference(
    reference: &AffinePartition,
    candidate: &AffinePartition,
    cfg: &IntegrationConfig,
) -> Result<(f64, f64)> {
    reference.validate()?;
    candidate.validate()?;
    if reference.m != candidate.m || reference.d != candidate.d {
        return Err(Error::Contract("partitions differ in shape".into()));
    }
    let (m, d) = (reference.m, reference.d);
    if cfg.dimension != d {
        return Err(Error::Contract("configuration dimension differs from the partitions".into()));
    }
    cfg.validate()?;
    let (mut total, mut var) = (0.0, 0.0);
    for i in 0..m {
        for j in i + 1..m {
            let fr = InterfaceFacet::between(reference, i, j)?;
            let fc = InterfaceFacet::between(candidate, i, j)?;
            let pr = fr.as_ref().map(|f| FacetProbe::new(reference, f));
            let pc = fc.as_ref().map(|f| FacetProbe::new(candidate, f));
            let diff = |y: &[f64], sign: f64, x: &mut [f64]| {
                let c = pc.as_ref().map_or(0.0, |p| p.hit(y, sign, x, None));
                let r = pr.as_ref().map_or(0.0, |p| p.hit(y, sign, x, None));
                c - r
            };
            if d == 1 {
                total += diff(&[], 1.0, &mut [0.0]);
                continue;
            }
            let width = d - 1;
            let stats = stream_fold(
                &cfg.with_dimension(width),
                width,
                tags::FACET_BASE + pair_index(m, i, j),
                ScalarStats::default,
                |stats, chunk| {
                    let mut x = vec![0.0; d];
                    for y in chunk.iter() {
                        let v = if chunk.antithetic {
                            0.5 * (diff(y, 1.0, &mut x) + diff(y, -1.0, &mut x))
                        } else {
                            diff(y, 1.0, &mut x)
                        };
                        stats.push(v);
                    }
                },
                |a, b| a.merge(&b),
            )?;
            total += stats.mean();
            var += stats.stderr().powi(2);
        }
    }
    Ok((total, var.sqrt()))
}

pub(crate) fn facet_report(
    partition: &AffinePartition,
    cfg: &IntegrationConfig,
    cut: Option<RadialCut<'_>>,
) -> Result<PerimeterReport> {
    partition.validate()?;
    if cfg.dimension != partition.d {
        return Err(Error::Contract(format!(
            "partition lives in R^{} but the configuration samples R^{}",
            partition.d, cfg.dimension
        )));
    }
    cfg.validate()?;
    let m = partition.m;
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            match InterfaceFacet::between(partition, i, j)? {
                None => pairs.push(PairMass {
                    i,
                    j,
                    mass: 0.0,
                    stderr: 0.0,
                    normal: vec![0.0; partition.d],
                }),
                Some(facet) => {
                    let (mass, stderr) = facet_mass(partition, &facet, cfg, cut)?;
                    pairs.push(PairMass {
                        i,
                        j,
                        mass,
                        stderr,
                        normal: facet.normal,
                    });
                }
            }
        }
    }
    Ok(PerimeterReport::from_pairs(PerimeterMethod::Facet, pairs))
}

/// Interface masses `γ(Σ_ij)` of an affine partition. Each facet draws its
/// own in-plane stream, keyed by the cell pair, so partitions that share a
/// pair share its random numbers.
pub fn facet_perimeter(partition: &AffinePartition, cfg: &IntegrationConfig) -> Result<PerimeterReport> {
    facet_report(partition, cfg, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollarEstimate {
    pub epsilon: f64,
    /// `γ(outer ε-collar) / ε`.
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiEstimate {
    pub table: Vec<CollarEstimate>,
    /// Intercept of the least-squares line through `(ε, value)`.
    pub extrapolated: f64,
    pub stderr: f64,
    /// Fitted first-order bias coefficient.
    pub slope: f64,
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.len() < 3 {
        return Err(Error::Config(format!(
            "epsilon schedule needs at least 3 values, got {}",
            schedule.len()
        )));
    }
    if schedule.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Config("epsilon values must be positive".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("epsilon schedule must be strictly decreasing".into()));
    }
    Ok(())
}

/// Least-squares intercept weights: `intercept = Σ λ_k y_k`.
pub(crate) fn intercept_weights(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    xs.iter().map(|x| 1.0 / n - mean * (x - mean) / sxx).collect()
}

pub(crate) fn slope_weights(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    xs.iter().map(|x| (x - mean) / sxx).collect()
}

/// Minkowski content of a weighted family of sets: `Σ_r weight_r · P(Ω_r)`.
/// All sets share one Gaussian sample stream, so standard errors account for
/// their correlation.
pub fn minkowski_weighted(
    regions: &[(&dyn Region, f64)],
    schedule: &[f64],
    cfg: &IntegrationConfig,
) -> Result<MinkowskiEstimate> {
    check_schedule(schedule)?;
    for (region, _) in regions {
        if region.dimension() != cfg.dimension {
            return Err(Error::Contract(format!(
                "region lives in R^{} but the configuration samples R^{}",
                region.dimension(),
                cfg.dimension
            )));
        }
    }
    let lambda = intercept_weights(schedule);
    let kappa = slope_weights(schedule);
    let eps_max = schedule[0];
    let levels = schedule.len();
    let d = cfg.dimension;
    // Accumulator: per-ε statistics, intercept and slope statistics.
    let (per_eps, intercept, slope) = stream_fold(
        cfg,
        d,
        tags::MINKOWSKI,
        || (vec![ScalarStats::default(); levels], ScalarStats::default(), ScalarStats::default()),
        |(per_eps, intercept, slope), chunk| {
            let mut reflected = vec![0.0; d];
            let mut obs = vec![0.0; levels];
            let collar = |x: &[f64], scale: f64, obs: &mut [f64]| {
                for (region, weight) in regions {
                    if region.contains(x) {
                        continue;
                    }
                    if region.distance_lower_bound(x) >= eps_max {
                        continue;
                    }
                    let dist = region.distance(x);
                    for (k, eps) in schedule.iter().enumerate() {
                        if dist < *eps {
                            obs[k] += scale * weight / eps;
                        }
                    }
                }
            };
            for x in chunk.iter() {
                obs.iter_mut().for_each(|v| *v = 0.0);
                if chunk.antithetic {
                    collar(x, 0.5, &mut obs);
                    reflected.iter_mut().zip(x).for_each(|(r, v)| *r = -v);
                    collar(&reflected, 0.5, &mut obs);
                } else {
                    collar(x, 1.0, &mut obs);
                }
                for (s, v) in per_eps.iter_mut().zip(&obs) {
                    s.push(*v);
                }
                intercept.push(lambda.iter().zip(&obs).map(|(l, v)| l * v).sum());
                slope.push(kappa.iter().zip(&obs).map(|(l, v)| l * v).sum());
            }
        },
        |a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| x.merge(y));
            a.1.merge(&b.1);
            a.2.merge(&b.2);
        },
    )?;
    Ok(MinkowskiEstimate {
        table: schedule
            .iter()
            .zip(&per_eps)
            .map(|(e, s)| CollarEstimate {
                epsilon: *e,
                value: s.mean(),
                stderr: s.stderr(),
            })
            .collect(),
        extrapolated: intercept.mean(),
        stderr: intercept.stderr(),
        slope: slope.mean(),
    })
}

/// Gaussian surface area of one set from its outer ε-collars.
pub fn minkowski_perimeter(region: &dyn Region, schedule: &[f64], cfg: &IntegrationConfig) -> Result<MinkowskiEstimate> {
    minkowski_weighted(&[(region, 1.0)], schedule, cfg)
}

/// Total interface mass of a partition from cell collars; every interface
/// borders two cells, so each cell enters with weight 1/2.
pub fn minkowski_partition_perimeter(
    partition: &AffinePartition,
    schedule: &[f64],
    cfg: &IntegrationConfig,
) -> Result<MinkowskiEstimate> {
    let cells: Vec<crate::region::AffineCell<'_>> =
        (0..partition.m).map(|i| crate::region::AffineCell::new(partition, i)).collect();
    let regions: Vec<(&dyn Region, f64)> = cells.iter().map(|c| (c as &dyn Region, 0.5)).collect();
    minkowski_weighted(&regions, schedule, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub radius: f64,
    pub tail_mass: f64,
    pub tail_stderr: f64,
    /// `3m γ({‖x‖ = r})`, the stated constant.
    pub bound: f64,
    /// `2m γ({‖x‖ = r})`, the constant reached in the proof sketch.
    pub bound_2m: f64,
    pub margin: f64,
    pub margin_2m: f64,
    pub pass: bool,
}

/// Gaussian measure of the sphere `{‖x‖ = r}` in `R^d`.
pub fn sphere_gaussian_measure(d: usize, r: f64) -> f64 {
    unit_sphere_area(d - 1) * r.powi(d as i32 - 1) * (2.0 * PI).powf(-(d as f64) / 2.0) * (-0.5 * r * r).exp()
}

/// Interface mass outside the ball of radius `r` around `w`, compared with
/// the decay bound `3m γ({‖x‖ = r})`.
pub fn tail_perimeter_check(
    partition: &AffinePartition,
    r: f64,
    w: &[f64],
    cfg: &IntegrationConfig,
) -> Result<TailCheck> {
    if w.len() != partition.d {
        return Err(Error::Contract("shift has the wrong dimension".into()));
    }
    let threshold = (partition.d as f64).sqrt() + norm(w);
    if !(r > threshold) {
        return Err(Error::HypothesisNotMet { r, threshold });
    }
    let report = facet_report(partition, cfg, Some(RadialCut { center: w, radius: r }))?;
    let sphere = sphere_gaussian_measure(partition.d, r);
    let m = partition.m as f64;
    let bound = 3.0 * m * sphere;
    let bound_2m = 2.0 * m * sphere;
    Ok(TailCheck {
        radius: r,
        tail_mass: report.total,
        tail_stderr: report.total_stderr,
        bound,
        bound_2m,
        margin: bound - report.total,
        margin_2m: bound_2m - report.total,
        pass: report.total <= bound + 3.0 * report.total_stderr,
    })
}
