//! Monte Carlo volumes and first moments of partition cells, the moment
//! functional, and the divergence-identity check.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gauss::{norm, INV_SQRT_2PI};
use crate::partition::CellClassifier;
use crate::perimeter::facet_perimeter;
use crate::region::Region;
use crate::sampling::{stream_fold, tags, Chunk, IntegrationConfig, SampleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub volumes: Vec<f64>,
    pub stderr: Vec<f64>,
    pub observations: u64,
}

/// Per-chunk accumulator of cell indicators and cell-restricted first
/// moments, with the full second-moment matrix of the moment observations
/// for delta-method standard errors.
#[derive(Debug, Clone)]
pub(crate) struct CellAccumulator {
    m: usize,
    d: usize,
    track_cross: bool,
    pub(crate) count: u64,
    vol: Vec<f64>,
    vol_sq: Vec<f64>,
    mom: Vec<f64>,
    cross: Vec<f64>,
}

impl CellAccumulator {
    pub(crate) fn new(m: usize, d: usize, track_cross: bool) -> Self {
        let k = m * d;
        Self {
            m,
            d,
            track_cross,
            count: 0,
            vol: vec![0.0; m],
            vol_sq: vec![0.0; m],
            mom: vec![0.0; k],
            cross: if track_cross { vec![0.0; k * k] } else { Vec::new() },
        }
    }

    pub(crate) fn merge(&mut self, other: Self) {
        self.count += other.count;
        let add = |a: &mut Vec<f64>, b: Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.vol, other.vol);
        add(&mut self.vol_sq, other.vol_sq);
        add(&mut self.mom, other.mom);
        add(&mut self.cross, other.cross);
    }

    pub(crate) fn consume<C: CellClassifier + ?Sized>(&mut self, cells: &C, chunk: &Chunk<'_>) {
        let d = self.d;
        let mut reflected = vec![0.0; d];
        for x in chunk.iter() {
            self.count += 1;
            let a = cells.classify(x);
            if !chunk.antithetic {
                self.vol[a] += 1.0;
                self.vol_sq[a] += 1.0;
                self.add_moment(a, 1.0, x);
                if self.track_cross {
                    self.add_cross(a, x, a, x, 1.0);
                }
                continue;
            }
            for (r, v) in reflected.iter_mut().zip(x) {
                *r = -v;
            }
            let b = cells.classify(&reflected);
            if a == b {
                // x and −x cancel in the moment observation.
                self.vol[a] += 1.0;
                self.vol_sq[a] += 1.0;
            } else {
                self.vol[a] += 0.5;
                self.vol[b] += 0.5;
                self.vol_sq[a] += 0.25;
                self.vol_sq[b] += 0.25;
                self.add_moment(a, 0.5, x);
                self.add_moment(b, -0.5, x);
                if self.track_cross {
                    self.add_cross(a, x, a, x, 0.25);
                    self.add_cross(b, x, b, x, 0.25);
                    self.add_cross(a, x, b, x, -0.25);
                    self.add_cross(b, x, a, x, -0.25);
                }
            }
        }
    }

    #[inline]
    fn add_moment(&mut self, cell: usize, weight: f64, x: &[f64]) {
        let d = self.d;
        for (m, v) in self.mom[cell * d..(cell + 1) * d].iter_mut().zip(x) {
            *m += weight * v;
        }
    }

    #[inline]
    fn add_cross(&mut self, a: usize, x: &[f64], b: usize, y: &[f64], weight: f64) {
        let d = self.d;
        let k = self.m * d;
        for p in 0..d {
            let row = (a * d + p) * k + b * d;
            for q in 0..d {
                self.cross[row + q] += weight * x[p] * y[q];
            }
        }
    }

    fn n(&self) -> f64 {
        self.count as f64
    }

    pub(crate) fn volumes(&self) -> Vec<f64> {
        self.vol.iter().map(|v| v / self.n()).collect()
    }

    pub(crate) fn volume_stderr(&self) -> Vec<f64> {
        let n = self.n();
        self.vol
            .iter()
            .zip(&self.vol_sq)
            .map(|(s, sq)| {
                if n < 2.0 {
                    return 0.0;
                }
                let mean = s / n;
                (((sq - n * mean * mean) / (n - 1.0)).max(0.0) / n).sqrt()
            })
            .collect()
    }

    pub(crate) fn moments(&self) -> Vec<f64> {
        self.mom.iter().map(|v| v / self.n()).collect()
    }

    /// Covariance of the moment observation vector (length `m·d`).
    fn covariance(&self) -> Vec<f64> {
        let n = self.n();
        let k = self.m * self.d;
        let mean = self.moments();
        let mut cov = vec![0.0; k * k];
        if n < 2.0 || !self.track_cross {
            return cov;
        }
        for p in 0..k {
            for q in 0..k {
                cov[p * k + q] = (self.cross[p * k + q] - n * mean[p] * mean[q]) / (n - 1.0);
            }
        }
        cov
    }

    pub(crate) fn volume_report(&self) -> VolumeReport {
        VolumeReport {
            volumes: self.volumes(),
            stderr: self.volume_stderr(),
            observations: self.count,
        }
    }
}

/// Gaussian volume of every cell of `cells`.
pub fn mc_volumes<C: CellClassifier>(cells: &C, cfg: &IntegrationConfig) -> Result<VolumeReport> {
    check_dimension(cells, cfg)?;
    let (m, d) = (cells.cell_count(), cells.dimension());
    let acc = stream_fold(
        cfg,
        d,
        tags::VOLUME,
        || CellAccumulator::new(m, d, false),
        |acc, chunk| acc.consume(cells, chunk),
        |a, b| a.merge(b),
    )?;
    Ok(acc.volume_report())
}

/// Same as [`mc_volumes`] on a pre-drawn sample set.
pub fn volumes_on<C: CellClassifier + ?Sized>(cells: &C, samples: &SampleSet) -> VolumeReport {
    let (m, d) = (cells.cell_count(), cells.dimension());
    samples
        .fold(
            || CellAccumulator::new(m, d, false),
            |acc, chunk| acc.consume(cells, chunk),
            |a, b| a.merge(b),
        )
        .volume_report()
}

fn check_dimension<C: CellClassifier + ?Sized>(cells: &C, cfg: &IntegrationConfig) -> Result<()> {
    if cells.dimension() != cfg.dimension {
        return Err(Error::Contract(format!(
            "partition lives in R^{} but the configuration samples R^{}",
            cells.dimension(),
            cfg.dimension
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub volumes: Vec<f64>,
    pub volume_stderr: Vec<f64>,
    /// `z^{(i)} = ∫_{Ω_i} x γ(x) dx`, one vector per cell.
    pub moments: Vec<Vec<f64>>,
    pub moment_stderr: Vec<Vec<f64>>,
    pub moment_norms: Vec<f64>,
    pub moment_norm_stderr: Vec<f64>,
    pub shift: Vec<f64>,
    /// `w̄^{(i)} = w / a_i` with the estimated volumes.
    pub scaled_shifts: Vec<Vec<f64>>,
    /// `‖z^{(i)} − a_i w̄^{(i)}‖²` per cell.
    pub cell_terms: Vec<f64>,
    pub moment_functional: f64,
    pub moment_functional_stderr: f64,
    /// `√(π/2) · M`.
    pub penalty: f64,
    pub penalty_stderr: f64,
    /// `Σ_i z^{(i)}`, zero for any partition of the whole space.
    pub moment_sum: Vec<f64>,
    pub moment_sum_stderr: Vec<f64>,
    pub observations: u64,
}

impl MomentReport {
    /// Largest excess of `‖z^{(i)}‖` over `1/√(2π) + 3σ`; nonpositive when
    /// every cell respects the bound.
    pub fn moment_bound_excess(&self) -> f64 {
        self.moment_norms
            .iter()
            .zip(&self.moment_norm_stderr)
            .map(|(z, s)| z - INV_SQRT_2PI - 3.0 * s)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn moment_report(acc: &CellAccumulator, w: &[f64]) -> Result<MomentReport> {
    let (m, d) = (acc.m, acc.d);
    let n = acc.n();
    let volumes = acc.volumes();
    let nonzero_shift = w.iter().any(|v| *v != 0.0);
    if nonzero_shift {
        if let Some(cell) = volumes.iter().position(|a| *a == 0.0) {
            return Err(Error::DegenerateCell { cell });
        }
    }
    let z = acc.moments();
    let cov = acc.covariance();
    let k = m * d;
    let mut scaled_shifts = Vec::with_capacity(m);
    let mut cell_terms = Vec::with_capacity(m);
    let mut centered = vec![0.0; k];
    for i in 0..m {
        let a = volumes[i];
        let wbar: Vec<f64> = if a > 0.0 {
            w.iter().map(|v| v / a).collect()
        } else {
            vec![0.0; d]
        };
        let mut term = 0.0;
        for p in 0..d {
            let c = z[i * d + p] - a * wbar[p];
            centered[i * d + p] = c;
            term += c * c;
        }
        scaled_shifts.push(wbar);
        cell_terms.push(term);
    }
    let functional: f64 = cell_terms.iter().sum();
    // Delta method: the influence of one observation on M is Σ_i 2⟨z_i − w, O_i⟩.
    let mut var_m = 0.0;
    for p in 0..k {
        for q in 0..k {
            var_m += 4.0 * centered[p] * cov[p * k + q] * centered[q];
        }
    }
    let m_stderr = (var_m.max(0.0) / n).sqrt();
    let moment_stderr: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..d).map(|p| (cov[(i * d + p) * k + i * d + p].max(0.0) / n).sqrt()).collect())
        .collect();
    let moments: Vec<Vec<f64>> = (0..m).map(|i| z[i * d..(i + 1) * d].to_vec()).collect();
    let mut moment_norms = Vec::with_capacity(m);
    let mut moment_norm_stderr = Vec::with_capacity(m);
    for i in 0..m {
        let zi = &moments[i];
        let len = norm(zi);
        moment_norms.push(len);
        let var = if len > 0.0 {
            let mut v = 0.0;
            for p in 0..d {
                for q in 0..d {
                    v += zi[p] * cov[(i * d + p) * k + i * d + q] * zi[q];
                }
            }
            v / (len * len)
        } else {
            (0..d).map(|p| cov[(i * d + p) * k + i * d + p]).fold(0.0, f64::max)
        };
        moment_norm_stderr.push((var.max(0.0) / n).sqrt());
    }
    let moment_sum: Vec<f64> = (0..d).map(|p| (0..m).map(|i| z[i * d + p]).sum()).collect();
    let moment_sum_stderr: Vec<f64> = (0..d)
        .map(|p| {
            let mut v = 0.0;
            for i in 0..m {
                for j in 0..m {
                    v += cov[(i * d + p) * k + j * d + p];
                }
            }
            (v.max(0.0) / n).sqrt()
        })
        .collect();
    let scale = (PI / 2.0).sqrt();
    Ok(MomentReport {
        volume_stderr: acc.volume_stderr(),
        volumes,
        moments,
        moment_stderr,
        moment_norms,
        moment_norm_stderr,
        shift: w.to_vec(),
        scaled_shifts,
        cell_terms,
        moment_functional: functional,
        moment_functional_stderr: m_stderr,
        penalty: scale * functional,
        penalty_stderr: scale * m_stderr,
        moment_sum,
        moment_sum_stderr,
        observations: acc.count,
    })
}

/// Volumes, cell moments and the moment functional
/// `M = Σ_i ‖∫_{Ω_i}(x − w/a_i) γ(x) dx‖²`, all from one sample stream.
pub fn mc_moments<C: CellClassifier>(cells: &C, w: &[f64], cfg: &IntegrationConfig) -> Result<MomentReport> {
    check_dimension(cells, cfg)?;
    check_shift(cells, w)?;
    let (m, d) = (cells.cell_count(), cells.dimension());
    let acc = stream_fold(
        cfg,
        d,
        tags::VOLUME,
        || CellAccumulator::new(m, d, true),
        |acc, chunk| acc.consume(cells, chunk),
        |a, b| a.merge(b),
    )?;
    moment_report(&acc, w)
}

/// Same as [`mc_moments`] on a pre-drawn sample set.
pub fn moments_on<C: CellClassifier + ?Sized>(cells: &C, w: &[f64], samples: &SampleSet) -> Result<MomentReport> {
    check_shift(cells, w)?;
    let (m, d) = (cells.cell_count(), cells.dimension());
    let acc = samples.fold(
        || CellAccumulator::new(m, d, true),
        |acc, chunk| acc.consume(cells, chunk),
        |a, b| a.merge(b),
    );
    moment_report(&acc, w)
}

fn check_shift<C: CellClassifier + ?Sized>(cells: &C, w: &[f64]) -> Result<()> {
    if w.len() != cells.dimension() {
        return Err(Error::Contract(format!(
            "shift has length {} in R^{}",
            w.len(),
            cells.dimension()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCheck {
    pub volume_integral: Vec<f64>,
    pub surface_integral: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    /// Per-coordinate combined standard error of the residual.
    pub stderr: Vec<f64>,
    pub stderr_norm: f64,
    pub pass: bool,
}

/// Compares `∫_Ω x γ dx` with `−∫_{∂Ω} N γ dx` for a polyhedral cell. The
/// volume side comes from the Gaussian sample stream, the surface side from
/// the facet estimator with the outward facet normals.
pub fn divergence_identity_check(cell: &dyn Region, cfg: &IntegrationConfig) -> Result<DivergenceCheck> {
    let (partition, index) = cell.as_affine_cell().ok_or_else(|| {
        Error::UnsupportedGeometry("divergence check needs a polyhedral cell".into())
    })?;
    let d = partition.d;
    let moments = mc_moments(partition, &vec![0.0; d], cfg)?;
    let facets = facet_perimeter(partition, cfg)?;
    let mut surface = vec![0.0; d];
    let mut surface_var = vec![0.0; d];
    for facet in &facets.pairs {
        let sign = if facet.i == index {
            1.0
        } else if facet.j == index {
            -1.0
        } else {
            continue;
        };
        // `normal` points from cell i into cell j.
        for p in 0..d {
            surface[p] += sign * facet.normal[p] * facet.mass;
            surface_var[p] += (facet.normal[p] * facet.stderr).powi(2);
        }
    }
    let volume = moments.moments[index].clone();
    let residual: Vec<f64> = volume.iter().zip(&surface).map(|(a, b)| a + b).collect();
    let stderr: Vec<f64> = (0..d)
        .map(|p| (moments.moment_stderr[index][p].powi(2) + surface_var[p]).sqrt())
        .collect();
    let residual_norm = norm(&residual);
    let stderr_norm = norm(&stderr);
    let pass = residual
        .iter()
        .zip(&stderr)
        .all(|(r, s)| r.abs() <= 3.0 * s + 1e-12)
        && residual_norm <= 3.0 * stderr_norm + 1e-12;
    Ok(DivergenceCheck {
        volume_integral: volume,
        surface_integral: surface.iter().map(|v| -v).collect(),
        residual,
        residual_norm,
        stderr,
        stderr_norm,
        pass,
    })
}
