//! Ornstein–Uhlenbeck noise stability of sets and partitions, estimated
//! from ρ-correlated Gaussian pairs.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::moments::mc_moments;
use crate::partition::{AffinePartition, CellClassifier};
use crate::perimeter::intercept_weights;
use crate::region::Region;
use crate::sampling::{check_correlation, correlate, stream_fold, tags, IntegrationConfig, ScalarStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStabilityReport {
    pub rho: f64,
    /// `P(X ∈ Ω_i)` on the same pairs.
    pub volumes: Vec<f64>,
    /// `P(X ∈ Ω_i, Y ∈ Ω_i)`.
    pub per_cell: Vec<f64>,
    pub per_cell_stderr: Vec<f64>,
    pub total: f64,
    pub total_stderr: f64,
    pub observations: u64,
}

impl NoiseStabilityReport {
    /// CSV rows `rho,cell,stability,stderr` plus a `total` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rho", "cell", "stability", "stderr"])?;
        for (i, (s, e)) in self.per_cell.iter().zip(&self.per_cell_stderr).enumerate() {
            w.write_record([self.rho.to_string(), i.to_string(), s.to_string(), e.to_string()])?;
        }
        w.write_record([
            self.rho.to_string(),
            "total".to_string(),
            self.total.to_string(),
            self.total_stderr.to_string(),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Visits every observation of the pair stream as one or two `(x, y)`
/// pairs with weights (two when antithetic, the second being `(−x, −y)`).
fn pair_fold<A, I, F, M>(rho: f64, cfg: &IntegrationConfig, init: I, visit: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &[(&[f64], &[f64], f64)]) + Sync + Send,
    M: FnMut(&mut A, A),
{
    check_correlation(rho)?;
    let d = cfg.dimension;
    stream_fold(
        cfg,
        2 * d,
        tags::PAIRS,
        init,
        |acc, chunk| {
            let mut y = vec![0.0; d];
            let mut nx = vec![0.0; d];
            let mut ny = vec![0.0; d];
            for base in chunk.iter() {
                correlate(base, rho, &mut y);
                let x = &base[..d];
                if chunk.antithetic {
                    nx.iter_mut().zip(x).for_each(|(a, b)| *a = -b);
                    ny.iter_mut().zip(&y).for_each(|(a, b)| *a = -b);
                    visit(acc, &[(x, &y, 0.5), (&nx, &ny, 0.5)]);
                } else {
                    visit(acc, &[(x, &y, 1.0)]);
                }
            }
        },
        merge,
    )
}

/// Noise stability `Σ_i P((X, Y) ∈ Ω_i × Ω_i)` of a partition.
pub fn noise_stability_partition<C: CellClassifier>(
    cells: &C,
    rho: f64,
    cfg: &IntegrationConfig,
) -> Result<NoiseStabilityReport> {
    if cells.dimension() != cfg.dimension {
        return Err(Error::Contract("configuration dimension differs from the partition".into()));
    }
    let m = cells.cell_count();
    let (vol, per_cell, total) = pair_fold(
        rho,
        cfg,
        || (vec![0.0; m], vec![ScalarStats::default(); m], ScalarStats::default()),
        |(vol, per_cell, total), pairs| {
            let mut obs = [0.0f64; 64];
            let obs = &mut obs[..m.min(64)];
            let mut heap;
            let obs: &mut [f64] = if m <= 64 {
                obs
            } else {
                heap = vec![0.0; m];
                &mut heap
            };
            let mut same = 0.0;
            for (x, y, w) in pairs {
                let a = cells.classify(x);
                vol[a] += w;
                if a == cells.classify(y) {
                    obs[a] += w;
                    same += w;
                }
            }
            for (s, v) in per_cell.iter_mut().zip(obs.iter()) {
                s.push(*v);
            }
            total.push(same);
        },
        |a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(&b.1).for_each(|(x, y)| x.merge(y));
            a.2.merge(&b.2);
        },
    )?;
    let n = total.count as f64;
    Ok(NoiseStabilityReport {
        rho,
        volumes: vol.iter().map(|v| v / n).collect(),
        per_cell: per_cell.iter().map(|s| s.mean()).collect(),
        per_cell_stderr: per_cell.iter().map(|s| s.stderr()).collect(),
        total: total.mean(),
        total_stderr: total.stderr(),
        observations: total.count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetStability {
    pub rho: f64,
    pub volume: f64,
    pub stability: f64,
    pub stability_stderr: f64,
    /// `γ(Ω) − stability = P(X ∈ Ω, Y ∉ Ω)`.
    pub deficit: f64,
    pub deficit_stderr: f64,
}

/// Noise stability `P((X, Y) ∈ Ω × Ω)` of a single set.
pub fn noise_stability_set(region: &dyn Region, rho: f64, cfg: &IntegrationConfig) -> Result<SetStability> {
    if region.dimension() != cfg.dimension {
        return Err(Error::Contract("configuration dimension differs from the region".into()));
    }
    let (vol, stab, deficit) = pair_fold(
        rho,
        cfg,
        || (ScalarStats::default(), ScalarStats::default(), ScalarStats::default()),
        |(vol, stab, deficit), pairs| {
            let (mut v, mut s, mut def) = (0.0, 0.0, 0.0);
            for (x, y, w) in pairs {
                if region.contains(x) {
                    v += w;
                    if region.contains(y) {
                        s += w;
                    } else {
                        def += w;
                    }
                }
            }
            vol.push(v);
            stab.push(s);
            deficit.push(def);
        },
        |a, b| {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
            a.2.merge(&b.2);
        },
    )?;
    Ok(SetStability {
        rho,
        volume: vol.mean(),
        stability: stab.mean(),
        stability_stderr: stab.stderr(),
        deficit: deficit.mean(),
        deficit_stderr: deficit.stderr(),
    })
}

/// What the noise-limit perimeter is computed for.
#[derive(Clone, Copy)]
pub enum NoiseTarget<'a> {
    Set(&'a dyn Region),
    /// Cell deficits are summed and halved, since every interface borders
    /// two cells.
    Partition(&'a AffinePartition),
}

impl NoiseTarget<'_> {
    fn dimension(&self) -> usize {
        match self {
            Self::Set(r) => r.dimension(),
            Self::Partition(p) => p.d,
        }
    }

    #[inline]
    fn deficit(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::Set(r) => {
                if r.contains(x) && !r.contains(y) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Partition(p) => {
                if p.classify(x) != p.classify(y) {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLimitRow {
    pub rho: f64,
    pub deficit: f64,
    pub deficit_stderr: f64,
    /// `√(2π)/arccos(ρ) · deficit`.
    pub normalized: f64,
    pub normalized_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLimitEstimate {
    pub table: Vec<NoiseLimitRow>,
    /// Intercept at `√(1−ρ²) = 0` of the least-squares line.
    pub perimeter: f64,
    pub stderr: f64,
}

fn check_rho_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.len() < 3 {
        return Err(Error::Config(format!(
            "rho schedule needs at least 3 values, got {}",
            schedule.len()
        )));
    }
    if schedule.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::Config("rho values must lie in (0, 1)".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("rho schedule must be strictly increasing".into()));
    }
    if *schedule.last().unwrap() < 0.99 {
        return Err(Error::Config("largest rho must be at least 0.99".into()));
    }
    Ok(())
}

/// Gaussian perimeter as the `ρ → 1` limit of the normalized noise
/// deficit, extrapolated linearly in `√(1−ρ²)`. Every `ρ` reuses the same
/// `(X, Z)` draws.
pub fn perimeter_from_noise_limit(
    target: NoiseTarget<'_>,
    schedule: &[f64],
    cfg: &IntegrationConfig,
) -> Result<NoiseLimitEstimate> {
    check_rho_schedule(schedule)?;
    let d = cfg.dimension;
    if target.dimension() != d {
        return Err(Error::Contract("configuration dimension differs from the target".into()));
    }
    let levels = schedule.len();
    let scale: Vec<f64> = schedule.iter().map(|r| (2.0 * PI).sqrt() / r.acos()).collect();
    let s: Vec<f64> = schedule.iter().map(|r| (1.0 - r * r).sqrt()).collect();
    let lambda = intercept_weights(&s);
    let (rows, intercept) = stream_fold(
        cfg,
        2 * d,
        tags::PAIRS,
        || (vec![ScalarStats::default(); levels], ScalarStats::default()),
        |(rows, intercept), chunk| {
            let mut y = vec![0.0; d];
            let mut nx = vec![0.0; d];
            let mut ny = vec![0.0; d];
            for base in chunk.iter() {
                let x = &base[..d];
                if chunk.antithetic {
                    nx.iter_mut().zip(x).for_each(|(a, b)| *a = -b);
                }
                let mut g = 0.0;
                for (k, rho) in schedule.iter().enumerate() {
                    correlate(base, *rho, &mut y);
                    let v = if chunk.antithetic {
                        ny.iter_mut().zip(&y).for_each(|(a, b)| *a = -b);
                        0.5 * (target.deficit(x, &y) + target.deficit(&nx, &ny))
                    } else {
                        target.deficit(x, &y)
                    };
                    rows[k].push(v);
                    g += lambda[k] * scale[k] * v;
                }
                intercept.push(g);
            }
        },
        |a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| x.merge(y));
            a.1.merge(&b.1);
        },
    )?;
    let last = &rows[levels - 1];
    if last.stderr() > 0.2 * last.mean() {
        return Err(Error::Precision(format!(
            "deficit at rho={} has stderr {:.3e} against mean {:.3e}; increase sample_count",
            schedule[levels - 1],
            last.stderr(),
            last.mean()
        )));
    }
    Ok(NoiseLimitEstimate {
        table: schedule
            .iter()
            .zip(&rows)
            .zip(&scale)
            .map(|((rho, st), sc)| NoiseLimitRow {
                rho: *rho,
                deficit: st.mean(),
                deficit_stderr: st.stderr(),
                normalized: sc * st.mean(),
                normalized_stderr: sc * st.stderr(),
            })
            .collect(),
        perimeter: intercept.mean(),
        stderr: intercept.stderr(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    /// Largest accepted volume difference between the two partitions.
    pub volume_tol: f64,
    /// Permit `ρ` outside `(1/2, 1)`.
    pub allow_any_rho: bool,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            volume_tol: 2e-3,
            allow_any_rho: false,
        }
    }
}

/// Both sides of the small-noise stability inequality, without its
/// `o(√(1−ρ²))` remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCertificate {
    pub rho: f64,
    pub epsilon: f64,
    pub stability_reference: f64,
    pub stability_candidate: f64,
    pub moment_reference: f64,
    pub moment_candidate: f64,
    /// Candidate stability.
    pub lhs: f64,
    /// Reference stability minus `ε√(1−ρ²)√(π/2)(M_ref − M_cand)`.
    pub rhs_core: f64,
    pub margin: f64,
    pub stderr: f64,
    pub label: String,
}

pub(crate) fn check_matching_volumes(
    reference: &AffinePartition,
    candidate: &AffinePartition,
    w: &[f64],
    cfg: &IntegrationConfig,
    tol: f64,
) -> Result<(crate::moments::MomentReport, crate::moments::MomentReport)> {
    if reference.m != candidate.m || reference.d != candidate.d {
        return Err(Error::Precondition(format!(
            "partitions differ in shape: m={}, d={} vs m={}, d={}",
            reference.m, reference.d, candidate.m, candidate.d
        )));
    }
    let mr = mc_moments(reference, w, cfg)?;
    let mc = mc_moments(candidate, w, cfg)?;
    let gap = mr
        .volumes
        .iter()
        .zip(&mc.volumes)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > tol {
        return Err(Error::Precondition(format!(
            "cell volumes differ by {gap:.3e}, above tolerance {tol:.1e}; calibrate first"
        )));
    }
    Ok((mr, mc))
}

pub fn noise_stability_certificate(
    reference: &AffinePartition,
    candidate: &AffinePartition,
    rho: f64,
    epsilon: f64,
    w: &[f64],
    cfg: &IntegrationConfig,
    opts: &CertificateOptions,
) -> Result<NoiseCertificate> {
    if !opts.allow_any_rho && !(rho > 0.5 && rho < 1.0) {
        return Err(Error::Precondition(format!("rho={rho} outside (1/2, 1)")));
    }
    check_correlation(rho)?;
    let (mr, mc) = check_matching_volumes(reference, candidate, w, cfg, opts.volume_tol)?;
    let (sr, sc, diff) = pair_fold(
        rho,
        cfg,
        || (ScalarStats::default(), ScalarStats::default(), ScalarStats::default()),
        |(sr, sc, diff), pairs| {
            let (mut a, mut b) = (0.0, 0.0);
            for (x, y, wt) in pairs {
                if reference.classify(x) == reference.classify(y) {
                    a += wt;
                }
                if candidate.classify(x) == candidate.classify(y) {
                    b += wt;
                }
            }
            sr.push(a);
            sc.push(b);
            diff.push(a - b);
        },
        |a, b| {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
            a.2.merge(&b.2);
        },
    )?;
    let factor = epsilon * (1.0 - rho * rho).sqrt() * (PI / 2.0).sqrt();
    let rhs_core = sr.mean() - factor * (mr.moment_functional - mc.moment_functional);
    let lhs = sc.mean();
    let stderr = (diff.stderr().powi(2)
        + factor.powi(2) * (mr.moment_functional_stderr.powi(2) + mc.moment_functional_stderr.powi(2)))
    .sqrt();
    Ok(NoiseCertificate {
        rho,
        epsilon,
        stability_reference: sr.mean(),
        stability_candidate: lhs,
        moment_reference: mr.moment_functional,
        moment_candidate: mc.moment_functional,
        lhs,
        rhs_core,
        margin: rhs_core - lhs,
        stderr,
        label: "modulo remainder".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{propeller, split_half_spaces};
    use crate::region::{AffineCell, FullSpace};

    fn cfg(n: u64, d: usize) -> IntegrationConfig {
        IntegrationConfig::new(n, 21, d)
    }

    #[test]
    fn independent_half_spaces() {
        let p = split_half_spaces(2, 0.0).unwrap();
        let r = noise_stability_partition(&p, 0.0, &cfg(400_000, 2)).unwrap();
        for (s, e) in r.per_cell.iter().zip(&r.per_cell_stderr) {
            assert!((s - 0.25).abs() <= 3.0 * e);
        }
        assert!((r.total - 0.5).abs() <= 3.0 * r.total_stderr);
    }

    #[test]
    fn propeller_at_zero_correlation() {
        let r = noise_stability_partition(&propeller(), 0.0, &cfg(400_000, 2)).unwrap();
        assert!((r.total - 1.0 / 3.0).abs() <= 3.0 * r.total_stderr);
        for i in 0..3 {
            let factorized = r.volumes[i] * r.volumes[i];
            assert!((r.per_cell[i] - factorized).abs() <= 3.0 * r.per_cell_stderr[i] + 1e-3);
        }
    }

    #[test]
    fn stability_is_bounded_by_volume() {
        let p = propeller();
        for &rho in &[-0.5, 0.2, 0.7, 0.95] {
            let r = noise_stability_partition(&p, rho, &cfg(100_000, 2)).unwrap();
            for i in 0..3 {
                assert!(r.per_cell[i] <= r.volumes[i] + 3.0 * r.per_cell_stderr[i]);
                assert!(r.per_cell[i] >= 0.0);
            }
        }
    }

    #[test]
    fn rejects_unit_correlation() {
        assert!(matches!(
            noise_stability_partition(&propeller(), 1.0, &cfg(1000, 2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn deficit_is_nonnegative() {
        let p = propeller();
        let cell = AffineCell::new(&p, 1);
        for &rho in &[0.1, 0.5, 0.9] {
            let s = noise_stability_set(&cell, rho, &cfg(100_000, 2)).unwrap();
            assert!(s.deficit >= -3.0 * s.deficit_stderr);
            assert!((s.volume - s.stability - s.deficit).abs() < 1e-12);
        }
    }

    #[test]
    fn full_space_has_no_deficit() {
        let full = FullSpace { dimension: 2 };
        let est = perimeter_from_noise_limit(NoiseTarget::Set(&full), &[0.9, 0.95, 0.99], &cfg(10_000, 2)).unwrap();
        assert!(est.table.iter().all(|r| r.deficit == 0.0));
        assert_eq!(est.perimeter, 0.0);
    }

    #[test]
    fn rho_schedule_validation() {
        let full = FullSpace { dimension: 2 };
        let c = cfg(1000, 2);
        for bad in [&[0.9, 0.99][..], &[0.9, 0.95, 0.98], &[0.99, 0.95, 0.999], &[0.5, 0.9, 1.0]] {
            assert!(matches!(
                perimeter_from_noise_limit(NoiseTarget::Set(&full), bad, &c),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn too_few_samples_is_a_precision_error() {
        let p = split_half_spaces(2, 0.0).unwrap();
        let cell = AffineCell::new(&p, 0);
        let err = perimeter_from_noise_limit(NoiseTarget::Set(&cell), &[0.9, 0.99, 0.999], &cfg(1000, 2));
        assert!(matches!(err, Err(Error::Precision(_))));
    }

    #[test]
    fn identical_certificate_has_zero_margin() {
        let p = propeller();
        let c = noise_stability_certificate(&p, &p, 0.9, 1e-3, &[0.0, 0.0], &cfg(100_000, 2), &Default::default())
            .unwrap();
        assert_eq!(c.margin, 0.0);
        assert_eq!(c.label, "modulo remainder");
    }

    #[test]
    fn certificate_preconditions() {
        let p = propeller();
        let c = cfg(10_000, 2);
        let w = [0.0, 0.0];
        assert!(matches!(
            noise_stability_certificate(&p, &p, 0.3, 1e-3, &w, &c, &Default::default()),
            Err(Error::Precondition(_))
        ));
        let opts = CertificateOptions {
            allow_any_rho: true,
            ..Default::default()
        };
        assert!(noise_stability_certificate(&p, &p, 0.3, 1e-3, &w, &c, &opts).is_ok());
        let shifted = split_half_spaces(2, 0.0).unwrap();
        assert!(matches!(
            noise_stability_certificate(&p, &shifted, 0.9, 1e-3, &w, &c, &Default::default()),
            Err(Error::Precondition(_))
        ));
    }
}
