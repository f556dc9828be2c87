//! Adjusting affine offsets until the cells reach prescribed Gaussian
//! volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::volumes_on;
use crate::partition::AffinePartition;
use crate::sampling::{IntegrationConfig, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Largest accepted `|â_i − a_i|`.
    pub tol: f64,
    /// Damping of the log-ratio fixed point.
    pub damping: f64,
    pub max_iters: usize,
    /// Coordinate Newton sweeps after the fixed point.
    pub polish_sweeps: usize,
    /// Finite-difference step on offsets for the Newton slopes.
    pub newton_step: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            damping: 0.5,
            max_iters: 200,
            polish_sweeps: 20,
            newton_step: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    pub partition: AffinePartition,
    pub volumes: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn check_target(partition: &AffinePartition, target: &[f64]) -> Result<()> {
    if target.len() != partition.m {
        return Err(Error::Contract(format!(
            "{} target volumes for {} cells",
            target.len(),
            partition.m
        )));
    }
    if target.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Domain("target volumes must be positive".into()));
    }
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("target volumes sum to {total}, not 1")));
    }
    Ok(())
}

fn residual(volumes: &[f64], target: &[f64]) -> f64 {
    volumes
        .iter()
        .zip(target)
        .map(|(v, a)| (v - a).abs())
        .fold(0.0, f64::max)
}

/// Calibrates offsets on a fixed sample set: a damped fixed point
/// `c_i ← c_i + η log(a_i / â_i)`, then coordinate Newton steps with
/// finite-difference slopes. Offsets are returned normalized to sum zero.
pub fn calibrate_on(
    partition: &AffinePartition,
    target: &[f64],
    samples: &SampleSet,
    opts: &CalibrationOptions,
) -> Result<Calibrated> {
    partition.validate()?;
    check_target(partition, target)?;
    if samples.width() != partition.d {
        return Err(Error::Contract("sample set dimension differs from the partition".into()));
    }
    let floor = 0.5 / samples.observation_count() as f64;
    let mut current = partition.clone();
    current.normalize_offsets();
    let mut volumes = volumes_on(&current, samples).volumes;
    let mut res = residual(&volumes, target);
    let mut iterations = 0;
    let mut best = (res, current.clone(), volumes.clone());

    while res > opts.tol && iterations < opts.max_iters {
        iterations += 1;
        for i in 0..current.m {
            current.offsets[i] += opts.damping * (target[i] / volumes[i].max(floor)).ln();
        }
        current.normalize_offsets();
        volumes = volumes_on(&current, samples).volumes;
        res = residual(&volumes, target);
        if res < best.0 {
            best = (res, current.clone(), volumes.clone());
        }
    }

    if best.0 > opts.tol {
        let (_, mut p, mut v) = best.clone();
        let h = opts.newton_step;
        for _ in 0..opts.polish_sweeps {
            for i in 0..p.m {
                if (v[i] - target[i]).abs() <= opts.tol {
                    continue;
                }
                iterations += 1;
                let mut probe = p.clone();
                probe.offsets[i] = p.offsets[i] + h;
                let up = volumes_on(&probe, samples).volumes[i];
                probe.offsets[i] = p.offsets[i] - h;
                let down = volumes_on(&probe, samples).volumes[i];
                let slope = (up - down) / (2.0 * h);
                if slope <= 0.0 {
                    continue;
                }
                let step = ((target[i] - v[i]) / slope).clamp(-1.0, 1.0);
                p.offsets[i] += step;
                p.normalize_offsets();
                v = volumes_on(&p, samples).volumes;
                let r = residual(&v, target);
                if r < best.0 {
                    best = (r, p.clone(), v.clone());
                }
            }
            if best.0 <= opts.tol {
                break;
            }
        }
    }

    let (res, partition, volumes) = best;
    if res > opts.tol {
        return Err(Error::Calibration {
            iterations,
            residual: res,
            offsets: partition.offsets,
        });
    }
    Ok(Calibrated {
        partition,
        volumes,
        residual: res,
        iterations,
    })
}

/// Calibrates offsets against the Gaussian sample stream of `cfg`.
pub fn calibrate_offsets_to_volumes(
    partition: &AffinePartition,
    target: &[f64],
    cfg: &IntegrationConfig,
    opts: &CalibrationOptions,
) -> Result<Calibrated> {
    if cfg.dimension != partition.d {
        return Err(Error::Contract("configuration dimension differs from the partition".into()));
    }
    let samples = SampleSet::gaussian(cfg)?;
    calibrate_on(partition, target, &samples, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::normal_cdf;
    use crate::moments::mc_volumes;
    use crate::partition::{propeller, split_half_spaces};
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_dimensional_threshold() {
        let a1 = normal_cdf(1.0);
        let cfg = IntegrationConfig::new(400_000, 4, 1);
        let start = split_half_spaces(1, 0.0).unwrap();
        let out = calibrate_offsets_to_volumes(&start, &[a1, 1.0 - a1], &cfg, &CalibrationOptions::default()).unwrap();
        let gap = out.partition.offsets[1] - out.partition.offsets[0];
        // Newton oracle on Φ: Φ(t) = a1 at t = 1, i.e. c_2 − c_1 = −2.
        assert_abs_diff_eq!(gap, -2.0, epsilon = 0.02);
        assert!(out.residual <= 1e-3);
        assert_abs_diff_eq!(out.partition.offsets.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_is_preserved() {
        let cfg = IntegrationConfig::new(100_000, 8, 2);
        let p = propeller();
        let current = mc_volumes(&p, &cfg).unwrap().volumes;
        let out = calibrate_offsets_to_volumes(&p, &current, &cfg, &CalibrationOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.partition.offsets, p.offsets);
    }

    #[test]
    fn symmetric_propeller_offsets_stay_near_zero() {
        let cfg = IntegrationConfig::new(200_000, 8, 2).with_antithetic(true);
        let third = 1.0 / 3.0;
        let out = calibrate_offsets_to_volumes(&propeller(), &[third; 3], &cfg, &CalibrationOptions::default()).unwrap();
        for c in &out.partition.offsets {
            assert!(c.abs() < 0.01, "{c}");
        }
    }

    #[test]
    fn shifted_cells_reach_targets() {
        let cfg = IntegrationConfig::new(200_000, 2, 2);
        let p = crate::partition::simplicial_cone_partition(3, &[0.8, -0.4]).unwrap();
        let target = [0.2, 0.3, 0.5];
        let out = calibrate_offsets_to_volumes(&p, &target, &cfg, &CalibrationOptions::default()).unwrap();
        let check = mc_volumes(&out.partition, &cfg).unwrap();
        for (v, a) in check.volumes.iter().zip(target) {
            assert!((v - a).abs() <= 1e-3);
        }
    }

    #[test]
    fn unreachable_target_fails() {
        // Parallel functionals: one cell is either empty or everything.
        let p = AffinePartition::new(1, vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0]).unwrap();
        let cfg = IntegrationConfig::new(10_000, 1, 1);
        let opts = CalibrationOptions {
            max_iters: 10,
            polish_sweeps: 2,
            ..Default::default()
        };
        let err = calibrate_offsets_to_volumes(&p, &[0.5, 0.5], &cfg, &opts);
        assert!(matches!(err, Err(Error::Calibration { .. })));
    }

    #[test]
    fn bad_targets() {
        let cfg = IntegrationConfig::new(1000, 1, 2);
        let opts = CalibrationOptions::default();
        assert!(calibrate_offsets_to_volumes(&propeller(), &[0.5, 0.5], &cfg, &opts).is_err());
        assert!(calibrate_offsets_to_volumes(&propeller(), &[0.5, 0.6, -0.1], &cfg, &opts).is_err());
    }
}
