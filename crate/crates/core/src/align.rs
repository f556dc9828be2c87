//! Rotational alignment of two partitions with the same number of cells.

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::dot;
use crate::partition::AffinePartition;
use crate::sampling::{tags, IntegrationConfig, SampleSet, ScalarStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Row-major `d × d` rotation with determinant +1.
    pub rotation: Vec<f64>,
    /// `matching[i]` is the candidate cell paired with reference cell `i`.
    pub matching: Vec<usize>,
    /// `Σ_i γ(RΩ_i ∖ Ω'_i) + γ(Ω'_i ∖ RΩ_i)`.
    pub misalignment: f64,
    pub misalignment_stderr: f64,
    /// Rotation angle in radians, exact for rotations in a single plane.
    pub angle: f64,
}

/// Pairs each reference direction with a candidate direction, taking pairs
/// in decreasing order of inner product.
pub fn greedy_matching(reference: &AffinePartition, candidate: &AffinePartition) -> Vec<usize> {
    let m = reference.m;
    let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            scored.push((dot(reference.direction(i), candidate.direction(j)), i, j));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matching = vec![usize::MAX; m];
    let mut used = vec![false; m];
    for (_, i, j) in scored {
        if matching[i] == usize::MAX && !used[j] {
            matching[i] = j;
            used[j] = true;
        }
    }
    matching
}

/// Rotation `R` maximizing `Σ_i ⟨R z_i, z'_{π(i)}⟩` (Kabsch).
pub fn procrustes_rotation(reference: &AffinePartition, candidate: &AffinePartition, matching: &[usize]) -> Vec<f64> {
    let d = reference.d;
    let mut h = DMatrix::<f64>::zeros(d, d);
    for (i, &j) in matching.iter().enumerate() {
        let z = reference.direction(i);
        let zc = candidate.direction(j);
        for a in 0..d {
            for b in 0..d {
                h[(a, b)] += zc[a] * z[b];
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd computes u");
    let v_t = svd.v_t.expect("svd computes v_t");
    let mut correction = DMatrix::<f64>::identity(d, d);
    if (&u * &v_t).determinant() < 0.0 {
        correction[(d - 1, d - 1)] = -1.0;
    }
    let r = u * correction * v_t;
    (0..d).flat_map(|a| (0..d).map(move |b| (a, b))).map(|(a, b)| r[(a, b)]).collect()
}

/// Cell matching whose Procrustes rotation fits the directions best,
/// searched over all permutations for `m ≤ 6` and greedy beyond.
pub fn procrustes_matching(reference: &AffinePartition, candidate: &AffinePartition) -> Vec<usize> {
    let m = reference.m;
    if m > 6 {
        return greedy_matching(reference, candidate);
    }
    let d = reference.d;
    let fit = |matching: &[usize]| -> f64 {
        let r = procrustes_rotation(reference, candidate, matching);
        matching
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let z = reference.direction(i);
                let rz: Vec<f64> = (0..d).map(|a| dot(&r[a * d..(a + 1) * d], z)).collect();
                dot(&rz, candidate.direction(j))
            })
            .sum()
    };
    let greedy = greedy_matching(reference, candidate);
    let mut best = (fit(&greedy), greedy);
    for perm in (0..m).permutations(m) {
        let score = fit(&perm);
        if score > best.0 + 1e-12 {
            best = (score, perm);
        }
    }
    best.1
}

fn mismatch_stats(
    reference: &AffinePartition,
    candidate: &AffinePartition,
    rotation: &[f64],
    matching: &[usize],
    samples: &SampleSet,
) -> ScalarStats {
    let d = reference.d;
    samples.fold(
        ScalarStats::default,
        |stats, chunk| {
            let mut back = vec![0.0; d];
            let mut signed = vec![0.0; d];
            let mut miss = |x: &[f64], sign: f64| -> f64 {
                for (s, v) in signed.iter_mut().zip(x) {
                    *s = sign * v;
                }
                // x ∈ RΩ_i ⇔ Rᵀx ∈ Ω_i.
                for (b, slot) in back.iter_mut().enumerate() {
                    *slot = (0..d).map(|a| rotation[a * d + b] * signed[a]).sum::<f64>();
                }
                if matching[reference.classify(&back)] == candidate.classify(&signed) {
                    0.0
                } else {
                    1.0
                }
            };
            for x in chunk.iter() {
                let v = if chunk.antithetic {
                    0.5 * (miss(x, 1.0) + miss(x, -1.0))
                } else {
                    miss(x, 1.0)
                };
                stats.push(v);
            }
        },
        |a, b| a.merge(&b),
    )
}

/// Total symmetric-difference measure between `R·reference` and
/// `candidate` under a fixed cell matching. Each misclassified point lies in
/// two symmetric differences, hence the factor 2.
pub fn misalignment_on(
    reference: &AffinePartition,
    candidate: &AffinePartition,
    rotation: &[f64],
    matching: &[usize],
    samples: &SampleSet,
) -> (f64, f64) {
    let stats = mismatch_stats(reference, candidate, rotation, matching, samples);
    (2.0 * stats.mean(), 2.0 * stats.stderr())
}

fn plane_rotation(d: usize, p: usize, q: usize, theta: f64) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for k in 0..d {
        g[k * d + k] = 1.0;
    }
    let (s, c) = theta.sin_cos();
    g[p * d + p] = c;
    g[q * d + q] = c;
    g[p * d + q] = -s;
    g[q * d + p] = s;
    g
}

fn matmul(d: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn rotation_angle(d: usize, r: &[f64]) -> f64 {
    if d < 2 {
        return 0.0;
    }
    let trace: f64 = (0..d).map(|k| r[k * d + k]).sum();
    ((trace - (d as f64 - 2.0)) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Matches cells by the best Procrustes fit, fits the rotation by orthogonal
/// Procrustes on the matched directions, then refines it by a shrinking
/// small-angle search in each coordinate plane against the Monte Carlo
/// misalignment.
pub fn align_rotation(
    reference: &AffinePartition,
    candidate: &AffinePartition,
    cfg: &IntegrationConfig,
) -> Result<Alignment> {
    if reference.m != candidate.m || reference.d != candidate.d {
        return Err(Error::Contract(format!(
            "cannot align m={}, d={} with m={}, d={}",
            reference.m, reference.d, candidate.m, candidate.d
        )));
    }
    let d = reference.d;
    if cfg.dimension != d {
        return Err(Error::Contract("configuration dimension differs from the partitions".into()));
    }
    let samples = SampleSet::generate(cfg, d, tags::ALIGN)?;
    let matching = procrustes_matching(reference, candidate);
    let mut rotation = procrustes_rotation(reference, candidate, &matching);
    let (mut best, mut best_se) = misalignment_on(reference, candidate, &rotation, &matching, &samples);

    let mut step = 2f64.to_radians();
    let min_step = 0.01f64.to_radians();
    while step >= min_step && best > 0.0 {
        let mut improved = false;
        for p in 0..d {
            for q in p + 1..d {
                for sign in [1.0, -1.0] {
                    let trial = matmul(d, &plane_rotation(d, p, q, sign * step), &rotation);
                    let (value, se) = misalignment_on(reference, candidate, &trial, &matching, &samples);
                    if value < best {
                        rotation = trial;
                        best = value;
                        best_se = se;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }

    Ok(Alignment {
        angle: rotation_angle(d, &rotation),
        rotation,
        matching,
        misalignment: best,
        misalignment_stderr: best_se,
    })
}
