//! Single sets with a distance oracle, used by the Minkowski-content
//! estimator and the divergence-identity check.

use crate::cylinder::{Orientation, RoundCylinder};
use crate::gauss::dot;
use crate::partition::AffinePartition;

pub trait Region: Sync {
    fn dimension(&self) -> usize;
    fn contains(&self, x: &[f64]) -> bool;
    /// Euclidean distance from `x` to the region; only called for points
    /// outside it. `f64::INFINITY` when the region is empty.
    fn distance(&self, x: &[f64]) -> f64;
    /// Cheap lower bound on [`Region::distance`].
    fn distance_lower_bound(&self, _x: &[f64]) -> f64 {
        0.0
    }
    /// The affine cell behind this region, when it is one.
    fn as_affine_cell(&self) -> Option<(&AffinePartition, usize)> {
        None
    }
}

/// The whole space.
#[derive(Debug, Clone, Copy)]
pub struct FullSpace {
    pub dimension: usize,
}

impl Region for FullSpace {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn contains(&self, _x: &[f64]) -> bool {
        true
    }

    fn distance(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Cell `index` of an affine partition. Membership follows the partition's
/// tie rule; distances come from exact projection onto the polyhedron.
#[derive(Debug, Clone)]
pub struct AffineCell<'a> {
    partition: &'a AffinePartition,
    index: usize,
    /// Constraint normals `z_i − z_k` (row-major) and constants `c_i − c_k`
    /// for every other cell with a non-parallel functional.
    normals: Vec<f64>,
    constants: Vec<f64>,
    norms: Vec<f64>,
    empty: bool,
}

const MAX_DIM: usize = 16;

impl<'a> AffineCell<'a> {
    pub fn new(partition: &'a AffinePartition, index: usize) -> Self {
        assert!(index < partition.m, "cell index out of range");
        let d = partition.d;
        let zi = partition.direction(index);
        let mut normals = Vec::new();
        let mut constants = Vec::new();
        let mut norms = Vec::new();
        let mut empty = false;
        for k in 0..partition.m {
            if k == index {
                continue;
            }
            let a: Vec<f64> = zi.iter().zip(partition.direction(k)).map(|(p, q)| p - q).collect();
            let c = partition.offsets[index] - partition.offsets[k];
            let n = dot(&a, &a).sqrt();
            if n == 0.0 {
                if c < 0.0 || (c == 0.0 && k < index) {
                    empty = true;
                }
                continue;
            }
            debug_assert_eq!(a.len(), d);
            normals.extend(a);
            constants.push(c);
            norms.push(n);
        }
        Self {
            partition,
            index,
            normals,
            constants,
            norms,
            empty,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn constraint(&self, k: usize, x: &[f64]) -> f64 {
        let d = self.partition.d;
        dot(&self.normals[k * d..(k + 1) * d], x) + self.constants[k]
    }

    /// Largest violation of any single half-space.
    fn half_space_violation(&self, x: &[f64]) -> f64 {
        if self.empty {
            return f64::INFINITY;
        }
        (0..self.constants.len())
            .map(|k| -self.constraint(k, x) / self.norms[k])
            .fold(0.0, f64::max)
    }

    fn projection_distance(&self, x: &[f64]) -> f64 {
        let d = self.partition.d;
        let count = self.constants.len();
        if count == 0 {
            return 0.0;
        }
        assert!(d <= MAX_DIM && count < 31, "cell too large for subset projection");
        let values: Vec<f64> = (0..count).map(|k| self.constraint(k, x)).collect();
        let mut best = f64::INFINITY;
        let mut gram = [0.0; MAX_DIM * MAX_DIM];
        let mut rhs = [0.0; MAX_DIM];
        let mut p = [0.0; MAX_DIM];
        let mut active = [0usize; MAX_DIM];
        // The projection onto the polyhedron is the projection onto the
        // affine hull of one of its faces, which is cut out by an
        // independent subset of at most d constraints.
        for mask in 1u32..(1u32 << count) {
            let size = mask.count_ones() as usize;
            if size > d {
                continue;
            }
            let mut s = 0;
            for k in 0..count {
                if mask & (1 << k) != 0 {
                    active[s] = k;
                    s += 1;
                }
            }
            for a in 0..size {
                let na = &self.normals[active[a] * d..(active[a] + 1) * d];
                for b in 0..size {
                    let nb = &self.normals[active[b] * d..(active[b] + 1) * d];
                    gram[a * size + b] = dot(na, nb);
                }
                rhs[a] = values[active[a]];
            }
            if !solve_in_place(size, &mut gram[..size * size], &mut rhs[..size]) {
                continue;
            }
            p[..d].copy_from_slice(x);
            for a in 0..size {
                let na = &self.normals[active[a] * d..(active[a] + 1) * d];
                for (pk, nk) in p[..d].iter_mut().zip(na) {
                    *pk -= rhs[a] * nk;
                }
            }
            let feasible = (0..count).all(|k| self.constraint(k, &p[..d]) >= -1e-10 * self.norms[k]);
            if feasible {
                let dist = p[..d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(dist);
            }
        }
        best
    }
}

/// Solves `A y = b` for a small dense system by Gaussian elimination with
/// partial pivoting, overwriting `b` with `y`. Returns false when singular.
fn solve_in_place(n: usize, a: &mut [f64], b: &mut [f64]) -> bool {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() <= 1e-12 * scale {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut v = b[row];
        for k in row + 1..n {
            v -= a[row * n + k] * b[k];
        }
        b[row] = v / a[row * n + row];
    }
    true
}

impl Region for AffineCell<'_> {
    fn dimension(&self) -> usize {
        self.partition.d
    }

    fn contains(&self, x: &[f64]) -> bool {
        !self.empty && self.partition.classify(x) == self.index
    }

    fn distance(&self, x: &[f64]) -> f64 {
        if self.empty {
            return f64::INFINITY;
        }
        self.projection_distance(x)
    }

    fn distance_lower_bound(&self, x: &[f64]) -> f64 {
        self.half_space_violation(x)
    }

    fn as_affine_cell(&self) -> Option<(&AffinePartition, usize)> {
        Some((self.partition, self.index))
    }
}

impl Region for RoundCylinder {
    fn dimension(&self) -> usize {
        self.ambient_dimension()
    }

    fn contains(&self, x: &[f64]) -> bool {
        let radial = self.radial_norm(x);
        match self.orientation {
            Orientation::Inside => radial <= self.r,
            Orientation::Outside => radial >= self.r,
        }
    }

    fn distance(&self, x: &[f64]) -> f64 {
        (self.radial_norm(x) - self.r).abs()
    }
}
