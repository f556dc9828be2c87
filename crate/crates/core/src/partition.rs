//! Partitions of `R^d` into cells given by the argmax of affine functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{dot, norm};
use crate::sampling::{chunk_rng, standard_normal, tags};

/// Anything that assigns every point of `R^d` to one of `m` cells.
pub trait CellClassifier: Sync {
    fn cell_count(&self) -> usize;
    fn dimension(&self) -> usize;
    fn classify(&self, x: &[f64]) -> usize;
}

/// Vertices of a regular simplex centered at the origin, as unit vectors in
/// `R^{m−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularSimplexVertices {
    m: usize,
    vertices: Vec<f64>,
}

impl RegularSimplexVertices {
    pub fn count(&self) -> usize {
        self.m
    }

    pub fn dimension(&self) -> usize {
        self.m - 1
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        let d = self.m - 1;
        &self.vertices[i * d..(i + 1) * d]
    }

    /// Row-major `m × (m−1)` coordinates.
    pub fn as_slice(&self) -> &[f64] {
        &self.vertices
    }
}

/// Regular simplex with `z_1 = e_1`. The remaining vertices are
/// `(−1/(m−1), √(1 − 1/(m−1)²)·v)` where `v` ranges over the regular simplex
/// with one vertex fewer, so the orientation is canonical.
pub fn regular_simplex(m: usize) -> Result<RegularSimplexVertices> {
    if m < 2 {
        return Err(Error::Domain(format!("a simplex needs m >= 2 vertices, got {m}")));
    }
    let rows = simplex_rows(m);
    Ok(RegularSimplexVertices {
        m,
        vertices: rows.concat(),
    })
}

fn simplex_rows(m: usize) -> Vec<Vec<f64>> {
    if m == 2 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let d = m - 1;
    let t = 1.0 / d as f64;
    let s = (1.0 - t * t).sqrt();
    let mut rows = Vec::with_capacity(m);
    let mut first = vec![0.0; d];
    first[0] = 1.0;
    rows.push(first);
    for v in simplex_rows(m - 1) {
        let mut row = Vec::with_capacity(d);
        row.push(-t);
        row.extend(v.iter().map(|c| s * c));
        rows.push(row);
    }
    rows
}

/// Cells `Ω_i = {x : ⟨x, z_i⟩ + c_i is maximal}`, ties going to the lowest
/// index. `w` is carried as metadata: for simplicial cones `c_i = −⟨w, z_i⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePartition {
    pub m: usize,
    pub d: usize,
    /// Row-major `m × d`.
    pub directions: Vec<f64>,
    pub offsets: Vec<f64>,
    pub w: Vec<f64>,
}

impl AffinePartition {
    pub fn new(d: usize, directions: Vec<f64>, offsets: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let m = offsets.len();
        let p = Self {
            m,
            d,
            directions,
            offsets,
            w,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.d == 0 {
            return Err(Error::Contract(format!(
                "partition needs m >= 2 and d >= 1 (m={}, d={})",
                self.m, self.d
            )));
        }
        if self.directions.len() != self.m * self.d
            || self.offsets.len() != self.m
            || self.w.len() != self.d
        {
            return Err(Error::Contract("partition field lengths disagree with m and d".into()));
        }
        let finite = self
            .directions
            .iter()
            .chain(&self.offsets)
            .chain(&self.w)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Contract("partition has non-finite entries".into()));
        }
        let all_same = (1..self.m).all(|i| {
            self.offsets[i] == self.offsets[0] && self.direction(i) == self.direction(0)
        });
        if all_same {
            return Err(Error::Contract(
                "partition needs at least two distinct affine functionals".into(),
            ));
        }
        Ok(())
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn score(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.direction(i), x) + self.offsets[i]
    }

    /// Lowest-index argmax of the affine scores.
    #[inline]
    pub fn classify(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = self.score(0, x);
        for i in 1..self.m {
            let s = self.score(i, x);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        best
    }

    /// Shifts offsets so they sum to zero; the cell map is unchanged.
    pub fn normalize_offsets(&mut self) {
        let mean = self.offsets.iter().sum::<f64>() / self.m as f64;
        for c in &mut self.offsets {
            *c -= mean;
        }
    }

    /// Rotated partition `{R Ω_i}` for a row-major `d × d` orthogonal `R`.
    pub fn rotated(&self, rotation: &[f64]) -> Result<Self> {
        let d = self.d;
        if rotation.len() != d * d {
            return Err(Error::Contract("rotation has the wrong shape".into()));
        }
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..d).map(|r| dot(&rotation[r * d..(r + 1) * d], v)).collect()
        };
        let directions = (0..self.m).flat_map(|i| apply(self.direction(i))).collect();
        Ok(Self {
            m: self.m,
            d,
            directions,
            offsets: self.offsets.clone(),
            w: apply(&self.w),
        })
    }

    /// Same cells listed in the order `order[0], order[1], …`.
    pub fn relabeled(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.m];
        if order.len() != self.m || order.iter().any(|&i| i >= self.m || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Contract("relabeling is not a permutation".into()));
        }
        Ok(Self {
            m: self.m,
            d: self.d,
            directions: order.iter().flat_map(|&i| self.direction(i).to_vec()).collect(),
            offsets: order.iter().map(|&i| self.offsets[i]).collect(),
            w: self.w.clone(),
        })
    }

    /// Embeds the partition in `R^d` for `d ≥ self.d`, padding with zeros.
    /// The extra coordinates do not influence the cell map.
    pub fn embedded(&self, d: usize) -> Result<Self> {
        if d < self.d {
            return Err(Error::Contract(format!("cannot embed R^{} into R^{d}", self.d)));
        }
        let mut directions = vec![0.0; self.m * d];
        for i in 0..self.m {
            directions[i * d..i * d + self.d].copy_from_slice(self.direction(i));
        }
        let mut w = vec![0.0; d];
        w[..self.d].copy_from_slice(&self.w);
        Ok(Self {
            m: self.m,
            d,
            directions,
            offsets: self.offsets.clone(),
            w,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

impl CellClassifier for AffinePartition {
    fn cell_count(&self) -> usize {
        self.m
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn classify(&self, x: &[f64]) -> usize {
        AffinePartition::classify(self, x)
    }
}

/// Cones over the regular simplex with apex `w ∈ R^{m−1}`.
pub fn simplicial_cone_partition(m: usize, w: &[f64]) -> Result<AffinePartition> {
    let simplex = regular_simplex(m)?;
    let d = m - 1;
    if w.len() != d {
        return Err(Error::Contract(format!(
            "apex has length {} but the simplex lives in R^{d}",
            w.len()
        )));
    }
    let offsets = (0..m).map(|i| -dot(w, simplex.vertex(i))).collect();
    AffinePartition::new(d, simplex.as_slice().to_vec(), offsets, w.to_vec())
}

/// Three 120° sectors in the plane.
pub fn propeller() -> AffinePartition {
    simplicial_cone_partition(3, &[0.0, 0.0]).expect("m=3 simplex exists")
}

/// Two cells split by the hyperplane `⟨x, e_1⟩ = t` in `R^d`; cell 0 is
/// `{x_1 < t}` (ties at the boundary go to cell 0).
pub fn split_half_spaces(d: usize, t: f64) -> Result<AffinePartition> {
    if d == 0 {
        return Err(Error::Contract("dimension must be positive".into()));
    }
    let mut directions = vec![0.0; 2 * d];
    directions[0] = -1.0;
    directions[d] = 1.0;
    // −x_1 + c_0 ≥ x_1 + c_1 ⇔ x_1 ≤ (c_0 − c_1)/2.
    AffinePartition::new(d, directions, vec![t, -t], vec![0.0; d])
}

/// Adds Gaussian noise of standard deviation `magnitude` to every direction
/// coordinate and offset, then renormalizes directions to unit length.
pub fn perturb(partition: &AffinePartition, magnitude: f64, seed: u64) -> Result<AffinePartition> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::Domain(format!("perturbation magnitude must be >= 0, got {magnitude}")));
    }
    if magnitude == 0.0 {
        return Ok(partition.clone());
    }
    let mut rng = chunk_rng(seed, tags::PERTURB, 0);
    let mut out = partition.clone();
    for v in out.directions.iter_mut() {
        *v += magnitude * standard_normal(&mut rng);
    }
    for c in out.offsets.iter_mut() {
        *c += magnitude * standard_normal(&mut rng);
    }
    let d = out.d;
    for row in out.directions.chunks_exact_mut(d) {
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gram_check(m: usize) {
        let s = regular_simplex(m).unwrap();
        let d = s.dimension();
        let mut sum = vec![0.0; d];
        for i in 0..m {
            for (acc, v) in sum.iter_mut().zip(s.vertex(i)) {
                *acc += v;
            }
            for j in 0..m {
                let g = dot(s.vertex(i), s.vertex(j));
                let expected = if i == j { 1.0 } else { -1.0 / (m as f64 - 1.0) };
                assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
            }
        }
        for v in sum {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn simplex_gram_matrices() {
        for m in 2..=8 {
            gram_check(m);
        }
    }

    #[test]
    fn simplex_small_cases() {
        let s2 = regular_simplex(2).unwrap();
        assert_eq!(s2.as_slice(), &[1.0, -1.0]);
        let s3 = regular_simplex(3).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let expected = [1.0, 0.0, -0.5, h, -0.5, -h];
        for (a, b) in s3.as_slice().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(matches!(regular_simplex(1), Err(Error::Domain(_))));
    }

    #[test]
    fn propeller_classification() {
        let p = propeller();
        assert_eq!(p.classify(&[2.0, 0.0]), 0);
        assert_eq!(p.classify(&[0.0, 0.0]), 0);
        assert_eq!(p.classify(&[-1.0, 1.0]), 1);
        assert_eq!(p.classify(&[-1.0, -1.0]), 2);
    }

    #[test]
    fn rays_from_apex_stay_in_their_cell() {
        let w = [0.4, -0.3, 0.2];
        let p = simplicial_cone_partition(4, &w).unwrap();
        for i in 0..4 {
            for &t in &[0.01, 1.0, 50.0] {
                let x: Vec<f64> = w.iter().zip(p.direction(i)).map(|(a, z)| a + t * z).collect();
                assert_eq!(p.classify(&x), i);
            }
        }
    }

    #[test]
    fn split_classification() {
        let p = split_half_spaces(3, 1.0).unwrap();
        assert_eq!(p.classify(&[2.0, 0.0, 0.0]), 1);
        assert_eq!(p.classify(&[0.5, 7.0, -3.0]), 0);
        let h = simplicial_cone_partition(2, &[0.0]).unwrap();
        assert_eq!(h.classify(&[0.3]), 0);
        assert_eq!(h.classify(&[-0.3]), 1);
    }

    #[test]
    fn identical_functionals_rejected() {
        let err = AffinePartition::new(1, vec![1.0, 1.0], vec![0.5, 0.5], vec![0.0]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn perturb_zero_is_identity_and_seeded() {
        let p = propeller();
        assert_eq!(perturb(&p, 0.0, 3).unwrap(), p);
        let a = perturb(&p, 0.1, 3).unwrap();
        let b = perturb(&p, 0.1, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p);
        for i in 0..3 {
            assert_abs_diff_eq!(norm(a.direction(i)), 1.0, epsilon = 1e-14);
        }
        assert!(perturb(&p, -1.0, 3).is_err());
    }

    #[test]
    fn rotation_moves_cells() {
        let p = propeller();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = [c, -s, s, c];
        let q = p.rotated(&r).unwrap();
        let x = [0.7, 0.2];
        let rx = [c * x[0] - s * x[1], s * x[0] + c * x[1]];
        assert_eq!(q.classify(&rx), p.classify(&x));
    }

    #[test]
    fn relabel_permutes_cells() {
        let p = propeller();
        let q = p.relabeled(&[2, 0, 1]).unwrap();
        let x = [-1.0, -1.0];
        assert_eq!(p.classify(&x), 2);
        assert_eq!(q.classify(&x), 0);
        assert!(p.relabeled(&[0, 0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(
            dirs in proptest::collection::vec(-1e3f64..1e3, 6),
            offs in proptest::collection::vec(-1e3f64..1e3, 3),
            w in proptest::collection::vec(-1e3f64..1e3, 2),
        ) {
            let p = AffinePartition::new(2, dirs, offs, w).unwrap();
            let q = AffinePartition::from_json(&p.to_json().unwrap()).unwrap();
            for (a, b) in p.directions.iter().chain(&p.offsets).chain(&p.w)
                .zip(q.directions.iter().chain(&q.offsets).chain(&q.w)) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn offset_normalization_keeps_cells(
            x in proptest::collection::vec(-4f64..4.0, 3),
            shift in -10f64..10.0,
        ) {
            let mut p = simplicial_cone_partition(4, &[0.1, 0.2, -0.3]).unwrap();
            let before = p.classify(&x);
            for c in &mut p.offsets { *c += shift; }
            p.normalize_offsets();
            prop_assert_eq!(p.offsets.iter().sum::<f64>().abs() < 1e-9, true);
            // Away from ties the cell is unchanged.
            let mut scores: Vec<f64> = (0..4).map(|i| p.score(i, &x)).collect();
            scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if scores[0] - scores[1] > 1e-9 {
                prop_assert_eq!(p.classify(&x), before);
            }
        }
    }
}
