//! Round cylinders `rS^k × R^{n−k}` and the symmetric-candidate scan.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gauss::{chi_square_cdf, chi_square_sf, unit_sphere_area};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `Ω = {‖x_{0..=k}‖ ≤ r}`.
    Inside,
    /// `Ω = {‖x_{0..=k}‖ ≥ r}`.
    Outside,
}

/// Centrally symmetric set bounded by `rS^k × R^{n−k}` in `R^{n+1}`; the
/// sphere factor uses the first `k+1` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundCylinder {
    pub k: usize,
    pub r: f64,
    pub n: usize,
    pub orientation: Orientation,
}

impl RoundCylinder {
    pub fn new(k: usize, r: f64, n: usize, orientation: Orientation) -> Result<Self> {
        if k > n {
            return Err(Error::Domain(format!("sphere dimension k={k} exceeds n={n}")));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("radius must be positive, got {r}")));
        }
        Ok(Self { k, r, n, orientation })
    }

    pub fn ambient_dimension(&self) -> usize {
        self.n + 1
    }

    pub fn radial_norm(&self, x: &[f64]) -> f64 {
        x[..=self.k].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderMeasures {
    pub perimeter: f64,
    pub volume: f64,
}

/// Gaussian perimeter `ω_k r^k (2π)^{−(k+1)/2} e^{−r²/2}`.
pub fn cylinder_perimeter(k: usize, r: f64) -> f64 {
    let kf = k as f64;
    unit_sphere_area(k) * r.powi(k as i32) * (2.0 * PI).powf(-(kf + 1.0) / 2.0) * (-0.5 * r * r).exp()
}

/// Gaussian volume of `{‖x_{0..=k}‖ ≤ r}`.
pub fn cylinder_inside_volume(k: usize, r: f64) -> f64 {
    chi_square_cdf(k + 1, r * r)
}

pub fn cylinder_closed_forms(c: &RoundCylinder) -> Result<CylinderMeasures> {
    if c.k > c.n {
        return Err(Error::Domain(format!("sphere dimension k={} exceeds n={}", c.k, c.n)));
    }
    let volume = match c.orientation {
        Orientation::Inside => chi_square_cdf(c.k + 1, c.r * c.r),
        Orientation::Outside => chi_square_sf(c.k + 1, c.r * c.r),
    };
    Ok(CylinderMeasures {
        perimeter: cylinder_perimeter(c.k, c.r),
        volume,
    })
}

/// Which orientations a scan covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanOrientation {
    Inside,
    Outside,
    Both,
}

impl ScanOrientation {
    fn list(self) -> &'static [Orientation] {
        match self {
            Self::Inside => &[Orientation::Inside],
            Self::Outside => &[Orientation::Outside],
            Self::Both => &[Orientation::Inside, Orientation::Outside],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub k: usize,
    pub orientation: Orientation,
    /// `None` when no radius reaches the requested volume.
    pub r: Option<f64>,
    pub perimeter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub volume: f64,
    pub rows: Vec<ScanRow>,
    pub best_k: Option<usize>,
    pub best_orientation: Option<Orientation>,
    pub best_perimeter: Option<f64>,
}

/// Radius at which the cylinder of the given orientation has Gaussian volume
/// `a`, by bisection on the χ² CDF.
pub fn solve_radius(k: usize, a: f64, orientation: Orientation) -> Option<f64> {
    let inside_target = match orientation {
        Orientation::Inside => a,
        Orientation::Outside => 1.0 - a,
    };
    if !(inside_target > 0.0 && inside_target < 1.0) {
        return None;
    }
    let f = |r: f64| cylinder_inside_volume(k, r) - inside_target;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e3 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Tabulates every `(k, orientation)` cylinder of volume `a` for
/// `k ≤ k_max` and reports the smallest perimeter, ties going to smaller `k`
/// (and `Inside` before `Outside`).
pub fn symmetric_scan(a: f64, k_max: usize, orientation: ScanOrientation) -> Result<ScanReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("volume must lie in (0, 1), got {a}")));
    }
    let mut rows = Vec::new();
    for k in 0..=k_max {
        for &o in orientation.list() {
            let r = solve_radius(k, a, o);
            rows.push(ScanRow {
                k,
                orientation: o,
                r,
                perimeter: r.map(|r| cylinder_perimeter(k, r)),
            });
        }
    }
    let best = rows
        .iter()
        .filter_map(|row| row.perimeter.map(|p| (row, p)))
        .fold(None::<(&ScanRow, f64)>, |best, (row, p)| match best {
            Some((_, bp)) if bp <= p => best,
            _ => Some((row, p)),
        });
    Ok(ScanReport {
        volume: a,
        best_k: best.map(|(row, _)| row.k),
        best_orientation: best.map(|(row, _)| row.orientation),
        best_perimeter: best.map(|(_, p)| p),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{normal_cdf, normal_pdf};
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_hyperplanes() {
        let c = RoundCylinder::new(0, 1.0, 3, Orientation::Inside).unwrap();
        let m = cylinder_closed_forms(&c).unwrap();
        assert_abs_diff_eq!(m.perimeter, 2.0 * normal_pdf(1.0), epsilon = 1e-14);
        assert_abs_diff_eq!(m.volume, normal_cdf(1.0) - normal_cdf(-1.0), epsilon = 1e-13);
        assert_abs_diff_eq!(m.perimeter, 0.48394, epsilon = 1e-5);
        assert_abs_diff_eq!(m.volume, 0.68269, epsilon = 1e-5);
    }

    #[test]
    fn circle_times_line() {
        let c = RoundCylinder::new(1, 1.0, 2, Orientation::Inside).unwrap();
        let m = cylinder_closed_forms(&c).unwrap();
        let e = (-0.5f64).exp();
        assert_abs_diff_eq!(m.perimeter, e, epsilon = 1e-14);
        assert_abs_diff_eq!(m.volume, 1.0 - e, epsilon = 1e-14);
        let out = RoundCylinder { orientation: Orientation::Outside, ..c };
        assert_abs_diff_eq!(cylinder_closed_forms(&out).unwrap().volume, e, epsilon = 1e-14);
    }

    #[test]
    fn sphere_in_three_space() {
        let oracle = 4.0 * PI * (2.0 * PI).powf(-1.5) * (-0.5f64).exp();
        assert_abs_diff_eq!(cylinder_perimeter(2, 1.0), oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(oracle, 0.48394, epsilon = 1e-5);
    }

    #[test]
    fn invalid_cylinders() {
        assert!(matches!(RoundCylinder::new(3, 1.0, 2, Orientation::Inside), Err(Error::Domain(_))));
        assert!(RoundCylinder::new(1, 0.0, 2, Orientation::Inside).is_err());
    }

    #[test]
    fn scan_recovers_unit_radius() {
        let a = 1.0 - (-0.5f64).exp();
        let report = symmetric_scan(a, 3, ScanOrientation::Inside).unwrap();
        let row = report.rows.iter().find(|r| r.k == 1).unwrap();
        assert_abs_diff_eq!(row.r.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row.perimeter.unwrap(), 0.60653, epsilon = 1e-5);
        let slab = symmetric_scan(normal_cdf(1.0) - normal_cdf(-1.0), 0, ScanOrientation::Inside).unwrap();
        assert_abs_diff_eq!(slab.rows[0].r.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(slab.rows[0].perimeter.unwrap(), 0.48394, epsilon = 1e-5);
    }

    #[test]
    fn scan_near_full_volume_shrinks_perimeter() {
        let report = symmetric_scan(1.0 - 1e-9, 4, ScanOrientation::Inside).unwrap();
        for row in &report.rows {
            assert!(row.r.unwrap() > 5.0);
            assert!(row.perimeter.unwrap() < 1e-6);
        }
    }

    #[test]
    fn scan_rejects_bad_volume() {
        assert!(symmetric_scan(1.0, 2, ScanOrientation::Both).is_err());
        assert!(symmetric_scan(0.0, 2, ScanOrientation::Both).is_err());
    }

    #[test]
    fn perimeter_peaks_at_sqrt_k() {
        for k in 1..6 {
            let peak = (k as f64).sqrt();
            let h = 1e-3;
            for i in 1..400 {
                let r = i as f64 * 0.02;
                let slope = cylinder_perimeter(k, r + h) - cylinder_perimeter(k, r - h);
                if r < peak - 2.0 * h {
                    assert!(slope > 0.0, "k={k} r={r}");
                } else if r > peak + 2.0 * h {
                    assert!(slope < 0.0, "k={k} r={r}");
                }
            }
        }
    }
}
