//! Functions on `{0,…,m−1}^n` with values in the probability simplex, the
//! m-ary noise operator and its noise stability.
//!
//! Tables are dense in lexicographic order with the first coordinate
//! varying slowest: index `Σ_k ω_k m^{n−1−k}`.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{chunk_rng, open_uniform, reduce_ordered, tags, IntegrationConfig, ScalarStats};

/// Largest table (in points `m^n`) evaluated exactly.
pub const EXACT_LIMIT: u128 = 10_000_000;

/// `m^n`, or a capacity error when above `limit`.
pub fn table_len(m: usize, n: usize, limit: u128) -> Result<usize> {
    let mut len: u128 = 1;
    for _ in 0..n {
        len = len.saturating_mul(m as u128);
        if len > limit {
            break;
        }
    }
    if len > limit {
        let entries = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        return Err(Error::Capacity { entries, limit });
    }
    Ok(len as usize)
}

fn check_shape(m: usize, n: usize) -> Result<()> {
    if m < 2 || n < 1 {
        return Err(Error::Domain(format!("need m ≥ 2 and n ≥ 1, got m={m}, n={n}")));
    }
    Ok(())
}

/// Writes the digits of `index` (base `m`, first coordinate most
/// significant) into `omega`.
pub fn decode(mut index: usize, m: usize, omega: &mut [usize]) {
    for slot in omega.iter_mut().rev() {
        *slot = index % m;
        index /= m;
    }
}

pub fn encode(omega: &[usize], m: usize) -> usize {
    omega.iter().fold(0, |acc, &w| acc * m + w)
}

/// A map into `Δ_m` evaluated pointwise.
pub trait DiscreteMap: Sync {
    fn alphabet(&self) -> usize;
    fn length(&self) -> usize;
    fn eval(&self, omega: &[usize], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunction {
    pub m: usize,
    pub n: usize,
    /// `m^n` rows of `m` values, row-major.
    table: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(m: usize, n: usize, table: Vec<f64>) -> Result<Self> {
        check_shape(m, n)?;
        let len = table_len(m, n, EXACT_LIMIT)?;
        if table.len() != len * m {
            return Err(Error::Contract(format!(
                "table has {} values, expected {} rows of {m}",
                table.len(),
                len
            )));
        }
        for (row, y) in table.chunks_exact(m).enumerate() {
            let sum: f64 = y.iter().sum();
            if y.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Contract(format!("row {row} is not in the simplex: {y:?}")));
            }
        }
        Ok(Self { m, n, table })
    }

    /// Materializes any map, subject to [`EXACT_LIMIT`].
    pub fn tabulate(f: &dyn DiscreteMap) -> Result<Self> {
        let (m, n) = (f.alphabet(), f.length());
        check_shape(m, n)?;
        let len = table_len(m, n, EXACT_LIMIT)?;
        let mut table = vec![0.0; len * m];
        table.par_chunks_mut(m).enumerate().for_each_init(
            || vec![0usize; n],
            |omega, (idx, row)| {
                decode(idx, m, omega);
                f.eval(omega, row);
            },
        );
        Self::new(m, n, table)
    }

    /// `e_{ω_0}`: the first coordinate decides.
    pub fn dictator(m: usize, n: usize) -> Result<Self> {
        check_shape(m, n)?;
        let len = table_len(m, n, EXACT_LIMIT)?;
        let stride = len / m;
        let mut table = vec![0.0; len * m];
        for idx in 0..len {
            table[idx * m + idx / stride] = 1.0;
        }
        Self::new(m, n, table)
    }

    pub fn points(&self) -> usize {
        self.table.len() / self.m
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn value(&self, omega: &[usize]) -> &[f64] {
        let i = encode(omega, self.m);
        &self.table[i * self.m..(i + 1) * self.m]
    }

    /// The real table of coordinate `j`.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.table.iter().skip(j).step_by(self.m).copied().collect()
    }

    /// Header `w1..wn,f1..fm`, symbols 1-based.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (1..=self.n)
            .map(|k| format!("w{k}"))
            .chain((1..=self.m).map(|j| format!("f{j}")))
            .collect();
        w.write_record(&header)?;
        let mut omega = vec![0; self.n];
        for (idx, row) in self.table.chunks_exact(self.m).enumerate() {
            decode(idx, self.m, &mut omega);
            let rec: Vec<String> = omega
                .iter()
                .map(|s| (s + 1).to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect();
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('w')).count();
        let m = header.len() - n;
        check_shape(m, n)?;
        let len = table_len(m, n, EXACT_LIMIT)?;
        let mut table = vec![f64::NAN; len * m];
        let mut seen = vec![false; len];
        let mut omega = vec![0usize; n];
        for rec in r.records() {
            let rec = rec?;
            for (k, slot) in omega.iter_mut().enumerate() {
                let s: usize = rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad symbol {:?}", &rec[k])))?;
                if s < 1 || s > m {
                    return Err(Error::Config(format!("symbol {s} outside 1..={m}")));
                }
                *slot = s - 1;
            }
            let idx = encode(&omega, m);
            if seen[idx] {
                return Err(Error::Config(format!("duplicate row for {:?}", &omega)));
            }
            seen[idx] = true;
            for j in 0..m {
                table[idx * m + j] = rec[n + j]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value {:?}", &rec[n + j])))?;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("table is missing rows".into()));
        }
        Self::new(m, n, table)
    }
}

impl DiscreteMap for DiscreteFunction {
    fn alphabet(&self) -> usize {
        self.m
    }

    fn length(&self) -> usize {
        self.n
    }

    fn eval(&self, omega: &[usize], out: &mut [f64]) {
        out.copy_from_slice(self.value(omega));
    }
}

/// Plurality vote; any tie for the largest count maps to the barycenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plurality {
    pub m: usize,
    pub n: usize,
}

impl DiscreteMap for Plurality {
    fn alphabet(&self) -> usize {
        self.m
    }

    fn length(&self) -> usize {
        self.n
    }

    fn eval(&self, omega: &[usize], out: &mut [f64]) {
        let mut counts = [0usize; 32];
        let mut heap;
        let counts: &mut [usize] = if self.m <= 32 {
            &mut counts[..self.m]
        } else {
            heap = vec![0; self.m];
            &mut heap
        };
        for &s in omega {
            counts[s] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let winners = counts.iter().filter(|&&c| c == top).count();
        if winners == 1 {
            out.iter_mut().zip(counts.iter()).for_each(|(o, &c)| *o = if c == top { 1.0 } else { 0.0 });
        } else {
            out.fill(1.0 / self.m as f64);
        }
    }
}

pub fn plurality_function(m: usize, n: usize) -> Result<DiscreteFunction> {
    check_shape(m, n)?;
    DiscreteFunction::tabulate(&Plurality { m, n })
}

/// Per-coordinate resampling kernel: a symbol stays with probability
/// `stay` and moves to each of the other `m−1` symbols with probability
/// `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseKernel {
    pub m: usize,
    pub rho: f64,
    pub stay: f64,
    pub step: f64,
}

impl NoiseKernel {
    /// Stay `(1+(m−1)ρ)/m`, move `(1−ρ)/m`; requires `ρ ∈ [−1/(m−1), 1]`.
    pub fn new(m: usize, rho: f64) -> Result<Self> {
        Self::check(m, rho)?;
        let mf = m as f64;
        Ok(Self {
            m,
            rho,
            stay: (1.0 + (mf - 1.0) * rho) / mf,
            step: (1.0 - rho) / mf,
        })
    }

    /// The stay probability `(1−(m−1)ρ)/m` taken literally. It only sums to
    /// one with the move probability at `ρ = 0`; otherwise this errors.
    pub fn literal(m: usize, rho: f64) -> Result<Self> {
        Self::check(m, rho)?;
        let mf = m as f64;
        let stay = (1.0 - (mf - 1.0) * rho) / mf;
        let step = (1.0 - rho) / mf;
        if (stay + (mf - 1.0) * step - 1.0).abs() > 1e-15 {
            return Err(Error::NonNormalizedKernel { stay, step });
        }
        Ok(Self { m, rho, stay, step })
    }

    fn check(m: usize, rho: f64) -> Result<()> {
        if m < 2 {
            return Err(Error::Domain(format!("alphabet size {m} < 2")));
        }
        let lo = -1.0 / (m as f64 - 1.0);
        if !(rho >= lo && rho <= 1.0) {
            return Err(Error::Domain(format!("rho={rho} outside [{lo}, 1]")));
        }
        Ok(())
    }

    /// Kernel row `P(δ = b | ω = a)` over `b`.
    pub fn row(&self, a: usize) -> Vec<f64> {
        (0..self.m).map(|b| if a == b { self.stay } else { self.step }).collect()
    }

    /// Draws `δ` given `ω = a` from a uniform in `(0, 1)`.
    #[inline]
    fn resample(&self, a: usize, u: f64) -> usize {
        if u < self.stay {
            return a;
        }
        let k = (((u - self.stay) / self.step) as usize).min(self.m - 2);
        if k >= a {
            k + 1
        } else {
            k
        }
    }
}

fn check_table(g: &[f64], m: usize, n: usize) -> Result<usize> {
    check_shape(m, n)?;
    let len = table_len(m, n, EXACT_LIMIT)?;
    if g.len() != len {
        return Err(Error::Contract(format!("table has {} entries, expected {len}", g.len())));
    }
    Ok(len)
}

/// Replaces `g` along `axis` by `op(values along the axis)`.
fn contract_axis(g: &mut [f64], m: usize, n: usize, axis: usize, op: &(dyn Fn(&mut [f64]) + Sync)) {
    let stride = m.pow((n - 1 - axis) as u32);
    g.par_chunks_mut(m * stride).for_each_init(
        || vec![0.0; m],
        |buf, block| {
            for off in 0..stride {
                for (a, b) in buf.iter_mut().enumerate() {
                    *b = block[a * stride + off];
                }
                op(buf);
                for (a, b) in buf.iter().enumerate() {
                    block[a * stride + off] = *b;
                }
            }
        },
    );
}

/// `E_ρ g`: the product kernel applied one coordinate at a time.
pub fn apply_noise_kernel(g: &[f64], n: usize, kernel: &NoiseKernel) -> Result<Vec<f64>> {
    let m = kernel.m;
    check_table(g, m, n)?;
    let mut out = g.to_vec();
    let diag = kernel.stay - kernel.step;
    let step = kernel.step;
    for axis in 0..n {
        contract_axis(&mut out, m, n, axis, &|v: &mut [f64]| {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x = diag * *x + step * s);
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub coordinate: usize,
    pub mean: f64,
    /// `E_i g`: coordinate `i` averaged out.
    pub averaged: Vec<f64>,
    pub influence: f64,
}

/// `E g`, `E_i g` and `Inf_i g = E[(g − E_i g)²]` for 0-based coordinate `i`.
pub fn influences(g: &[f64], m: usize, n: usize, i: usize) -> Result<Influence> {
    let len = check_table(g, m, n)?;
    if i >= n {
        return Err(Error::Domain(format!("coordinate {i} outside 0..{n}")));
    }
    let mut averaged = g.to_vec();
    contract_axis(&mut averaged, m, n, i, &|v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.fill(mean);
    });
    let mean = g.iter().sum::<f64>() / len as f64;
    let influence = g.iter().zip(&averaged).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / len as f64;
    Ok(Influence {
        coordinate: i,
        mean,
        averaged,
        influence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteStability {
    pub rho: f64,
    /// `E[f_j · E_ρ f_j]` per output coordinate.
    pub per_coordinate: Vec<f64>,
    pub total: f64,
    /// Zero for the exact evaluator.
    pub per_coordinate_stderr: Vec<f64>,
    pub total_stderr: f64,
    pub exact: bool,
}

/// Exact `S_ρ f` by tensor contraction.
pub fn discrete_noise_stability(f: &DiscreteFunction, kernel: &NoiseKernel) -> Result<DiscreteStability> {
    if kernel.m != f.m {
        return Err(Error::Contract(format!("kernel alphabet {} differs from m={}", kernel.m, f.m)));
    }
    let len = f.points() as f64;
    let per_coordinate: Vec<f64> = (0..f.m)
        .map(|j| {
            let fj = f.coordinate(j);
            let smooth = apply_noise_kernel(&fj, f.n, kernel)?;
            Ok(fj.iter().zip(&smooth).map(|(a, b)| a * b).sum::<f64>() / len)
        })
        .collect::<Result<_>>()?;
    Ok(DiscreteStability {
        rho: kernel.rho,
        total: per_coordinate.iter().sum(),
        per_coordinate_stderr: vec![0.0; f.m],
        per_coordinate,
        total_stderr: 0.0,
        exact: true,
    })
}

/// Monte Carlo `S_ρ f`: `ω` uniform, then each `δ_k` from the kernel row
/// of `ω_k`.
pub fn mc_discrete_noise_stability(
    f: &dyn DiscreteMap,
    kernel: &NoiseKernel,
    cfg: &IntegrationConfig,
) -> Result<DiscreteStability> {
    let (m, n) = (f.alphabet(), f.length());
    check_shape(m, n)?;
    if kernel.m != m {
        return Err(Error::Contract(format!("kernel alphabet {} differs from m={m}", kernel.m)));
    }
    if cfg.antithetic {
        return Err(Error::Config("antithetic sampling is not defined on the discrete cube".into()));
    }
    // The Gaussian dimension plays no role on the cube.
    cfg.with_dimension(1).validate()?;
    let per_chunk = cfg.base_points_per_chunk();
    let (stats, total) = reduce_ordered(
        cfg.chunk_count(),
        |c| {
            let mut rng = chunk_rng(cfg.seed, tags::DISCRETE, c);
            let mut omega = vec![0usize; n];
            let mut delta = vec![0usize; n];
            let (mut fo, mut fd) = (vec![0.0; m], vec![0.0; m]);
            let mut stats = vec![ScalarStats::default(); m];
            let mut total = ScalarStats::default();
            for _ in 0..per_chunk {
                for (o, d) in omega.iter_mut().zip(delta.iter_mut()) {
                    *o = ((open_uniform(&mut rng) * m as f64) as usize).min(m - 1);
                    *d = kernel.resample(*o, open_uniform(&mut rng));
                }
                f.eval(&omega, &mut fo);
                f.eval(&delta, &mut fd);
                let mut t = 0.0;
                for j in 0..m {
                    let v = fo[j] * fd[j];
                    stats[j].push(v);
                    t += v;
                }
                total.push(t);
            }
            (stats, total)
        },
        |a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| x.merge(y));
            a.1.merge(&b.1);
        },
    )
    .expect("validated config has at least one chunk");
    Ok(DiscreteStability {
        rho: kernel.rho,
        per_coordinate: stats.iter().map(|s| s.mean()).collect(),
        per_coordinate_stderr: stats.iter().map(|s| s.stderr()).collect(),
        total: total.mean(),
        total_stderr: total.stderr(),
        exact: false,
    })
}

/// Exact when `m^n ≤` [`EXACT_LIMIT`], otherwise Monte Carlo if a
/// configuration is given; a capacity error if not.
pub fn noise_stability_auto(
    f: &dyn DiscreteMap,
    kernel: &NoiseKernel,
    mc: Option<&IntegrationConfig>,
) -> Result<DiscreteStability> {
    match table_len(f.alphabet(), f.length(), EXACT_LIMIT) {
        Ok(_) => discrete_noise_stability(&DiscreteFunction::tabulate(f)?, kernel),
        Err(e @ Error::Capacity { .. }) => match mc {
            Some(cfg) => mc_discrete_noise_stability(f, kernel, cfg),
            None => Err(e),
        },
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltCrosscheck {
    pub n: usize,
    pub rho: f64,
    pub discrete: f64,
    pub discrete_stderr: f64,
    /// `1/2 + arcsin(ρ)/π`.
    pub gaussian: f64,
    pub gap: f64,
}

/// Noise stability of majority on `{0,1}^n` (odd `n`) against its Gaussian
/// limit. Only vote counts matter, so each pair is drawn as binomial
/// counts rather than `n` coordinates.
pub fn clt_crosscheck(n: usize, rho: f64, cfg: &IntegrationConfig) -> Result<CltCrosscheck> {
    if n % 2 == 0 {
        return Err(Error::Domain(format!("majority needs odd n, got {n}")));
    }
    let kernel = NoiseKernel::new(2, rho)?;
    if cfg.antithetic {
        return Err(Error::Config("antithetic sampling is not defined on the discrete cube".into()));
    }
    // The Gaussian dimension plays no role on the cube.
    cfg.with_dimension(1).validate()?;
    let per_chunk = cfg.base_points_per_chunk();
    let half = n as u64 / 2;
    let fair = Binomial::new(n as u64, 0.5).expect("valid binomial");
    let stats = reduce_ordered(
        cfg.chunk_count(),
        |c| {
            let mut rng = chunk_rng(cfg.seed, tags::DISCRETE, c);
            let mut stats = ScalarStats::default();
            for _ in 0..per_chunk {
                let ones = fair.sample(&mut rng);
                let kept = Binomial::new(ones, kernel.stay).expect("valid binomial").sample(&mut rng);
                let flipped = Binomial::new(n as u64 - ones, kernel.step)
                    .expect("valid binomial")
                    .sample(&mut rng);
                let same = (ones > half) == (kept + flipped > half);
                stats.push(if same { 1.0 } else { 0.0 });
            }
            stats
        },
        |a, b| a.merge(&b),
    )
    .expect("validated config has at least one chunk");
    let gaussian = 0.5 + rho.asin() / std::f64::consts::PI;
    Ok(CltCrosscheck {
        n,
        rho,
        discrete: stats.mean(),
        discrete_stderr: stats.stderr(),
        gaussian,
        gap: stats.mean() - gaussian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Naive double sum over all pairs with the explicit product kernel.
    fn brute_force(f: &DiscreteFunction, k: &NoiseKernel) -> f64 {
        let (m, n) = (f.m, f.n);
        let len = f.points();
        let (mut a, mut b) = (vec![0; n], vec![0; n]);
        let mut total = 0.0;
        for i in 0..len {
            decode(i, m, &mut a);
            for j in 0..len {
                decode(j, m, &mut b);
                let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
                let w = k.stay.powi((n - diff) as i32) * k.step.powi(diff as i32);
                let dot: f64 = f.value(&a).iter().zip(f.value(&b)).map(|(x, y)| x * y).sum();
                total += w * dot;
            }
        }
        total / len as f64
    }

    fn random_function(m: usize, n: usize, seed: u64, indicator: bool) -> DiscreteFunction {
        let mut rng = chunk_rng(seed, 99, 0);
        let len = m.pow(n as u32);
        let mut table = vec![0.0; len * m];
        for row in table.chunks_exact_mut(m) {
            if indicator {
                row[((open_uniform(&mut rng) * m as f64) as usize).min(m - 1)] = 1.0;
            } else {
                row.iter_mut().for_each(|v| *v = open_uniform(&mut rng));
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        DiscreteFunction::new(m, n, table).unwrap()
    }

    #[test]
    fn matches_double_sum() {
        for m in 2..=9usize {
            for n in 1..=6usize {
                if m.pow(n as u32) > 81 {
                    continue;
                }
                let f = random_function(m, n, (m * 10 + n) as u64, false);
                for &rho in &[0.0, 0.3, 0.7, 1.0] {
                    let k = NoiseKernel::new(m, rho).unwrap();
                    let exact = discrete_noise_stability(&f, &k).unwrap().total;
                    assert!((exact - brute_force(&f, &k)).abs() < 1e-12, "m={m} n={n} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn dictator_stability() {
        let f = DiscreteFunction::dictator(2, 1).unwrap();
        for &rho in &[0.0, 0.5, 0.9] {
            let s = discrete_noise_stability(&f, &NoiseKernel::new(2, rho).unwrap()).unwrap();
            assert!((s.total - (1.0 + rho) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_rows_are_stochastic() {
        for m in 2..=8 {
            for &rho in &[-1.0 / (m as f64 - 1.0), 0.0, 0.3, 1.0] {
                let k = NoiseKernel::new(m, rho).unwrap();
                for a in 0..m {
                    assert!((k.row(a).iter().sum::<f64>() - 1.0).abs() <= 1e-15);
                }
            }
        }
        assert!(matches!(NoiseKernel::new(3, -0.6), Err(Error::Domain(_))));
        assert!(matches!(NoiseKernel::new(3, 1.1), Err(Error::Domain(_))));
    }

    #[test]
    fn strict_kernel_only_at_zero() {
        assert!(NoiseKernel::literal(3, 0.0).is_ok());
        assert!(matches!(NoiseKernel::literal(3, 0.5), Err(Error::NonNormalizedKernel { .. })));
        assert!(matches!(NoiseKernel::literal(2, 0.5), Err(Error::NonNormalizedKernel { .. })));
    }

    #[test]
    fn kernel_endpoints() {
        let g: Vec<f64> = (0..27).map(|i| (i * i % 7) as f64).collect();
        let id = apply_noise_kernel(&g, 3, &NoiseKernel::new(3, 1.0).unwrap()).unwrap();
        assert_eq!(id, g);
        let mean = g.iter().sum::<f64>() / 27.0;
        let flat = apply_noise_kernel(&g, 3, &NoiseKernel::new(3, 0.0).unwrap()).unwrap();
        assert!(flat.iter().all(|v| (v - mean).abs() < 1e-12));
        let half = apply_noise_kernel(&[1.0, 0.0], 1, &NoiseKernel::new(2, 0.5).unwrap()).unwrap();
        assert_eq!(half, vec![0.75, 0.25]);
    }

    #[test]
    fn influence_examples() {
        // Index = 2·ω₀ + ω₁.
        let first = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(influences(&first, 2, 2, 0).unwrap().influence, 0.25);
        assert_eq!(influences(&first, 2, 2, 1).unwrap().influence, 0.0);
        let equal = [1.0, 0.0, 0.0, 1.0];
        for i in 0..2 {
            let inf = influences(&equal, 2, 2, i).unwrap();
            assert_eq!(inf.influence, 0.25);
            assert_eq!(inf.mean, 0.5);
        }
        let constant = [3.0; 9];
        assert!(influences(&constant, 3, 2, 1).unwrap().influence.abs() < 1e-15);
        assert!(matches!(influences(&constant, 3, 2, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn averaged_table_ignores_the_coordinate() {
        let g: Vec<f64> = (0..27).map(|i| ((i * 7) % 11) as f64).collect();
        let inf = influences(&g, 3, 3, 1).unwrap();
        let mut omega = [0; 3];
        for idx in 0..27 {
            decode(idx, 3, &mut omega);
            let expected: f64 = (0..3).map(|s| g[encode(&[omega[0], s, omega[2]], 3)]).sum::<f64>() / 3.0;
            assert!((inf.averaged[idx] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn plurality_values() {
        let p = plurality_function(2, 3).unwrap();
        assert_eq!(p.value(&[0, 0, 1]), &[1.0, 0.0]);
        let p = plurality_function(3, 3).unwrap();
        assert_eq!(p.value(&[0, 1, 2]), &[1.0 / 3.0; 3]);
        assert_eq!(p.value(&[2, 1, 2]), &[0.0, 0.0, 1.0]);
        let p = plurality_function(2, 2).unwrap();
        assert_eq!(p.value(&[0, 1]), &[0.5, 0.5]);
        assert!(matches!(plurality_function(10, 8), Err(Error::Capacity { .. })));
    }

    #[test]
    fn plurality_at_zero_correlation() {
        let p = plurality_function(2, 3).unwrap();
        let s = discrete_noise_stability(&p, &NoiseKernel::new(2, 0.0).unwrap()).unwrap();
        assert!((s.total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn indicator_at_unit_correlation() {
        let f = random_function(3, 3, 5, true);
        let s = discrete_noise_stability(&f, &NoiseKernel::new(3, 1.0).unwrap()).unwrap();
        assert!((s.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let f = random_function(3, 2, 8, false);
        let text = f.to_csv().unwrap();
        assert!(text.starts_with("w1,w2,f1,f2,f3\n1,1,"));
        assert_eq!(DiscreteFunction::from_csv(&text).unwrap(), f);
        assert!(DiscreteFunction::from_csv("w1,f1,f2\n1,0.5,0.5\n").is_err());
    }

    #[test]
    fn rejects_rows_off_the_simplex() {
        assert!(DiscreteFunction::new(2, 1, vec![0.6, 0.6, 1.0, 0.0]).is_err());
        assert!(DiscreteFunction::new(2, 1, vec![1.5, -0.5, 1.0, 0.0]).is_err());
        assert!(DiscreteFunction::new(2, 2, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let p = Plurality { m: 3, n: 5 };
        let k = NoiseKernel::new(3, 0.6).unwrap();
        let exact = discrete_noise_stability(&DiscreteFunction::tabulate(&p).unwrap(), &k).unwrap();
        let mc = mc_discrete_noise_stability(&p, &k, &IntegrationConfig::new(200_000, 4, 0)).unwrap();
        assert!((mc.total - exact.total).abs() <= 4.0 * mc.total_stderr);
    }

    #[test]
    fn auto_falls_back_or_refuses() {
        let big = Plurality { m: 2, n: 30 };
        let k = NoiseKernel::new(2, 0.5).unwrap();
        assert!(matches!(noise_stability_auto(&big, &k, None), Err(Error::Capacity { .. })));
        let s = noise_stability_auto(&big, &k, Some(&IntegrationConfig::new(20_000, 1, 0))).unwrap();
        assert!(!s.exact);
        let small = Plurality { m: 2, n: 3 };
        assert!(noise_stability_auto(&small, &k, None).unwrap().exact);
    }

    #[test]
    fn clt_endpoints_and_parity() {
        let cfg = IntegrationConfig::new(20_000, 3, 0);
        let one = clt_crosscheck(11, 1.0, &cfg).unwrap();
        assert_eq!(one.discrete, 1.0);
        assert_eq!(one.gaussian, 1.0);
        let zero = clt_crosscheck(11, 0.0, &cfg).unwrap();
        assert_eq!(zero.gaussian, 0.5);
        assert!((zero.discrete - 0.5).abs() <= 4.0 * zero.discrete_stderr);
        assert!(matches!(clt_crosscheck(10, 0.5, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn binomial_sampler_matches_coordinate_sampler() {
        let n = 7;
        let cfg = IntegrationConfig::new(200_000, 9, 0);
        let binom = clt_crosscheck(n, 0.4, &cfg).unwrap();
        let coord = mc_discrete_noise_stability(&Plurality { m: 2, n }, &NoiseKernel::new(2, 0.4).unwrap(), &cfg).unwrap();
        let exact = discrete_noise_stability(&plurality_function(2, n).unwrap(), &NoiseKernel::new(2, 0.4).unwrap())
            .unwrap()
            .total;
        assert!((binom.discrete - exact).abs() <= 4.0 * binom.discrete_stderr);
        assert!((coord.total - exact).abs() <= 4.0 * coord.total_stderr);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kernel_preserves_mean(seed in 0u64..1000, rho in -0.5f64..1.0) {
            let mut rng = chunk_rng(seed, 7, 0);
            let g: Vec<f64> = (0..27).map(|_| open_uniform(&mut rng) - 0.5).collect();
            let out = apply_noise_kernel(&g, 3, &NoiseKernel::new(3, rho).unwrap()).unwrap();
            let (a, b) = (g.iter().sum::<f64>() / 27.0, out.iter().sum::<f64>() / 27.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn indicator_band(seed in 0u64..1000, rho in 0.0f64..=1.0) {
            let f = random_function(3, 3, seed, true);
            let s = discrete_noise_stability(&f, &NoiseKernel::new(3, rho).unwrap()).unwrap();
            for j in 0..3 {
                let mean = f.coordinate(j).iter().sum::<f64>() / 27.0;
                prop_assert!(s.per_coordinate[j] >= mean * mean - 1e-12);
                prop_assert!(s.per_coordinate[j] <= mean + 1e-12);
            }
        }

        #[test]
        fn plurality_relabeling(perm_seed in 0usize..6, rho in 0.0f64..1.0) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let pi = perms[perm_seed];
            let p = plurality_function(3, 4).unwrap();
            let mut table = vec![0.0; p.table().len()];
            let mut omega = [0usize; 4];
            for idx in 0..p.points() {
                decode(idx, 3, &mut omega);
                let image: Vec<usize> = omega.iter().map(|&s| pi[s]).collect();
                let src = p.value(&omega);
                let dst = encode(&image, 3);
                for j in 0..3 {
                    table[dst * 3 + pi[j]] = src[j];
                }
            }
            let q = DiscreteFunction::new(3, 4, table).unwrap();
            prop_assert_eq!(&q, &p);
            let k = NoiseKernel::new(3, rho).unwrap();
            let (a, b) = (discrete_noise_stability(&p, &k).unwrap(), discrete_noise_stability(&q, &k).unwrap());
            prop_assert!((a.total - b.total).abs() < 1e-14);
        }
    }
}
