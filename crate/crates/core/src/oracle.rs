//! Brute-force cross-checks.
//!
//! `full_spectrum` diagonalizes the coupled operator directly,
//! `partitioned_spectrum` solves the exact nonlinear background-channel
//! problem, `grid_bisect_roots` re-solves the secular equation by sampling
//! and plain bisection, and `sturm_spectrum` is a factorization-count
//! eigenvalue bisection that shares no code with nalgebra.

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::effective::{channel_matrix, AuxiliarySpectrum};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMatrix};
use crate::model::{build_full_hamiltonian, MeasurementProblem};
use crate::secular::{active_poles, secular_residual, ChannelConstants, Diagnostic, SecularRoots};

/// Largest product-space dimension the oracles accept.
pub const MAX_ORACLE_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Full,
    Partitioned,
    Secular,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub left: f64,
    pub right: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub method: Method,
    pub values: Vec<f64>,
    pub matched: Vec<MatchedPair>,
    /// Largest relative gap among matched pairs.
    pub max_gap: f64,
    pub pass: Option<bool>,
}

impl SpectrumReport {
    pub fn new(method: Method, mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self {
            method,
            values,
            matched: Vec::new(),
            max_gap: 0.0,
            pass: None,
        }
    }

    pub fn summary(&self) -> OracleSummary {
        OracleSummary {
            method: self.method,
            count: self.values.len(),
            max_gap: self.max_gap,
            pass: self.pass,
        }
    }
}

/// Compact form for CI consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub method: Method,
    pub count: usize,
    pub max_gap: f64,
    pub pass: Option<bool>,
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn check_dim(problem: &MeasurementProblem) -> Result<()> {
    if problem.dim() > MAX_ORACLE_DIM {
        return Err(Error::DimensionMismatch(format!(
            "product dimension {} exceeds the oracle limit {MAX_ORACLE_DIM}",
            problem.dim()
        )));
    }
    Ok(())
}

/// All eigenvalues of the full coupled operator.
pub fn full_spectrum(problem: &MeasurementProblem) -> Result<SpectrumReport> {
    check_dim(problem)?;
    let (values, _) = hermitian_eigen(&build_full_hamiltonian(problem))?;
    Ok(SpectrumReport::new(Method::Full, values))
}

/// Eigenvalues of the full operator together with the weight of each
/// eigenvector on the background channel.
pub fn full_eigen_with_background(problem: &MeasurementProblem) -> Result<Vec<(f64, f64)>> {
    check_dim(problem)?;
    let n_p = problem.n_p();
    let (values, vectors) = hermitian_eigen(&build_full_hamiltonian(problem))?;
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let w: f64 = vectors
                .column(k)
                .rows(0, n_p)
                .iter()
                .map(|z| z.norm_sqr())
                .sum();
            (v, w)
        })
        .collect())
}

/// Number of eigenvalues of the Hermitian `m` strictly below `sigma`, from
/// the signs of the pivots of an unpivoted `LDL†` factorization of
/// `m − σI`.
pub fn inertia_below(m: &CMatrix, sigma: f64) -> usize {
    let n = m.nrows();
    let scale = m
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(sigma.abs())
        .max(1.0);
    let guard = f64::EPSILON * scale * 1e-3;
    let mut l = CMatrix::zeros(n, n);
    let mut d = vec![0.0; n];
    let mut count = 0;
    for j in 0..n {
        let mut dj = m[(j, j)].re - sigma;
        for k in 0..j {
            dj -= l[(j, k)].norm_sqr() * d[k];
        }
        if dj.abs() < guard {
            dj = -guard;
        }
        d[j] = dj;
        if dj < 0.0 {
            count += 1;
        }
        l[(j, j)] = 1.0.into();
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj() * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    count
}

/// Eigenvalues of a Hermitian matrix by bisection on [`inertia_below`].
pub fn sturm_spectrum(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    let radius = (0..n)
        .map(|i| {
            m[(i, i)].re.abs()
                + (0..n)
                    .filter(|&j| j != i)
                    .map(|j| m[(i, j)].norm())
                    .sum::<f64>()
        })
        .fold(0.0, f64::max)
        + 1.0;
    (0..n)
        .map(|k| {
            let (mut lo, mut hi) = (-radius, radius);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if inertia_below(m, mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Options for [`partitioned_spectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartitionOptions {
    /// Scales every coupler by `1 + corrupt`. Test hook for negative controls.
    pub corrupt: Option<f64>,
}

fn negatives(problem: &MeasurementProblem, aux: &[AuxiliarySpectrum], eta: f64) -> Result<usize> {
    let mut m = channel_matrix(problem, aux, eta, 0.0)?;
    for i in 0..m.nrows() {
        m[(i, i)] -= eta;
    }
    let (values, _) = hermitian_eigen(&m)?;
    Ok(values.iter().filter(|v| **v < 0.0).count())
}

/// Solves `det(diag(p⁰) + V_eff(η) − η) = 0` over every pole-free interval.
///
/// Each eigenvalue of `M(η) − η` decreases strictly between poles, so the
/// number of negative eigenvalues is a step function that rises by one at
/// every root; roots are isolated by bisection on that count. With full
/// auxiliary spectra the result is exactly the part of the full spectrum
/// with non-zero background weight.
pub fn partitioned_spectrum(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    options: PartitionOptions,
) -> Result<(SpectrumReport, Vec<Diagnostic>)> {
    check_dim(problem)?;
    let aux: Vec<AuxiliarySpectrum> = match options.corrupt {
        Some(eps) => aux
            .iter()
            .map(|a| {
                let mut a = a.clone();
                a.couplers *= crate::linalg::C64::new(1.0 + eps, 0.0);
                a
            })
            .collect(),
        None => aux.to_vec(),
    };

    let mut poles: Vec<f64> = aux
        .iter()
        .flat_map(|a| {
            (0..a.len())
                .filter(|&k| a.couplers.column(k).iter().any(|z| z.norm() > 0.0))
                .map(|k| a.poles[k])
                .collect::<Vec<_>>()
        })
        .collect();
    poles.sort_by(f64::total_cmp);
    poles.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));

    let h = build_full_hamiltonian(problem);
    let radius = (0..h.nrows())
        .map(|i| (0..h.ncols()).map(|j| h[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let lo = poles.first().map_or(-radius, |p| (-radius).min(p - 1.0));
    let hi = poles.last().map_or(radius, |p| radius.max(p + 1.0));

    let mut edges = vec![lo];
    edges.extend(poles.iter().copied());
    edges.push(hi);

    let mut values = Vec::new();
    let mut diagnostics = Vec::new();
    for w in edges.windows(2) {
        let (l, r) = (w[0], w[1]);
        let width = r - l;
        if width <= 0.0 {
            continue;
        }
        let inset = 1e-11 * width.max(1.0);
        let (a, b) = (
            if l == lo { l } else { l + inset },
            if r == hi { r } else { r - inset },
        );
        if a >= b {
            continue;
        }
        let ca = negatives(problem, &aux, a)?;
        let cb = negatives(problem, &aux, b)?;
        if cb <= ca {
            diagnostics.push(Diagnostic::ScanGap { lo: l, hi: r });
            continue;
        }
        isolate(problem, &aux, a, b, ca, cb, &mut values)?;
    }
    Ok((
        SpectrumReport::new(Method::Partitioned, values),
        diagnostics,
    ))
}

fn isolate(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    a: f64,
    b: f64,
    ca: usize,
    cb: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    if cb <= ca {
        return Ok(());
    }
    let mid = 0.5 * (a + b);
    if b - a <= 1e-14 * (1.0 + a.abs().max(b.abs())) || mid <= a || mid >= b {
        out.extend(std::iter::repeat_n(mid, cb - ca));
        return Ok(());
    }
    let cm = negatives(problem, aux, mid)?;
    isolate(problem, aux, a, mid, ca, cm, out)?;
    isolate(problem, aux, mid, b, cm, cb, out)
}

fn bisect_plain(f: &dyn Fn(f64) -> f64, mut pos: f64, mut neg: f64) -> f64 {
    loop {
        let mid = 0.5 * (pos + neg);
        if mid == pos || mid == neg {
            break;
        }
        if f(mid) > 0.0 {
            pos = mid;
        } else {
            neg = mid;
        }
    }
    if f(pos).abs() <= f(neg).abs() {
        pos
    } else {
        neg
    }
}

/// Secular roots by uniform sampling of every inter-pole interval followed by
/// plain bisection to full precision.
pub fn grid_bisect_roots(
    constants: &ChannelConstants,
    points_per_interval: usize,
    tol: &Tolerances,
) -> SecularRoots {
    let points = points_per_interval.max(64);
    let poles = active_poles(constants, tol);
    let p0n = constants.p0n;
    let f = |eta: f64| secular_residual(&poles, p0n, eta);
    if poles.is_empty() {
        return SecularRoots {
            n: constants.n,
            roots: vec![p0n],
            brackets: vec![(p0n, p0n)],
            adjacent: vec![Vec::new()],
            active_poles: poles,
            diagnostics: Vec::new(),
        };
    }

    // Outer bounds by doubling the distance until the sign is right.
    let first = poles[0].position;
    let last = poles[poles.len() - 1].position;
    let mut step = 1.0;
    while f(first - step) <= 0.0 {
        step *= 2.0;
    }
    let lo = first - step;
    let mut step = 1.0;
    while f(last + step) >= 0.0 {
        step *= 2.0;
    }
    let hi = last + step;

    let mut roots = Vec::new();
    let mut brackets = Vec::new();
    let mut adjacent = Vec::new();
    let k = poles.len();
    for j in 0..=k {
        let (l, r) = match j {
            0 => (lo, first),
            j if j == k => (last, hi),
            j => (poles[j - 1].position, poles[j].position),
        };
        let samples: Vec<f64> = (0..points)
            .map(|i| l + (r - l) * (i as f64 + 0.5) / points as f64)
            .collect();
        let values: Vec<f64> = samples.iter().map(|&x| f(x)).collect();

        let mut pair = None;
        for i in 0..points - 1 {
            if values[i] > 0.0 && values[i + 1] <= 0.0 {
                pair = Some((samples[i], samples[i + 1]));
                break;
            }
        }
        let pair = pair.or_else(|| {
            if values[0] <= 0.0 {
                // Root hides between the left edge and the first sample.
                let mut x = samples[0];
                loop {
                    let y = l + 0.5 * (x - l);
                    if y <= l || y >= x {
                        return None;
                    }
                    if f(y) > 0.0 {
                        return Some((y, x));
                    }
                    x = y;
                }
            } else {
                let mut x = samples[points - 1];
                loop {
                    let y = x + 0.5 * (r - x);
                    if y >= r || y <= x {
                        return None;
                    }
                    if f(y) <= 0.0 {
                        return Some((x, y));
                    }
                    x = y;
                }
            }
        });
        if let Some((pos, neg)) = pair {
            roots.push(bisect_plain(&f, pos, neg));
            brackets.push((l, r));
            let mut groups: Vec<usize> = Vec::new();
            if j > 0 {
                groups.extend(&poles[j - 1].groups);
            }
            if j < k {
                groups.extend(&poles[j].groups);
            }
            groups.sort_unstable();
            groups.dedup();
            adjacent.push(groups);
        }
    }
    SecularRoots {
        n: constants.n,
        roots,
        brackets,
        adjacent,
        active_poles: poles,
        diagnostics: Vec::new(),
    }
}

/// Pairs each value of the shorter spectrum with the nearest unused value of
/// the longer one and records the gaps. With `strict`, the spectra must have
/// the same size.
pub fn compare_spectra(
    a: &SpectrumReport,
    b: &SpectrumReport,
    tol: f64,
    strict: bool,
) -> Result<SpectrumReport> {
    if strict && a.values.len() != b.values.len() {
        return Err(Error::CountMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    let (short, long, flipped) = if a.values.len() <= b.values.len() {
        (&a.values, &b.values, false)
    } else {
        (&b.values, &a.values, true)
    };
    let mut used = vec![false; long.len()];
    let mut matched = Vec::with_capacity(short.len());
    for &x in short {
        let best = long
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .min_by(|p, q| (p.1 - x).abs().total_cmp(&(q.1 - x).abs()));
        if let Some((i, &y)) = best {
            used[i] = true;
            let (left, right) = if flipped { (y, x) } else { (x, y) };
            matched.push(MatchedPair {
                left,
                right,
                abs_gap: (x - y).abs(),
                rel_gap: relative_gap(x, y),
            });
        }
    }
    let max_gap = matched.iter().map(|m| m.rel_gap).fold(0.0, f64::max);
    Ok(SpectrumReport {
        method: a.method,
        values: a.values.clone(),
        matched,
        max_gap,
        pass: Some(max_gap <= tol),
    })
}
