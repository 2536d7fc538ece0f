//! The per-reading secular equation
//!
//! ```text
//! V_nn(η) = Σ_poles r / (η − p) = η − P⁰_n
//! ```
//!
//! and everything built on its roots: counting, bracketing and the grouping
//! of roots into realisations.
//!
//! `V_nn` is strictly decreasing between consecutive poles and the line is
//! increasing, so every open interval between active poles holds exactly one
//! root, and each flank holds one more.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::effective::AuxiliarySpectrum;
use crate::error::{Error, Result};
use crate::model::MeasurementProblem;

const MAX_ITER: usize = 200;
const WIDTH_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub position: f64,
    pub residue: f64,
    /// Source channel(s), sorted. More than one entry marks a merged pole.
    pub groups: Vec<usize>,
    /// Source auxiliary level, `None` for merged poles.
    pub n_prime: Option<usize>,
}

impl Pole {
    pub fn new(position: f64, residue: f64, g: usize, n_prime: usize) -> Self {
        Self {
            position,
            residue,
            groups: vec![g],
            n_prime: Some(n_prime),
        }
    }

    pub fn is_shared(&self) -> bool {
        self.groups.len() > 1
    }
}

/// Secular data for one instrument reading `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConstants {
    /// Zero-based reading index.
    pub n: usize,
    pub p0n: f64,
    /// Sorted ascending by position.
    pub poles: Vec<Pole>,
}

/// Roots of one reading's secular equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecularRoots {
    pub n: usize,
    pub roots: Vec<f64>,
    /// Interval searched for each root: neighbouring active poles, or a
    /// finite flank bound.
    pub brackets: Vec<(f64, f64)>,
    /// Groups of the poles adjacent to each root (union of both sides).
    pub adjacent: Vec<Vec<usize>>,
    /// Poles actually used, after deactivation and merging.
    pub active_poles: Vec<Pole>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionCounts {
    pub n_s: usize,
    pub n0_s: usize,
    pub n_r: usize,
}

/// Non-fatal findings reported alongside results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Diagnostic {
    /// No sign change could be resolved next to a pole; the pole was dropped.
    BracketFailure {
        channel: usize,
        lo: f64,
        hi: f64,
        pole: f64,
    },
    /// A root's residual exceeded the scaled tolerance.
    ResidualExceeded {
        channel: usize,
        root: f64,
        residual: f64,
    },
    /// Pole groups of different channels interleave.
    GroupOverlap { channel: usize },
    /// Number of realisations differs from `round(N_s / N⁰_s)`.
    RealisationCount { found: usize, expected: usize },
    /// Root spread within groups over the channel-energy spacing.
    ChaosRatio {
        root_spread: f64,
        channel_spacing: f64,
        ratio: f64,
    },
    /// The effective channel problem had no eigenvalue at the root; the
    /// unperturbed reading mode was used instead.
    MeanFieldFallback {
        channel: usize,
        root: f64,
        nearest: f64,
    },
    /// All boundary overlaps vanished; uniform weights were used.
    DegenerateOverlap { realisation: usize },
    /// A realisation with zero amplitude was dropped.
    EmptyRealisation { g: usize },
    /// A pole-free interval had no root although one was expected.
    ScanGap { lo: f64, hi: f64 },
}

/// Builds the secular constants of reading `n` using the unperturbed
/// instrument basis as the background modes.
pub fn channel_constants(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    n: usize,
) -> ChannelConstants {
    let v00 = problem.block(0, 0);
    let p0n = problem.channel_diagonal(0)[n] + v00[(n, n)].re;
    let mut poles = Vec::new();
    for a in aux {
        for k in 0..a.len() {
            poles.push(Pole::new(a.poles[k], a.couplers[(n, k)].norm_sqr(), a.g, k));
        }
    }
    poles.sort_by(|a, b| {
        a.position
            .total_cmp(&b.position)
            .then(a.groups.cmp(&b.groups))
    });
    ChannelConstants { n, p0n, poles }
}

/// `Σ r / (η − p)` over every pole of `constants`.
pub fn secular_value(constants: &ChannelConstants, eta: f64) -> Result<f64> {
    if constants.poles.iter().any(|p| p.position == eta) {
        return Err(Error::PoleEvaluation { eta });
    }
    Ok(constants
        .poles
        .iter()
        .map(|p| p.residue / (eta - p.position))
        .sum())
}

/// Poles with residue above `tol_residue · max(residue)`, sorted, with poles
/// closer than `tol_pole · (1 + |p|)` merged (residues summed, groups joined).
pub fn active_poles(constants: &ChannelConstants, tol: &Tolerances) -> Vec<Pole> {
    let max = constants
        .poles
        .iter()
        .map(|p| p.residue)
        .fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let cut = tol.tol_residue * max;
    let mut kept: Vec<Pole> = constants
        .poles
        .iter()
        .filter(|p| p.residue > cut)
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.position.total_cmp(&b.position));

    let mut merged: Vec<Pole> = Vec::with_capacity(kept.len());
    for p in kept {
        match merged.last_mut() {
            Some(last)
                if (p.position - last.position).abs()
                    < tol.tol_pole * (1.0 + last.position.abs()) =>
            {
                let total = last.residue + p.residue;
                last.position = (last.position * last.residue + p.position * p.residue) / total;
                last.residue = total;
                let groups: BTreeSet<usize> =
                    last.groups.iter().chain(p.groups.iter()).copied().collect();
                last.groups = groups.into_iter().collect();
                last.n_prime = None;
            }
            _ => merged.push(p),
        }
    }
    merged
}

/// The secular function minus the line, restricted to a pole list.
pub(crate) fn secular_residual(poles: &[Pole], p0n: f64, eta: f64) -> f64 {
    poles
        .iter()
        .map(|p| p.residue / (eta - p.position))
        .sum::<f64>()
        - (eta - p0n)
}

/// Scale against which root residuals are judged.
pub(crate) fn residual_scale(poles: &[Pole], p0n: f64, eta: f64) -> f64 {
    1.0 + eta.abs()
        + p0n.abs()
        + poles
            .iter()
            .map(|p| (p.residue / (eta - p.position)).abs())
            .sum::<f64>()
}

/// Finite bounds outside the extreme poles where the residual is known to
/// be positive (below) and negative (above).
pub fn flank_bounds(poles: &[Pole], p0n: f64) -> (f64, f64) {
    let total: f64 = poles.iter().map(|p| p.residue).sum();
    let first = poles.first().map_or(p0n, |p| p.position);
    let last = poles.last().map_or(p0n, |p| p.position);
    let lo = first - ((first - p0n).max(0.0) + total.sqrt() + 1.0);
    let hi = last + ((p0n - last).max(0.0) + total.sqrt() + 1.0);
    (lo, hi)
}

enum Side {
    /// Finite endpoint with a known sign.
    Bound,
    /// The residual diverges at this endpoint.
    Pole,
}

/// Finds `(a, b)` with `f(a) > 0 > f(b)` inside `(lo, hi)`, or `Err(true)`
/// when the left pole must be dropped, `Err(false)` for the right pole.
fn sign_bracket(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    left: Side,
    right: Side,
) -> std::result::Result<(f64, f64), bool> {
    let mid = 0.5 * (lo + hi);
    let fm = f(mid);
    if fm == 0.0 {
        return Ok((mid, mid));
    }
    if fm > 0.0 {
        if let Side::Bound = right {
            return Ok((mid, hi));
        }
        let mut step = hi - mid;
        loop {
            step *= 0.5;
            let b = hi - step;
            if b <= mid || b >= hi {
                return Err(false);
            }
            if f(b) < 0.0 {
                return Ok((mid, b));
            }
        }
    } else {
        if let Side::Bound = left {
            return Ok((lo, mid));
        }
        let mut step = mid - lo;
        loop {
            step *= 0.5;
            let a = lo + step;
            if a >= mid || a <= lo {
                return Err(true);
            }
            if f(a) > 0.0 {
                return Ok((a, mid));
            }
        }
    }
}

/// Bracketed secant with forced bisection every third step.
fn refine(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    if a == b {
        return a;
    }
    let mut fa = f(a);
    let mut fb = f(b);
    let mut last_side = 0i8;
    for it in 0..MAX_ITER {
        let w = b - a;
        if w <= WIDTH_TOL * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let mut x = (a * fb - b * fa) / (fb - fa);
        if !(x > a && x < b) || it % 3 == 2 {
            x = a + 0.5 * w;
        }
        if x <= a || x >= b {
            break;
        }
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            a = x;
            fa = fx;
            if last_side == 1 {
                fb *= 0.5;
            }
            last_side = 1;
        } else {
            b = x;
            fb = fx;
            if last_side == -1 {
                fa *= 0.5;
            }
            last_side = -1;
        }
    }
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

/// Solves `V_nn(η) = η − P⁰_n`: one root below the lowest active pole, one
/// in every gap between active poles and one above the highest.
///
/// Poles whose sign change cannot be resolved in floating point are
/// deactivated and reported as [`Diagnostic::BracketFailure`].
pub fn find_roots(constants: &ChannelConstants, tol: &Tolerances) -> Result<SecularRoots> {
    let mut poles = active_poles(constants, tol);
    let mut diagnostics = Vec::new();
    let p0n = constants.p0n;

    'retry: loop {
        if poles.is_empty() {
            return Ok(SecularRoots {
                n: constants.n,
                roots: vec![p0n],
                brackets: vec![(p0n, p0n)],
                adjacent: vec![Vec::new()],
                active_poles: poles,
                diagnostics,
            });
        }
        let f = |eta: f64| secular_residual(&poles, p0n, eta);
        let (lo, hi) = flank_bounds(&poles, p0n);

        let k = poles.len();
        let mut roots = Vec::with_capacity(k + 1);
        let mut brackets = Vec::with_capacity(k + 1);
        let mut adjacent = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let (l, r, left, right) = match j {
                0 => (lo, poles[0].position, Side::Bound, Side::Pole),
                j if j == k => (poles[k - 1].position, hi, Side::Pole, Side::Bound),
                j => (
                    poles[j - 1].position,
                    poles[j].position,
                    Side::Pole,
                    Side::Pole,
                ),
            };
            match sign_bracket(&f, l, r, left, right) {
                Ok((a, b)) => {
                    let root = refine(&f, a, b);
                    let residual = f(root).abs();
                    if residual > tol.tol_root * residual_scale(&poles, p0n, root) {
                        diagnostics.push(Diagnostic::ResidualExceeded {
                            channel: constants.n,
                            root,
                            residual,
                        });
                    }
                    roots.push(root);
                    brackets.push((l, r));
                    let mut groups = BTreeSet::new();
                    if j > 0 {
                        groups.extend(poles[j - 1].groups.iter().copied());
                    }
                    if j < k {
                        groups.extend(poles[j].groups.iter().copied());
                    }
                    adjacent.push(groups.into_iter().collect());
                }
                Err(drop_left) => {
                    let idx = if drop_left { j - 1 } else { j };
                    diagnostics.push(Diagnostic::BracketFailure {
                        channel: constants.n,
                        lo: l,
                        hi: r,
                        pole: poles[idx].position,
                    });
                    poles.remove(idx);
                    continue 'retry;
                }
            }
        }
        return Ok(SecularRoots {
            n: constants.n,
            roots,
            brackets,
            adjacent,
            active_poles: poles,
            diagnostics,
        });
    }
}

/// Expected solution counts for `N_Φ` measured channels and `N_P` readings.
pub fn count_solutions(n_phi: usize, n_p: usize) -> SolutionCounts {
    let n_s = n_phi * n_p + 1;
    let n0_s = n_p + 1;
    let n_r = (n_s as f64 / n0_s as f64).round() as usize;
    SolutionCounts { n_s, n0_s, n_r }
}

/// One root of one reading, as a member of a realisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootRef {
    /// Zero-based reading index.
    pub channel: usize,
    /// Position within that reading's root list.
    pub index: usize,
    pub value: f64,
    pub shared: bool,
}

/// Roots grouped under one measured channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealisationRoots {
    /// Measured channel, `None` for the single background realisation of an
    /// uncoupled problem.
    pub g: Option<usize>,
    pub roots: Vec<RootRef>,
}

impl RealisationRoots {
    pub fn roots_in_channel(&self, n: usize) -> impl Iterator<Item = &RootRef> {
        self.roots.iter().filter(move |r| r.channel == n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub realisations: Vec<RealisationRoots>,
    /// Per reading, per root: the groups it was assigned to.
    pub labels: Vec<Vec<Vec<usize>>>,
    pub diagnostics: Vec<Diagnostic>,
}

fn groups_interleave(poles: &[Pole]) -> bool {
    let mut seen = BTreeSet::new();
    let mut prev: Option<&[usize]> = None;
    for p in poles {
        if p.is_shared() {
            prev = None;
            continue;
        }
        let g = p.groups[0];
        if prev != Some(p.groups.as_slice()) && !seen.insert(g) {
            return true;
        }
        prev = Some(p.groups.as_slice());
    }
    false
}

/// Assigns every root to the measured channel(s) whose poles bound it.
///
/// A root between two poles of the same channel, or on a flank next to a
/// single channel's pole, belongs to that channel alone. A root between
/// poles of different channels (or next to a merged pole) is shared and
/// copied into every adjacent realisation. When groups interleave the roots
/// fall back to the group of their nearest pole and a
/// [`Diagnostic::GroupOverlap`] is recorded.
pub fn classify_realisations(roots: &[SecularRoots], n_phi: usize) -> Classification {
    let mut diagnostics = Vec::new();
    let mut labels: Vec<Vec<Vec<usize>>> = Vec::with_capacity(roots.len());

    for sr in roots {
        if groups_interleave(&sr.active_poles) {
            diagnostics.push(Diagnostic::GroupOverlap { channel: sr.n });
            let per_root = sr
                .roots
                .iter()
                .map(|&x| {
                    sr.active_poles
                        .iter()
                        .min_by(|a, b| (a.position - x).abs().total_cmp(&(b.position - x).abs()))
                        .map(|p| p.groups.clone())
                        .unwrap_or_default()
                })
                .collect();
            labels.push(per_root);
        } else {
            labels.push(sr.adjacent.clone());
        }
    }

    let found: BTreeSet<usize> = labels.iter().flatten().flatten().copied().collect();
    let realisations = if found.is_empty() {
        let members = roots
            .iter()
            .flat_map(|sr| {
                sr.roots.iter().enumerate().map(move |(i, &v)| RootRef {
                    channel: sr.n,
                    index: i,
                    value: v,
                    shared: false,
                })
            })
            .collect();
        vec![RealisationRoots {
            g: None,
            roots: members,
        }]
    } else {
        found
            .iter()
            .map(|&g| {
                let mut members = Vec::new();
                for (sr, lab) in roots.iter().zip(&labels) {
                    for (i, groups) in lab.iter().enumerate() {
                        if groups.contains(&g) {
                            members.push(RootRef {
                                channel: sr.n,
                                index: i,
                                value: sr.roots[i],
                                shared: groups.len() > 1,
                            });
                        }
                    }
                }
                RealisationRoots {
                    g: Some(g),
                    roots: members,
                }
            })
            .collect()
    };

    let n_p = roots.len();
    if n_p > 0 && n_phi > 0 {
        let expected = count_solutions(n_phi, n_p).n_r;
        if realisations.len() != expected {
            diagnostics.push(Diagnostic::RealisationCount {
                found: realisations.len(),
                expected,
            });
        }
    }

    Classification {
        realisations,
        labels,
        diagnostics,
    }
}

/// Ratio of the typical root spread inside a realisation to the smallest
/// spacing of the channel energies.
pub fn chaos_ratio(classification: &Classification, phi: &[f64]) -> Option<Diagnostic> {
    let mut measured: Vec<f64> = phi.iter().skip(1).copied().collect();
    measured.sort_by(f64::total_cmp);
    let spacing = measured
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !spacing.is_finite() {
        return None;
    }
    let mut spreads = Vec::new();
    for r in &classification.realisations {
        let channels: BTreeSet<usize> = r.roots.iter().map(|x| x.channel).collect();
        for n in channels {
            let own: Vec<f64> = r
                .roots_in_channel(n)
                .filter(|x| !x.shared)
                .map(|x| x.value)
                .collect();
            if own.len() > 1 {
                let lo = own.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = own.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                spreads.push(hi - lo);
            }
        }
    }
    if spreads.is_empty() {
        return None;
    }
    let spread = spreads.iter().sum::<f64>() / spreads.len() as f64;
    Some(Diagnostic::ChaosRatio {
        root_spread: spread,
        channel_spacing: spacing,
        ratio: spread / spacing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eta: f64,
    pub secular_value: f64,
    pub line_value: f64,
}

/// Samples the secular function and the line `η − P⁰_n` at `points`
/// uniformly spaced values on `[lo, hi]`, skipping samples inside the
/// `tol_pole` neighbourhood of an active pole.
pub fn curve(
    constants: &ChannelConstants,
    lo: f64,
    hi: f64,
    points: usize,
    tol: &Tolerances,
) -> Vec<CurvePoint> {
    let poles = active_poles(constants, tol);
    let positions: Vec<f64> = poles.iter().map(|p| p.position).collect();
    let thresholds: Vec<f64> = (0..positions.len())
        .map(|i| crate::effective::pole_threshold(&positions, i, tol.tol_pole))
        .collect();
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let eta = if points == 1 {
            lo
        } else if i + 1 == points {
            hi
        } else {
            lo + (hi - lo) * (i as f64) / ((points - 1) as f64)
        };
        let near = positions
            .iter()
            .zip(&thresholds)
            .any(|(p, t)| (eta - p).abs() <= *t);
        if near {
            continue;
        }
        if let Ok(v) = secular_value(constants, eta) {
            out.push(CurvePoint {
                eta,
                secular_value: v,
                line_value: eta - constants.p0n,
            });
        }
    }
    out
}
