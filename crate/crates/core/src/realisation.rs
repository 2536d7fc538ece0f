//! Realisations: reduced states, boundary matching, probabilities, densities
//! and seeded outcome sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::effective::{channel_matrix, h_kernel, AuxiliarySpectrum};
use crate::error::{Error, Result};
use crate::linalg::{fix_phase, hermitian_eigen, CVector, C64};
use crate::model::{build_full_hamiltonian, MeasurementProblem};
use crate::secular::{Diagnostic, RealisationRoots, RootRef};

/// How the background component of a reduced state is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSolve {
    /// Eigenvector of the effective channel problem at the root; fails when
    /// the root is not one of its eigenvalues.
    Exact,
    /// The unperturbed reading mode `e_n` of the root's secular equation.
    Baseline,
    /// `Exact` when an eigenvalue matches the root, `Baseline` otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    /// Zero-based reading whose secular equation produced the root.
    pub channel: usize,
    pub root: f64,
    /// Unit-norm amplitudes over the product basis.
    pub components: CVector,
    /// Whether the baseline mode stood in for an exact channel eigenvector.
    pub mean_field: bool,
    /// Distance from the root to the nearest eigenvalue of the effective
    /// channel problem.
    pub channel_gap: f64,
}

impl ReducedState {
    /// `Σ_n |Ψ_gn|²` for each channel `g`.
    pub fn channel_masses(&self, n_p: usize) -> Vec<f64> {
        self.components
            .as_slice()
            .chunks(n_p)
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    /// Background component, normalized to unit length (zero if absent).
    pub fn background_profile(&self, n_p: usize) -> CVector {
        let v = CVector::from_iterator(n_p, self.components.iter().take(n_p).copied());
        let norm = v.norm();
        if norm > 0.0 {
            v.unscale(norm)
        } else {
            v
        }
    }
}

/// Builds the reduced state at `root`, a solution of reading `n`'s secular
/// equation: background component from the effective channel problem,
/// measured components through the h-kernels, normalized with the leading
/// component real positive.
pub fn reduced_state(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    n: usize,
    root: f64,
    solve: ChannelSolve,
    tol: &Tolerances,
) -> Result<ReducedState> {
    let n_p = problem.n_p();
    let m = channel_matrix(problem, aux, root, tol.tol_pole)?;
    let (values, vectors) = hermitian_eigen(&m)?;
    let (best, nearest) = values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - root).abs().total_cmp(&(b.1 - root).abs()))
        .map(|(k, v)| (k, *v))
        .ok_or_else(|| Error::EigenFailure("empty channel problem".into()))?;
    let gap = (nearest - root).abs();
    let tolerance = tol.channel_tol * (1.0 + root.abs());
    let exact = gap <= tolerance;

    let (background, mean_field) = match (solve, exact) {
        (ChannelSolve::Exact, false) => {
            return Err(Error::ChannelSolveFailure {
                root,
                nearest,
                tolerance,
            });
        }
        (ChannelSolve::Exact | ChannelSolve::Auto, true) => {
            (vectors.column(best).into_owned(), false)
        }
        (ChannelSolve::Baseline, _) | (ChannelSolve::Auto, false) => {
            let mut e = CVector::zeros(n_p);
            e[n] = C64::new(1.0, 0.0);
            (e, true)
        }
    };

    let mut psi = CVector::zeros(problem.dim());
    psi.rows_mut(0, n_p).copy_from(&background);
    for g in 1..problem.n_channels() {
        let h = h_kernel(problem, aux, g, root, tol.tol_pole)?;
        psi.rows_mut(g * n_p, n_p).copy_from(&(h * &background));
    }
    let norm = psi.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroState(format!("reduced state at root {root}")));
    }
    psi.unscale_mut(norm);
    fix_phase(&mut psi);
    Ok(ReducedState {
        channel: n,
        root,
        components: psi,
        mean_field,
        channel_gap: gap,
    })
}

/// `‖(H − root) Ψ‖` for a reduced state against the full coupled operator.
pub fn state_residual(problem: &MeasurementProblem, state: &ReducedState) -> f64 {
    let h = build_full_hamiltonian(problem);
    let hv = &h * &state.components;
    (hv - state.components.scale(state.root)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realisation {
    /// One-based label.
    pub index: usize,
    pub g: Option<usize>,
    pub roots: Vec<RootRef>,
    /// Aligned with `roots`.
    pub states: Vec<ReducedState>,
    /// Boundary amplitude `C_i`.
    pub amplitude: C64,
    /// Per-reading weights `c_n`, `Σ c_n = 1`.
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl Realisation {
    /// Roots of reading `n` that belong to this realisation alone.
    pub fn own_states(&self, n: usize) -> impl Iterator<Item = (&RootRef, &ReducedState)> {
        self.roots
            .iter()
            .zip(&self.states)
            .filter(move |(r, _)| r.channel == n && !r.shared)
    }

    /// Sampling weights over readings, `|c_n|² / Σ|c_m|²`.
    pub fn reading_probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().map(|c| c * c).sum();
        if total == 0.0 {
            return vec![0.0; self.weights.len()];
        }
        self.weights.iter().map(|c| c * c / total).collect()
    }

    /// The own root of reading `n` whose state is most concentrated in this
    /// realisation's channel (any root of `n` for the background realisation).
    pub fn representative_root(&self, n: usize, n_p: usize) -> Option<f64> {
        let g = self.g.unwrap_or(0);
        let mut own: Vec<(&RootRef, &ReducedState)> = self.own_states(n).collect();
        if own.is_empty() {
            own = self
                .roots
                .iter()
                .zip(&self.states)
                .filter(|(r, _)| r.channel == n)
                .collect();
        }
        own.into_iter()
            .max_by(|a, b| a.1.channel_masses(n_p)[g].total_cmp(&b.1.channel_masses(n_p)[g]))
            .map(|(r, _)| r.value)
    }
}

/// Attaches reduced states to every classified root.
pub fn build_realisations(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    grouped: &[RealisationRoots],
    solve: ChannelSolve,
    tol: &Tolerances,
) -> Result<(Vec<Realisation>, Vec<Diagnostic>)> {
    let mut diagnostics = Vec::new();
    let mut out = Vec::with_capacity(grouped.len());
    for (i, group) in grouped.iter().enumerate() {
        let mut states = Vec::with_capacity(group.roots.len());
        for r in &group.roots {
            let s = reduced_state(problem, aux, r.channel, r.value, solve, tol)?;
            if s.mean_field {
                let d = Diagnostic::MeanFieldFallback {
                    channel: r.channel,
                    root: r.value,
                    nearest: r.value + s.channel_gap,
                };
                if !diagnostics.contains(&d) {
                    diagnostics.push(d);
                }
            }
            states.push(s);
        }
        out.push(Realisation {
            index: i + 1,
            g: group.g,
            roots: group.roots.clone(),
            states,
            amplitude: C64::new(0.0, 0.0),
            weights: vec![0.0; problem.n_p()],
            alpha: 0.0,
        });
    }
    Ok((out, diagnostics))
}

/// Boundary amplitude and per-reading weights of a realisation.
///
/// `C_i` is the measured-state amplitude `a_g` of the realisation's channel
/// (the norm of all amplitudes for the background realisation). `c_n` is
/// proportional to the mean overlap between the ground state and the
/// background profile of the realisation's own states for reading `n`,
/// normalized so that `Σ c_n = 1`.
pub fn boundary_match(
    problem: &MeasurementProblem,
    realisation: &Realisation,
) -> (C64, Vec<f64>, Option<Diagnostic>) {
    let n_p = problem.n_p();
    let amplitude = match realisation.g {
        Some(g) => problem.amplitude(g),
        None => {
            let mass: f64 = (0..problem.n_channels())
                .map(|g| problem.amplitude(g).norm_sqr())
                .sum();
            C64::new(mass.sqrt(), 0.0)
        }
    };
    let ground = CVector::from_vec(problem.instrument.ground_weights.clone());

    let mut overlaps = vec![0.0; n_p];
    for (n, slot) in overlaps.iter_mut().enumerate() {
        let mut states: Vec<&ReducedState> = realisation.own_states(n).map(|(_, s)| s).collect();
        if states.is_empty() {
            states = realisation
                .roots
                .iter()
                .zip(&realisation.states)
                .filter(|(r, _)| r.channel == n)
                .map(|(_, s)| s)
                .collect();
        }
        if states.is_empty() {
            continue;
        }
        let sum: f64 = states
            .iter()
            .map(|s| ground.dotc(&s.background_profile(n_p)).norm())
            .sum();
        *slot = sum / states.len() as f64;
    }
    let total: f64 = overlaps.iter().sum();
    if total < 1e-14 {
        let present: Vec<bool> = (0..n_p)
            .map(|n| realisation.roots.iter().any(|r| r.channel == n))
            .collect();
        let count = present.iter().filter(|p| **p).count().max(1);
        let weights = present
            .iter()
            .map(|p| if *p { 1.0 / count as f64 } else { 0.0 })
            .collect();
        return (
            amplitude,
            weights,
            Some(Diagnostic::DegenerateOverlap {
                realisation: realisation.index,
            }),
        );
    }
    (
        amplitude,
        overlaps.iter().map(|o| o / total).collect(),
        None,
    )
}

/// `α_i = |C_i|² / Σ_j |C_j|²`.
pub fn probabilities(amplitudes: &[C64]) -> Result<Vec<f64>> {
    let total: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::AllZero);
    }
    Ok(amplitudes.iter().map(|c| c.norm_sqr() / total).collect())
}

/// Intensities over the `(g, n)` product cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub n_channels: usize,
    pub n_p: usize,
    /// Flat product-basis order.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn zeros(n_channels: usize, n_p: usize) -> Self {
        Self {
            n_channels,
            n_p,
            values: vec![0.0; n_channels * n_p],
        }
    }

    pub fn at(&self, g: usize, n: usize) -> f64 {
        self.values[g * self.n_p + n]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Mass per channel `g`.
    pub fn channel_marginal(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_p)
            .map(|c| c.iter().sum())
            .collect()
    }

    /// Mass per reading `n`.
    pub fn reading_marginal(&self) -> Vec<f64> {
        (0..self.n_p)
            .map(|n| (0..self.n_channels).map(|g| self.at(g, n)).sum())
            .collect()
    }
}

/// `ρ_i = |Σ_k c_{n(k)} Ψ_k|²` over the realisation's roots, normalized to
/// unit total.
pub fn density(problem: &MeasurementProblem, realisation: &Realisation) -> DensityGrid {
    let mut amp = CVector::zeros(problem.dim());
    for (r, s) in realisation.roots.iter().zip(&realisation.states) {
        amp += s.components.scale(realisation.weights[r.channel]);
    }
    let mut grid = DensityGrid::zeros(problem.n_channels(), problem.n_p());
    for (v, z) in grid.values.iter_mut().zip(amp.iter()) {
        *v = z.norm_sqr();
    }
    let mut total = grid.total();
    if total == 0.0 {
        // Complete cancellation: fall back to the incoherent sum.
        for (r, s) in realisation.roots.iter().zip(&realisation.states) {
            let c = realisation.weights[r.channel];
            for (v, z) in grid.values.iter_mut().zip(s.components.iter()) {
                *v += c * c * z.norm_sqr();
            }
        }
        total = grid.total();
    }
    if total > 0.0 {
        grid.values.iter_mut().for_each(|v| *v /= total);
    }
    grid
}

/// `Σ_i α_i ρ_i`.
pub fn expected_density(grids: &[DensityGrid], alphas: &[f64]) -> DensityGrid {
    let first = &grids[0];
    let mut out = DensityGrid::zeros(first.n_channels, first.n_p);
    for (grid, &alpha) in grids.iter().zip(alphas) {
        for (o, v) in out.values.iter_mut().zip(&grid.values) {
            *o += alpha * v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub realisation: usize,
    pub g: Option<usize>,
    /// Mass fraction per channel `g = 0..=N_Φ`.
    pub channel_fractions: Vec<f64>,
    /// Mass fraction per reading.
    pub reading_fractions: Vec<f64>,
    /// Mass inside the requested reading window.
    pub window_fraction: f64,
    /// Channel holding the largest fraction.
    pub dominant_channel: usize,
}

pub fn localization_report(
    problem: &MeasurementProblem,
    realisation: &Realisation,
    window: &[usize],
) -> LocalizationReport {
    let grid = density(problem, realisation);
    let channel_fractions = grid.channel_marginal();
    let reading_fractions = grid.reading_marginal();
    let window_fraction = window
        .iter()
        .filter_map(|n| reading_fractions.get(*n))
        .sum();
    let dominant_channel = channel_fractions
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(g, _)| g)
        .unwrap_or(0);
    LocalizationReport {
        realisation: realisation.index,
        g: realisation.g,
        channel_fractions,
        reading_fractions,
        window_fraction,
        dominant_channel,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Zero-based draw number.
    pub draw: usize,
    /// One-based realisation label.
    pub realisation: usize,
    /// One-based reading index.
    pub reading_index: usize,
    pub root_value: f64,
}

fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        last = i;
        acc += w;
        if target < acc {
            return i;
        }
    }
    last
}

/// Draws `count` outcomes: the realisation with probability `α_i`, then a
/// reading with probability `|c_n|² / Σ|c_m|²`.
///
/// The generator is ChaCha20 seeded from `seed`, so the record list depends
/// only on `(realisations, alphas, seed, count)`.
pub fn sample(
    realisations: &[Realisation],
    alphas: &[f64],
    n_p: usize,
    seed: u64,
    count: usize,
) -> Vec<SampleRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let reading_weights: Vec<Vec<f64>> = realisations
        .iter()
        .map(|r| r.reading_probabilities())
        .collect();
    let representatives: Vec<Vec<Option<f64>>> = realisations
        .iter()
        .map(|r| (0..n_p).map(|n| r.representative_root(n, n_p)).collect())
        .collect();
    (0..count)
        .map(|draw| {
            let i = pick(alphas, rng.random::<f64>());
            let n = pick(&reading_weights[i], rng.random::<f64>());
            SampleRecord {
                draw,
                realisation: realisations[i].index,
                reading_index: n + 1,
                root_value: representatives[i][n].unwrap_or(f64::NAN),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_examples() {
        let c = C64::new(0.3, -0.1);
        assert_eq!(probabilities(&[c, c]).unwrap(), vec![0.5, 0.5]);
        let a = probabilities(&[C64::new(0.6, 0.0), C64::new(0.8, 0.0)]).unwrap();
        assert!((a[0] - 0.36).abs() < 1e-12 && (a[1] - 0.64).abs() < 1e-12);
        assert_eq!(probabilities(&[C64::new(0.0, 2.0)]).unwrap(), vec![1.0]);
        assert_eq!(probabilities(&[C64::new(0.0, 0.0)]), Err(Error::AllZero));
    }

    #[test]
    fn pick_respects_cumulative_weights() {
        let w = [0.25, 0.0, 0.75];
        assert_eq!(pick(&w, 0.0), 0);
        assert_eq!(pick(&w, 0.2499), 0);
        assert_eq!(pick(&w, 0.25), 2);
        assert_eq!(pick(&w, 0.999_999), 2);
    }
}
