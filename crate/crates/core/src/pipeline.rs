//! End-to-end solve: auxiliary spectra → secular constants → roots →
//! realisations → probabilities, densities and localisation.

use serde::Serialize;

use crate::config::Tolerances;
use crate::effective::{solve_auxiliary, AuxMode, AuxiliarySpectrum};
use crate::error::Result;
use crate::linalg::{CVector, C64};
use crate::model::MeasurementProblem;
use crate::realisation::{
    boundary_match, build_realisations, density, expected_density, localization_report,
    probabilities, ChannelSolve, DensityGrid, LocalizationReport, Realisation,
};
use crate::secular::{
    channel_constants, chaos_ratio, classify_realisations, count_solutions, find_roots,
    ChannelConstants, Classification, Diagnostic, SecularRoots, SolutionCounts,
};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub mode: AuxMode,
    pub channel_solve: ChannelSolve,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Counts predicted from the problem shape.
    pub counts: SolutionCounts,
    pub aux: Vec<AuxiliarySpectrum>,
    pub constants: Vec<ChannelConstants>,
    pub roots: Vec<SecularRoots>,
    pub classification: Classification,
    /// Realisations with non-zero probability, relabelled `1..`.
    pub realisations: Vec<Realisation>,
    pub alphas: Vec<f64>,
    pub densities: Vec<DensityGrid>,
    pub expected: DensityGrid,
    pub localization: Vec<LocalizationReport>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Runs the whole pipeline on a validated problem.
pub fn solve(problem: &MeasurementProblem, options: &SolveOptions) -> Result<Solution> {
    let tol = &options.tolerances;
    tol.check()?;
    let aux = solve_auxiliary(problem, options.mode)?;
    let constants: Vec<ChannelConstants> = (0..problem.n_p())
        .map(|n| channel_constants(problem, &aux, n))
        .collect();
    let roots = constants
        .iter()
        .map(|c| find_roots(c, tol))
        .collect::<Result<Vec<_>>>()?;
    let classification = classify_realisations(&roots, problem.n_phi());

    let mut diagnostics: Vec<Diagnostic> = roots
        .iter()
        .flat_map(|r| r.diagnostics.iter().cloned())
        .collect();
    diagnostics.extend(classification.diagnostics.iter().cloned());
    if let Some(d) = chaos_ratio(&classification, &problem.system.phi) {
        diagnostics.push(d);
    }

    let (mut realisations, build_diags) = build_realisations(
        problem,
        &aux,
        &classification.realisations,
        options.channel_solve,
        tol,
    )?;
    diagnostics.extend(build_diags);

    for r in realisations.iter_mut() {
        let (amplitude, weights, diag) = boundary_match(problem, r);
        r.amplitude = amplitude;
        r.weights = weights;
        diagnostics.extend(diag);
    }
    let amplitudes: Vec<C64> = realisations.iter().map(|r| r.amplitude).collect();
    let alphas_all = probabilities(&amplitudes)?;

    let mut kept = Vec::with_capacity(realisations.len());
    for (mut r, alpha) in realisations.into_iter().zip(alphas_all) {
        if alpha == 0.0 {
            if let Some(g) = r.g {
                diagnostics.push(Diagnostic::EmptyRealisation { g });
            }
            continue;
        }
        r.alpha = alpha;
        kept.push(r);
    }
    for (i, r) in kept.iter_mut().enumerate() {
        r.index = i + 1;
    }
    let alphas: Vec<f64> = kept.iter().map(|r| r.alpha).collect();

    let densities: Vec<DensityGrid> = kept.iter().map(|r| density(problem, r)).collect();
    let expected = expected_density(&densities, &alphas);
    let localization = kept
        .iter()
        .map(|r| localization_report(problem, r, &[]))
        .collect();

    Ok(Solution {
        counts: count_solutions(problem.n_phi(), problem.n_p()),
        aux,
        constants,
        roots,
        classification,
        realisations: kept,
        alphas,
        densities,
        expected,
        localization,
        diagnostics,
    })
}

/// Coherent amplitude `Σ_k c_{n(k)} Ψ_k` of a realisation, unit norm.
pub fn realisation_amplitude(problem: &MeasurementProblem, r: &Realisation) -> CVector {
    let mut amp = CVector::zeros(problem.dim());
    for (root, s) in r.roots.iter().zip(&r.states) {
        amp += s.components.scale(r.weights[root.channel]);
    }
    let norm = amp.norm();
    if norm > 0.0 {
        amp.unscale_mut(norm);
    }
    amp
}

#[derive(Debug, Clone, Serialize)]
pub struct CountsReport {
    #[serde(rename = "N_s")]
    pub n_s: usize,
    #[serde(rename = "N0_s")]
    pub n0_s: usize,
    /// Realisations actually found.
    #[serde(rename = "N_R")]
    pub n_r: usize,
    /// `round(N_s / N⁰_s)`.
    #[serde(rename = "N_R_expected")]
    pub n_r_expected: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoleReport {
    pub position: f64,
    pub residue: f64,
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelReport {
    /// One-based reading index.
    pub reading: usize,
    pub p0n: f64,
    pub poles: Vec<PoleReport>,
    pub roots: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RootReport {
    pub reading: usize,
    pub value: f64,
    pub shared: bool,
    pub mean_field: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RealisationReport {
    pub index: usize,
    pub g: Option<usize>,
    pub amplitude: [f64; 2],
    pub alpha: f64,
    /// `c_n`, linear normalization.
    pub weights: Vec<f64>,
    /// `|c_n|² / Σ|c_m|²`, used for sampling readings.
    pub reading_probabilities: Vec<f64>,
    pub roots: Vec<RootReport>,
    pub channel_fractions: Vec<f64>,
    pub reading_fractions: Vec<f64>,
}

/// Serializable summary of a [`Solution`].
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub label: String,
    pub mode: AuxMode,
    pub counts: CountsReport,
    pub roots: Vec<ChannelReport>,
    pub realisations: Vec<RealisationReport>,
    pub alphas: Vec<f64>,
    pub expected_density: Vec<f64>,
    pub diagnostics: Vec<Diagnostic>,
}

impl SolveReport {
    pub fn new(problem: &MeasurementProblem, solution: &Solution, mode: AuxMode) -> Self {
        let roots = solution
            .roots
            .iter()
            .zip(&solution.constants)
            .map(|(r, c)| ChannelReport {
                reading: r.n + 1,
                p0n: c.p0n,
                poles: r
                    .active_poles
                    .iter()
                    .map(|p| PoleReport {
                        position: p.position,
                        residue: p.residue,
                        groups: p.groups.clone(),
                    })
                    .collect(),
                roots: r.roots.clone(),
            })
            .collect();
        let realisations = solution
            .realisations
            .iter()
            .zip(&solution.localization)
            .map(|(r, loc)| RealisationReport {
                index: r.index,
                g: r.g,
                amplitude: [r.amplitude.re, r.amplitude.im],
                alpha: r.alpha,
                weights: r.weights.clone(),
                reading_probabilities: r.reading_probabilities(),
                roots: r
                    .roots
                    .iter()
                    .zip(&r.states)
                    .map(|(x, s)| RootReport {
                        reading: x.channel + 1,
                        value: x.value,
                        shared: x.shared,
                        mean_field: s.mean_field,
                    })
                    .collect(),
                channel_fractions: loc.channel_fractions.clone(),
                reading_fractions: loc.reading_fractions.clone(),
            })
            .collect();
        SolveReport {
            label: problem.label.clone(),
            mode,
            counts: CountsReport {
                n_s: solution.counts.n_s,
                n0_s: solution.counts.n0_s,
                n_r: solution.realisations.len(),
                n_r_expected: solution.counts.n_r,
            },
            roots,
            realisations,
            alphas: solution.alphas.clone(),
            expected_density: solution.expected.values.clone(),
            diagnostics: solution.diagnostics.clone(),
        }
    }
}
