//! Canonical fixtures, the two-slit detector model and the scenario file
//! format.
//!
//! The two-slit model has two measured channels (the wave passing slit 1 or
//! slit 2) and two instrument states (detector 1 or detector 2 excited, at
//! readings `X₁ = −D/2`, `X₂ = +D/2`). Channel 0 stands for the blocked
//! part of the wave and only carries a constant background level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::model::{
    validate_problem, CouplingSpec, InstrumentSpec, MeasurementProblem, SystemSpec,
};
use crate::pipeline::{realisation_amplitude, solve, Solution, SolveOptions};
use crate::realisation::localization_report;
use crate::report::to_json;
use crate::secular::{curve, CurvePoint};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSlitConfig {
    /// Detector separation `D`.
    pub separation: f64,
    /// Wave profile at the detector sites, `(Φ₀(X₁), Φ₀(X₂))`.
    pub amps: [C64; 2],
    /// `|V₁₀|`, `|V₂₀|`: every entry of block `V^{0g}` equals `v_g`.
    pub coupling_strength: [f64; 2],
    /// Uniform entries of `V^{12}`.
    pub cross_coupling: f64,
    /// Level offsets `Δ_gn`, placed on the diagonal of `V^{gg}`.
    pub delta: [[f64; 2]; 2],
    pub background_level: f64,
    /// Channel energies `(Φ₁, Φ₂)`. Defaults to `(3X₁, 3X₂)`, which keeps the
    /// two pole groups apart by a gap `D` with the line crossing in the gap.
    pub channel_levels: Option<[f64; 2]>,
}

impl TwoSlitConfig {
    pub fn detector_positions(&self) -> [f64; 2] {
        [-0.5 * self.separation, 0.5 * self.separation]
    }

    pub fn levels(&self) -> [f64; 2] {
        let x = self.detector_positions();
        self.channel_levels.unwrap_or([3.0 * x[0], 3.0 * x[1]])
    }
}

/// Symmetric canonical fixture: `D = 2`, equal amplitudes `1/√2`, coupling
/// strengths `0.2`, no level offsets.
pub fn fix_ts() -> TwoSlitConfig {
    let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    TwoSlitConfig {
        separation: 2.0,
        amps: [a, a],
        coupling_strength: [0.2, 0.2],
        cross_coupling: 0.0,
        delta: [[0.0; 2]; 2],
        background_level: 0.0,
        channel_levels: None,
    }
}

/// [`fix_ts`] with amplitudes `(0.6, 0.8)`.
pub fn fix_ta() -> TwoSlitConfig {
    TwoSlitConfig {
        amps: [C64::new(0.6, 0.0), C64::new(0.8, 0.0)],
        ..fix_ts()
    }
}

pub fn build_two_slit(config: &TwoSlitConfig) -> Result<MeasurementProblem> {
    if config.separation.is_nan() || config.separation <= 0.0 {
        return Err(Error::Schema(format!(
            "detector separation must be positive, got {}",
            config.separation
        )));
    }
    if config
        .coupling_strength
        .iter()
        .any(|v| v.is_nan() || *v < 0.0)
    {
        return Err(Error::Schema(
            "coupling strengths must be non-negative".into(),
        ));
    }
    let x = config.detector_positions();
    let levels = config.levels();

    let mut coupling = CouplingSpec::new();
    for g in 1..=2 {
        let v = config.coupling_strength[g - 1];
        coupling.insert(0, g, CMatrix::from_element(2, 2, C64::new(v, 0.0)));
        let d = config.delta[g - 1];
        coupling.insert(
            g,
            g,
            CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                C64::new(d[0], 0.0),
                C64::new(d[1], 0.0),
            ])),
        );
    }
    coupling.insert(
        1,
        2,
        CMatrix::from_element(2, 2, C64::new(config.cross_coupling, 0.0)),
    );

    validate_problem(&MeasurementProblem {
        label: "two-slit".into(),
        system: SystemSpec {
            phi: vec![0.0, levels[0], levels[1]],
            amplitudes: config.amps.to_vec(),
            background_amplitude: C64::new(0.0, 0.0),
        },
        instrument: InstrumentSpec {
            readings: x.to_vec(),
            ground_weights: vec![],
        },
        coupling,
        background_level: config.background_level,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoSlitRealisation {
    pub index: usize,
    pub g: Option<usize>,
    pub alpha: f64,
    /// Per reading: the realisation's own roots.
    pub own_roots: Vec<Vec<f64>>,
    /// Per reading: shared roots.
    pub shared_roots: Vec<Vec<f64>>,
    /// Mass fraction per channel `g = 0, 1, 2`.
    pub channel_fractions: Vec<f64>,
    /// Mass on the realisation's own detector reading.
    pub window_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoSlitCurve {
    pub reading: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoSlitReport {
    /// Per reading, all roots ascending.
    pub roots: Vec<Vec<f64>>,
    pub realisations: Vec<TwoSlitRealisation>,
    pub alphas: Vec<f64>,
    /// Mass fraction of each realisation on detector 1 and detector 2.
    pub localization: Vec<[f64; 2]>,
    /// L2 gap between coherent and incoherent detector marginals.
    pub interference_erasure: f64,
    pub curve: Vec<TwoSlitCurve>,
}

/// Runs the full pipeline on a two-slit problem and packages the results.
pub fn two_slit_report(
    problem: &MeasurementProblem,
    options: &SolveOptions,
) -> Result<(TwoSlitReport, Solution)> {
    let solution = solve(problem, options)?;
    let n_p = problem.n_p();

    let realisations = solution
        .realisations
        .iter()
        .map(|r| {
            let window: Vec<usize> = r.g.map(|g| vec![g - 1]).unwrap_or_default();
            let loc = localization_report(problem, r, &window);
            let own = (0..n_p)
                .map(|n| r.own_states(n).map(|(x, _)| x.value).collect())
                .collect();
            let shared = (0..n_p)
                .map(|n| {
                    r.roots
                        .iter()
                        .filter(|x| x.channel == n && x.shared)
                        .map(|x| x.value)
                        .collect()
                })
                .collect();
            TwoSlitRealisation {
                index: r.index,
                g: r.g,
                alpha: r.alpha,
                own_roots: own,
                shared_roots: shared,
                channel_fractions: loc.channel_fractions,
                window_fraction: loc.window_fraction,
            }
        })
        .collect::<Vec<_>>();

    let localization = realisations
        .iter()
        .map(|r| {
            [
                r.channel_fractions.get(1).copied().unwrap_or(0.0),
                r.channel_fractions.get(2).copied().unwrap_or(0.0),
            ]
        })
        .collect();

    // Coherent vs incoherent superposition of the realisation states, on
    // the reading marginal.
    let amps: Vec<(C64, nalgebra::DVector<C64>)> = solution
        .realisations
        .iter()
        .map(|r| (r.amplitude, realisation_amplitude(problem, r)))
        .collect();
    let mut coherent = vec![0.0; n_p];
    let mut incoherent = vec![0.0; n_p];
    for n in 0..n_p {
        for g in 0..problem.n_channels() {
            let k = problem.index(g, n).flat;
            let sum: C64 = amps.iter().map(|(a, v)| a * v[k]).sum();
            coherent[n] += sum.norm_sqr();
            incoherent[n] += amps.iter().map(|(a, v)| (a * v[k]).norm_sqr()).sum::<f64>();
        }
    }
    let interference_erasure = coherent
        .iter()
        .zip(&incoherent)
        .map(|(c, i)| (c - i).powi(2))
        .sum::<f64>()
        .sqrt();

    let tol = &options.tolerances;
    let curve = solution
        .constants
        .iter()
        .map(|c| {
            let (lo, hi) = plot_range(c);
            TwoSlitCurve {
                reading: c.n + 1,
                points: curve(c, lo, hi, 401, tol),
            }
        })
        .collect();

    let report = TwoSlitReport {
        roots: solution.roots.iter().map(|r| r.roots.clone()).collect(),
        realisations,
        alphas: solution.alphas.clone(),
        localization,
        interference_erasure,
        curve,
    };
    Ok((report, solution))
}

/// Default plotting window: one unit beyond the outermost pole or line
/// crossing.
pub fn plot_range(c: &crate::secular::ChannelConstants) -> (f64, f64) {
    let lo = c.poles.iter().map(|p| p.position).fold(c.p0n, f64::min) - 1.0;
    let hi = c.poles.iter().map(|p| p.position).fold(c.p0n, f64::max) + 1.0;
    (lo, hi)
}

/// On-disk scenario layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub label: String,
    pub system: SystemSection,
    pub instrument: InstrumentSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub background_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub phi: Vec<f64>,
    pub amp_re: Vec<f64>,
    #[serde(default)]
    pub amp_im: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSection {
    pub readings: Vec<f64>,
    #[serde(default)]
    pub ground_re: Vec<f64>,
    #[serde(default)]
    pub ground_im: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    #[serde(default)]
    pub blocks: Vec<BlockEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub g: usize,
    pub gp: usize,
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Vec<Vec<f64>>,
}

fn complex_list(re: &[f64], im: &[f64], what: &str) -> Result<Vec<C64>> {
    if !im.is_empty() && im.len() != re.len() {
        return Err(Error::Schema(format!(
            "{what}: {} real parts but {} imaginary parts",
            re.len(),
            im.len()
        )));
    }
    Ok(re
        .iter()
        .enumerate()
        .map(|(i, r)| C64::new(*r, im.get(i).copied().unwrap_or(0.0)))
        .collect())
}

fn block_matrix(entry: &BlockEntry, n_p: usize) -> Result<CMatrix> {
    let what = format!("block ({}, {})", entry.g, entry.gp);
    if entry.re.len() != n_p || entry.re.iter().any(|row| row.len() != n_p) {
        return Err(Error::Schema(format!(
            "{what}: real part is not {n_p}x{n_p}"
        )));
    }
    if !entry.im.is_empty()
        && (entry.im.len() != n_p || entry.im.iter().any(|row| row.len() != n_p))
    {
        return Err(Error::Schema(format!(
            "{what}: imaginary part is not {n_p}x{n_p}"
        )));
    }
    Ok(CMatrix::from_fn(n_p, n_p, |i, j| {
        C64::new(entry.re[i][j], entry.im.get(i).map_or(0.0, |row| row[j]))
    }))
}

impl ScenarioFile {
    /// Decodes into an unvalidated problem, checking the layout.
    pub fn to_problem(&self) -> Result<MeasurementProblem> {
        let n_p = self.instrument.readings.len();
        let amplitudes = complex_list(&self.system.amp_re, &self.system.amp_im, "amplitudes")?;
        let ground = complex_list(
            &self.instrument.ground_re,
            &self.instrument.ground_im,
            "ground weights",
        )?;
        let mut coupling = CouplingSpec::new();
        for entry in &self.coupling.blocks {
            if coupling.get(entry.g, entry.gp).is_some() {
                return Err(Error::Schema(format!(
                    "block ({}, {}) given twice",
                    entry.g, entry.gp
                )));
            }
            coupling.insert(entry.g, entry.gp, block_matrix(entry, n_p)?);
        }
        Ok(MeasurementProblem {
            label: self.label.clone(),
            system: SystemSpec {
                phi: self.system.phi.clone(),
                amplitudes,
                background_amplitude: C64::new(0.0, 0.0),
            },
            instrument: InstrumentSpec {
                readings: self.instrument.readings.clone(),
                ground_weights: ground,
            },
            coupling,
            background_level: self.background_level,
        })
    }

    /// Encodes a problem. Every stored block is written, zero or not.
    pub fn from_problem(problem: &MeasurementProblem) -> Self {
        let amp_im: Vec<f64> = problem.system.amplitudes.iter().map(|a| a.im).collect();
        let ground_im: Vec<f64> = problem
            .instrument
            .ground_weights
            .iter()
            .map(|a| a.im)
            .collect();
        let blocks = problem
            .coupling
            .blocks
            .iter()
            .map(|(&(g, gp), m)| BlockEntry {
                g,
                gp,
                re: (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect())
                    .collect(),
                im: (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect())
                    .collect(),
            })
            .collect();
        ScenarioFile {
            label: problem.label.clone(),
            system: SystemSection {
                phi: problem.system.phi.clone(),
                amp_re: problem.system.amplitudes.iter().map(|a| a.re).collect(),
                amp_im,
            },
            instrument: InstrumentSection {
                readings: problem.instrument.readings.clone(),
                ground_re: problem
                    .instrument
                    .ground_weights
                    .iter()
                    .map(|a| a.re)
                    .collect(),
                ground_im,
            },
            coupling: CouplingSection { blocks },
            background_level: problem.background_level,
        }
    }
}

fn classify_json_error(e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Io => Error::Io(e.to_string()),
        Category::Syntax | Category::Eof => Error::Parse(e.to_string()),
        Category::Data => Error::Schema(e.to_string()),
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<MeasurementProblem> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(classify_json_error)?;
    validate_problem(&file.to_problem()?)
}

pub fn load_scenario(path: &Path) -> Result<MeasurementProblem> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn scenario_json(problem: &MeasurementProblem) -> String {
    to_json(&ScenarioFile::from_problem(problem))
}

pub fn save_scenario(problem: &MeasurementProblem, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_json(problem))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Defaults used by the bundled fixtures.
pub fn default_options() -> SolveOptions {
    SolveOptions {
        tolerances: Tolerances::default(),
        ..SolveOptions::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let p = parse_scenario(
            r#"{"label":"min","system":{"phi":[0.0,1.0],"amp_re":[1.0]},"instrument":{"readings":[0.5]}}"#,
        )
        .unwrap();
        assert_eq!(p.n_phi(), 1);
        assert_eq!(p.n_p(), 1);
    }

    #[test]
    fn bad_block_size_is_a_schema_error() {
        let text = r#"{"label":"x","system":{"phi":[0,1],"amp_re":[1]},"instrument":{"readings":[0,1]},
            "coupling":{"blocks":[{"g":0,"gp":1,"re":[[0.1,0.2,0.3],[0,0,0]]}]}}"#;
        assert!(matches!(parse_scenario(text), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_keys_and_truncation() {
        let text = r#"{"label":"x","system":{"phi":[0,1],"amp_re":[1],"extra":1},"instrument":{"readings":[0]}}"#;
        assert!(matches!(parse_scenario(text), Err(Error::Schema(_))));
        assert!(matches!(
            parse_scenario(r#"{"label":"x","sys"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn fix_ts_round_trips_bit_for_bit() {
        let p = build_two_slit(&fix_ts()).unwrap();
        let back = parse_scenario(&scenario_json(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn mirror_symmetry_of_the_symmetric_fixture() {
        let p = build_two_slit(&fix_ts()).unwrap();
        // Swap slit and detector labels, reflect energies.
        let perm = [1usize, 0];
        for g in 1..=2 {
            let gm = 3 - g;
            assert_eq!(p.system.phi[g], -p.system.phi[gm]);
            assert_eq!(p.system.amplitudes[g - 1], p.system.amplitudes[gm - 1]);
            let b = p.block(0, g);
            let bm = p.block(0, gm);
            for n in 0..2 {
                for m in 0..2 {
                    assert_eq!(b[(n, m)], bm[(perm[n], perm[m])]);
                }
            }
        }
        assert_eq!(p.instrument.readings[0], -p.instrument.readings[1]);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = fix_ts();
        c.separation = 0.0;
        assert!(build_two_slit(&c).is_err());
        let mut c = fix_ts();
        c.coupling_strength = [-0.1, 0.2];
        assert!(build_two_slit(&c).is_err());
    }
}
