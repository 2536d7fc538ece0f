use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use redlab_core::effective::solve_auxiliary;
use redlab_core::model::MeasurementProblem;
use redlab_core::oracle::{
    compare_spectra, full_eigen_with_background, full_spectrum, grid_bisect_roots,
    partitioned_spectrum, Method, OracleSummary, PartitionOptions, SpectrumReport,
};
use redlab_core::pipeline::SolveReport;
use redlab_core::realisation::sample;
use redlab_core::report::{format_float, to_json};
use redlab_core::scenarios::{
    build_two_slit, fix_ts, load_scenario, plot_range, two_slit_report, ScenarioFile,
};
use redlab_core::secular::{
    channel_constants, count_solutions, curve, find_roots, Diagnostic, Pole,
};
use redlab_core::{solve, AuxMode, Error, SolveOptions, Tolerances};
use serde::Serialize;

use crate::{Args, Command, Failure};

type CmdResult = std::result::Result<(), Failure>;

pub fn run(args: &Args) -> CmdResult {
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(Failure::Usage(format!(
            "--tol must be positive, got {}",
            args.tol
        )));
    }
    match args.command {
        Command::Validate => validate(args),
        Command::Solve => solve_cmd(args),
        Command::Sample => sample_cmd(args),
        Command::Oracle => oracle_cmd(args),
        Command::Plotdata => plotdata(args),
        Command::Twoslit => twoslit(args),
    }
}

fn scenario_path(args: &Args) -> std::result::Result<&Path, Failure> {
    args.scenario
        .as_deref()
        .ok_or_else(|| Failure::Usage("--scenario is required".into()))
}

fn load(args: &Args) -> std::result::Result<MeasurementProblem, Failure> {
    Ok(load_scenario(scenario_path(args)?)?)
}

fn options(args: &Args) -> SolveOptions {
    SolveOptions {
        mode: args.mode.into(),
        tolerances: Tolerances {
            oracle_tol: args.tol,
            ..Tolerances::default()
        },
        ..SolveOptions::default()
    }
}

fn write_out(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::Core(Error::Io(format!("{}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `<out>` with its extension replaced by `suffix`.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

/// Main output to `--out` (or stdout), secondary JSON next to it (or stderr).
fn write_pair(args: &Args, main: &str, suffix: &str, side: &str) -> CmdResult {
    write_out(args.out.as_deref(), main)?;
    match &args.out {
        Some(p) => write_out(Some(&sidecar(p, suffix)), side),
        None => {
            eprint!("{side}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ValidateSummary {
    label: String,
    n_phi: usize,
    n_p: usize,
    dim: usize,
    counts: redlab_core::secular::SolutionCounts,
    scenario: ScenarioFile,
}

fn validate(args: &Args) -> CmdResult {
    let p = load(args)?;
    let summary = ValidateSummary {
        label: p.label.clone(),
        n_phi: p.n_phi(),
        n_p: p.n_p(),
        dim: p.dim(),
        counts: count_solutions(p.n_phi(), p.n_p()),
        scenario: ScenarioFile::from_problem(&p),
    };
    write_out(args.out.as_deref(), &to_json(&summary))
}

fn solve_cmd(args: &Args) -> CmdResult {
    let p = load(args)?;
    let opts = options(args);
    let solution = solve(&p, &opts)?;
    write_out(
        args.out.as_deref(),
        &to_json(&SolveReport::new(&p, &solution, opts.mode)),
    )
}

#[derive(Serialize)]
struct SampleSummary {
    label: String,
    n: usize,
    seed: u64,
    alphas: Vec<f64>,
    counts: Vec<usize>,
    frequencies: Vec<f64>,
    /// `α ± 4√(α(1−α)/n)`, per realisation.
    bounds: Vec<[f64; 2]>,
    within_bounds: Vec<bool>,
    chi_square: f64,
    degrees_of_freedom: usize,
}

fn sample_cmd(args: &Args) -> CmdResult {
    let p = load(args)?;
    let solution = solve(&p, &options(args))?;
    let records = sample(
        &solution.realisations,
        &solution.alphas,
        p.n_p(),
        args.seed,
        args.n,
    );

    let mut csv = String::from("draw,realisation,reading_index,root_value\n");
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.draw,
            r.realisation,
            r.reading_index,
            format_float(r.root_value)
        );
    }

    let k = solution.alphas.len();
    let mut counts = vec![0usize; k];
    for r in &records {
        counts[r.realisation - 1] += 1;
    }
    let n = args.n as f64;
    let frequencies: Vec<f64> = counts
        .iter()
        .map(|c| if args.n == 0 { 0.0 } else { *c as f64 / n })
        .collect();
    let bounds: Vec<[f64; 2]> = solution
        .alphas
        .iter()
        .map(|a| {
            let s = if args.n == 0 {
                0.0
            } else {
                4.0 * (a * (1.0 - a) / n).sqrt()
            };
            [a - s, a + s]
        })
        .collect();
    let within_bounds = frequencies
        .iter()
        .zip(&bounds)
        .map(|(f, b)| args.n == 0 || (b[0] <= *f && *f <= b[1]))
        .collect();
    let chi_square = if args.n == 0 {
        0.0
    } else {
        counts
            .iter()
            .zip(&solution.alphas)
            .map(|(c, a)| {
                let e = a * n;
                (*c as f64 - e).powi(2) / e
            })
            .sum()
    };
    let summary = SampleSummary {
        label: p.label.clone(),
        n: args.n,
        seed: args.seed,
        alphas: solution.alphas.clone(),
        counts,
        frequencies,
        bounds,
        within_bounds,
        chi_square,
        degrees_of_freedom: k.saturating_sub(1),
    };
    write_pair(args, &csv, "summary.json", &to_json(&summary))
}

#[derive(Serialize)]
struct OracleReport {
    label: String,
    tol: f64,
    pass: bool,
    /// Full eigenvalues with background weight above `1e-8` that no
    /// partitioned root matched.
    unmatched_full: usize,
    comparisons: Vec<OracleSummary>,
    partitioned: SpectrumReport,
    diagnostics: Vec<Diagnostic>,
}

fn oracle_cmd(args: &Args) -> CmdResult {
    let p = load(args)?;
    let tol = Tolerances {
        oracle_tol: args.tol,
        ..Tolerances::default()
    };
    let full = full_spectrum(&p)?;
    let aux = solve_auxiliary(&p, AuxMode::Full)?;
    let (part, mut diagnostics) = partitioned_spectrum(
        &p,
        &aux,
        PartitionOptions {
            corrupt: args.corrupt_kernel,
        },
    )?;
    let part_vs_full = compare_spectra(&part, &full, args.tol, false)?;
    let pass = part_vs_full.pass == Some(true) && part.values.len() <= full.values.len();

    let weighted = full_eigen_with_background(&p)?;
    let unmatched_full = weighted
        .iter()
        .filter(|(v, w)| {
            *w > 1e-8
                && !part
                    .values
                    .iter()
                    .any(|x| redlab_core::oracle::relative_gap(*x, *v) <= args.tol)
        })
        .count();

    // Mean-field secular roots, and the grid scan of the same equations.
    let diag_aux = solve_auxiliary(&p, AuxMode::Diagonal)?;
    let mut secular_values = Vec::new();
    let mut grid_gap: f64 = 0.0;
    let mut grid_counts_agree = true;
    for n in 0..p.n_p() {
        let c = channel_constants(&p, &diag_aux, n);
        let fast = find_roots(&c, &tol)?;
        let grid = grid_bisect_roots(&c, 256, &tol);
        grid_counts_agree &= fast.roots.len() == grid.roots.len();
        for (a, b) in fast.roots.iter().zip(&grid.roots) {
            grid_gap = grid_gap.max(redlab_core::oracle::relative_gap(*a, *b));
        }
        diagnostics.extend(fast.diagnostics);
        secular_values.extend(fast.roots);
    }
    let secular = compare_spectra(
        &SpectrumReport::new(Method::Secular, secular_values),
        &full,
        args.tol,
        false,
    )?;
    let mut secular_summary = secular.summary();
    secular_summary.pass = None;
    let grid_summary = OracleSummary {
        method: Method::Grid,
        count: secular.values.len(),
        max_gap: grid_gap,
        pass: Some(grid_counts_agree && grid_gap <= 1e-9),
    };

    let report = OracleReport {
        label: p.label.clone(),
        tol: args.tol,
        pass,
        unmatched_full,
        comparisons: vec![
            full.summary(),
            part_vs_full.summary(),
            secular_summary,
            grid_summary,
        ],
        partitioned: part_vs_full,
        diagnostics,
    };
    write_out(args.out.as_deref(), &to_json(&report))?;
    if pass {
        Ok(())
    } else {
        Err(Failure::OracleMismatch)
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("--range expects LO:HI, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[derive(Serialize)]
struct PoleEntry {
    position: f64,
    residue: f64,
    groups: Vec<usize>,
}

impl From<&Pole> for PoleEntry {
    fn from(p: &Pole) -> Self {
        PoleEntry {
            position: p.position,
            residue: p.residue,
            groups: p.groups.clone(),
        }
    }
}

#[derive(Serialize)]
struct PlotSidecar {
    label: String,
    reading: usize,
    p0n: f64,
    range: [f64; 2],
    poles: Vec<PoleEntry>,
    roots: Vec<f64>,
}

fn plotdata(args: &Args) -> CmdResult {
    let p = load(args)?;
    if args.channel == 0 || args.channel > p.n_p() {
        return Err(Failure::Usage(format!(
            "--channel must lie in 1..={}",
            p.n_p()
        )));
    }
    let opts = options(args);
    let aux = solve_auxiliary(&p, opts.mode)?;
    let c = channel_constants(&p, &aux, args.channel - 1);
    let (lo, hi) = match &args.range {
        Some(r) => parse_range(r)?,
        None => plot_range(&c),
    };
    let roots = find_roots(&c, &opts.tolerances)?;
    let points = curve(&c, lo, hi, args.points, &opts.tolerances);

    let mut csv = String::from("eta,secular_value,line_value\n");
    for pt in &points {
        let _ = writeln!(
            csv,
            "{},{},{}",
            format_float(pt.eta),
            format_float(pt.secular_value),
            format_float(pt.line_value)
        );
    }
    let side = PlotSidecar {
        label: p.label.clone(),
        reading: args.channel,
        p0n: c.p0n,
        range: [lo, hi],
        poles: roots.active_poles.iter().map(PoleEntry::from).collect(),
        roots: roots.roots.clone(),
    };
    write_pair(args, &csv, "poles.json", &to_json(&side))
}

fn twoslit(args: &Args) -> CmdResult {
    let p = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => build_two_slit(&fix_ts())?,
    };
    if p.n_phi() != 2 || p.n_p() != 2 {
        return Err(Error::Schema(format!(
            "two-slit analysis needs 2 channels and 2 readings, got {} and {}",
            p.n_phi(),
            p.n_p()
        ))
        .into());
    }
    let (report, _) = two_slit_report(&p, &options(args))?;
    write_out(args.out.as_deref(), &to_json(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("-5:5").unwrap(), (-5.0, 5.0));
        assert!(parse_range("5:-5").is_err());
        assert!(parse_range("1").is_err());
        assert!(parse_range("a:b").is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar(Path::new("/tmp/x.csv"), "poles.json"),
            PathBuf::from("/tmp/x.poles.json")
        );
    }
}
