//! Exact elimination of the measured channels.
//!
//! Every channel `g ≥ 1` is solved on its own (or jointly, in
//! [`AuxMode::Full`]) to give the auxiliary levels and modes. From them the
//! background channel sees an energy-dependent interaction
//!
//! ```text
//! V_eff(η) = V⁰⁰ + Σ_{g≥1, k} V⁰ᵍ ψ_gk ψ_gk† Vᵍ⁰ / (η − η⁰_gk − Φ_g)
//! ```
//!
//! and the eliminated components are recovered with the h-kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMatrix, CVector, C64};
use crate::model::MeasurementProblem;

/// How the measured channels are decoupled from each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxMode {
    /// Each channel solved alone; inter-channel blocks `V^{gg'}` (g ≠ g',
    /// both ≥ 1) are dropped. This is the mean-field approximation.
    #[default]
    Diagonal,
    /// The whole `g ≥ 1` block is diagonalized jointly, so eliminating it is
    /// exact. Joint levels are assigned to channels by dominant weight.
    Full,
}

/// Levels and modes of one measured channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliarySpectrum {
    pub g: usize,
    pub phi: f64,
    /// `η⁰_gk`, ascending, with the channel energy `Φ_g` excluded.
    pub levels: Vec<f64>,
    /// Absolute pole positions `η⁰_gk + Φ_g`.
    pub poles: Vec<f64>,
    /// Column `k` is the channel-`g` part of mode `k` over the instrument basis.
    pub modes: CMatrix,
    /// Full joint eigenvectors over all measured channels (full mode only).
    /// Rows are ordered channel `1` first.
    pub joint: Option<CMatrix>,
    /// Column `k` is the coupling of mode `k` into the background channel,
    /// `V⁰ᵍ ψ_gk` (or `Σ_g' V⁰ᵍ' u_k^(g')` in full mode).
    pub couplers: CMatrix,
}

impl AuxiliarySpectrum {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Slice of mode `k` on measured channel `target` (zero in diagonal mode
    /// unless `target == self.g`).
    fn mode_slice(&self, k: usize, target: usize, n_p: usize) -> Option<CVector> {
        match &self.joint {
            Some(joint) => Some(
                joint
                    .view(((target - 1) * n_p, k), (n_p, 1))
                    .column(0)
                    .into_owned(),
            ),
            None if target == self.g => Some(self.modes.column(k).into_owned()),
            None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveKernel {
    pub eta: f64,
    pub matrix: CMatrix,
}

/// Distance below which `eta` counts as sitting on pole `i` of `poles`:
/// `tol_pole` times the spacing to the nearest distinct neighbour (1 if the
/// pole is isolated).
pub fn pole_threshold(poles: &[f64], i: usize, tol_pole: f64) -> f64 {
    let p = poles[i];
    let spacing = poles
        .iter()
        .map(|q| (q - p).abs())
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    tol_pole * if spacing.is_finite() { spacing } else { 1.0 }
}

fn check_pole_distance(eta: f64, poles: &[f64], active: &[bool], tol_pole: f64) -> Result<()> {
    for (i, &p) in poles.iter().enumerate() {
        if !active[i] {
            continue;
        }
        let threshold = pole_threshold(poles, i, tol_pole);
        if (eta - p).abs() < threshold || eta == p {
            return Err(Error::PoleProximity {
                eta,
                pole: p,
                threshold,
            });
        }
    }
    Ok(())
}

/// Solves the auxiliary problem of every measured channel.
pub fn solve_auxiliary(
    problem: &MeasurementProblem,
    mode: AuxMode,
) -> Result<Vec<AuxiliarySpectrum>> {
    match mode {
        AuxMode::Diagonal => (1..problem.n_channels())
            .map(|g| solve_channel(problem, g))
            .collect(),
        AuxMode::Full => solve_joint(problem),
    }
}

fn solve_channel(problem: &MeasurementProblem, g: usize) -> Result<AuxiliarySpectrum> {
    let n_p = problem.n_p();
    let mut a = problem.block(g, g);
    for (n, p) in problem.instrument.readings.iter().enumerate() {
        a[(n, n)] += C64::new(*p, 0.0);
    }
    let (levels, modes) = hermitian_eigen(&a)?;
    let phi = problem.system.phi[g];
    let poles = levels.iter().map(|l| l + phi).collect();
    let couplers = problem.block(0, g) * &modes;
    debug_assert_eq!(modes.ncols(), n_p);
    Ok(AuxiliarySpectrum {
        g,
        phi,
        levels,
        poles,
        modes,
        joint: None,
        couplers,
    })
}

fn solve_joint(problem: &MeasurementProblem) -> Result<Vec<AuxiliarySpectrum>> {
    let n_p = problem.n_p();
    let n_phi = problem.n_phi();
    let dim = n_phi * n_p;

    let mut h = CMatrix::zeros(dim, dim);
    for g in 1..=n_phi {
        for gp in 1..=n_phi {
            h.view_mut(((g - 1) * n_p, (gp - 1) * n_p), (n_p, n_p))
                .copy_from(&problem.block(g, gp));
        }
        for (n, e) in problem.channel_diagonal(g).into_iter().enumerate() {
            h[((g - 1) * n_p + n, (g - 1) * n_p + n)] += C64::new(e, 0.0);
        }
    }
    let (values, vectors) = hermitian_eigen(&h)?;

    // Greedy assignment by channel weight, at most N_P modes per channel.
    let mut candidates = Vec::with_capacity(dim * n_phi);
    for k in 0..dim {
        for g in 1..=n_phi {
            let w: f64 = vectors
                .view(((g - 1) * n_p, k), (n_p, 1))
                .iter()
                .map(|z| z.norm_sqr())
                .sum();
            candidates.push((w, k, g));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut owner = vec![0usize; dim];
    let mut load = vec![0usize; n_phi + 1];
    for (_, k, g) in candidates {
        if owner[k] == 0 && load[g] < n_p {
            owner[k] = g;
            load[g] += 1;
        }
    }

    let mut coupling_row = CMatrix::zeros(n_p, dim);
    for g in 1..=n_phi {
        coupling_row
            .view_mut((0, (g - 1) * n_p), (n_p, n_p))
            .copy_from(&problem.block(0, g));
    }

    let mut out = Vec::with_capacity(n_phi);
    for g in 1..=n_phi {
        let phi = problem.system.phi[g];
        let ks: Vec<usize> = (0..dim).filter(|&k| owner[k] == g).collect();
        let mut joint = CMatrix::zeros(dim, ks.len());
        for (col, &k) in ks.iter().enumerate() {
            joint.set_column(col, &vectors.column(k));
        }
        let modes = joint.view(((g - 1) * n_p, 0), (n_p, ks.len())).into_owned();
        let poles: Vec<f64> = ks.iter().map(|&k| values[k]).collect();
        let levels = poles.iter().map(|p| p - phi).collect();
        let couplers = &coupling_row * &joint;
        out.push(AuxiliarySpectrum {
            g,
            phi,
            levels,
            poles,
            modes,
            joint: Some(joint),
            couplers,
        });
    }
    Ok(out)
}

/// Green function of channel `g`: `Σ_k ψ_gk ψ_gk† / (η⁰_gk − η_g)` with
/// `η_g = η − Φ_g`.
pub fn green_function(aux: &AuxiliarySpectrum, eta: f64, tol_pole: f64) -> Result<CMatrix> {
    let active = vec![true; aux.len()];
    check_pole_distance(eta, &aux.poles, &active, tol_pole)?;
    let n_p = aux.modes.nrows();
    let mut g = CMatrix::zeros(n_p, n_p);
    for k in 0..aux.len() {
        let psi = aux.modes.column(k);
        let denom = aux.poles[k] - eta;
        g += (psi * psi.adjoint()).unscale(denom);
    }
    Ok(g)
}

fn all_poles(aux: &[AuxiliarySpectrum]) -> (Vec<f64>, Vec<bool>) {
    let mut poles = Vec::new();
    let mut active = Vec::new();
    for a in aux {
        for k in 0..a.len() {
            poles.push(a.poles[k]);
            active.push(a.couplers.column(k).iter().any(|z| z.norm() > 0.0));
        }
    }
    (poles, active)
}

/// `V_eff(η) = V⁰⁰ + Σ_{g,k} c_gk c_gk† / (η − pole_gk)` where `c_gk` are
/// the couplers of the auxiliary modes.
pub fn effective_kernel(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    eta: f64,
    tol_pole: f64,
) -> Result<EffectiveKernel> {
    let (poles, active) = all_poles(aux);
    check_pole_distance(eta, &poles, &active, tol_pole)?;
    let mut m = problem.block(0, 0);
    for a in aux {
        for k in 0..a.len() {
            let c = a.couplers.column(k);
            if c.iter().any(|z| z.norm() > 0.0) {
                m += (c * c.adjoint()).unscale(eta - a.poles[k]);
            }
        }
    }
    Ok(EffectiveKernel { eta, matrix: m })
}

/// The background-channel operator `diag(p⁰) + V_eff(η)` whose eigenvalue
/// `η` solutions are the exact (full mode) or mean-field (diagonal mode)
/// spectrum.
pub fn channel_matrix(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    eta: f64,
    tol_pole: f64,
) -> Result<CMatrix> {
    let mut m = effective_kernel(problem, aux, eta, tol_pole)?.matrix;
    for (n, e) in problem.channel_diagonal(0).into_iter().enumerate() {
        m[(n, n)] += C64::new(e, 0.0);
    }
    Ok(m)
}

/// h-kernel of channel `g`: maps a background component `ψ₀` onto the
/// channel-`g` component, `ψ_g = h_g(η) ψ₀`, with
/// `h_g(η) = Σ_k ψ_gk ψ_gk† Vᵍ⁰ / (η − η⁰_gk − Φ_g)`.
///
/// In full mode the sum runs over every joint mode, each contributing its
/// channel-`g` slice.
pub fn h_kernel(
    problem: &MeasurementProblem,
    aux: &[AuxiliarySpectrum],
    g: usize,
    eta: f64,
    tol_pole: f64,
) -> Result<CMatrix> {
    let n_p = problem.n_p();
    if g == 0 || g >= problem.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "h-kernel requested for channel {g}"
        )));
    }
    let contributing: Vec<&AuxiliarySpectrum> = aux
        .iter()
        .filter(|a| a.joint.is_some() || a.g == g)
        .collect();
    let mut poles = Vec::new();
    let mut active = Vec::new();
    for a in &contributing {
        for k in 0..a.len() {
            poles.push(a.poles[k]);
            active.push(a.couplers.column(k).iter().any(|z| z.norm() > 0.0));
        }
    }
    check_pole_distance(eta, &poles, &active, tol_pole)?;

    let mut h = CMatrix::zeros(n_p, n_p);
    for a in contributing {
        for k in 0..a.len() {
            let c = a.couplers.column(k);
            if c.iter().all(|z| z.norm() == 0.0) {
                continue;
            }
            if let Some(slice) = a.mode_slice(k, g, n_p) {
                h += (slice * c.adjoint()).unscale(eta - a.poles[k]);
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_problem, CouplingSpec, InstrumentSpec, SystemSpec};

    fn scalar_problem(v: f64, d: f64) -> MeasurementProblem {
        let mut coupling = CouplingSpec::new();
        coupling.insert(0, 1, CMatrix::from_element(1, 1, C64::new(v, 0.0)));
        validate_problem(&MeasurementProblem {
            label: "scalar".into(),
            system: SystemSpec {
                phi: vec![0.0, d],
                amplitudes: vec![C64::new(1.0, 0.0)],
                background_amplitude: C64::new(0.0, 0.0),
            },
            instrument: InstrumentSpec {
                readings: vec![0.0],
                ground_weights: vec![],
            },
            coupling,
            background_level: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn uncoupled_levels_are_the_readings() {
        let p = validate_problem(&MeasurementProblem {
            label: "free".into(),
            system: SystemSpec {
                phi: vec![0.0, 1.5, -0.5],
                amplitudes: vec![C64::new(1.0, 0.0); 2],
                background_amplitude: C64::new(0.0, 0.0),
            },
            instrument: InstrumentSpec {
                readings: vec![-0.3, 0.7, 2.0],
                ground_weights: vec![],
            },
            coupling: CouplingSpec::new(),
            background_level: 0.0,
        })
        .unwrap();
        for aux in solve_auxiliary(&p, AuxMode::Diagonal).unwrap() {
            assert_eq!(aux.levels, vec![-0.3, 0.7, 2.0]);
            assert_eq!(aux.modes, CMatrix::identity(3, 3));
        }
    }

    #[test]
    fn single_level_green_function() {
        let aux = AuxiliarySpectrum {
            g: 1,
            phi: 0.0,
            levels: vec![0.0],
            poles: vec![0.0],
            modes: CMatrix::identity(1, 1),
            joint: None,
            couplers: CMatrix::zeros(1, 1),
        };
        let g = green_function(&aux, 2.0, 1e-8).unwrap();
        assert_eq!(g[(0, 0)], C64::new(-0.5, 0.0));
        let far = green_function(&aux, 1e6, 1e-8).unwrap();
        assert!((far[(0, 0)].re * 1e6 + 1.0).abs() < 1e-12);
        assert!(matches!(
            green_function(&aux, 1e-12, 1e-8),
            Err(Error::PoleProximity { .. })
        ));
    }

    #[test]
    fn scalar_kernel_and_h_kernel() {
        let p = scalar_problem(1.0, 0.0);
        let aux = solve_auxiliary(&p, AuxMode::Diagonal).unwrap();
        let k = effective_kernel(&p, &aux, 2.0, 1e-8).unwrap();
        assert!((k.matrix[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-15);
        let h = h_kernel(&p, &aux, 1, 2.0, 1e-8).unwrap();
        assert!((h[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_coupling_kernel_is_v00() {
        let mut p = scalar_problem(0.0, 0.3);
        p.coupling
            .insert(0, 0, CMatrix::from_element(1, 1, C64::new(0.25, 0.0)));
        let aux = solve_auxiliary(&p, AuxMode::Diagonal).unwrap();
        for eta in [-3.0, 0.1, 0.5, 7.0] {
            let k = effective_kernel(&p, &aux, eta, 1e-8).unwrap();
            assert_eq!(k.matrix, p.block(0, 0));
            assert_eq!(
                h_kernel(&p, &aux, 1, eta, 1e-8).unwrap(),
                CMatrix::zeros(1, 1)
            );
        }
    }
}
