//! The finite measurement problem: object channels, instrument states and
//! the Hermitian coupling blocks between them.
//!
//! Channel `g = 0` is the background (non-measured) channel and carries
//! `Φ₀ = 0`; channels `g = 1..=N_Φ` are the eigenstates of the measured
//! quantity. Every channel is expanded over the same `N_P` instrument states,
//! so the coupled operator acts on a product space of dimension
//! `(N_Φ + 1) · N_P`, laid out by [`ProductBasisIndex`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, is_finite, max_abs_diff, CMatrix, CVector, C64};

/// Adjoint mismatch accepted on input before a block pair is rejected.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Spectrum and state decomposition of the measured quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    /// Channel energies `Φ_g`, `g = 0..=N_Φ`.
    pub phi: Vec<f64>,
    /// Amplitudes `a_g` of the measured state for `g = 1..=N_Φ`.
    pub amplitudes: Vec<C64>,
    /// Amplitude on the background channel; zero unless supplied.
    pub background_amplitude: C64,
}

/// Instrument readings and its pre-measurement ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSpec {
    pub readings: Vec<f64>,
    /// Weights of the ground state over the readings. Empty means uniform.
    pub ground_weights: Vec<C64>,
}

/// Coupling blocks `V^{gg'}`, each an `N_P × N_P` matrix over the
/// instrument basis. Absent blocks are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingSpec {
    pub blocks: BTreeMap<(usize, usize), CMatrix>,
}

impl CouplingSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, g: usize, gp: usize, block: CMatrix) {
        self.blocks.insert((g, gp), block);
    }

    pub fn get(&self, g: usize, gp: usize) -> Option<&CMatrix> {
        self.blocks.get(&(g, gp))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementProblem {
    pub label: String,
    pub system: SystemSpec,
    pub instrument: InstrumentSpec,
    pub coupling: CouplingSpec,
    /// Energy added to every state of the background channel.
    pub background_level: f64,
}

/// Position of a `(channel, reading)` pair in the flattened product basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProductBasisIndex {
    pub g: usize,
    /// Zero-based reading index.
    pub n: usize,
    pub flat: usize,
}

impl ProductBasisIndex {
    pub fn new(g: usize, n: usize, n_p: usize) -> Self {
        Self {
            g,
            n,
            flat: g * n_p + n,
        }
    }

    pub fn from_flat(flat: usize, n_p: usize) -> Self {
        Self {
            g: flat / n_p,
            n: flat % n_p,
            flat,
        }
    }
}

impl MeasurementProblem {
    /// Number of measured channels `N_Φ` (excluding the background channel).
    pub fn n_phi(&self) -> usize {
        self.system.phi.len().saturating_sub(1)
    }

    /// Number of instrument states `N_P`.
    pub fn n_p(&self) -> usize {
        self.instrument.readings.len()
    }

    pub fn n_channels(&self) -> usize {
        self.system.phi.len()
    }

    /// Dimension of the full product space.
    pub fn dim(&self) -> usize {
        self.n_channels() * self.n_p()
    }

    pub fn index(&self, g: usize, n: usize) -> ProductBasisIndex {
        ProductBasisIndex::new(g, n, self.n_p())
    }

    /// Coupling block `V^{gg'}`, or a zero matrix when it was not supplied.
    pub fn block(&self, g: usize, gp: usize) -> CMatrix {
        self.coupling
            .get(g, gp)
            .cloned()
            .unwrap_or_else(|| CMatrix::zeros(self.n_p(), self.n_p()))
    }

    /// Amplitude `a_g` for any channel, including the background one.
    pub fn amplitude(&self, g: usize) -> C64 {
        if g == 0 {
            self.system.background_amplitude
        } else {
            self.system.amplitudes[g - 1]
        }
    }

    /// `diag(p⁰) + Φ_g·I` (plus the background level for `g = 0`), the
    /// uncoupled part of channel `g`'s diagonal block.
    pub fn channel_diagonal(&self, g: usize) -> Vec<f64> {
        let shift = self.system.phi[g] + if g == 0 { self.background_level } else { 0.0 };
        self.instrument.readings.iter().map(|p| p + shift).collect()
    }

    /// The same problem with every energy raised by `c`.
    ///
    /// Implemented as an offset of the readings, which keeps `Φ₀ = 0`.
    pub fn with_energy_offset(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.instrument.readings.iter_mut().for_each(|p| *p += c);
        out
    }

    /// The same problem with every amplitude multiplied by a common phase.
    pub fn with_global_phase(&self, phase: f64) -> Self {
        let rot = C64::from_polar(1.0, phase);
        let mut out = self.clone();
        out.system.amplitudes.iter_mut().for_each(|a| *a *= rot);
        out.system.background_amplitude *= rot;
        out
    }
}

fn check_finite_slice(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

fn check_finite_complex(name: &str, xs: &[C64]) -> Result<()> {
    if xs.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

/// Checks and canonicalizes an untrusted problem.
///
/// Missing blocks are materialized (the adjoint of the partner block when
/// only one of a pair is given, zero otherwise), block pairs are checked
/// against the adjoint relation and made exactly adjoint, `Φ₀` is pinned to
/// zero by shifting all channel energies and readings by `−Φ₀`, and the
/// ground weights are normalized. The function is idempotent.
pub fn validate_problem(raw: &MeasurementProblem) -> Result<MeasurementProblem> {
    let n_channels = raw.system.phi.len();
    if n_channels < 2 {
        return Err(Error::DimensionMismatch(format!(
            "need at least one measured channel besides the background, got {} channel energies",
            n_channels
        )));
    }
    let n_phi = n_channels - 1;
    if raw.system.amplitudes.len() != n_phi {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitudes for {} measured channels",
            raw.system.amplitudes.len(),
            n_phi
        )));
    }
    let n_p = raw.instrument.readings.len();
    if n_p == 0 {
        return Err(Error::DimensionMismatch(
            "instrument has no readings".into(),
        ));
    }
    if !raw.instrument.ground_weights.is_empty() && raw.instrument.ground_weights.len() != n_p {
        return Err(Error::DimensionMismatch(format!(
            "{} ground weights for {} readings",
            raw.instrument.ground_weights.len(),
            n_p
        )));
    }

    check_finite_slice("phi", &raw.system.phi)?;
    check_finite_slice("readings", &raw.instrument.readings)?;
    check_finite_complex("amplitudes", &raw.system.amplitudes)?;
    check_finite_complex("background amplitude", &[raw.system.background_amplitude])?;
    check_finite_complex("ground weights", &raw.instrument.ground_weights)?;
    if !raw.background_level.is_finite() {
        return Err(Error::NonFinite("background level".into()));
    }

    for (&(g, gp), block) in &raw.coupling.blocks {
        if g >= n_channels || gp >= n_channels {
            return Err(Error::DimensionMismatch(format!(
                "coupling block ({g}, {gp}) outside channels 0..={n_phi}"
            )));
        }
        if block.nrows() != n_p || block.ncols() != n_p {
            return Err(Error::DimensionMismatch(format!(
                "coupling block ({g}, {gp}) is {}x{}, expected {n_p}x{n_p}",
                block.nrows(),
                block.ncols()
            )));
        }
        if !is_finite(block) {
            return Err(Error::NonFinite(format!("coupling block ({g}, {gp})")));
        }
    }

    let mut blocks = BTreeMap::new();
    for g in 0..n_channels {
        let diag = match raw.coupling.get(g, g) {
            Some(b) => {
                let deviation = hermitian_defect(b);
                if deviation > HERMITIAN_TOL {
                    return Err(Error::NonHermitian {
                        g,
                        gp: g,
                        deviation,
                    });
                }
                (b + b.adjoint()).map(|z| z * 0.5)
            }
            None => CMatrix::zeros(n_p, n_p),
        };
        blocks.insert((g, g), diag);
        for gp in (g + 1)..n_channels {
            let upper = match (raw.coupling.get(g, gp), raw.coupling.get(gp, g)) {
                (Some(a), Some(b)) => {
                    let deviation = max_abs_diff(b, &a.adjoint());
                    if deviation > HERMITIAN_TOL {
                        return Err(Error::NonHermitian { g, gp, deviation });
                    }
                    (a + b.adjoint()).map(|z| z * 0.5)
                }
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.adjoint(),
                (None, None) => CMatrix::zeros(n_p, n_p),
            };
            blocks.insert((gp, g), upper.adjoint());
            blocks.insert((g, gp), upper);
        }
    }

    let mut phi = raw.system.phi.clone();
    let mut readings = raw.instrument.readings.clone();
    let phi0 = phi[0];
    if phi0 != 0.0 {
        phi.iter_mut().for_each(|x| *x -= phi0);
        readings.iter_mut().for_each(|x| *x -= phi0);
        phi[0] = 0.0;
    }

    let mut ground = if raw.instrument.ground_weights.is_empty() {
        vec![C64::new(1.0 / (n_p as f64).sqrt(), 0.0); n_p]
    } else {
        raw.instrument.ground_weights.clone()
    };
    let norm = ground.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroState("ground weights".into()));
    }
    if (norm - 1.0).abs() > HERMITIAN_TOL {
        ground.iter_mut().for_each(|z| *z /= norm);
    }

    let amp_mass: f64 = raw
        .system
        .amplitudes
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        + raw.system.background_amplitude.norm_sqr();
    if amp_mass == 0.0 {
        return Err(Error::ZeroState("all amplitudes are zero".into()));
    }

    Ok(MeasurementProblem {
        label: raw.label.clone(),
        system: SystemSpec {
            phi,
            amplitudes: raw.system.amplitudes.clone(),
            background_amplitude: raw.system.background_amplitude,
        },
        instrument: InstrumentSpec {
            readings,
            ground_weights: ground,
        },
        coupling: CouplingSpec { blocks },
        background_level: raw.background_level,
    })
}

/// Assembles the coupled operator over the product basis: block `(g, g')`
/// is `δ_{gg'}·(diag(p⁰) + Φ_g·I) + V^{gg'}`.
pub fn build_full_hamiltonian(problem: &MeasurementProblem) -> CMatrix {
    let n_p = problem.n_p();
    let dim = problem.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for g in 0..problem.n_channels() {
        for (n, e) in problem.channel_diagonal(g).into_iter().enumerate() {
            let k = problem.index(g, n).flat;
            h[(k, k)] += C64::new(e, 0.0);
        }
    }
    for (&(g, gp), block) in &problem.coupling.blocks {
        let mut view = h.view_mut((g * n_p, gp * n_p), (n_p, n_p));
        view += block;
    }
    h
}

/// The pre-measurement product state `a_g · w_n`, normalized.
pub fn initial_state(problem: &MeasurementProblem) -> Result<CVector> {
    let n_p = problem.n_p();
    let ground = &problem.instrument.ground_weights;
    let mut psi = CVector::zeros(problem.dim());
    for g in 0..problem.n_channels() {
        let a = problem.amplitude(g);
        for n in 0..n_p {
            let w = ground
                .get(n)
                .copied()
                .unwrap_or(C64::new(1.0 / (n_p as f64).sqrt(), 0.0));
            psi[problem.index(g, n).flat] = a * w;
        }
    }
    let norm = psi.norm();
    if norm == 0.0 {
        return Err(Error::ZeroState("initial state".into()));
    }
    Ok(psi.unscale(norm))
}

/// Exchanges the roles of object and instrument.
///
/// The product tensor is transposed: the old instrument states become the
/// channels (old reading 0 becomes the background channel) and the old
/// channels become the instrument states. Energies, amplitudes and ground
/// weights trade places and coupling block `(n, n')` of the result holds the
/// entries `V^{gg'}_{nn'}` over `(g, g')`. A non-zero background level is
/// first folded into `V^{00}`.
///
/// The result is not re-validated (its `Φ₀` is the old first reading), which
/// keeps `swap_roles(swap_roles(p)) == p` exact for validated `p` with a zero
/// background level.
pub fn swap_roles(problem: &MeasurementProblem) -> MeasurementProblem {
    let n_ch = problem.n_channels();
    let n_p = problem.n_p();

    let mut folded = problem.clone();
    if folded.background_level != 0.0 {
        let mut v00 = folded.block(0, 0);
        for n in 0..n_p {
            v00[(n, n)] += C64::new(folded.background_level, 0.0);
        }
        folded.coupling.insert(0, 0, v00);
        folded.background_level = 0.0;
    }

    let mut blocks = BTreeMap::new();
    for n in 0..n_p {
        for np in 0..n_p {
            let mut b = CMatrix::zeros(n_ch, n_ch);
            let mut any = false;
            for (&(g, gp), block) in &folded.coupling.blocks {
                b[(g, gp)] = block[(n, np)];
                any = true;
            }
            if any {
                blocks.insert((n, np), b);
            }
        }
    }

    let ground = &folded.instrument.ground_weights;
    let weights: Vec<C64> = if ground.is_empty() {
        vec![C64::new(1.0 / (n_p as f64).sqrt(), 0.0); n_p]
    } else {
        ground.clone()
    };
    let new_ground: Vec<C64> = (0..n_ch).map(|g| folded.amplitude(g)).collect();

    MeasurementProblem {
        label: folded.label.clone(),
        system: SystemSpec {
            phi: folded.instrument.readings.clone(),
            amplitudes: weights[1..].to_vec(),
            background_amplitude: weights[0],
        },
        instrument: InstrumentSpec {
            readings: folded.system.phi.clone(),
            ground_weights: new_ground,
        },
        coupling: CouplingSpec { blocks },
        background_level: 0.0,
    }
}
