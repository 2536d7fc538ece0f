#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use redlab_core::linalg::{CMatrix, C64};
use redlab_core::model::{
    validate_problem, CouplingSpec, InstrumentSpec, MeasurementProblem, SystemSpec,
};
use redlab_core::secular::{ChannelConstants, Pole};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reduction-lab"))
        .args(args)
        .env_remove("REDLAB_SEED")
        .output()
        .expect("binary runs")
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_block(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| {
        c(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    })
}

fn random_hermitian(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> CMatrix {
    let a = random_block(rng, n, scale);
    (&a + a.adjoint()).unscale(2.0)
}

/// Random validated problem with complex couplings of size `≈ scale`.
pub fn random_problem(
    seed: u64,
    n_phi: usize,
    n_p: usize,
    scale: f64,
    cross: bool,
) -> MeasurementProblem {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut phi = vec![0.0];
    phi.extend((0..n_phi).map(|_| rng.random_range(-6.0..6.0)));
    let readings: Vec<f64> = (0..n_p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let amplitudes = (0..n_phi)
        .map(|_| c(rng.random_range(0.1..1.0), rng.random_range(-0.5..0.5)))
        .collect();
    let mut coupling = CouplingSpec::new();
    for g in 1..=n_phi {
        coupling.insert(0, g, random_block(&mut rng, n_p, scale));
        coupling.insert(g, g, random_hermitian(&mut rng, n_p, 0.5 * scale));
        if cross {
            for gp in g + 1..=n_phi {
                coupling.insert(g, gp, random_block(&mut rng, n_p, 0.5 * scale));
            }
        }
    }
    coupling.insert(0, 0, random_hermitian(&mut rng, n_p, 0.5 * scale));
    validate_problem(&MeasurementProblem {
        label: format!("random-{seed}"),
        system: SystemSpec {
            phi,
            amplitudes,
            background_amplitude: c(0.0, 0.0),
        },
        instrument: InstrumentSpec {
            readings,
            ground_weights: vec![],
        },
        coupling,
        background_level: 0.0,
    })
    .unwrap()
}

/// `n_poles` poles at least `min_gap` apart with residues in `[1e-3, 1)`.
pub fn random_constants(seed: u64, n_poles: usize, min_gap: f64) -> ChannelConstants {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = rng.random_range(-5.0..0.0);
    let mut poles = Vec::with_capacity(n_poles);
    for k in 0..n_poles {
        poles.push(Pole::new(x, rng.random_range(1e-3..1.0), 1 + k % 3, k));
        x += min_gap + rng.random_range(0.0..2.0);
    }
    ChannelConstants {
        n: 0,
        p0n: rng.random_range(-6.0..6.0),
        poles,
    }
}
