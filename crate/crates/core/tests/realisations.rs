mod common;

use common::{c, random_problem};
use redlab_core::effective::solve_auxiliary;
use redlab_core::model::{
    validate_problem, CouplingSpec, InstrumentSpec, MeasurementProblem, SystemSpec,
};
use redlab_core::oracle::{partitioned_spectrum, PartitionOptions};
use redlab_core::realisation::{reduced_state, sample, state_residual, ChannelSolve, Realisation};
use redlab_core::scenarios::{build_two_slit, fix_ta, fix_ts};
use redlab_core::secular::RootRef;
use redlab_core::{solve, AuxMode, SolveOptions, Tolerances};

fn in_channel(r: &Realisation, n: usize) -> impl Iterator<Item = &RootRef> {
    r.roots.iter().filter(move |x| x.channel == n)
}

#[test]
fn symmetric_two_slit_structure() {
    let p = build_two_slit(&fix_ts()).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    for r in &s.roots {
        assert_eq!(r.roots.len(), 5);
    }
    assert_eq!(s.realisations.len(), 2);
    assert_eq!(s.alphas, vec![0.5, 0.5]);
    for n in 0..2 {
        let shared: Vec<Vec<f64>> = s
            .realisations
            .iter()
            .map(|r| {
                in_channel(r, n)
                    .filter(|x| x.shared)
                    .map(|x| x.value)
                    .collect()
            })
            .collect();
        assert_eq!(shared[0].len(), 1);
        assert_eq!(shared[0], shared[1]);
        for r in &s.realisations {
            assert_eq!(in_channel(r, n).count(), 3);
        }
    }
    for r in &s.realisations {
        assert_eq!(r.reading_probabilities(), vec![0.5, 0.5]);
    }
}

#[test]
fn own_states_localise_on_their_detector() {
    let p = build_two_slit(&fix_ts()).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    for r in &s.realisations {
        let g = r.g.unwrap();
        for (root, st) in r.roots.iter().zip(&r.states).filter(|(x, _)| !x.shared) {
            let m = st.channel_masses(p.n_p());
            let other = 3 - g;
            assert!(m[g] > m[other], "root {}: {:?}", root.value, m);
        }
        let loc = &s.localization[r.index - 1];
        let own = loc.channel_fractions[g];
        assert!(loc
            .channel_fractions
            .iter()
            .enumerate()
            .all(|(h, f)| h == g || *f < own));
    }
}

#[test]
fn asymmetric_amplitudes_give_squared_weights() {
    let p = build_two_slit(&fix_ta()).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    assert!((s.alphas[0] - 0.36).abs() < 1e-12);
    assert!((s.alphas[1] - 0.64).abs() < 1e-12);
}

#[test]
fn global_phase_leaves_probabilities() {
    let p = build_two_slit(&fix_ta()).unwrap();
    let base = solve(&p, &SolveOptions::default()).unwrap().alphas;
    for phase in [0.3, 1.0, -2.7] {
        let q = p.with_global_phase(phase);
        let a = solve(&q, &SolveOptions::default()).unwrap().alphas;
        for (x, y) in base.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_coupling_is_one_certain_realisation() {
    let p = validate_problem(&MeasurementProblem {
        label: "free".into(),
        system: SystemSpec {
            phi: vec![0.0, 1.0, 2.0],
            amplitudes: vec![c(0.6, 0.0), c(0.0, 0.8)],
            background_amplitude: c(0.0, 0.0),
        },
        instrument: InstrumentSpec {
            readings: vec![-0.5, 0.5],
            ground_weights: vec![],
        },
        coupling: CouplingSpec::new(),
        background_level: 0.0,
    })
    .unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(s.realisations.len(), 1);
    assert_eq!(s.alphas, vec![1.0]);
}

#[test]
fn single_reading_states_are_exact_eigenvectors() {
    let tol = Tolerances::default();
    for seed in 0..10 {
        let p = random_problem(seed + 900, 3, 1, 0.7, true);
        let aux = solve_auxiliary(&p, AuxMode::Full).unwrap();
        let opts = SolveOptions {
            mode: AuxMode::Full,
            channel_solve: ChannelSolve::Exact,
            tolerances: tol,
        };
        let s = solve(&p, &opts).unwrap();
        for r in &s.roots[0].roots {
            let st = reduced_state(&p, &aux, 0, *r, ChannelSolve::Exact, &tol).unwrap();
            assert!(state_residual(&p, &st) < 1e-8, "seed {seed} root {r}");
        }
    }
}

#[test]
fn partitioned_roots_give_exact_states() {
    let tol = Tolerances::default();
    for seed in 0..10 {
        let p = random_problem(seed + 950, 2, 3, 0.7, true);
        let aux = solve_auxiliary(&p, AuxMode::Full).unwrap();
        let (part, _) = partitioned_spectrum(&p, &aux, PartitionOptions::default()).unwrap();
        for eta in part.values {
            let st = reduced_state(&p, &aux, 0, eta, ChannelSolve::Exact, &tol).unwrap();
            assert!(
                state_residual(&p, &st) < 1e-7 * (1.0 + eta.abs()),
                "seed {seed} η {eta}"
            );
        }
    }
}

#[test]
fn exact_mode_rejects_mean_field_roots() {
    let p = build_two_slit(&fix_ts()).unwrap();
    let opts = SolveOptions {
        channel_solve: ChannelSolve::Exact,
        ..SolveOptions::default()
    };
    assert!(matches!(
        solve(&p, &opts),
        Err(redlab_core::Error::ChannelSolveFailure { .. })
    ));
}

#[test]
fn sampling_is_reproducible() {
    let p = build_two_slit(&fix_ta()).unwrap();
    let s = solve(&p, &SolveOptions::default()).unwrap();
    let a = sample(&s.realisations, &s.alphas, p.n_p(), 42, 500);
    let b = sample(&s.realisations, &s.alphas, p.n_p(), 42, 500);
    let other = sample(&s.realisations, &s.alphas, p.n_p(), 43, 500);
    assert_eq!(a, b);
    assert_ne!(a, other);
    assert!(sample(&s.realisations, &s.alphas, p.n_p(), 42, 0).is_empty());
    // A realisation's sampled root is always one of its own.
    for rec in &a {
        let r = &s.realisations[rec.realisation - 1];
        assert!(r.roots.iter().any(|x| x.value == rec.root_value));
    }
}
