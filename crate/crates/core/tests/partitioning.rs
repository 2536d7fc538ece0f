mod common;

use common::{c, random_problem};
use proptest::prelude::*;
use redlab_core::effective::{channel_matrix, green_function, h_kernel, solve_auxiliary};
use redlab_core::linalg::{max_abs_diff, CMatrix};
use redlab_core::model::{build_full_hamiltonian, swap_roles};
use redlab_core::oracle::{
    compare_spectra, full_eigen_with_background, full_spectrum, partitioned_spectrum,
    sturm_spectrum, PartitionOptions,
};
use redlab_core::AuxMode;

/// `A + B (η − D)⁻¹ B†` straight from the blocks of the full operator.
fn schur(h: &CMatrix, n_p: usize, eta: f64) -> CMatrix {
    let rest = h.nrows() - n_p;
    let a = h.view((0, 0), (n_p, n_p)).into_owned();
    let b = h.view((0, n_p), (n_p, rest)).into_owned();
    let mut d = -h.view((n_p, n_p), (rest, rest)).into_owned();
    for i in 0..rest {
        d[(i, i)] += c(eta, 0.0);
    }
    let inv = d.try_inverse().expect("η is off the spectrum of D");
    a + &b * inv * b.adjoint()
}

fn off_pole_eta(poles: &[f64]) -> f64 {
    let mut eta = 0.123_456_789;
    while poles.iter().any(|p| (p - eta).abs() < 0.05) {
        eta += 0.071;
    }
    eta
}

#[test]
fn full_mode_kernel_is_the_schur_complement() {
    for seed in 0..20 {
        let p = random_problem(
            seed,
            1 + (seed as usize % 3),
            1 + (seed as usize % 4),
            0.7,
            true,
        );
        let aux = solve_auxiliary(&p, AuxMode::Full).unwrap();
        let poles: Vec<f64> = aux.iter().flat_map(|a| a.poles.clone()).collect();
        let eta = off_pole_eta(&poles);
        let m = channel_matrix(&p, &aux, eta, 1e-8).unwrap();
        let s = schur(&build_full_hamiltonian(&p), p.n_p(), eta);
        assert!(
            max_abs_diff(&m, &s) < 1e-9,
            "seed {seed}: {}",
            max_abs_diff(&m, &s)
        );
    }
}

#[test]
fn diagonal_mode_is_exact_without_cross_blocks() {
    for seed in 100..115 {
        let p = random_problem(seed, 2, 3, 0.5, false);
        let aux = solve_auxiliary(&p, AuxMode::Diagonal).unwrap();
        let poles: Vec<f64> = aux.iter().flat_map(|a| a.poles.clone()).collect();
        let eta = off_pole_eta(&poles);
        let m = channel_matrix(&p, &aux, eta, 1e-8).unwrap();
        let s = schur(&build_full_hamiltonian(&p), p.n_p(), eta);
        assert!(max_abs_diff(&m, &s) < 1e-9);
    }
}

#[test]
fn green_function_inverts_the_shifted_channel_operator() {
    let p = random_problem(7, 3, 4, 0.6, false);
    let aux = solve_auxiliary(&p, AuxMode::Diagonal).unwrap();
    for a in &aux {
        let eta = off_pole_eta(&a.poles);
        let g = green_function(a, eta, 1e-8).unwrap();
        let mut op = p.block(a.g, a.g);
        for (n, e) in p.channel_diagonal(a.g).into_iter().enumerate() {
            op[(n, n)] += c(e - eta, 0.0);
        }
        let id = CMatrix::identity(p.n_p(), p.n_p());
        assert!(max_abs_diff(&(op * g), &id) < 1e-10);
    }
}

#[test]
fn h_kernel_solves_the_channel_rows() {
    // (η − A_g) ψ_g = V^{g0} ψ₀ for any ψ₀ when channels are uncoupled.
    let p = random_problem(11, 2, 3, 0.6, false);
    let aux = solve_auxiliary(&p, AuxMode::Diagonal).unwrap();
    let poles: Vec<f64> = aux.iter().flat_map(|a| a.poles.clone()).collect();
    let eta = off_pole_eta(&poles);
    for g in 1..=2 {
        let h = h_kernel(&p, &aux, g, eta, 1e-8).unwrap();
        let mut op = -p.block(g, g);
        for (n, e) in p.channel_diagonal(g).into_iter().enumerate() {
            op[(n, n)] += c(eta - e, 0.0);
        }
        assert!(max_abs_diff(&(op * h), &p.block(g, 0)) < 1e-10);
    }
}

#[test]
fn sturm_counts_agree_with_the_dense_solver() {
    for seed in 0..10 {
        let p = random_problem(seed + 300, 2, 3, 1.0, true);
        let h = build_full_hamiltonian(&p);
        let dense = full_spectrum(&p).unwrap().values;
        let sturm = sturm_spectrum(&h);
        assert_eq!(dense.len(), sturm.len());
        for (a, b) in dense.iter().zip(&sturm) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn swap_is_an_involution_and_keeps_the_spectrum() {
    for seed in 0..8 {
        let p = random_problem(seed + 500, 2, 3, 0.8, true);
        let s = swap_roles(&p);
        assert_eq!(swap_roles(&s), p);
        let a = full_spectrum(&p).unwrap().values;
        let b = full_spectrum(&s).unwrap().values;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn corrupted_kernel_is_caught() {
    let p = random_problem(3, 2, 2, 0.8, true);
    let aux = solve_auxiliary(&p, AuxMode::Full).unwrap();
    let full = full_spectrum(&p).unwrap();
    let (bad, _) = partitioned_spectrum(
        &p,
        &aux,
        PartitionOptions {
            corrupt: Some(0.05),
        },
    )
    .unwrap();
    assert_eq!(
        compare_spectra(&bad, &full, 1e-8, false).unwrap().pass,
        Some(false)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partitioned_roots_are_full_eigenvalues(seed in 0u64..1_000_000, n_phi in 1usize..=4, n_p in 1usize..=5) {
        let p = random_problem(seed, n_phi, n_p, 0.8, true);
        let aux = solve_auxiliary(&p, AuxMode::Full).unwrap();
        let full = full_spectrum(&p).unwrap();
        let (part, _) = partitioned_spectrum(&p, &aux, PartitionOptions::default()).unwrap();
        let cmp = compare_spectra(&part, &full, 1e-8, false).unwrap();
        prop_assert!(cmp.max_gap <= 1e-8, "gap {}", cmp.max_gap);
        // Every eigenvector touching the background channel is found.
        let weighted = full_eigen_with_background(&p).unwrap().iter().filter(|(_, w)| *w > 1e-9).count();
        prop_assert_eq!(part.values.len(), weighted);
    }
}
