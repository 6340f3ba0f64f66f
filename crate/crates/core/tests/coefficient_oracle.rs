mod common;

use common::*;
use koopman_nnm::koopman::assemble_rhs;
use koopman_nnm::manifold::eval_psi;
use num_complex::Complex64;

#[test]
fn recurrence_matches_dense_composition() {
    for k_b in [4.1, 4.3, 4.7] {
        let (f, table) = in_phase(k_b, 6);
        let oracle = brute_force_modes(&f, &table, 6);
        assert_eq!(oracle.len(), table.indices().len());
        for ((k1, k2), v) in &oracle {
            let d = max_diff(table.mode(*k1, *k2).unwrap(), v);
            assert!(d < 1e-9, "k_b {k_b} k ({k1},{k2}): {d:e}");
        }
    }
}

#[test]
fn series_satisfies_invariance_coefficientwise() {
    // f(Psi) and sum v_k (k.lambda) xi^k agree monomial by monomial.
    let (f, table) = in_phase(4.3, 6);
    let modes: Vec<_> = table.iter().map(|(k, v)| (k, v.to_vec())).collect();
    let psi = series_polys(4, 6, &modes);
    let lhs = compose(&f, &psi, false);
    let [l1, l2] = table.lambdas();
    for ((k1, k2), v) in &modes {
        let kl = l1 * f64::from(*k1) + l2 * f64::from(*k2);
        for i in 0..4 {
            let d = (lhs[i].c[*k1 as usize][*k2 as usize] - kl * v[i]).norm();
            assert!(d < 1e-9, "({k1},{k2}) component {i}: {d:e}");
        }
    }
}

#[test]
fn rhs_assembly_matches_composition() {
    let (f, table) = in_phase(4.1, 6);
    let modes: Vec<_> = table.iter().map(|(k, v)| (k, v.to_vec())).collect();
    for m in 2..=6u32 {
        let lower: Vec<_> = modes.iter().filter(|(k, _)| k.0 + k.1 < m).cloned().collect();
        let rhs = compose(&f, &series_polys(4, m as usize, &lower), true);
        for k1 in 0..=m {
            let b = assemble_rhs(&f, &table, (k1, m - k1)).unwrap();
            let expected: Vec<Complex64> = rhs.iter().map(|p| p.c[k1 as usize][(m - k1) as usize]).collect();
            assert!(max_diff(&b, &expected) < 1e-12);
        }
    }
}

#[test]
fn cubic_rhs_at_two_one() {
    // Only -alpha x1^3 is nonlinear; its xi1^2 xi2 coefficient is
    // -alpha * 3 * a^2 * conj(a) with a = (v_10)_1.
    let (f, table) = in_phase(4.3, 3);
    let a = table.mode(1, 0).unwrap()[0];
    let b = assemble_rhs(&f, &table, (2, 1)).unwrap();
    let expected = -0.5 * 3.0 * a * a * a.conj();
    assert!((b[2] - expected).norm() < 1e-15);
    assert!(b[0].norm() == 0.0 && b[1].norm() == 0.0 && b[3].norm() == 0.0);
}

#[test]
fn eval_psi_matches_oracle_polynomial() {
    let (f, table) = in_phase(4.3, 6);
    let oracle = brute_force_modes(&f, &table, 6);
    let xi = Complex64::new(0.1, 0.0);
    let mut x = [ZERO; 4];
    for ((k1, k2), v) in &oracle {
        let m = xi.powu(*k1) * xi.conj().powu(*k2);
        for i in 0..4 {
            x[i] += m * v[i];
        }
    }
    let p = eval_psi(&table, xi).unwrap();
    for i in 0..4 {
        assert!((p.state[i] - x[i].re).abs() < 1e-8 && x[i].im.abs() < 1e-12);
    }
}

#[test]
fn out_of_phase_pair_matches_oracle() {
    let (f, dec) = two_dof(4.7);
    let table = koopman_nnm::koopman::compute_identity_modes(&f, &dec, koopman_nnm::ModeSupport::Pair(2, 3), 5).unwrap();
    for ((k1, k2), v) in brute_force_modes(&f, &table, 5) {
        assert!(max_diff(table.mode(k1, k2).unwrap(), &v) < 1e-9);
    }
}
