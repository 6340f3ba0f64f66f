//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use koopman_nnm::models::{build_2dof_cubic, TwoDofParams};
use koopman_nnm::spectral::SpectralDecomposition;
use koopman_nnm::{KoopmanModeTable, ModeSupport, PolynomialVectorField};
use nalgebra::DMatrix;
use num_complex::Complex64;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Dense bivariate polynomial in `(xi1, xi2)` truncated at total order `n`;
/// `c[k1][k2]` is the coefficient of `xi1^k1 xi2^k2`.
#[derive(Clone, Debug)]
pub struct Poly {
    pub n: usize,
    pub c: Vec<Vec<Complex64>>,
}

impl Poly {
    pub fn zero(n: usize) -> Self {
        Poly { n, c: vec![vec![ZERO; n + 1]; n + 1] }
    }

    pub fn one(n: usize) -> Self {
        let mut p = Poly::zero(n);
        p.c[0][0] = Complex64::new(1.0, 0.0);
        p
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let n = self.n;
        let mut out = Poly::zero(n);
        for a1 in 0..=n {
            for a2 in 0..=n - a1 {
                let x = self.c[a1][a2];
                if x == ZERO {
                    continue;
                }
                for b1 in 0..=n - a1 - a2 {
                    for b2 in 0..=n - a1 - a2 - b1 {
                        out.c[a1 + b1][a2 + b2] += x * other.c[b1][b2];
                    }
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, s: Complex64, other: &Poly) {
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }
}

/// Componentwise polynomial series `Psi` built from a coefficient map.
pub fn series_polys(dim: usize, n: usize, modes: &[((u32, u32), Vec<Complex64>)]) -> Vec<Poly> {
    let mut out = vec![Poly::zero(n); dim];
    for ((k1, k2), v) in modes {
        if (k1 + k2) as usize > n {
            continue;
        }
        for i in 0..dim {
            out[i].c[*k1 as usize][*k2 as usize] = v[i];
        }
    }
    out
}

/// `f(Psi)` by direct polynomial composition; `nonlinear_only` drops the
/// degree-one terms.
pub fn compose(field: &PolynomialVectorField, psi: &[Poly], nonlinear_only: bool) -> Vec<Poly> {
    let n = psi[0].n;
    (0..field.dimension())
        .map(|l| {
            let mut acc = Poly::zero(n);
            for term in field.terms(l) {
                let e = term.index.exponents();
                let degree: u32 = e.iter().sum();
                if nonlinear_only && degree < 2 {
                    continue;
                }
                let mut prod = Poly::one(n);
                for (i, &p) in e.iter().enumerate() {
                    for _ in 0..p {
                        prod = prod.mul(&psi[i]);
                    }
                }
                acc.add_scaled(Complex64::new(term.coefficient, 0.0), &prod);
            }
            acc
        })
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm())).unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let t = m[col][k];
                m[row][k] -= f * t;
            }
            let t = b[col];
            b[row] -= f * t;
        }
    }
    let mut x = vec![ZERO; n];
    for row in (0..n).rev() {
        let s: Complex64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

/// Mode table recomputed order by order from the first-order modes of
/// `table`, using dense composition and a dense solve of
/// `(k.lambda I - A) v_k = [N(Psi)]_k`.
pub fn brute_force_modes(field: &PolynomialVectorField, table: &KoopmanModeTable, n: u32) -> Vec<((u32, u32), Vec<Complex64>)> {
    let dim = field.dimension();
    let a: DMatrix<f64> = field.jacobian_at_origin();
    let [l1, l2] = table.lambdas();
    let mut modes: Vec<((u32, u32), Vec<Complex64>)> = vec![
        ((1, 0), table.mode(1, 0).unwrap().to_vec()),
        ((0, 1), table.mode(0, 1).unwrap().to_vec()),
    ];
    for m in 2..=n {
        let psi = series_polys(dim, m as usize, &modes);
        let rhs = compose(field, &psi, true);
        for k1 in (0..=m).rev() {
            let k2 = m - k1;
            let kl = l1 * f64::from(k1) + l2 * f64::from(k2);
            let mat: Vec<Vec<Complex64>> = (0..dim)
                .map(|i| {
                    (0..dim)
                        .map(|j| if i == j { kl - a[(i, j)] } else { Complex64::new(-a[(i, j)], 0.0) })
                        .collect()
                })
                .collect();
            let b: Vec<Complex64> = rhs.iter().map(|p| p.c[k1 as usize][k2 as usize]).collect();
            modes.push(((k1, k2), solve(mat, b)));
        }
    }
    modes
}

pub fn two_dof(k_b: f64) -> (PolynomialVectorField, SpectralDecomposition) {
    let f = build_2dof_cubic(&TwoDofParams::benchmark(k_b)).unwrap();
    let dec = SpectralDecomposition::decompose(&f.jacobian_at_origin()).unwrap();
    (f, dec)
}

pub fn in_phase(k_b: f64, order: u32) -> (PolynomialVectorField, KoopmanModeTable) {
    let (f, dec) = two_dof(k_b);
    let t = koopman_nnm::koopman::compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), order).unwrap();
    (f, t)
}

pub fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
