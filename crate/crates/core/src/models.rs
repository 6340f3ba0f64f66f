//! Benchmark systems: the cubic 2-DOF oscillator, a general spring chain and
//! an analytic family of invariant manifolds of a 4-D linear system.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyfield::PolynomialVectorField;

/// Two masses between walls: wall -k_a- m1 -k_b- m2 -k_a- wall, a damper `c`
/// in parallel with every spring and a cubic spring `k_nl` on the first mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoDofParams {
    pub m1: f64,
    pub m2: f64,
    pub c: f64,
    pub k_a: f64,
    pub k_b: f64,
    pub k_nl: f64,
}

impl TwoDofParams {
    /// `m = 1`, `c = 0.05`, `k_a = 1`, `k_nl = 0.5` with the given coupling.
    pub fn benchmark(k_b: f64) -> Self {
        TwoDofParams {
            m1: 1.0,
            m2: 1.0,
            c: 0.05,
            k_a: 1.0,
            k_b,
            k_nl: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.m1 > 0.0 && self.m2 > 0.0 && self.k_a > 0.0 && self.c >= 0.0 && self.k_nl >= 0.0;
        let finite = [self.m1, self.m2, self.c, self.k_a, self.k_b, self.k_nl]
            .iter()
            .all(|v| v.is_finite());
        if !ok || !finite {
            return Err(Error::contract(format!(
                "invalid 2-DOF parameters {self:?}: masses and k_a must be positive, c and k_nl non-negative"
            )));
        }
        Ok(())
    }
}

impl Default for TwoDofParams {
    fn default() -> Self {
        TwoDofParams::benchmark(4.3)
    }
}

/// First-order form with state `(x1, x2, y1, y2)`.
pub fn build_2dof_cubic(p: &TwoDofParams) -> Result<PolynomialVectorField> {
    p.validate()?;
    let (m1, m2) = (p.m1, p.m2);
    let terms = vec![
        (0, 1.0, vec![0, 0, 1, 0]),
        (1, 1.0, vec![0, 0, 0, 1]),
        (2, -(p.k_a + p.k_b) / m1, vec![1, 0, 0, 0]),
        (2, p.k_b / m1, vec![0, 1, 0, 0]),
        (2, -2.0 * p.c / m1, vec![0, 0, 1, 0]),
        (2, p.c / m1, vec![0, 0, 0, 1]),
        (2, -p.k_nl / m1, vec![3, 0, 0, 0]),
        (3, p.k_b / m2, vec![1, 0, 0, 0]),
        (3, -(p.k_a + p.k_b) / m2, vec![0, 1, 0, 0]),
        (3, p.c / m2, vec![0, 0, 1, 0]),
        (3, -2.0 * p.c / m2, vec![0, 0, 0, 1]),
    ];
    PolynomialVectorField::from_terms(4, terms)
}

/// One spring/damper element of a chain. Its force on the left mass is
/// `-(k d + k_cubic d^3 + c d')` with `d = x_left - x_right`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainElement {
    pub k: f64,
    #[serde(default)]
    pub k_cubic: f64,
    #[serde(default)]
    pub c: f64,
}

/// `N` masses connected by `N + 1` elements, walls at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub masses: Vec<f64>,
    pub elements: Vec<ChainElement>,
}

impl ChainParams {
    pub fn two_dof(p: &TwoDofParams) -> Self {
        ChainParams {
            masses: vec![p.m1, p.m2],
            elements: vec![
                ChainElement { k: p.k_a, k_cubic: p.k_nl, c: p.c },
                ChainElement { k: p.k_b, k_cubic: 0.0, c: p.c },
                ChainElement { k: p.k_a, k_cubic: 0.0, c: p.c },
            ],
        }
    }
}

/// State `(x_1..x_N, y_1..y_N)`.
pub fn build_chain(p: &ChainParams) -> Result<PolynomialVectorField> {
    let n_mass = p.masses.len();
    if n_mass == 0 || p.elements.len() != n_mass + 1 {
        return Err(Error::contract(format!(
            "chain with {n_mass} masses needs {} elements, got {}",
            n_mass + 1,
            p.elements.len()
        )));
    }
    if p.masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::contract("chain masses must be positive"));
    }
    let dim = 2 * n_mass;
    let mut terms: Vec<(usize, f64, Vec<u32>)> = Vec::new();
    for i in 0..n_mass {
        let mut e = vec![0; dim];
        e[n_mass + i] = 1;
        terms.push((i, 1.0, e));
    }
    // Element e connects mass e-1 (left, or wall) and mass e (right, or wall).
    for (idx, el) in p.elements.iter().enumerate() {
        let left = idx.checked_sub(1);
        let right = (idx < n_mass).then_some(idx);
        // d = x_left - x_right as signed (position, sign) pairs.
        let d: Vec<(usize, f64)> = left
            .map(|l| (l, 1.0))
            .into_iter()
            .chain(right.map(|r| (r, -1.0)))
            .collect();
        // (mass, sign of force): the left mass feels -F, the right mass +F.
        let targets: Vec<(usize, f64)> = left
            .map(|l| (l, -1.0))
            .into_iter()
            .chain(right.map(|r| (r, 1.0)))
            .collect();
        for &(mass, sign) in &targets {
            let row = n_mass + mass;
            let m = p.masses[mass];
            for &(pos, ds) in &d {
                let mut e = vec![0; dim];
                e[pos] = 1;
                terms.push((row, sign * el.k * ds / m, e.clone()));
                let mut ev = vec![0; dim];
                ev[n_mass + pos] = 1;
                terms.push((row, sign * el.c * ds / m, ev));
            }
            if el.k_cubic != 0.0 {
                // (sum_i s_i x_i)^3 expanded over ordered triples.
                for &(a, sa) in &d {
                    for &(b, sb) in &d {
                        for &(c, sc) in &d {
                            let mut e = vec![0; dim];
                            e[a] += 1;
                            e[b] += 1;
                            e[c] += 1;
                            terms.push((row, sign * el.k_cubic * sa * sb * sc / m, e));
                        }
                    }
                }
            }
        }
    }
    PolynomialVectorField::from_terms(dim, terms)
}

/// Parameters of the manifold family
/// `f(u, v) = (u, v, rho^(s2/2s1) R(phi) (c1, c2))`, `rho = u^2 + v^2`,
/// `phi = omega2 log(rho) / (2 s1)`, invariant under the linear flow of
/// [`SpiralFamily::matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralFamily {
    pub sigma1: f64,
    pub sigma2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SpiralFamily {
    pub fn new(sigma1: f64, sigma2: f64, omega1: f64, omega2: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > sigma1) {
            return Err(Error::contract(format!(
                "need 0 < sigma1 < sigma2, got sigma1 = {sigma1}, sigma2 = {sigma2}"
            )));
        }
        Ok(SpiralFamily {
            sigma1,
            sigma2,
            omega1,
            omega2,
            c1,
            c2,
        })
    }

    /// Member of the family through `x0`; requires `(x0[0], x0[1]) != 0`.
    pub fn through_point(sigma1: f64, sigma2: f64, omega1: f64, omega2: f64, x0: [f64; 4]) -> Result<Self> {
        let rho = x0[0] * x0[0] + x0[1] * x0[1];
        if rho == 0.0 {
            return Err(Error::contract(
                "points on the fast linear mode (x1 = x2 = 0) are not covered by the family",
            ));
        }
        let inv = 1.0 / rho;
        let q = inv.powf(sigma2 / (2.0 * sigma1));
        let ang = omega2 * inv.ln() / (2.0 * sigma1);
        let (s, c) = ang.sin_cos();
        let c1 = x0[2] * q * c - x0[3] * q * s;
        let c2 = x0[2] * q * s + x0[3] * q * c;
        Self::new(sigma1, sigma2, omega1, omega2, c1, c2)
    }

    pub fn with_parameters(&self, c1: f64, c2: f64) -> Self {
        SpiralFamily { c1, c2, ..*self }
    }

    /// The block-diagonal system matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let (s1, s2, w1, w2) = (self.sigma1, self.sigma2, self.omega1, self.omega2);
        DMatrix::from_row_slice(
            4,
            4,
            &[
                -s1, w1, 0.0, 0.0, //
                -w1, -s1, 0.0, 0.0, //
                0.0, 0.0, -s2, w2, //
                0.0, 0.0, -w2, -s2,
            ],
        )
    }

    pub fn field(&self) -> Result<PolynomialVectorField> {
        PolynomialVectorField::linear(&self.matrix())
    }

    fn radial(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let rho = u * u + v * v;
        let p = rho.powf(self.sigma2 / (2.0 * self.sigma1));
        let phi = rho.ln() * self.omega2 / (2.0 * self.sigma1);
        (rho, p, phi)
    }

    pub fn point(&self, u: f64, v: f64) -> [f64; 4] {
        if u == 0.0 && v == 0.0 {
            return [0.0; 4];
        }
        let (_, p, phi) = self.radial(u, v);
        let (s, c) = phi.sin_cos();
        [
            u,
            v,
            p * (c * self.c1 - s * self.c2),
            p * (s * self.c1 + c * self.c2),
        ]
    }

    /// Analytic `(f_u, f_v)`; at the origin the limit `(e1, e2)`.
    pub fn tangents(&self, u: f64, v: f64) -> ([f64; 4], [f64; 4]) {
        if u == 0.0 && v == 0.0 {
            return ([1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]);
        }
        let (s1, s2, w2) = (self.sigma1, self.sigma2, self.omega2);
        let (rho, _, phi) = self.radial(u, v);
        let pm1 = rho.powf(s2 / (2.0 * s1) - 1.0);
        let (s, c) = phi.sin_cos();
        let g3 = (c * (self.c1 * s2 - self.c2 * w2) - s * (self.c2 * s2 + self.c1 * w2)) / s1;
        let g4 = (c * (self.c2 * s2 + self.c1 * w2) + s * (self.c1 * s2 - self.c2 * w2)) / s1;
        (
            [1.0, 0.0, u * pm1 * g3, u * pm1 * g4],
            [0.0, 1.0, v * pm1 * g3, v * pm1 * g4],
        )
    }

    /// `|| A f - [(-s1 u + w1 v) f_u + (-w1 u - s1 v) f_v] ||_2`.
    pub fn invariance_residual(&self, u: f64, v: f64) -> f64 {
        let f = self.point(u, v);
        let (fu, fv) = self.tangents(u, v);
        let a = self.matrix();
        let du = -self.sigma1 * u + self.omega1 * v;
        let dv = -self.omega1 * u - self.sigma1 * v;
        (0..4)
            .map(|i| {
                let af: f64 = (0..4).map(|j| a[(i, j)] * f[j]).sum();
                let r = af - (du * fu[i] + dv * fv[i]);
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }
}

pub fn spiral_point(fam: &SpiralFamily, u: f64, v: f64) -> [f64; 4] {
    fam.point(u, v)
}

pub fn spiral_invariance_residual(fam: &SpiralFamily, u: f64, v: f64) -> Result<f64> {
    if u == 0.0 && v == 0.0 {
        return Err(Error::contract("invariance residual undefined at (0, 0)"));
    }
    Ok(fam.invariance_residual(u, v))
}
