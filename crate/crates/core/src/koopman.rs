//! Koopman modes of the identity restricted to one eigenvalue pair.
//!
//! Substituting `x = sum_k v_k xi1^k1 xi2^k2` into `x' = f(x)` and using
//! `xi_i' = lambda_i xi_i` gives, for every two-index `k` of order `>= 2`,
//!
//! ```text
//! (k.lambda I - A) v_k = [N(Psi)]_k
//! ```
//!
//! where `N` collects the Taylor terms of degree two and higher. The right
//! hand side only involves modes of lower total order, so the table is filled
//! order by order. Monomials of `N` are evaluated as chained Cauchy products
//! whose partial products are cached and shared between terms.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::polyfield::{enumerate_pair_indices, pair_index_position, PolynomialVectorField};
use crate::spectral::SpectralDecomposition;

/// Largest truncation order accepted by the recurrence.
pub const MAX_ORDER: u32 = 200;

/// Eigenbases with a condition number above this are solved by dense LU.
pub const EIGENBASIS_CONDITION_LIMIT: f64 = 1e6;

/// Which eigenvalues span the two-index lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSupport {
    /// A conjugate pair `(k1, k2)` with `lambda_k2 = conj(lambda_k1)`.
    Pair(usize, usize),
    /// A single real eigenvalue; the lattice is `(k, 0)`.
    Single(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Eigenbasis unless the eigenvector matrix is ill-conditioned.
    Auto,
    Eigenbasis,
    DenseLu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearResonance {
    pub k: (u32, u32),
    pub eigen_index: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecurrenceOptions {
    /// Resonance tolerance; `None` means `1e-8 max|lambda|`.
    pub resonance_tol: Option<f64>,
    pub method: SolveMethod,
    /// Complex factor applied to the first-order mode `v_10` (and its
    /// conjugate to `v_01`).
    pub gauge: Complex64,
}

impl Default for RecurrenceOptions {
    fn default() -> Self {
        RecurrenceOptions {
            resonance_tol: None,
            method: SolveMethod::Auto,
            gauge: Complex64::new(1.0, 0.0),
        }
    }
}

/// Modes `v_{k1,k2}` for every `(k1, k2)` with `1 <= k1 + k2 <= max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModeTable {
    support: ModeSupport,
    lambda: [Complex64; 2],
    dimension: usize,
    max_order: u32,
    indices: Vec<(u32, u32)>,
    modes: Vec<Complex64>,
    gauge: Complex64,
    method: SolveMethod,
    warnings: Vec<NearResonance>,
}

impl KoopmanModeTable {
    pub fn support(&self) -> ModeSupport {
        self.support
    }

    /// Eigenvalue attached to `xi1`.
    pub fn lambda(&self) -> Complex64 {
        self.lambda[0]
    }

    /// Eigenvalues attached to `(xi1, xi2)`; the second is zero for a
    /// single-eigenvalue table.
    pub fn lambdas(&self) -> [Complex64; 2] {
        self.lambda
    }

    pub fn is_pair(&self) -> bool {
        matches!(self.support, ModeSupport::Pair(..))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn indices(&self) -> &[(u32, u32)] {
        &self.indices
    }

    pub fn gauge(&self) -> Complex64 {
        self.gauge
    }

    /// Solver actually used for orders `>= 2`.
    pub fn method(&self) -> SolveMethod {
        self.method
    }

    pub fn warnings(&self) -> &[NearResonance] {
        &self.warnings
    }

    pub fn position(&self, k1: u32, k2: u32) -> Option<usize> {
        let order = k1 + k2;
        if order == 0 || order > self.max_order {
            return None;
        }
        match self.support {
            ModeSupport::Pair(..) => Some(pair_index_position(k1, k2)),
            ModeSupport::Single(_) => (k2 == 0).then(|| (k1 - 1) as usize),
        }
    }

    pub fn mode(&self, k1: u32, k2: u32) -> Option<&[Complex64]> {
        let n = self.dimension;
        self.position(k1, k2).map(|p| &self.modes[p * n..(p + 1) * n])
    }

    /// Iterates `((k1, k2), v_k)` in enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), &[Complex64])> {
        self.indices
            .iter()
            .copied()
            .zip(self.modes.chunks_exact(self.dimension))
    }

    /// The same expansion cut at a lower order. Because the recurrence runs
    /// order by order this equals recomputing at `order`.
    pub fn truncated(&self, order: u32) -> Result<Self> {
        if order == 0 || order > self.max_order {
            return Err(Error::contract(format!(
                "truncation order {order} outside 1..={}",
                self.max_order
            )));
        }
        let count = self.indices.iter().filter(|k| k.0 + k.1 <= order).count();
        let mut out = self.clone();
        out.max_order = order;
        out.indices.truncate(count);
        out.modes.truncate(count * self.dimension);
        out.warnings.retain(|w| w.k.0 + w.k.1 <= order);
        Ok(out)
    }

    /// Largest `|v_{k2,k1} - conj(v_{k1,k2})|` over the table.
    pub fn conjugate_asymmetry(&self) -> f64 {
        if !self.is_pair() {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for &(k1, k2) in &self.indices {
            let a = self.mode(k1, k2).unwrap();
            let b = self.mode(k2, k1).unwrap();
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x.conj() - y).norm());
            }
        }
        worst
    }

    /// Largest mode norm per total order, for diagnostics.
    /// `k1,k2,re_x1,im_x1,...`, one row per mode, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["k1".to_string(), "k2".to_string()];
        for i in 1..=self.dimension {
            header.push(format!("re_x{i}"));
            header.push(format!("im_x{i}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for ((k1, k2), v) in self.iter() {
            let mut row = vec![k1.to_string(), k2.to_string()];
            for z in v {
                row.push(format!("{:.16e}", z.re));
                row.push(format!("{:.16e}", z.im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn norms_by_order(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.max_order as usize];
        for ((k1, k2), v) in self.iter() {
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let slot = &mut out[(k1 + k2 - 1) as usize];
            *slot = f64::max(*slot, norm);
        }
        out
    }
}

/// Computes the identity modes with default options.
pub fn compute_identity_modes(
    field: &PolynomialVectorField,
    dec: &SpectralDecomposition,
    support: ModeSupport,
    max_order: u32,
) -> Result<KoopmanModeTable> {
    compute_identity_modes_with(field, dec, support, max_order, &RecurrenceOptions::default())
}

pub fn compute_identity_modes_with(
    field: &PolynomialVectorField,
    dec: &SpectralDecomposition,
    support: ModeSupport,
    max_order: u32,
    opts: &RecurrenceOptions,
) -> Result<KoopmanModeTable> {
    let n = field.dimension();
    if dec.dimension() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: dec.dimension(),
        });
    }
    if max_order == 0 || max_order > MAX_ORDER {
        return Err(Error::contract(format!(
            "max_order {max_order} outside 1..={MAX_ORDER}"
        )));
    }
    let (dec, lambda, first): (SpectralDecomposition, [Complex64; 2], Vec<usize>) = match support {
        ModeSupport::Pair(p, q) => {
            if !dec.is_conjugate_pair((p, q)) {
                return Err(Error::contract(format!(
                    "({p}, {q}) is not a conjugate eigenvalue pair"
                )));
            }
            let dec = if opts.gauge == Complex64::new(1.0, 0.0) {
                dec.clone()
            } else {
                dec.with_gauge((p, q), opts.gauge)?
            };
            let l = [dec.eigenvalue(p), dec.eigenvalue(q)];
            (dec, l, vec![p, q])
        }
        ModeSupport::Single(i) => {
            if i >= n || dec.eigenvalue(i).im != 0.0 {
                return Err(Error::contract(format!(
                    "eigenvalue {i} is not real; use a conjugate pair"
                )));
            }
            if opts.gauge.im != 0.0 || opts.gauge.re == 0.0 {
                return Err(Error::contract("gauge of a real eigenvector must be real and non-zero"));
            }
            let mut d = dec.clone();
            if opts.gauge.re != 1.0 {
                d = rescale_single(&d, i, opts.gauge.re);
            }
            (d, [dec.eigenvalue(i), Complex64::new(0.0, 0.0)], vec![i])
        }
    };
    let tol = opts
        .resonance_tol
        .unwrap_or_else(|| dec.default_resonance_tolerance());
    if !(tol > 0.0) {
        return Err(Error::contract("resonance tolerance must be positive"));
    }

    let indices: Vec<(u32, u32)> = match support {
        ModeSupport::Pair(..) => enumerate_pair_indices(max_order),
        ModeSupport::Single(_) => (1..=max_order).map(|k| (k, 0)).collect(),
    };
    let eigenvalues = dec.eigenvalues().to_vec();
    let warnings = scan_lattice(&indices, lambda, &eigenvalues, tol)?;

    let method = match opts.method {
        SolveMethod::Auto if dec.condition() > EIGENBASIS_CONDITION_LIMIT => SolveMethod::DenseLu,
        SolveMethod::Auto => SolveMethod::Eigenbasis,
        m => m,
    };

    let lattice = Lattice::new(support);
    let mut modes = vec![Complex64::new(0.0, 0.0); indices.len() * n];
    for (slot, &eig) in first.iter().enumerate() {
        let pos = if slot == 0 { lattice.pos(1, 0) } else { lattice.pos(0, 1) };
        let v = dec.right_eigenvector(eig);
        modes[pos * n..(pos + 1) * n].copy_from_slice(v.as_slice());
    }

    let solver = Solver::new(field, &dec, method);
    let mut products = ProductCache::new(field, indices.len());
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    for order in 2..=max_order {
        let ks = lattice.order_indices(order);
        for &(k1, k2) in &ks {
            products.advance(&lattice, &modes, n, k1, k2);
        }
        for &(k1, k2) in &ks {
            let pos = lattice.pos(k1, k2);
            products.rhs_at(field, pos, &mut rhs);
            let r = lambda[0] * f64::from(k1) + lambda[1] * f64::from(k2);
            let v = solver.solve(r, &rhs);
            modes[pos * n..(pos + 1) * n].copy_from_slice(&v);
        }
    }

    Ok(KoopmanModeTable {
        support,
        lambda,
        dimension: n,
        max_order,
        indices,
        modes,
        gauge: opts.gauge,
        method,
        warnings,
    })
}

fn rescale_single(dec: &SpectralDecomposition, i: usize, s: f64) -> SpectralDecomposition {
    let mut d = dec.clone();
    d.scale_eigenvector(i, Complex64::new(s, 0.0));
    d
}

/// Rejects exact resonances on the lattice and collects near misses.
fn scan_lattice(
    indices: &[(u32, u32)],
    lambda: [Complex64; 2],
    eigenvalues: &[Complex64],
    tol: f64,
) -> Result<Vec<NearResonance>> {
    let mut worst: Option<NearResonance> = None;
    let mut warnings = Vec::new();
    for &(k1, k2) in indices.iter().filter(|k| k.0 + k.1 >= 2) {
        let r = lambda[0] * f64::from(k1) + lambda[1] * f64::from(k2);
        for (j, &l) in eigenvalues.iter().enumerate() {
            let gap = (r - l).norm();
            let hit = NearResonance {
                k: (k1, k2),
                eigen_index: j,
                gap,
            };
            if gap < tol {
                if worst.map_or(true, |w| gap < w.gap) {
                    worst = Some(hit);
                }
            } else if gap < 1e3 * tol {
                warnings.push(hit);
            }
        }
    }
    if let Some(w) = worst {
        return Err(Error::Resonance {
            k: w.k,
            eigen_index: w.eigen_index,
            gap: w.gap,
        });
    }
    Ok(warnings)
}

struct Lattice {
    support: ModeSupport,
}

impl Lattice {
    fn new(support: ModeSupport) -> Self {
        Lattice { support }
    }

    fn is_pair(&self) -> bool {
        matches!(self.support, ModeSupport::Pair(..))
    }

    fn pos(&self, k1: u32, k2: u32) -> usize {
        if self.is_pair() {
            pair_index_position(k1, k2)
        } else {
            debug_assert_eq!(k2, 0);
            (k1 - 1) as usize
        }
    }

    fn order_indices(&self, order: u32) -> Vec<(u32, u32)> {
        if self.is_pair() {
            (0..=order).rev().map(|k1| (k1, order - k1)).collect()
        } else {
            vec![(order, 0)]
        }
    }

    /// Splits `k = a + b` with both parts non-zero.
    fn splits(&self, k1: u32, k2: u32) -> impl Iterator<Item = ((u32, u32), (u32, u32))> + '_ {
        let k2_max = if self.is_pair() { k2 } else { 0 };
        (0..=k1)
            .flat_map(move |a1| (0..=k2_max).map(move |a2| (a1, a2)))
            .filter(move |&(a1, a2)| a1 + a2 > 0 && (a1, a2) != (k1, k2))
            .map(move |(a1, a2)| ((a1, a2), (k1 - a1, k2 - a2)))
    }
}

#[derive(Debug, Clone, Copy)]
enum Parent {
    Component(usize),
    Product(usize),
}

struct Product {
    parent: Parent,
    factor: usize,
    coeffs: Vec<Complex64>,
}

/// Lattice coefficients of the partial monomial products
/// `Psi_{f1} Psi_{f2} ... Psi_{fr}`, keyed by the sorted factor list.
struct ProductCache {
    products: Vec<Product>,
    /// Per component, `(coefficient, product id)` of each nonlinear term.
    terms: Vec<Vec<(f64, usize)>>,
}

impl ProductCache {
    fn new(field: &PolynomialVectorField, len: usize) -> Self {
        let mut ids: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut products: Vec<Product> = Vec::new();
        let mut terms = vec![Vec::new(); field.dimension()];
        for (l, comp_terms) in terms.iter_mut().enumerate() {
            for t in field.nonlinear_terms(l) {
                let factors = t.index.factors();
                let mut id = None;
                for r in 2..=factors.len() {
                    let prefix = &factors[..r];
                    let parent = match id {
                        None => Parent::Component(factors[0]),
                        Some(p) => Parent::Product(p),
                    };
                    let next = *ids.entry(prefix.to_vec()).or_insert_with(|| {
                        products.push(Product {
                            parent,
                            factor: factors[r - 1],
                            coeffs: vec![Complex64::new(0.0, 0.0); len],
                        });
                        products.len() - 1
                    });
                    id = Some(next);
                }
                comp_terms.push((t.coefficient, id.expect("nonlinear term has degree >= 2")));
            }
        }
        ProductCache { products, terms }
    }

    /// Fills every product at lattice index `k`; needs modes and products of
    /// lower total order only.
    fn advance(&mut self, lattice: &Lattice, modes: &[Complex64], n: usize, k1: u32, k2: u32) {
        let pos = lattice.pos(k1, k2);
        for id in 0..self.products.len() {
            let (parent, factor) = (self.products[id].parent, self.products[id].factor);
            let mut acc = Complex64::new(0.0, 0.0);
            for ((a1, a2), (b1, b2)) in lattice.splits(k1, k2) {
                let pa = lattice.pos(a1, a2);
                let left = match parent {
                    Parent::Component(c) => modes[pa * n + c],
                    Parent::Product(p) => self.products[p].coeffs[pa],
                };
                if left == Complex64::new(0.0, 0.0) {
                    continue;
                }
                acc += left * modes[lattice.pos(b1, b2) * n + factor];
            }
            self.products[id].coeffs[pos] = acc;
        }
    }

    fn rhs_at(&self, field: &PolynomialVectorField, pos: usize, out: &mut [Complex64]) {
        debug_assert_eq!(out.len(), field.dimension());
        for (o, terms) in out.iter_mut().zip(&self.terms) {
            *o = terms
                .iter()
                .map(|&(c, id)| self.products[id].coeffs[pos] * c)
                .sum();
        }
    }
}

/// Solves `(r I - A) v = b`.
struct Solver {
    method: SolveMethod,
    a: DMatrix<Complex64>,
    eigenvalues: Vec<Complex64>,
    right: DMatrix<Complex64>,
    left: DMatrix<Complex64>,
}

impl Solver {
    fn new(field: &PolynomialVectorField, dec: &SpectralDecomposition, method: SolveMethod) -> Self {
        Solver {
            method,
            a: field.jacobian_at_origin().map(|v| Complex64::new(v, 0.0)),
            eigenvalues: dec.eigenvalues().to_vec(),
            right: dec.right_eigenvectors().clone(),
            left: dec.left_eigenvectors().clone(),
        }
    }

    fn solve(&self, r: Complex64, b: &[Complex64]) -> Vec<Complex64> {
        if b.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
            return vec![Complex64::new(0.0, 0.0); b.len()];
        }
        match self.method {
            SolveMethod::DenseLu => solve_dense(&self.a, r, b),
            _ => solve_eigenbasis(&self.right, &self.left, &self.eigenvalues, r, b),
        }
    }
}

fn solve_eigenbasis(
    right: &DMatrix<Complex64>,
    left: &DMatrix<Complex64>,
    eigenvalues: &[Complex64],
    r: Complex64,
    b: &[Complex64],
) -> Vec<Complex64> {
    let b = DVector::from_column_slice(b);
    let mut c = left * b;
    for (cj, &l) in c.iter_mut().zip(eigenvalues) {
        *cj /= r - l;
    }
    (right * c).as_slice().to_vec()
}

fn solve_dense(a: &DMatrix<Complex64>, r: Complex64, b: &[Complex64]) -> Vec<Complex64> {
    let n = a.nrows();
    let m = DMatrix::<Complex64>::identity(n, n) * r - a;
    let x = m
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("resonances are rejected before solving");
    x.as_slice().to_vec()
}

/// Right-hand side `[N(Psi)]_k` assembled directly from the table by summing
/// over all ordered splittings of `k` into one non-zero part per factor of
/// each monomial.
///
/// This is the literal composition sum; it is exponential in the order and
/// exists as an independent check of the cached products.
pub fn assemble_rhs(
    field: &PolynomialVectorField,
    table: &KoopmanModeTable,
    k: (u32, u32),
) -> Result<Vec<Complex64>> {
    let order = k.0 + k.1;
    if field.dimension() != table.dimension() {
        return Err(Error::DimensionMismatch {
            expected: table.dimension(),
            found: field.dimension(),
        });
    }
    if order == 0 {
        return Err(Error::contract("k must be non-zero"));
    }
    if !table.is_pair() && k.1 != 0 {
        return Err(Error::contract("single-eigenvalue tables have k2 = 0"));
    }
    if order >= 2 && table.max_order() < order - 1 {
        return Err(Error::contract(format!(
            "modes up to order {} required, table has {}",
            order - 1,
            table.max_order()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); field.dimension()];
    for (l, o) in out.iter_mut().enumerate() {
        for t in field.nonlinear_terms(l) {
            if t.index.order() > order {
                continue;
            }
            *o += composition_sum(table, &t.index.factors(), k) * t.coefficient;
        }
    }
    Ok(out)
}

fn composition_sum(table: &KoopmanModeTable, factors: &[usize], rem: (u32, u32)) -> Complex64 {
    let Some((&first, rest)) = factors.split_first() else {
        return if rem == (0, 0) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    };
    let need = rest.len() as u32;
    let mut acc = Complex64::new(0.0, 0.0);
    let k2_max = if table.is_pair() { rem.1 } else { 0 };
    for a1 in 0..=rem.0 {
        for a2 in 0..=k2_max {
            if a1 + a2 == 0 || (rem.0 + rem.1) - (a1 + a2) < need {
                continue;
            }
            if rest.is_empty() && (a1, a2) != rem {
                continue;
            }
            let Some(v) = table.mode(a1, a2) else { continue };
            let x = v[first];
            if x == Complex64::new(0.0, 0.0) {
                continue;
            }
            acc += x * composition_sum(table, rest, (rem.0 - a1, rem.1 - a2));
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_2dof_cubic, TwoDofParams};

    fn quadratic_1d() -> (PolynomialVectorField, SpectralDecomposition) {
        let f = PolynomialVectorField::from_terms(1, vec![(0, -1.0, vec![1]), (0, 1.0, vec![2])]).unwrap();
        let dec = SpectralDecomposition::decompose(&f.jacobian_at_origin()).unwrap();
        (f, dec)
    }

    fn two_dof(kb: f64) -> (PolynomialVectorField, SpectralDecomposition) {
        let f = build_2dof_cubic(&TwoDofParams::benchmark(kb)).unwrap();
        let dec = SpectralDecomposition::decompose(&f.jacobian_at_origin()).unwrap();
        (f, dec)
    }

    #[test]
    fn quadratic_1d_modes_alternate() {
        let (f, dec) = quadratic_1d();
        let t = compute_identity_modes(&f, &dec, ModeSupport::Single(0), 20).unwrap();
        for k in 1..=20u32 {
            let v = t.mode(k, 0).unwrap()[0];
            let expect = if k % 2 == 1 { 1.0 } else { -1.0 };
            assert!((v - expect).norm() < 1e-10, "k = {k}: {v}");
        }
        assert!(t.mode(1, 1).is_none());
    }

    #[test]
    fn quadratic_1d_rhs_at_order_two() {
        let (f, dec) = quadratic_1d();
        let t = compute_identity_modes(&f, &dec, ModeSupport::Single(0), 1).unwrap();
        let b = assemble_rhs(&f, &t, (2, 0)).unwrap();
        assert!((b[0] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn linear_field_has_no_higher_modes() {
        let (f, _) = two_dof(4.3);
        let lin = PolynomialVectorField::linear(&f.jacobian_at_origin()).unwrap();
        let dec = SpectralDecomposition::decompose(&lin.jacobian_at_origin()).unwrap();
        let t = compute_identity_modes(&lin, &dec, ModeSupport::Pair(0, 1), 8).unwrap();
        for ((k1, k2), v) in t.iter() {
            if k1 + k2 >= 2 {
                assert!(v.iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn first_order_modes_are_eigenvectors() {
        let (f, dec) = two_dof(4.3);
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(2, 3), 3).unwrap();
        assert_eq!(t.mode(1, 0).unwrap(), dec.right_eigenvector(2).as_slice());
        assert_eq!(t.mode(0, 1).unwrap(), dec.right_eigenvector(3).as_slice());
        assert_eq!(t.indices(), enumerate_pair_indices(3).as_slice());
    }

    #[test]
    fn resonance_at_kb_4() {
        let (f, dec) = two_dof(4.0);
        let err = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 5).unwrap_err();
        match err {
            Error::Resonance { k, eigen_index, gap } => {
                assert_eq!(k, (3, 0));
                assert_eq!(eigen_index, 2);
                assert!(gap < 1e-9);
            }
            e => panic!("unexpected {e}"),
        }
        // Out-of-phase lattice is resonance free.
        assert!(compute_identity_modes(&f, &dec, ModeSupport::Pair(2, 3), 5).is_ok());
    }

    #[test]
    fn non_pair_rejected() {
        let (f, dec) = two_dof(4.3);
        assert!(compute_identity_modes(&f, &dec, ModeSupport::Pair(1, 2), 3).is_err());
        assert!(compute_identity_modes(&f, &dec, ModeSupport::Single(0), 3).is_err());
        assert!(compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 0).is_err());
    }

    #[test]
    fn no_quadratic_terms_means_zero_second_order_rhs() {
        let (f, dec) = two_dof(4.3);
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 1).unwrap();
        for k in [(2, 0), (1, 1), (0, 2)] {
            assert!(assemble_rhs(&f, &t, k).unwrap().iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn cubic_rhs_at_21() {
        let (f, dec) = two_dof(4.3);
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 2).unwrap();
        let b = assemble_rhs(&f, &t, (2, 1)).unwrap();
        let a = t.mode(1, 0).unwrap()[0];
        let c = t.mode(0, 1).unwrap()[0];
        // xi1^2 xi2 coefficient of -0.5 (a xi1 + c xi2)^3, even modes vanish.
        let expect = -0.5 * 3.0 * a * a * c;
        assert!((b[2] - expect).norm() < 1e-14);
        assert_eq!(b[0], Complex64::new(0.0, 0.0));
        assert_eq!(b[3], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn assemble_rhs_requires_lower_orders() {
        let (f, dec) = two_dof(4.3);
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 2).unwrap();
        assert!(assemble_rhs(&f, &t, (3, 1)).is_err());
    }

    #[test]
    fn cached_products_match_direct_composition() {
        let (f, dec) = two_dof(4.1);
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 9).unwrap();
        let a = f.jacobian_at_origin().map(|v| Complex64::new(v, 0.0));
        for &(k1, k2) in t.indices().iter().filter(|k| k.0 + k.1 >= 2) {
            let b = assemble_rhs(&f, &t, (k1, k2)).unwrap();
            let v = DVector::from_column_slice(t.mode(k1, k2).unwrap());
            let r = t.lambda() * f64::from(k1) + t.lambda().conj() * f64::from(k2);
            let lhs = &v * r - &a * &v;
            for i in 0..4 {
                assert!((lhs[i] - b[i]).norm() < 1e-10 * (1.0 + b[i].norm()));
            }
        }
    }

    #[test]
    fn eigenbasis_and_dense_paths_agree() {
        let (f, dec) = two_dof(4.1);
        let mut opts = RecurrenceOptions {
            method: SolveMethod::Eigenbasis,
            ..Default::default()
        };
        let e = compute_identity_modes_with(&f, &dec, ModeSupport::Pair(0, 1), 25, &opts).unwrap();
        opts.method = SolveMethod::DenseLu;
        let d = compute_identity_modes_with(&f, &dec, ModeSupport::Pair(0, 1), 25, &opts).unwrap();
        assert_eq!(d.method(), SolveMethod::DenseLu);
        for ((_, x), (_, y)) in e.iter().zip(d.iter()) {
            for (a, b) in x.iter().zip(y) {
                assert!((a - b).norm() <= 1e-9 * (1.0 + a.norm()));
            }
        }
    }

    #[test]
    fn conjugate_symmetry() {
        for kb in [4.1, 4.3, 4.7] {
            let (f, dec) = two_dof(kb);
            for pair in [(0, 1), (2, 3)] {
                let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(pair.0, pair.1), 30).unwrap();
                assert!(t.conjugate_asymmetry() < 1e-10, "kb {kb} {pair:?}");
            }
        }
    }

    #[test]
    fn even_orders_vanish_for_odd_field() {
        let (f, dec) = two_dof(4.3);
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 12).unwrap();
        for ((k1, k2), v) in t.iter() {
            if (k1 + k2) % 2 == 0 {
                assert!(v.iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn truncation_equals_recomputation() {
        let (f, dec) = two_dof(4.7);
        let full = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 15).unwrap();
        let low = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 7).unwrap();
        assert_eq!(full.truncated(7).unwrap(), low);
    }

    #[test]
    fn deterministic() {
        let (f, dec) = two_dof(4.3);
        let a = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 20).unwrap();
        let b = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn near_resonance_warns() {
        let (f, dec) = two_dof(4.1);
        let gap = (dec.eigenvalue(0) * 3.0 - dec.eigenvalue(2)).norm();
        let opts = RecurrenceOptions {
            resonance_tol: Some(gap / 10.0),
            ..Default::default()
        };
        let t = compute_identity_modes_with(&f, &dec, ModeSupport::Pair(0, 1), 5, &opts).unwrap();
        assert!(t.warnings().iter().any(|w| w.k == (3, 0) && w.eigen_index == 2));
        let opts = RecurrenceOptions {
            resonance_tol: Some(gap * 2.0),
            ..Default::default()
        };
        assert!(matches!(
            compute_identity_modes_with(&f, &dec, ModeSupport::Pair(0, 1), 5, &opts),
            Err(Error::Resonance { k: (3, 0), .. })
        ));
    }
}
