//! Polynomial vector fields `x' = f(x)` stored as sparse sums of monomials.
//!
//! Coefficients are kept in normalized Taylor form: the stored coefficient of
//! `x^k` in component `l` is `(1/k!) d^k f_l(0)`, so Taylor lookups never touch
//! factorials.

use std::fmt;
use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_DIMENSION: usize = 32;
pub const MAX_DEGREE: u32 = 16;

/// Exponent tuple `k = (k_1, ..., k_n)`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Unit index `e_j` of dimension `dim`.
    pub fn unit(dim: usize, j: usize) -> Self {
        let mut e = vec![0; dim];
        e[j] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    /// `|k|`, the total degree.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `k! = prod k_j!`, exact in 64 bits or an overflow error.
    pub fn factorial(&self) -> Result<u64> {
        let mut acc: u64 = 1;
        for &e in &self.0 {
            for m in 2..=u64::from(e) {
                acc = acc
                    .checked_mul(m)
                    .ok_or_else(|| Error::FactorialOverflow(self.0.clone()))?;
            }
        }
        Ok(acc)
    }

    /// `k . lambda = sum k_j lambda_j`.
    pub fn dot(&self, lambda: &[Complex64]) -> Complex64 {
        self.0
            .iter()
            .zip(lambda)
            .map(|(&e, &l)| l * f64::from(e))
            .sum()
    }

    /// Expands the index into a sorted list of factor components, e.g.
    /// `(2, 0, 1)` becomes `[0, 0, 2]`.
    pub fn factors(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(j, &e)| std::iter::repeat(j).take(e as usize))
            .collect()
    }

    /// Evaluates the monomial `x^k`.
    pub fn monomial<T>(&self, x: &[T]) -> T
    where
        T: Copy + num_traits::One + Mul<Output = T>,
    {
        let mut acc = T::one();
        for (&e, &xj) in self.0.iter().zip(x) {
            for _ in 0..e {
                acc = acc * xj;
            }
        }
        acc
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonomialTerm {
    pub coefficient: f64,
    pub index: MultiIndex,
}

/// Right-hand side of `x' = f(x)` with `f(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialVectorField {
    dimension: usize,
    components: Vec<Vec<MonomialTerm>>,
    max_degree: u32,
}

impl PolynomialVectorField {
    /// Builds a field from `(component, coefficient, exponents)` triples.
    ///
    /// Repeated monomials are summed, zero coefficients dropped and terms
    /// sorted lexicographically by exponent tuple.
    pub fn from_terms<I>(dimension: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, f64, Vec<u32>)>,
    {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(Error::contract(format!(
                "dimension {dimension} outside 1..={MAX_DIMENSION}"
            )));
        }
        let mut components: Vec<Vec<MonomialTerm>> = vec![Vec::new(); dimension];
        for (l, coefficient, exponents) in terms {
            if l >= dimension {
                return Err(Error::contract(format!(
                    "component {l} out of range for dimension {dimension}"
                )));
            }
            if exponents.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: exponents.len(),
                });
            }
            if !coefficient.is_finite() {
                return Err(Error::contract(format!(
                    "non-finite coefficient in component {l}"
                )));
            }
            let index = MultiIndex(exponents);
            let degree = index.order();
            if degree == 0 && coefficient != 0.0 {
                return Err(Error::contract(
                    "constant term: the origin must be an equilibrium",
                ));
            }
            if degree > MAX_DEGREE {
                return Err(Error::contract(format!(
                    "degree {degree} exceeds the maximum {MAX_DEGREE}"
                )));
            }
            components[l].push(MonomialTerm { coefficient, index });
        }
        Ok(Self::normalized(dimension, components))
    }

    /// The linear field `x' = A x`.
    pub fn linear(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::contract("linear part must be square"));
        }
        let n = a.nrows();
        let terms = (0..n).flat_map(|l| {
            (0..n).map(move |j| {
                let mut e = vec![0; n];
                e[j] = 1;
                (l, a[(l, j)], e)
            })
        });
        Self::from_terms(n, terms.collect::<Vec<_>>())
    }

    fn normalized(dimension: usize, components: Vec<Vec<MonomialTerm>>) -> Self {
        let mut max_degree = 0;
        let components = components
            .into_iter()
            .map(|mut terms| {
                terms.sort_by(|a, b| a.index.cmp(&b.index));
                let mut merged: Vec<MonomialTerm> = Vec::with_capacity(terms.len());
                for t in terms {
                    match merged.last_mut() {
                        Some(last) if last.index == t.index => last.coefficient += t.coefficient,
                        _ => merged.push(t),
                    }
                }
                merged.retain(|t| t.coefficient != 0.0);
                for t in &merged {
                    max_degree = max_degree.max(t.index.order());
                }
                merged
            })
            .collect();
        PolynomialVectorField {
            dimension,
            components,
            max_degree,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn components(&self) -> &[Vec<MonomialTerm>] {
        &self.components
    }

    pub fn terms(&self, component: usize) -> &[MonomialTerm] {
        &self.components[component]
    }

    /// Terms of degree two and higher, per component.
    pub fn nonlinear_terms(&self, component: usize) -> impl Iterator<Item = &MonomialTerm> {
        self.components[component]
            .iter()
            .filter(|t| t.index.order() >= 2)
    }

    pub fn is_linear(&self) -> bool {
        self.max_degree <= 1
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    /// Evaluates the field at a complex point (same coefficients).
    pub fn eval_complex(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + num_traits::Zero + num_traits::One + Mul<Output = T> + Mul<f64, Output = T>,
    {
        self.components
            .iter()
            .map(|terms| {
                terms.iter().fold(T::zero(), |acc, t| {
                    acc + t.index.monomial(x) * t.coefficient
                })
            })
            .collect()
    }

    /// Writes `f(x)` into `out`; used on the integrator hot path.
    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.components) {
            *o = terms
                .iter()
                .map(|t| {
                    let mut m = t.coefficient;
                    for (&e, &xj) in t.index.exponents().iter().zip(x) {
                        match e {
                            0 => {}
                            1 => m *= xj,
                            _ => m *= xj.powi(e as i32),
                        }
                    }
                    m
                })
                .sum();
        }
    }

    pub fn jacobian_at_origin(&self) -> DMatrix<f64> {
        let n = self.dimension;
        let mut a = DMatrix::zeros(n, n);
        for (l, terms) in self.components.iter().enumerate() {
            for t in terms.iter().filter(|t| t.index.order() == 1) {
                let j = t.index.exponents().iter().position(|&e| e == 1).unwrap();
                a[(l, j)] = t.coefficient;
            }
        }
        a
    }

    /// `(1/k!) d^k f_l(0)`: the stored coefficient of `x^k`, or zero.
    pub fn taylor_coefficient(&self, component: usize, k: &MultiIndex) -> Result<f64> {
        if component >= self.dimension {
            return Err(Error::contract(format!(
                "component {component} out of range for dimension {}",
                self.dimension
            )));
        }
        self.check_dim(k.dim())?;
        Ok(self.components[component]
            .binary_search_by(|t| t.index.cmp(k))
            .map(|i| self.components[component][i].coefficient)
            .unwrap_or(0.0))
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found,
            });
        }
        Ok(())
    }
}

impl Add for &PolynomialVectorField {
    type Output = Result<PolynomialVectorField>;

    fn add(self, rhs: Self) -> Self::Output {
        if self.dimension != rhs.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: rhs.dimension,
            });
        }
        let components = self
            .components
            .iter()
            .zip(&rhs.components)
            .map(|(a, b)| a.iter().chain(b).cloned().collect())
            .collect();
        Ok(PolynomialVectorField::normalized(self.dimension, components))
    }
}

/// Number of two-indices `(k1, k2)` with `1 <= k1 + k2 <= max_order`.
pub fn pair_index_count(max_order: u32) -> usize {
    let m = max_order as usize;
    m * (m + 3) / 2
}

/// Position of `(k1, k2)` in [`enumerate_pair_indices`] order.
pub fn pair_index_position(k1: u32, k2: u32) -> usize {
    let order = k1 + k2;
    debug_assert!(order >= 1);
    pair_index_count(order - 1) + (order - k1) as usize
}

/// All `(k1, k2)` with `1 <= k1 + k2 <= max_order`, by total order and then
/// by descending `k1`.
pub fn enumerate_pair_indices(max_order: u32) -> Vec<(u32, u32)> {
    (1..=max_order)
        .flat_map(|order| (0..=order).rev().map(move |k1| (k1, order - k1)))
        .collect()
}
