//! Eigendecomposition of the Jacobian at the equilibrium.
//!
//! Right eigenvectors are scaled to unit norm with their largest entry real
//! and positive; left eigenvectors are the rows of `V^-1`, so that
//! `w_k^* v_h = delta_kh`. Conjugate eigenvalues get conjugate eigenvectors by
//! construction.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::polyfield::MultiIndex;

/// Eigenbases with a condition number above this are rejected.
pub const MAX_EIGENBASIS_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<Complex64>,
    right: DMatrix<Complex64>,
    left: DMatrix<Complex64>,
    conjugate_pairs: Vec<(usize, usize)>,
    condition: f64,
}

impl SpectralDecomposition {
    /// Decomposes a real square matrix with all eigenvalues in the open left
    /// half plane.
    pub fn decompose(a: &DMatrix<f64>) -> Result<Self> {
        let dec = Self::decompose_any(a)?;
        for (index, l) in dec.eigenvalues.iter().enumerate() {
            if l.re >= 0.0 {
                return Err(Error::UnstableEquilibrium {
                    index,
                    re: l.re,
                    im: l.im,
                });
            }
        }
        Ok(dec)
    }

    /// Same as [`decompose`](Self::decompose) without the stability check.
    pub fn decompose_any(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::contract("Jacobian must be a non-empty square matrix"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("Jacobian has non-finite entries"));
        }
        let n = a.nrows();
        let scale = a.norm().max(f64::MIN_POSITIVE);
        let raw = a.clone().complex_eigenvalues();
        let eigenvalues = sort_eigenvalues(pair_up(raw.iter().copied().collect(), scale), scale);

        let ac = a.map(|v| Complex64::new(v, 0.0));
        let mut right = DMatrix::<Complex64>::zeros(n, n);
        let mut k = 0;
        while k < n {
            let l = eigenvalues[k];
            if l.im < 0.0 {
                // Conjugate of the preceding column.
                let prev = right.column(k - 1).map(|z| z.conj());
                right.set_column(k, &prev);
                k += 1;
                continue;
            }
            // Cluster of numerically equal eigenvalues (same sign of Im).
            let mut m = 1;
            while k + m < n
                && (eigenvalues[k + m] - l).norm() <= 1e-8 * scale
                && eigenvalues[k + m].im >= 0.0
            {
                m += 1;
            }
            let vecs = null_vectors(&ac, l, m);
            for v in &vecs {
                let residual = (&ac * v - v * l).norm() / v.norm();
                if !(residual <= 1e-8 * scale) {
                    return Err(Error::DefectiveJacobian {
                        condition: f64::INFINITY,
                    });
                }
            }
            for (j, v) in vecs.into_iter().enumerate() {
                let v = if l.im == 0.0 {
                    normalize_gauge(v).map(|z| Complex64::new(z.re, 0.0))
                } else {
                    normalize_gauge(v)
                };
                right.set_column(k + j, &v);
            }
            k += m;
        }

        let sv = right.clone().svd(false, false).singular_values;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_EIGENBASIS_CONDITION) {
            return Err(Error::DefectiveJacobian { condition });
        }
        let mut left = right
            .clone()
            .try_inverse()
            .ok_or(Error::DefectiveJacobian { condition })?;

        let conjugate_pairs: Vec<(usize, usize)> = (0..n.saturating_sub(1))
            .filter(|&i| eigenvalues[i].im > 0.0 && eigenvalues[i + 1] == eigenvalues[i].conj())
            .map(|i| (i, i + 1))
            .collect();
        for &(p, q) in &conjugate_pairs {
            let row = left.row(p).map(|z| z.conj());
            left.set_row(q, &row);
        }
        for i in 0..n {
            if eigenvalues[i].im == 0.0 {
                let row = left.row(i).map(|z| Complex64::new(z.re, 0.0));
                left.set_row(i, &row);
            }
        }

        Ok(SpectralDecomposition {
            eigenvalues,
            right,
            left,
            conjugate_pairs,
            condition,
        })
    }

    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> Complex64 {
        self.eigenvalues[k]
    }

    /// Matrix `V` whose columns are the right eigenvectors.
    pub fn right_eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.right
    }

    /// Matrix `W = V^-1` whose rows are `w_k^*`.
    pub fn left_eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.left
    }

    pub fn right_eigenvector(&self, k: usize) -> DVector<Complex64> {
        self.right.column(k).into_owned()
    }

    pub fn conjugate_pairs(&self) -> &[(usize, usize)] {
        &self.conjugate_pairs
    }

    /// Condition number of the eigenvector matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn max_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// Default tolerance for resonance detection, `1e-8 max|lambda|`.
    pub fn default_resonance_tolerance(&self) -> f64 {
        1e-8 * self.max_modulus()
    }

    /// Indices whose eigenvalue is real and therefore has no conjugate partner.
    pub fn unpaired(&self) -> Vec<usize> {
        (0..self.dimension())
            .filter(|&i| self.eigenvalues[i].im == 0.0)
            .collect()
    }

    pub fn is_conjugate_pair(&self, pair: (usize, usize)) -> bool {
        self.conjugate_pairs.contains(&pair)
    }

    /// Conjugate pairs sorted by ascending `Im(lambda)` of the first member.
    pub fn pairs_by_frequency(&self) -> Vec<(usize, usize)> {
        let mut pairs = self.conjugate_pairs.clone();
        pairs.sort_by(|a, b| {
            self.eigenvalues[a.0]
                .im
                .partial_cmp(&self.eigenvalues[b.0].im)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        pairs
    }

    /// `index,re,im,freq_rad_s,damping_ratio` with the natural frequency
    /// `|lambda|` in rad/s and damping ratio `-Re(lambda) / |lambda|`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,re,im,freq_rad_s,damping_ratio")?;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            let m = l.norm();
            writeln!(w, "{i},{:.16e},{:.16e},{:.16e},{:.16e}", l.re, l.im, m, -l.re / m)?;
        }
        Ok(())
    }

    /// Linear eigenfunction `s_k(x) = w_k^* x`.
    pub fn eigenfunction_linear(&self, k: usize, x: &[f64]) -> Result<Complex64> {
        if k >= self.dimension() {
            return Err(Error::contract(format!(
                "eigen index {k} out of range for dimension {}",
                self.dimension()
            )));
        }
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        Ok(self
            .left
            .row(k)
            .iter()
            .zip(x)
            .map(|(w, &xi)| w * xi)
            .sum())
    }

    /// `V diag(lambda) W`.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        &self.right * d * &self.left
    }

    /// Rescales the eigenvector of `pair.0` by `c` and its partner by
    /// `conj(c)`, adjusting the left eigenvectors to keep `W V = I`.
    pub fn with_gauge(&self, pair: (usize, usize), c: Complex64) -> Result<Self> {
        if !self.is_conjugate_pair(pair) {
            return Err(Error::contract(format!("{pair:?} is not a conjugate pair")));
        }
        if c.norm() == 0.0 || !c.is_finite() {
            return Err(Error::contract("gauge factor must be finite and non-zero"));
        }
        let mut out = self.clone();
        out.scale_eigenvector(pair.0, c);
        out.scale_eigenvector(pair.1, c.conj());
        Ok(out)
    }

    /// `v_k <- s v_k`, `w_k^* <- w_k^* / s`.
    pub(crate) fn scale_eigenvector(&mut self, k: usize, s: Complex64) {
        let col = self.right.column(k) * s;
        self.right.set_column(k, &col);
        let row = self.left.row(k) / s;
        self.left.set_row(k, &row);
    }

    /// Scans the two-index lattices for resonances `k.lambda ~ lambda_j`.
    pub fn check_resonance(&self, max_order: u32, tol: f64) -> Result<ResonanceReport> {
        check_resonance(&self.eigenvalues, max_order, tol)
    }
}

/// Forces exact conjugate symmetry: each eigenvalue with `Im > 0` is matched
/// with its nearest `Im < 0` partner, which is replaced by the exact conjugate.
fn pair_up(mut ev: Vec<Complex64>, scale: f64) -> Vec<Complex64> {
    let n = ev.len();
    let mut used = vec![false; n];
    for i in 0..n {
        if ev[i].im.abs() <= 1e-14 * scale {
            ev[i].im = 0.0;
        }
    }
    for i in 0..n {
        if ev[i].im <= 0.0 || used[i] {
            continue;
        }
        let target = ev[i].conj();
        let partner = (0..n)
            .filter(|&j| !used[j] && ev[j].im < 0.0)
            .min_by(|&a, &b| {
                (ev[a] - target)
                    .norm()
                    .partial_cmp(&(ev[b] - target).norm())
                    .unwrap_or(Ordering::Equal)
            });
        if let Some(j) = partner {
            used[i] = true;
            used[j] = true;
            ev[j] = target;
        }
    }
    ev
}

/// Descending real part, then ascending `|Im|`, positive imaginary part first.
fn sort_eigenvalues(mut ev: Vec<Complex64>, scale: f64) -> Vec<Complex64> {
    let tie = 1e-12 * scale;
    ev.sort_by(|a, b| {
        if (a.re - b.re).abs() > tie {
            return b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal);
        }
        if (a.im.abs() - b.im.abs()).abs() > tie {
            return a.im.abs().partial_cmp(&b.im.abs()).unwrap_or(Ordering::Equal);
        }
        b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal)
    });
    ev
}

/// The `m` right singular vectors of `A - lambda I` with smallest singular
/// values.
fn null_vectors(a: &DMatrix<Complex64>, lambda: Complex64, m: usize) -> Vec<DVector<Complex64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::<Complex64>::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[i]
            .partial_cmp(&svd.singular_values[j])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
        .into_iter()
        .take(m)
        .map(|i| v_t.row(i).transpose().map(|z| z.conj()))
        .collect()
}

/// Unit norm, with the entry of largest modulus real and positive.
fn normalize_gauge(v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    let v = v / Complex64::new(norm, 0.0);
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    // First entry within round-off of the maximum, for determinism.
    let pivot = v
        .iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-12))
        .unwrap_or(0);
    let phase = v[pivot] / v[pivot].norm();
    v / phase
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceHit {
    pub k: MultiIndex,
    pub eigen_index: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceReport {
    /// Hits below the query tolerance, by ascending gap.
    pub combinations: Vec<ResonanceHit>,
    /// Smallest gap over every scanned combination.
    pub min_gap: f64,
}

impl ResonanceReport {
    pub fn is_empty(&self) -> bool {
        self.combinations.is_empty()
    }
}

/// Every multi-index with at most two non-zero entries and
/// `2 <= |k| <= max_order` is compared against every eigenvalue.
pub fn check_resonance(eigenvalues: &[Complex64], max_order: u32, tol: f64) -> Result<ResonanceReport> {
    if max_order < 2 {
        return Err(Error::contract("max_order must be at least 2"));
    }
    if !(tol > 0.0) {
        return Err(Error::contract("resonance tolerance must be positive"));
    }
    let n = eigenvalues.len();
    let supports: Vec<(usize, usize)> = if n == 1 {
        vec![(0, 0)]
    } else {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    };
    let mut seen: BTreeMap<(MultiIndex, usize), f64> = BTreeMap::new();
    let mut min_gap = f64::INFINITY;
    for &(p, q) in &supports {
        for order in 2..=max_order {
            for k1 in 0..=order {
                let k2 = order - k1;
                if p == q && k2 > 0 {
                    continue;
                }
                let mut e = vec![0u32; n];
                e[p] += k1;
                e[q] += k2;
                let k = MultiIndex::new(e);
                let r = k.dot(eigenvalues);
                for (j, &l) in eigenvalues.iter().enumerate() {
                    let gap = (r - l).norm();
                    min_gap = min_gap.min(gap);
                    if gap < tol {
                        seen.insert((k.clone(), j), gap);
                    }
                }
            }
        }
    }
    let mut combinations: Vec<ResonanceHit> = seen
        .into_iter()
        .map(|((k, eigen_index), gap)| ResonanceHit { k, eigen_index, gap })
        .collect();
    combinations.sort_by(|a, b| a.gap.partial_cmp(&b.gap).unwrap_or(Ordering::Equal));
    Ok(ResonanceReport {
        combinations,
        min_gap,
    })
}
