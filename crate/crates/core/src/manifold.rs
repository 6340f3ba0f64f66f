//! The invariant manifold `x = Psi(xi, conj(xi))` carried by a mode table:
//! evaluation, invariance residual, polar meshes, inversion, the amplitude
//! range over which the truncation is trustworthy, and fold detection.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{integrate, nmse, powers, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::koopman::KoopmanModeTable;
use crate::polyfield::PolynomialVectorField;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub xi: Complex64,
    pub uv: (f64, f64),
    pub state: Vec<f64>,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `Psi` and optionally its partial derivatives in `xi1` and `xi2` at
/// `(xi, conj(xi))`, or `(xi, 0)` for a single real eigenvalue.
struct Series {
    psi: Vec<Complex64>,
    d1: Vec<Complex64>,
    d2: Vec<Complex64>,
}

fn series(table: &KoopmanModeTable, xi: Complex64, derivatives: bool) -> Series {
    let n = table.dimension();
    let x2 = if table.is_pair() { xi.conj() } else { ZERO };
    let p1 = powers(xi, table.max_order());
    let p2 = powers(x2, table.max_order());
    let mut out = Series {
        psi: vec![ZERO; n],
        d1: vec![ZERO; if derivatives { n } else { 0 }],
        d2: vec![ZERO; if derivatives { n } else { 0 }],
    };
    // Indices come in ascending total order, so low orders accumulate first.
    for ((k1, k2), v) in table.iter() {
        let (a, b) = (k1 as usize, k2 as usize);
        let m = p1[a] * p2[b];
        for (acc, vi) in out.psi.iter_mut().zip(v) {
            *acc += m * vi;
        }
        if derivatives {
            if a > 0 {
                let m = p1[a - 1] * p2[b] * f64::from(k1);
                for (acc, vi) in out.d1.iter_mut().zip(v) {
                    *acc += m * vi;
                }
            }
            if b > 0 {
                let m = p1[a] * p2[b - 1] * f64::from(k2);
                for (acc, vi) in out.d2.iter_mut().zip(v) {
                    *acc += m * vi;
                }
            }
        }
    }
    out
}

fn real_part(z: &[Complex64], what: &str) -> Result<Vec<f64>> {
    let state: Vec<f64> = z.iter().map(|c| c.re).collect();
    let norm = state.iter().map(|x| x * x).sum::<f64>().sqrt();
    let imag = z.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if !(imag <= 1e-10 * (1.0 + norm)) {
        return Err(Error::InternalConsistency(format!(
            "{what} has imaginary residue {imag:e} (state norm {norm:e})"
        )));
    }
    Ok(state)
}

/// Point of the manifold with parameter `xi`.
pub fn eval_psi(table: &KoopmanModeTable, xi: Complex64) -> Result<ManifoldPoint> {
    let s = series(table, xi, false);
    Ok(ManifoldPoint {
        xi,
        uv: (xi.re, xi.im),
        state: real_part(&s.psi, "Psi")?,
    })
}

/// `psi` with its real partial derivatives `psi_u`, `psi_v`.
pub fn eval_psi_with_tangents(
    table: &KoopmanModeTable,
    xi: Complex64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let s = series(table, xi, true);
    let state = real_part(&s.psi, "Psi")?;
    let du: Vec<Complex64> = s.d1.iter().zip(&s.d2).map(|(a, b)| a + b).collect();
    let dv: Vec<Complex64> = s
        .d1
        .iter()
        .zip(&s.d2)
        .map(|(a, b)| Complex64::i() * (a - b))
        .collect();
    Ok((state, real_part(&du, "psi_u")?, real_part(&dv, "psi_v")?))
}

/// Trajectory `psi(xi0 exp(lambda t))` on the manifold. Agrees with
/// [`crate::dynamics::spectral_trajectory`], which sums per-term exponentials.
pub fn psi_trajectory(table: &KoopmanModeTable, xi0: Complex64, times: &[f64]) -> Result<Trajectory> {
    let lambda = table.lambda();
    let states = times
        .iter()
        .map(|&t| Ok(eval_psi(table, xi0 * (lambda * t).exp())?.state))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(times.to_vec(), states)
}

/// `|| f(psi) - (Psi_1 lambda xi + Psi_2 conj(lambda) conj(xi)) ||_2`.
pub fn pde_residual(field: &PolynomialVectorField, table: &KoopmanModeTable, xi: Complex64) -> Result<f64> {
    check_dimension(field, table)?;
    let [l1, l2] = table.lambdas();
    let x2 = if table.is_pair() { xi.conj() } else { ZERO };
    let s = series(table, xi, true);
    let state = real_part(&s.psi, "Psi")?;
    let f = field.eval(&state)?;
    let lhs: Vec<Complex64> = s
        .d1
        .iter()
        .zip(&s.d2)
        .map(|(a, b)| a * l1 * xi + b * l2 * x2)
        .collect();
    Ok(f
        .iter()
        .zip(&lhs)
        .map(|(fi, li)| (Complex64::new(*fi, 0.0) - li).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Real form of [`pde_residual`] in `(u, v)`:
/// `|| f(psi) - [psi_u psi_v] [[sigma, -omega], [omega, sigma]] (u, v) ||_2`.
pub fn pde_residual_real(field: &PolynomialVectorField, table: &KoopmanModeTable, u: f64, v: f64) -> Result<f64> {
    check_dimension(field, table)?;
    let lambda = table.lambda();
    let (sigma, omega) = (lambda.re, lambda.im);
    let (state, du, dv) = eval_psi_with_tangents(table, Complex64::new(u, v))?;
    let f = field.eval(&state)?;
    let (ud, vd) = (sigma * u - omega * v, omega * u + sigma * v);
    Ok(f.iter()
        .zip(du.iter().zip(&dv))
        .map(|(fi, (a, b))| (fi - a * ud - b * vd).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn check_dimension(field: &PolynomialVectorField, table: &KoopmanModeTable) -> Result<()> {
    if field.dimension() != table.dimension() {
        return Err(Error::DimensionMismatch {
            expected: table.dimension(),
            found: field.dimension(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldMesh {
    pub radius: f64,
    pub grid: (usize, usize),
    pub points: Vec<ManifoldPoint>,
    pub pde_residuals: Vec<f64>,
}

impl ManifoldMesh {
    pub fn max_pde_residual(&self) -> f64 {
        self.pde_residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `u,v,x1,...,xn,pde_residual`, one row per point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.points.first().map_or(0, |p| p.state.len());
        let mut header = vec!["u".to_string(), "v".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("pde_residual".into());
        writeln!(w, "{}", header.join(","))?;
        for (p, r) in self.points.iter().zip(&self.pde_residuals) {
            let mut row = vec![fmt(p.uv.0), fmt(p.uv.1)];
            row.extend(p.state.iter().map(|x| fmt(*x)));
            row.push(fmt(*r));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Polar grid `xi = r exp(i theta)` with `r = radius i / (n_r - 1)` and
/// `theta = 2 pi j / n_theta`, in r-major order.
pub fn polar_grid(radius: f64, n_r: usize, n_theta: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n_r * n_theta);
    for i in 0..n_r {
        let r = radius * i as f64 / (n_r - 1) as f64;
        for j in 0..n_theta {
            out.push(Complex64::from_polar(r, 2.0 * PI * j as f64 / n_theta as f64));
        }
    }
    out
}

pub fn sample_mesh(
    table: &KoopmanModeTable,
    field: &PolynomialVectorField,
    radius: f64,
    n_r: usize,
    n_theta: usize,
) -> Result<ManifoldMesh> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::contract("mesh radius must be finite and non-negative"));
    }
    if n_r < 2 || n_theta < 4 {
        return Err(Error::contract("mesh needs n_r >= 2 and n_theta >= 4"));
    }
    if !table.is_pair() {
        return Err(Error::contract("meshes need a conjugate-pair mode table"));
    }
    let evaluated: Vec<(ManifoldPoint, f64)> = polar_grid(radius, n_r, n_theta)
        .into_par_iter()
        .map(|xi| Ok((eval_psi(table, xi)?, pde_residual(field, table, xi)?)))
        .collect::<Result<_>>()?;
    let (points, pde_residuals) = evaluated.into_iter().unzip();
    Ok(ManifoldMesh {
        radius,
        grid: (n_r, n_theta),
        points,
        pde_residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub uv: (f64, f64),
    pub residual: f64,
    pub iterations: usize,
}

impl Inversion {
    pub fn xi(&self) -> Complex64 {
        Complex64::new(self.uv.0, self.uv.1)
    }
}

const INVERSION_ITERATIONS: usize = 100;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Gauss-Newton on `|| psi(u, v) - target ||^2` from `guess`.
fn gauss_newton(table: &KoopmanModeTable, target: &[f64], guess: (f64, f64)) -> Result<Inversion> {
    let (mut u, mut v) = guess;
    let mut residual = match eval_psi(table, Complex64::new(u, v)) {
        Ok(p) => distance(&p.state, target),
        Err(_) => f64::INFINITY,
    };
    let mut mu = 1e-8;
    let mut iterations = 0;
    while iterations < INVERSION_ITERATIONS && residual.is_finite() {
        iterations += 1;
        let (state, du, dv) = eval_psi_with_tangents(table, Complex64::new(u, v))?;
        let r: Vec<f64> = state.iter().zip(target).map(|(s, t)| s - t).collect();
        let (a11, a12, a22) = (
            du.iter().map(|x| x * x).sum::<f64>(),
            du.iter().zip(&dv).map(|(x, y)| x * y).sum::<f64>(),
            dv.iter().map(|x| x * x).sum::<f64>(),
        );
        let g1 = du.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>();
        let g2 = dv.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>();
        let scale = a11 + a22;
        let mut accepted = false;
        let mut step = 0.0;
        for _ in 0..30 {
            let (d11, d22) = (a11 + mu * scale, a22 + mu * scale);
            let det = d11 * d22 - a12 * a12;
            if !(det.abs() > 0.0) {
                mu *= 10.0;
                continue;
            }
            let su = -(d22 * g1 - a12 * g2) / det;
            let sv = -(d11 * g2 - a12 * g1) / det;
            let trial = eval_psi(table, Complex64::new(u + su, v + sv)).map(|p| distance(&p.state, target));
            match trial {
                Ok(res) if res < residual => {
                    u += su;
                    v += sv;
                    step = su.hypot(sv);
                    let stalled = residual - res <= 1e-15 * residual.max(1e-300);
                    residual = res;
                    mu = (mu / 10.0).max(1e-12);
                    accepted = !stalled;
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !accepted || step < 1e-12 * (1.0 + u.hypot(v)) {
            break;
        }
    }
    Ok(Inversion {
        uv: (u, v),
        residual,
        iterations,
    })
}

/// Least-squares parameter of the manifold point nearest `target`, without
/// a residual requirement. Seeds Gauss-Newton from `guess`, from the origin
/// (the linear estimate) and from the closest points of a polar mesh.
pub fn project_point(table: &KoopmanModeTable, target: &[f64], guess: Option<(f64, f64)>) -> Result<Inversion> {
    if target.len() != table.dimension() {
        return Err(Error::DimensionMismatch {
            expected: table.dimension(),
            found: target.len(),
        });
    }
    if target.iter().all(|x| *x == 0.0) {
        return Ok(Inversion {
            uv: (0.0, 0.0),
            residual: 0.0,
            iterations: 0,
        });
    }
    let mut seeds: Vec<(f64, f64)> = guess.into_iter().collect();
    let linear = gauss_newton_linear(table, target)?;
    seeds.push(linear);
    let radius = 2.0 * linear.0.hypot(linear.1);
    let mut scored: Vec<(f64, (f64, f64))> = polar_grid(radius, 25, 48)
        .into_iter()
        .filter_map(|xi| {
            eval_psi(table, xi)
                .ok()
                .map(|p| (distance(&p.state, target), (xi.re, xi.im)))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.extend(scored.iter().take(4).map(|s| s.1));

    let mut best: Option<Inversion> = None;
    for seed in seeds {
        let inv = gauss_newton(table, target, seed)?;
        if best.map_or(true, |b| inv.residual < b.residual) {
            best = Some(inv);
        }
    }
    Ok(best.expect("at least one seed"))
}

/// Least-squares solution of `psi_1(xi) = target`, with `psi_1` the
/// first-order part of the expansion.
fn gauss_newton_linear(table: &KoopmanModeTable, target: &[f64]) -> Result<(f64, f64)> {
    let (_, du, dv) = eval_psi_with_tangents(table, ZERO)?;
    let (a11, a12, a22) = (
        du.iter().map(|x| x * x).sum::<f64>(),
        du.iter().zip(&dv).map(|(x, y)| x * y).sum::<f64>(),
        dv.iter().map(|x| x * x).sum::<f64>(),
    );
    let g1 = du.iter().zip(target).map(|(x, y)| x * y).sum::<f64>();
    let g2 = dv.iter().zip(target).map(|(x, y)| x * y).sum::<f64>();
    let det = a11 * a22 - a12 * a12;
    if !(det.abs() > 0.0) {
        // Single real eigenvalue: psi_v vanishes at the origin.
        return Ok((if a11 > 0.0 { g1 / a11 } else { 0.0 }, 0.0));
    }
    Ok(((a22 * g1 - a12 * g2) / det, (a11 * g2 - a12 * g1) / det))
}

/// Parameter `(u, v)` with `psi(u, v) = target`. Fails with
/// [`Error::NotOnManifold`] when the best least-squares residual exceeds
/// `1e-6 ||target||`.
pub fn invert_point(table: &KoopmanModeTable, target: &[f64], guess: Option<(f64, f64)>) -> Result<Inversion> {
    let inv = project_point(table, target, guess)?;
    let target_norm = norm(target);
    if inv.residual > 1e-6 * target_norm {
        return Err(Error::NotOnManifold {
            residual: inv.residual,
            target_norm,
        });
    }
    Ok(inv)
}

/// Ten periods of the pair's oscillation, or ten time constants for a real
/// eigenvalue.
pub fn default_horizon(table: &KoopmanModeTable) -> f64 {
    let lambda = table.lambda();
    if lambda.im.abs() > 0.0 {
        10.0 * 2.0 * PI / lambda.im.abs()
    } else {
        10.0 / lambda.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityOptions {
    /// Number of equispaced launch angles.
    pub rays: usize,
    pub samples: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Relative bisection width at termination.
    pub rel_width: f64,
}

impl Default for ValidityOptions {
    fn default() -> Self {
        ValidityOptions {
            rays: 8,
            samples: 1000,
            r_min: 1e-3,
            r_max: 100.0,
            rel_width: 1e-3,
        }
    }
}

/// Largest NMSE over the launch rays at amplitude `r`, comparing the
/// expansion with integration from the same manifold point. Integration
/// failures count as infinite error.
pub fn max_ray_nmse(
    table: &KoopmanModeTable,
    field: &PolynomialVectorField,
    cfg: &IntegratorConfig,
    r: f64,
    times: &[f64],
    rays: usize,
) -> Result<f64> {
    check_dimension(field, table)?;
    let values: Vec<f64> = (0..rays)
        .into_par_iter()
        .map(|j| {
            let xi = Complex64::from_polar(r, 2.0 * PI * j as f64 / rays as f64);
            ray_nmse(table, field, cfg, xi, times).unwrap_or(f64::INFINITY)
        })
        .collect();
    Ok(values.into_iter().fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) }))
}

fn ray_nmse(
    table: &KoopmanModeTable,
    field: &PolynomialVectorField,
    cfg: &IntegratorConfig,
    xi: Complex64,
    times: &[f64],
) -> Result<f64> {
    let approx = psi_trajectory(table, xi, times)?;
    let reference = integrate(field, &approx.states[0], times, cfg)?;
    nmse(&reference, &approx)
}

/// Largest amplitude `|xi|` at which every launch ray stays below
/// `nmse_threshold` percent over `horizon`. Doubles from `r_min` until a
/// failure or `r_max`, then bisects.
pub fn validity_radius(
    table: &KoopmanModeTable,
    field: &PolynomialVectorField,
    cfg: &IntegratorConfig,
    nmse_threshold: f64,
    horizon: f64,
    opts: &ValidityOptions,
) -> Result<f64> {
    if !(nmse_threshold > 0.0) {
        return Err(Error::contract("NMSE threshold must be positive"));
    }
    if !(opts.r_min > 0.0 && opts.r_max >= opts.r_min && opts.rays >= 1) {
        return Err(Error::contract("invalid validity-radius search options"));
    }
    let times = crate::dynamics::uniform_times(horizon, opts.samples)?;
    let accept = |r: f64| -> Result<(bool, f64)> {
        let e = max_ray_nmse(table, field, cfg, r, &times, opts.rays)?;
        Ok((e < nmse_threshold, e))
    };
    let (ok, e) = accept(opts.r_min)?;
    if !ok {
        return Err(Error::DivergentExpansion {
            radius: opts.r_min,
            nmse: e,
        });
    }
    let mut lo = opts.r_min;
    let mut hi = loop {
        let next = (2.0 * lo).min(opts.r_max);
        if next <= lo {
            return Ok(lo);
        }
        if accept(next)?.0 {
            lo = next;
        } else {
            break next;
        }
    };
    while hi - lo > opts.rel_width * lo {
        let mid = 0.5 * (lo + hi);
        if accept(mid)?.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub a: (f64, f64),
    pub b: (f64, f64),
    /// `|(u, v)_a - (u, v)_b|`.
    pub parameter_distance: f64,
    /// Distance of the two states projected onto the chosen coordinates.
    pub projection_distance: f64,
}

/// Looks for two well separated parameters whose states coincide in the
/// coordinates `coords`: `|Delta(u, v)| > min_separation radius` and
/// `|Delta x_coords| < tolerance radius`. Mesh neighbours in projection
/// space are refined by Newton iteration on the second point.
pub fn detect_fold(
    table: &KoopmanModeTable,
    mesh: &ManifoldMesh,
    coords: (usize, usize),
    min_separation: f64,
    tolerance: f64,
) -> Result<Option<Fold>> {
    let n = table.dimension();
    if coords.0 >= n || coords.1 >= n || coords.0 == coords.1 {
        return Err(Error::contract(format!("invalid projection coordinates {coords:?}")));
    }
    let radius = mesh.radius;
    let proj = |s: &[f64]| (s[coords.0], s[coords.1]);
    let pts: Vec<((f64, f64), (f64, f64))> = mesh
        .points
        .iter()
        .filter(|p| p.xi.norm() > 0.0)
        .map(|p| (p.uv, proj(&p.state)))
        .collect();

    // Nearest projected neighbour among well separated parameters.
    let mut candidates: Vec<(f64, usize, usize)> = (0..pts.len())
        .into_par_iter()
        .filter_map(|i| {
            let (uv_i, p_i) = pts[i];
            pts.iter()
                .enumerate()
                .skip(i + 1)
                .filter(|(_, (uv_j, _))| (uv_i.0 - uv_j.0).hypot(uv_i.1 - uv_j.1) > min_separation * radius)
                .map(|(j, (_, p_j))| ((p_i.0 - p_j.0).hypot(p_i.1 - p_j.1), j))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(d, j)| (d, i, j))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    for &(_, i, j) in candidates.iter().take(32) {
        let (a, pa) = pts[i];
        let Some(b) = match_projection(table, coords, pa, pts[j].0)? else {
            continue;
        };
        let sep = (a.0 - b.0).hypot(a.1 - b.1);
        let pb = proj(&eval_psi(table, Complex64::new(b.0, b.1))?.state);
        let d = (pa.0 - pb.0).hypot(pa.1 - pb.1);
        if sep > min_separation * radius && d < tolerance * radius && b.0.hypot(b.1) <= radius {
            return Ok(Some(Fold {
                a,
                b,
                parameter_distance: sep,
                projection_distance: d,
            }));
        }
    }
    Ok(None)
}

/// Newton iteration for `(u, v)` near `start` with projected state `target`.
fn match_projection(
    table: &KoopmanModeTable,
    coords: (usize, usize),
    target: (f64, f64),
    start: (f64, f64),
) -> Result<Option<(f64, f64)>> {
    let (mut u, mut v) = start;
    for _ in 0..50 {
        let (s, du, dv) = eval_psi_with_tangents(table, Complex64::new(u, v))?;
        let r = (s[coords.0] - target.0, s[coords.1] - target.1);
        if r.0.hypot(r.1) < 1e-14 {
            return Ok(Some((u, v)));
        }
        let (j11, j12, j21, j22) = (du[coords.0], dv[coords.0], du[coords.1], dv[coords.1]);
        let det = j11 * j22 - j12 * j21;
        if !(det.abs() > 0.0) {
            return Ok(None);
        }
        let su = -(j22 * r.0 - j12 * r.1) / det;
        let sv = -(j11 * r.1 - j21 * r.0) / det;
        u += su;
        v += sv;
        if !(u.is_finite() && v.is_finite()) {
            return Ok(None);
        }
        if su.hypot(sv) < 1e-15 * (1.0 + u.hypot(v)) {
            return Ok(Some((u, v)));
        }
    }
    Ok(Some((u, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{spectral_trajectory, uniform_times};
    use crate::koopman::{compute_identity_modes, ModeSupport};
    use crate::models::{build_2dof_cubic, TwoDofParams};
    use crate::spectral::SpectralDecomposition;

    fn setup(k_b: f64, order: u32) -> (PolynomialVectorField, KoopmanModeTable) {
        let f = build_2dof_cubic(&TwoDofParams::benchmark(k_b)).unwrap();
        let dec = SpectralDecomposition::decompose(&f.jacobian_at_origin()).unwrap();
        let t = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), order).unwrap();
        (f, t)
    }

    fn linear_setup() -> (PolynomialVectorField, KoopmanModeTable) {
        let f = build_2dof_cubic(&TwoDofParams::benchmark(4.3)).unwrap();
        let lin = PolynomialVectorField::linear(&f.jacobian_at_origin()).unwrap();
        let dec = SpectralDecomposition::decompose(&lin.jacobian_at_origin()).unwrap();
        let t = compute_identity_modes(&lin, &dec, ModeSupport::Pair(2, 3), 9).unwrap();
        (lin, t)
    }

    #[test]
    fn origin_maps_to_origin() {
        let (f, t) = setup(4.3, 9);
        let p = eval_psi(&t, ZERO).unwrap();
        assert!(p.state.iter().all(|x| *x == 0.0));
        assert_eq!(pde_residual(&f, &t, ZERO).unwrap(), 0.0);
    }

    #[test]
    fn linear_field_is_the_modal_plane() {
        let (f, t) = linear_setup();
        let v10 = t.mode(1, 0).unwrap().to_vec();
        for xi in [Complex64::new(0.3, -0.2), Complex64::new(-2.0, 5.0)] {
            let p = eval_psi(&t, xi).unwrap();
            for (x, v) in p.state.iter().zip(&v10) {
                assert!((x - 2.0 * (v * xi).re).abs() < 1e-12);
            }
            let scale = norm(&p.state);
            assert!(pde_residual(&f, &t, xi).unwrap() < 1e-12 * scale);
        }
    }

    #[test]
    fn complex_and_real_residuals_agree() {
        let (f, t) = setup(4.3, 15);
        for xi in [Complex64::new(0.2, 0.1), Complex64::new(-0.5, 0.3), Complex64::new(0.0, -0.7)] {
            let c = pde_residual(&f, &t, xi).unwrap();
            let r = pde_residual_real(&f, &t, xi.re, xi.im).unwrap();
            assert!((c - r).abs() < 1e-10, "{c} vs {r}");
        }
    }

    #[test]
    fn residual_decreases_with_order() {
        let (f, t50) = setup(4.3, 50);
        let t5 = t50.truncated(5).unwrap();
        let xi = Complex64::from_polar(0.2, 0.7);
        let r50 = pde_residual(&f, &t50, xi).unwrap();
        let r5 = pde_residual(&f, &t5, xi).unwrap();
        assert!(r50 < 1e-6 && r50 < r5, "{r50} {r5}");
    }

    #[test]
    fn tangents_match_finite_differences() {
        let (_, t) = setup(4.1, 11);
        let xi = Complex64::new(0.3, -0.25);
        let (_, du, dv) = eval_psi_with_tangents(&t, xi).unwrap();
        let h = 1e-6;
        let at = |z: Complex64| eval_psi(&t, z).unwrap().state;
        for i in 0..4 {
            let fu = (at(xi + h)[i] - at(xi - h)[i]) / (2.0 * h);
            let fv = (at(xi + Complex64::new(0.0, h))[i] - at(xi - Complex64::new(0.0, h))[i]) / (2.0 * h);
            assert!((fu - du[i]).abs() < 1e-7 && (fv - dv[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn psi_trajectory_matches_spectral_sum() {
        let (_, t) = setup(4.7, 25);
        let xi0 = Complex64::new(0.25, -0.1);
        let times = uniform_times(40.0, 200).unwrap();
        let a = psi_trajectory(&t, xi0, &times).unwrap();
        let b = spectral_trajectory(&t, xi0, &times).unwrap();
        for (x, y) in a.states.iter().flatten().zip(b.states.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_layout() {
        let (f, t) = setup(4.3, 5);
        let m = sample_mesh(&t, &f, 0.0, 2, 4).unwrap();
        assert_eq!(m.points.len(), 8);
        assert!(m.points.iter().all(|p| p.state.iter().all(|x| *x == 0.0)));
        let m = sample_mesh(&t, &f, 0.4, 3, 6).unwrap();
        assert!((m.points[6].xi - Complex64::new(0.2, 0.0)).norm() < 1e-15);
        assert!((m.points[13].xi.norm() - 0.4).abs() < 1e-15);
        assert!(sample_mesh(&t, &f, 0.4, 1, 6).is_err());
    }

    #[test]
    fn mesh_csv_round_trips() {
        let (f, t) = setup(4.3, 7);
        let m = sample_mesh(&t, &f, 0.5, 3, 5).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "u,v,x1,x2,x3,x4,pde_residual");
        for (line, p) in lines.zip(&m.points) {
            let vals: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            assert_eq!(vals[2..6], p.state[..]);
        }
    }

    #[test]
    fn inversion_round_trip() {
        let (_, t) = setup(4.3, 21);
        for uv in [(0.1, 0.05), (-0.3, 0.2), (0.0, -0.4)] {
            let x = eval_psi(&t, Complex64::new(uv.0, uv.1)).unwrap().state;
            let inv = invert_point(&t, &x, None).unwrap();
            assert!((inv.uv.0 - uv.0).abs() < 1e-8 && (inv.uv.1 - uv.1).abs() < 1e-8, "{inv:?}");
        }
        let zero = invert_point(&t, &[0.0; 4], None).unwrap();
        assert_eq!(zero.uv, (0.0, 0.0));
    }

    #[test]
    fn off_manifold_point_is_rejected() {
        let (_, t) = setup(4.3, 21);
        let r = invert_point(&t, &[0.1, -0.1, 0.0, 0.0], None);
        assert!(matches!(r, Err(Error::NotOnManifold { .. })));
    }

    #[test]
    fn linear_validity_radius_hits_cap() {
        let (f, t) = linear_setup();
        let opts = ValidityOptions {
            r_max: 8.0,
            samples: 200,
            ..Default::default()
        };
        let r = validity_radius(&t, &f, &IntegratorConfig::default(), 1.0, default_horizon(&t), &opts).unwrap();
        assert_eq!(r, 8.0);
    }
}
