//! Reference integration, trajectories of the spectral expansion and the
//! NMSE metric used to compare them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::KoopmanModeTable;
use crate::polyfield::PolynomialVectorField;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::contract(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        check_times(&times)?;
        if let Some(first) = states.first() {
            let n = first.len();
            if let Some(bad) = states.iter().find(|s| s.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: bad.len(),
                });
            }
        }
        Ok(Trajectory { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// `t,x1,...,xn`, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dimension()).map(|i| format!("x{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![format!("{t:.16e}")];
            row.extend(s.iter().map(|x| format!("{x:.16e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Component-wise sum of two trajectories on the same grid.
    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.times != other.times {
            return Err(Error::contract("trajectories have different time grids"));
        }
        let states = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Trajectory {
            times: self.times.clone(),
            states,
        })
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::contract("non-finite sample time"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::contract("sample times must be strictly increasing"));
    }
    Ok(())
}

/// `samples` equispaced times on `[0, horizon]`.
pub fn uniform_times(horizon: f64, samples: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || samples < 2 {
        return Err(Error::contract("need horizon > 0 and at least two samples"));
    }
    let dt = horizon / (samples - 1) as f64;
    Ok((0..samples).map(|i| i as f64 * dt).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 1.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.max_step > 0.0) {
            return Err(Error::config(
                "integrator",
                "rel_tol, abs_tol and max_step must be positive",
            ));
        }
        Ok(())
    }

    /// Both tolerances divided by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        IntegratorConfig {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            ..*self
        }
    }
}

const MAX_STEPS: usize = 2_000_000;

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension of order 5 (Hairer & Wanner).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Adaptive Dormand-Prince 5(4) with dense output at `times`.
pub fn integrate(
    field: &PolynomialVectorField,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = field.dimension();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    check_times(times)?;
    if times.first() != Some(&0.0) {
        return Err(Error::contract("the first sample time must be 0"));
    }
    let t_end = *times.last().unwrap();

    let mut out: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    out.push(x0.to_vec());
    let mut next = 1;

    let mut t = 0.0;
    let mut y = x0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err_vec = vec![0.0; n];
    field.eval_into(&y, &mut k[0]);

    if next >= times.len() {
        return Trajectory::new(times.to_vec(), out);
    }

    let mut h = initial_step(field, &y, &k[0], cfg).min(cfg.max_step).min(t_end);
    let mut steps = 0;
    while next < times.len() {
        if steps >= MAX_STEPS {
            return Err(Error::Stiffness { t, h });
        }
        steps += 1;
        if h < 1e-14 * t.abs().max(1.0) || !h.is_finite() {
            return Err(Error::Stiffness { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        stage(&y, h, &[(A21, &k[0])], &mut tmp);
        field.eval_into(&tmp, &mut k[1]);
        stage(&y, h, &[(A31, &k[0]), (A32, &k[1])], &mut tmp);
        field.eval_into(&tmp, &mut k[2]);
        stage(&y, h, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])], &mut tmp);
        field.eval_into(&tmp, &mut k[3]);
        stage(&y, h, &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])], &mut tmp);
        field.eval_into(&tmp, &mut k[4]);
        stage(
            &y,
            h,
            &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])],
            &mut tmp,
        );
        field.eval_into(&tmp, &mut k[5]);
        stage(
            &y,
            h,
            &[(A71, &k[0]), (A73, &k[2]), (A74, &k[3]), (A75, &k[4]), (A76, &k[5])],
            &mut y_new,
        );
        field.eval_into(&y_new, &mut k[6]);

        let mut err = 0.0;
        for i in 0..n {
            err_vec[i] = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            err += (err_vec[i] / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            continue;
        }

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            // Dense output on (t, t_new].
            while next < times.len() && times[next] <= t_new {
                let theta = (times[next] - t) / h;
                out.push(dense(&y, &y_new, &k, h, theta));
                next += 1;
            }
            t = t_new;
            y.copy_from_slice(&y_new);
            let (k0, rest) = k.split_at_mut(1);
            k0[0].copy_from_slice(&rest[5]);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Stiffness { t, h });
            }
        }
        let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        let fac = if err > 1.0 { fac.min(1.0) } else { fac };
        h = (h * fac).min(cfg.max_step);
    }
    Trajectory::new(times.to_vec(), out)
}

fn stage(y: &[f64], h: f64, terms: &[(f64, &Vec<f64>)], out: &mut [f64]) {
    for i in 0..y.len() {
        out[i] = y[i] + h * terms.iter().map(|(a, k)| a * k[i]).sum::<f64>();
    }
}

fn dense(y: &[f64], y_new: &[f64], k: &[Vec<f64>], h: f64, theta: f64) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..y.len())
        .map(|i| {
            let ydiff = y_new[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            let r4 = ydiff - h * k[6][i] - bspl;
            let r5 = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)))
        })
        .collect()
}

fn initial_step(field: &PolynomialVectorField, y: &[f64], f0: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| cfg.abs_tol + cfg.rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    field.eval_into(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Powers `z^0 .. z^max`.
pub(crate) fn powers(z: Complex64, max: u32) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(max as usize + 1);
    let mut acc = Complex64::new(1.0, 0.0);
    out.push(acc);
    for _ in 0..max {
        acc *= z;
        out.push(acc);
    }
    out
}

/// Trajectory on the manifold from `xi0`, summing
/// `v_k xi0^k1 conj(xi0)^k2 exp((k1 lambda + k2 conj(lambda)) t)` with one
/// complex exponential per term and sample. Only orders accepted by `keep`
/// contribute.
fn expansion_trajectory(
    table: &KoopmanModeTable,
    xi0: Complex64,
    times: &[f64],
    keep: impl Fn(u32) -> bool,
) -> Result<Trajectory> {
    check_times(times)?;
    let n = table.dimension();
    let [l1, l2] = table.lambdas();
    let zero = Complex64::new(0.0, 0.0);
    let (x1, x2) = if table.is_pair() { (xi0, xi0.conj()) } else { (xi0, zero) };
    let p1 = powers(x1, table.max_order());
    let p2 = powers(x2, table.max_order());

    // (rate, amplitude, mode) per retained term.
    let terms: Vec<(Complex64, Complex64, &[Complex64])> = table
        .iter()
        .filter(|((k1, k2), _)| keep(k1 + k2))
        .map(|((k1, k2), v)| {
            let rate = l1 * f64::from(k1) + l2 * f64::from(k2);
            (rate, p1[k1 as usize] * p2[k2 as usize], v)
        })
        .filter(|(_, amp, _)| *amp != zero)
        .collect();

    let mut states = Vec::with_capacity(times.len());
    let mut acc = vec![zero; n];
    for &t in times {
        acc.iter_mut().for_each(|a| *a = zero);
        for (rate, amp, v) in &terms {
            let c = amp * (rate * t).exp();
            for (a, vi) in acc.iter_mut().zip(v.iter()) {
                *a += c * vi;
            }
        }
        let norm = acc.iter().map(|a| a.re * a.re).sum::<f64>().sqrt();
        let imag = acc.iter().map(|a| a.im.abs()).fold(0.0, f64::max);
        if !(imag <= 1e-10 * (1.0 + norm)) {
            return Err(Error::InternalConsistency(format!(
                "expansion is not real at t = {t}: imaginary part {imag:e}"
            )));
        }
        states.push(acc.iter().map(|a| a.re).collect());
    }
    Trajectory::new(times.to_vec(), states)
}

/// Trajectory of the truncated expansion started at `xi0`.
pub fn spectral_trajectory(table: &KoopmanModeTable, xi0: Complex64, times: &[f64]) -> Result<Trajectory> {
    expansion_trajectory(table, xi0, times, |_| true)
}

/// Contribution of each listed order to the spectral trajectory. The
/// contributions of all orders `1..=max_order` sum to
/// [`spectral_trajectory`].
pub fn order_decomposition(
    table: &KoopmanModeTable,
    xi0: Complex64,
    times: &[f64],
    orders: &[u32],
) -> Result<Vec<(u32, Trajectory)>> {
    orders
        .iter()
        .map(|&o| {
            if o == 0 || o > table.max_order() {
                return Err(Error::contract(format!(
                    "order {o} outside 1..={}",
                    table.max_order()
                )));
            }
            Ok((o, expansion_trajectory(table, xi0, times, |k| k == o)?))
        })
        .collect()
}

/// Normalized mean squared error in percent:
/// `100 sum_k |approx_k - reference_k|^2 / ((K + 1) sigma^2)` where
/// `sigma^2` is the variance of all reference samples pooled together.
pub fn nmse(reference: &Trajectory, approx: &Trajectory) -> Result<f64> {
    if reference.len() != approx.len() {
        return Err(Error::contract(format!(
            "trajectory lengths differ: {} vs {}",
            reference.len(),
            approx.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::contract("empty trajectory"));
    }
    if reference.dimension() != approx.dimension() {
        return Err(Error::DimensionMismatch {
            expected: reference.dimension(),
            found: approx.dimension(),
        });
    }
    let count = (reference.len() * reference.dimension()) as f64;
    let mean = reference.states.iter().flatten().sum::<f64>() / count;
    let var = reference.states.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / count;
    if !(var > 0.0) {
        return Err(Error::DegenerateReference);
    }
    let sq: f64 = reference
        .states
        .iter()
        .zip(&approx.states)
        .map(|(r, a)| r.iter().zip(a).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum();
    Ok(100.0 * sq / (reference.len() as f64 * var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{compute_identity_modes, ModeSupport};
    use crate::models::{build_2dof_cubic, TwoDofParams};
    use crate::spectral::SpectralDecomposition;

    fn decay() -> PolynomialVectorField {
        PolynomialVectorField::from_terms(1, [(0, -1.0, vec![1])]).unwrap()
    }

    #[test]
    fn exponential_decay() {
        let tr = integrate(&decay(), &[1.0], &[0.0, 0.5, 1.0], &IntegratorConfig::default()).unwrap();
        assert!((tr.states[2][0] - 0.3678794412).abs() < 1e-8);
        assert!((tr.states[1][0] - (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let f = PolynomialVectorField::from_terms(2, [(0, 1.0, vec![0, 1]), (1, -1.0, vec![1, 0])]).unwrap();
        let times = uniform_times(20.0, 997).unwrap();
        let tr = integrate(&f, &[1.0, 0.0], &times, &IntegratorConfig::default()).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            assert!((s[0] - t.cos()).abs() < 1e-8, "t = {t}");
            assert!((s[1] + t.sin()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn semigroup() {
        let f = build_2dof_cubic(&TwoDofParams::benchmark(4.3)).unwrap();
        let cfg = IntegratorConfig::default();
        let x0 = [0.3, -0.1, 0.2, 0.0];
        let full = integrate(&f, &x0, &[0.0, 1.5, 3.0], &cfg).unwrap();
        let half = integrate(&f, &x0, &[0.0, 1.5], &cfg).unwrap();
        let rest = integrate(&f, &half.states[1], &[0.0, 1.5], &cfg).unwrap();
        for i in 0..4 {
            assert!((full.states[2][i] - rest.states[1][i]).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_eigenfunction_decays_exponentially() {
        let f = build_2dof_cubic(&TwoDofParams::benchmark(4.3)).unwrap();
        let a = f.jacobian_at_origin();
        let lin = PolynomialVectorField::linear(&a).unwrap();
        let dec = SpectralDecomposition::decompose(&a).unwrap();
        let x0 = [0.1, 0.2, -0.1, 0.05];
        let times = uniform_times(5.0, 11).unwrap();
        let tr = integrate(&lin, &x0, &times, &IntegratorConfig::default()).unwrap();
        let phi0 = dec.eigenfunction_linear(0, &x0).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let expected = phi0 * (dec.eigenvalue(0) * t).exp();
            assert!((dec.eigenfunction_linear(0, s).unwrap() - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn order_contributions_sum_to_total() {
        let f = build_2dof_cubic(&TwoDofParams::benchmark(4.3)).unwrap();
        let dec = SpectralDecomposition::decompose(&f.jacobian_at_origin()).unwrap();
        let table = compute_identity_modes(&f, &dec, ModeSupport::Pair(0, 1), 7).unwrap();
        let xi0 = Complex64::new(0.2, 0.1);
        let times = uniform_times(10.0, 50).unwrap();
        let total = spectral_trajectory(&table, xi0, &times).unwrap();
        let parts = order_decomposition(&table, xi0, &times, &(1..=7).collect::<Vec<_>>()).unwrap();
        let mut sum = parts[0].1.clone();
        for (_, p) in &parts[1..] {
            sum = sum.add(p).unwrap();
        }
        for (a, b) in total.states.iter().flatten().zip(sum.states.iter().flatten()) {
            assert!((a - b).abs() < 1e-13);
        }
        // Even orders vanish for an odd field.
        assert!(parts[1].1.states.iter().flatten().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn nmse_definition() {
        let r = Trajectory::new(vec![0.0, 1.0], vec![vec![1.0, -1.0], vec![3.0, 1.0]]).unwrap();
        let a = Trajectory::new(vec![0.0, 1.0], vec![vec![1.0, 0.0], vec![3.0, 1.0]]).unwrap();
        // mean 1, variance (0 + 4 + 4 + 0) / 4 = 2, squared error 1, K + 1 = 2
        assert!((nmse(&r, &a).unwrap() - 25.0).abs() < 1e-12);
        assert!(nmse(&r, &r).unwrap() == 0.0);
        let flat = Trajectory::new(vec![0.0, 1.0], vec![vec![2.0], vec![2.0]]).unwrap();
        assert!(matches!(nmse(&flat, &flat), Err(Error::DegenerateReference)));
    }

    #[test]
    fn rejects_bad_grids() {
        let cfg = IntegratorConfig::default();
        assert!(integrate(&decay(), &[1.0], &[0.0, 1.0, 1.0], &cfg).is_err());
        assert!(integrate(&decay(), &[1.0], &[0.5, 1.0], &cfg).is_err());
        assert!(integrate(&decay(), &[1.0, 2.0], &[0.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn blow_up_reports_stiffness() {
        let f = PolynomialVectorField::from_terms(1, [(0, 1.0, vec![2])]).unwrap();
        // x' = x^2 from 1 blows up at t = 1.
        let r = integrate(&f, &[1.0], &[0.0, 2.0], &IntegratorConfig::default());
        assert!(matches!(r, Err(Error::Stiffness { .. })));
    }
}
