//! Scalar root finding and smooth minimization on chart coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::HermitianOperator;
use crate::manifold::{hamilton_function, hamilton_gradient, ManifoldChart};

/// Brent's method on a bracket `[a, b]` with `f(a) f(b) <= 0`. Stops when the
/// bracket is below `xtol` or `|f| <= ftol`. Returns `(x, f(x))`.
pub fn brent_root<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64, ftol: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return Ok((a, fa));
    }
    if fb == 0.0 {
        return Ok((b, fb));
    }
    if fa.signum() == fb.signum() {
        return Err(Error::InvalidInput(format!("root not bracketed: f({a}) = {fa}, f({b}) = {fb}")));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Ok((b, fb));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)), (q - 1.0) * (r - 1.0) * (s - 1.0))
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NotConverged(format!("root search stalled near {b} (f = {fb:e})")))
}

/// Golden-section search for a minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub gradient_tol: f64,
    pub max_iter: usize,
    /// Step of the central-difference Hessian.
    pub hessian_step: f64,
    /// Largest coordinate step of a single line search.
    pub max_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { gradient_tol: 1e-10, max_iter: 2000, hessian_step: 1e-5, max_step: 0.25 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
}

impl Minimum {
    pub fn hessian_eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.hessian.clone().symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

/// Symmetrized central-difference Hessian of an analytic gradient.
pub fn hessian_fd<G>(grad: &G, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        let s = step * x[i].abs().max(1.0);
        xp[i] = x[i] + s;
        let up = grad(&xp)?;
        xp[i] = x[i] - s;
        let down = grad(&xp)?;
        xp[i] = x[i];
        for j in 0..n {
            h[(j, i)] = (up[j] - down[j]) / (2.0 * s);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// BFGS with Armijo backtracking, finished by Newton steps on the
/// finite-difference Hessian (pseudo-inverse, so flat directions are left alone).
pub fn minimize<F, G>(f: &F, grad: &G, x0: &[f64], opts: &MinimizeOptions) -> Result<Minimum>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice())?;
    let mut g = DVector::from_vec(grad(x.as_slice())?);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    // quasi-Newton phase, down to a loose gradient level
    let coarse = (opts.gradient_tol * 1e4).max(1e-7);
    while iterations < opts.max_iter && g.norm() > coarse {
        iterations += 1;
        let mut p = -(&hinv * &g);
        if p.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            p = -g.clone();
        }
        let pn = p.norm();
        if pn > opts.max_step {
            p *= opts.max_step / pn;
        }
        let slope = p.dot(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * alpha;
            let fnew = f(xn.as_slice())?;
            if fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = DVector::from_vec(grad(xn.as_slice())?);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        x = xn;
        fx = fnew;
        g = gn;
    }
    // Newton polish
    for _ in 0..50 {
        if g.norm() <= opts.gradient_tol {
            break;
        }
        iterations += 1;
        let h = hessian_fd(grad, x.as_slice(), opts.hessian_step)?;
        let eig = h.symmetric_eigen();
        let scale = eig.eigenvalues.amax();
        if scale == 0.0 {
            break;
        }
        let mut step = DVector::zeros(n);
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam.abs() > 1e-8 * scale {
                let v = eig.eigenvectors.column(k);
                step -= v * (v.dot(&g) / lam);
            }
        }
        let sn = step.norm();
        if sn > opts.max_step {
            step *= opts.max_step / sn;
        }
        let mut improved = false;
        let mut t = 1.0;
        for _ in 0..12 {
            let xn = &x + &step * t;
            let gn = DVector::from_vec(grad(xn.as_slice())?);
            if gn.norm() < g.norm() {
                x = xn;
                g = gn;
                fx = f(x.as_slice())?;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let gradient_norm = g.norm();
    if !(gradient_norm <= opts.gradient_tol) {
        return Err(Error::NotConverged(format!(
            "gradient norm {gradient_norm:e} above {:e} after {iterations} iterations",
            opts.gradient_tol
        )));
    }
    let hessian = hessian_fd(grad, x.as_slice(), opts.hessian_step)?;
    Ok(Minimum { x: x.as_slice().to_vec(), value: fx, gradient_norm, hessian, iterations })
}

/// Smallest Hessian eigenvalue accepted at a minimum, relative to the largest.
pub const SADDLE_TOL: f64 = 1e-6;
const RESTARTS: usize = 8;

fn is_minimum(m: &Minimum) -> std::result::Result<(), f64> {
    let e = m.hessian_eigenvalues();
    let lo = e.first().copied().unwrap_or(0.0);
    let hi = e.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if lo < -SADDLE_TOL * hi {
        Err(lo)
    } else {
        Ok(())
    }
}

/// Minimizes `<Z_x|op|Z_x>` from `x_init`. A critical point that is not a
/// minimum triggers restarts from deterministic perturbations of `x_init`.
pub fn minimize_expectation(
    chart: &(impl ManifoldChart + ?Sized),
    op: &HermitianOperator,
    x_init: &[f64],
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    let f = |x: &[f64]| hamilton_function(chart, op, x);
    let g = |x: &[f64]| hamilton_gradient(chart, op, x);
    let mut last_saddle = 0.0;
    let mut last_err = None;
    for attempt in 0..=RESTARTS {
        let start: Vec<f64> = if attempt == 0 {
            x_init.to_vec()
        } else {
            let amp = 0.05 * (1.0 + 0.5 * attempt as f64);
            x_init
                .iter()
                .enumerate()
                .map(|(i, v)| v + amp * (1.7 * attempt as f64 + 2.3 * i as f64).sin())
                .collect()
        };
        match minimize(&f, &g, &start, opts) {
            Ok(m) => match is_minimum(&m) {
                Ok(()) => return Ok(m),
                Err(lo) => {
                    log::debug!("critical point {:?} is a saddle (eigenvalue {lo:e}); restarting", m.x);
                    last_saddle = lo;
                }
            },
            Err(e) => last_err = Some(e),
        }
    }
    match last_err {
        Some(e) if last_saddle == 0.0 => Err(e),
        _ => Err(Error::SaddlePoint(last_saddle)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let f = |x: f64| Ok(x * x * x - 2.0);
        let (x, _) = brent_root(f, 0.0, 3.0, -2.0, 25.0, 1e-14, 0.0, 100).unwrap();
        assert!((x - 2f64.cbrt()).abs() < 1e-13);
        assert!(brent_root(f, 2.0, 3.0, 6.0, 25.0, 1e-14, 0.0, 100).is_err());
    }

    #[test]
    fn golden_section_on_parabola() {
        let (x, _) = golden_section_min(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let g = |x: &[f64]| {
            Ok(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ])
        };
        let m = minimize(&f, &g, &[-1.2, 1.0], &MinimizeOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-8 && (m.x[1] - 1.0).abs() < 1e-8);
        assert!(m.gradient_norm <= 1e-10);
        assert!(m.hessian_eigenvalues()[0] > 0.0);
    }

    #[test]
    fn flat_direction_is_tolerated() {
        // minimum along a circle
        let f = |x: &[f64]| Ok((x[0] * x[0] + x[1] * x[1] - 1.0).powi(2));
        let g = |x: &[f64]| {
            let r = x[0] * x[0] + x[1] * x[1] - 1.0;
            Ok(vec![4.0 * r * x[0], 4.0 * r * x[1]])
        };
        let m = minimize(&f, &g, &[0.3, 0.2], &MinimizeOptions::default()).unwrap();
        assert!((m.x[0].hypot(m.x[1]) - 1.0).abs() < 1e-9);
    }
}
