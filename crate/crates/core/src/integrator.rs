//! Adaptive Dormand-Prince 5(4) stepper for autonomous systems.
//!
//! Accepted step starts are kept so that the solution can be evaluated at
//! any intermediate time by re-taking a single (shorter) step from the
//! preceding node. The shortened step is smooth in its length, which the
//! orbit-closure root finding relies on.

use crate::error::{Error, Result};

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct StepperOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

/// Accepted node `(t, y)`.
#[derive(Debug, Clone)]
pub struct Node {
    pub t: f64,
    pub y: Vec<f64>,
}

fn lin(y: &[f64], terms: &[(f64, &[f64])], h: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c != 0.0 {
            for (o, ki) in out.iter_mut().zip(k) {
                *o += h * c * ki;
            }
        }
    }
    out
}

/// One Dormand-Prince step of size `h` from `y` with known `k1 = f(y)`.
/// Returns the fifth-order solution, `f` at it, and the embedded error estimate.
fn dp_step<F>(f: &F, y: &[f64], k1: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let k2 = f(&lin(y, &[(A21, k1)], h))?;
    let k3 = f(&lin(y, &[(A31, k1), (A32, &k2)], h))?;
    let k4 = f(&lin(y, &[(A41, k1), (A42, &k2), (A43, &k3)], h))?;
    let k5 = f(&lin(y, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h))?;
    let k6 = f(&lin(y, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h))?;
    let y5 = lin(y, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = f(&y5)?;
    let err: Vec<f64> = (0..y.len())
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Ok((y5, k7, err))
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &StepperOptions) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates `y' = f(y)` from `t0` to `t_end`, returning every accepted node
/// (the last one sits exactly at `t_end`).
pub fn integrate<F>(f: &F, t0: f64, y0: &[f64], t_end: f64, opts: &StepperOptions) -> Result<Vec<Node>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(t_end > t0) {
        return Err(Error::InvalidInput(format!("integration interval [{t0}, {t_end}] is empty")));
    }
    let mut nodes = vec![Node { t: t0, y: y0.to_vec() }];
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f(&y)?;
    // initial step guess from the scale of the solution and its derivative
    let d0 = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let d1 = k1.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let span = t_end - t0;
    let mut h = if d1 > 0.0 { (0.01 * (d0.max(1e-5) / d1)).min(span) } else { span };
    h = h.max(1e-6 * span).min(span);
    let mut steps = 0usize;
    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::StepSizeUnderflow { t });
        }
        let last = t + h >= t_end;
        let hh = if last { t_end - t } else { h };
        let (y5, k7, err) = dp_step(f, &y, &k1, hh)?;
        let en = error_norm(&err, &y, &y5, opts);
        steps += 1;
        if en <= 1.0 {
            t = if last { t_end } else { t + hh };
            y = y5;
            k1 = k7;
            nodes.push(Node { t, y: y.clone() });
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            h = hh * fac;
        } else {
            let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = hh * fac;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t });
        }
    }
    Ok(nodes)
}

/// Solution at `t` by a single step from the last node at or before `t`.
pub fn evaluate_at<F>(f: &F, nodes: &[Node], t: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let first = nodes.first().ok_or_else(|| Error::InvalidInput("empty solution".into()))?;
    let last = nodes.last().unwrap();
    let tol = 1e-12 * last.t.abs().max(1.0);
    if t < first.t - tol || t > last.t + tol {
        return Err(Error::InvalidInput(format!("time {t} outside solution range [{}, {}]", first.t, last.t)));
    }
    let idx = match nodes.binary_search_by(|n| n.t.total_cmp(&t)) {
        Ok(i) => return Ok(nodes[i].y.clone()),
        Err(0) => return Ok(first.y.clone()),
        Err(i) => i - 1,
    };
    let node = &nodes[idx];
    let h = t - node.t;
    if h <= 0.0 {
        return Ok(node.y.clone());
    }
    let k1 = f(&node.y)?;
    Ok(dp_step(f, &node.y, &k1, h)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> StepperOptions {
        StepperOptions { rtol: 1e-10, atol: 1e-12, max_steps: 100_000 }
    }

    #[test]
    fn harmonic_oscillator_is_accurate() {
        let f = |y: &[f64]| Ok(vec![y[1], -y[0]]);
        let t_end = 20.0 * std::f64::consts::PI;
        let nodes = integrate(&f, 0.0, &[1.0, 0.0], t_end, &opts()).unwrap();
        let end = &nodes.last().unwrap().y;
        assert!((end[0] - 1.0).abs() < 1e-8 && end[1].abs() < 1e-8);
        for &t in &[0.37, 5.1, 33.3] {
            let y = evaluate_at(&f, &nodes, t).unwrap();
            assert!((y[0] - t.cos()).abs() < 1e-9, "t={t}: {}", y[0] - t.cos());
        }
    }

    #[test]
    fn exponential_growth() {
        let f = |y: &[f64]| Ok(vec![y[0]]);
        let nodes = integrate(&f, 0.0, &[1.0], 3.0, &opts()).unwrap();
        assert!((nodes.last().unwrap().y[0] - 3f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn errors_propagate_and_bad_interval() {
        let f = |y: &[f64]| if y[0] > 2.0 { Err(Error::InvalidInput("boom".into())) } else { Ok(vec![1.0]) };
        assert!(integrate(&f, 0.0, &[0.0], 5.0, &opts()).is_err());
        assert!(integrate(&f, 1.0, &[0.0], 1.0, &opts()).is_err());
    }

    #[test]
    fn blowup_underflows() {
        let f = |y: &[f64]| Ok(vec![y[0] * y[0]]);
        let err = integrate(&f, 0.0, &[1.0], 2.0, &opts()).unwrap_err();
        assert!(matches!(err, Error::StepSizeUnderflow { .. }));
    }
}
