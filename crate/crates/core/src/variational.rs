//! Cranked variational minima `min <Z|H - sum_k lambda_k J_k|Z>`, the outer
//! solve matching `<J_k>` to prescribed actions, and the action-angle chart
//! swept out by the rotated family.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::fmt17;
use crate::hilbert::{inner, HermitianOperator, StateVector, C64};
use crate::manifold::{hamilton_function, hamilton_gradient, ManifoldChart};
use crate::models::oscillator::normalized_derivative;
use crate::optimize::{brent_root, golden_section_min, minimize_expectation, MinimizeOptions};

/// Largest `|[J_i, J_k]|` accepted for a commuting constraint set.
pub const COMMUTATOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub generators: Vec<HermitianOperator>,
    /// Action targets `I_k`.
    pub targets: Vec<f64>,
    /// Multipliers `lambda_k`, in frequency units.
    pub multipliers: Vec<f64>,
}

impl ConstraintSpec {
    pub fn new(generators: Vec<HermitianOperator>, targets: Vec<f64>, multipliers: Vec<f64>) -> Result<Self> {
        check_generators(&generators)?;
        let n = generators.len();
        if targets.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: targets.len() });
        }
        if multipliers.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: multipliers.len() });
        }
        Ok(Self { generators, targets, multipliers })
    }

    /// `H - sum_k lambda_k J_k`.
    pub fn modified_hamiltonian(&self, hamiltonian: &HermitianOperator) -> Result<HermitianOperator> {
        modified(hamiltonian, &self.generators, &self.multipliers)
    }
}

fn check_generators(generators: &[HermitianOperator]) -> Result<()> {
    if generators.is_empty() {
        return Err(Error::InvalidInput("at least one constraint generator is required".into()));
    }
    for (i, a) in generators.iter().enumerate() {
        for b in &generators[i + 1..] {
            let c = a.commutator_norm(b)?;
            if c > COMMUTATOR_TOL {
                return Err(Error::InvalidInput(format!("constraint generators do not commute (|[J_i, J_k]| = {c:e})")));
            }
        }
    }
    Ok(())
}

fn modified(hamiltonian: &HermitianOperator, generators: &[HermitianOperator], lambda: &[f64]) -> Result<HermitianOperator> {
    let mut h = hamiltonian.clone();
    for (g, l) in generators.iter().zip(lambda) {
        h = h.combine(1.0, g, -l)?;
    }
    Ok(h)
}

/// Minimizer of the modified energy at fixed multipliers.
pub fn minimize_modified(
    chart: &(impl ManifoldChart + ?Sized),
    hamiltonian: &HermitianOperator,
    cons: &ConstraintSpec,
    x_init: &[f64],
) -> Result<Vec<f64>> {
    let h = cons.modified_hamiltonian(hamiltonian)?;
    Ok(minimize_expectation(chart, &h, x_init, &MinimizeOptions::default())?.x)
}

#[derive(Debug, Clone)]
pub struct CrankedSolution {
    pub x_g: Vec<f64>,
    pub lambda: Vec<f64>,
    pub targets: Vec<f64>,
    /// `<J_k>` at `x_g`.
    pub achieved: Vec<f64>,
    /// Unmodified `<H>` at `x_g`.
    pub energy: f64,
    /// `|grad h - sum_k lambda_k grad <J_k>|` at `x_g`.
    pub multiplier_residual: f64,
    pub state: StateVector,
}

impl CrankedSolution {
    pub fn max_constraint_error(&self) -> f64 {
        self.achieved.iter().zip(&self.targets).fold(0.0f64, |a, (x, t)| a.max((x - t).abs()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CrankingOptions {
    /// Tolerance on `|<J_k> - I_k|`, in units of hbar.
    pub constraint_tol: f64,
    pub max_sweeps: usize,
    pub max_expansions: usize,
    pub minimize: MinimizeOptions,
}

impl Default for CrankingOptions {
    fn default() -> Self {
        Self { constraint_tol: 1e-8, max_sweeps: 50, max_expansions: 60, minimize: MinimizeOptions::default() }
    }
}

struct Cranker<'a, C: ManifoldChart + ?Sized> {
    chart: &'a C,
    hamiltonian: &'a HermitianOperator,
    generators: &'a [HermitianOperator],
    opts: CrankingOptions,
    warm: Vec<f64>,
}

impl<C: ManifoldChart + ?Sized> Cranker<'_, C> {
    fn achieved(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.generators.iter().map(|g| hamilton_function(self.chart, g, x)).collect()
    }

    fn minimize(&mut self, lambda: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = modified(self.hamiltonian, self.generators, lambda)?;
        let m = minimize_expectation(self.chart, &h, &self.warm, &self.opts.minimize)?;
        self.warm = m.x.clone();
        let a = self.achieved(&m.x)?;
        Ok((m.x, a))
    }

    /// Brackets and solves `<J_k>(lambda) = target` in component `k`.
    fn solve_component(&mut self, lambda: &mut [f64], k: usize, target: f64, current: f64) -> Result<()> {
        let tol = self.opts.constraint_tol * self.chart.hbar();
        let f0 = current - target;
        if f0.abs() <= 0.1 * tol {
            return Ok(());
        }
        let span_h = self.hamiltonian.spectral().span();
        let span_j = self.generators[k].spectral().span().max(f64::MIN_POSITIVE);
        let mut step = 0.1 * (span_h / span_j).max(1.0);
        // <J_k> grows with lambda_k, so search upward when below the target
        let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
        let (mut a, mut fa) = (lambda[k], f0);
        let mut bracket = None;
        for _ in 0..self.opts.max_expansions {
            let b = a + dir * step;
            lambda[k] = b;
            let fb = self.minimize(lambda)?.1[k] - target;
            if fb.signum() != fa.signum() || fb == 0.0 {
                bracket = Some((a, fa, b, fb));
                break;
            }
            if (fb - fa).abs() <= 1e-3 * tol && step > 10.0 * span_h / span_j {
                break;
            }
            a = b;
            fa = fb;
            step *= 2.0;
        }
        let Some((a, fa, b, fb)) = bracket else {
            return Err(Error::TargetUnreachable(format!(
                "<J_{k}> = {target} not bracketed; last value {} at lambda = {}",
                fa + target,
                lambda[k]
            )));
        };
        let mut lam = lambda.to_vec();
        let scale = a.abs().max(b.abs()).max(1.0);
        let (root, _) = brent_root(
            |l| {
                lam[k] = l;
                Ok(self.minimize(&lam)?.1[k] - target)
            },
            a,
            b,
            fa,
            fb,
            1e-15 * scale,
            0.1 * tol,
            200,
        )?;
        lambda[k] = root;
        Ok(())
    }
}

/// Multipliers for which the cranked minimum carries `<J_k> = I_k`.
pub fn solve_targets(
    chart: &(impl ManifoldChart + ?Sized),
    hamiltonian: &HermitianOperator,
    generators: &[HermitianOperator],
    targets: &[f64],
    lambda_init: &[f64],
    x_init: &[f64],
    opts: &CrankingOptions,
) -> Result<CrankedSolution> {
    check_generators(generators)?;
    let n = generators.len();
    for len in [targets.len(), lambda_init.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let tol = opts.constraint_tol * chart.hbar();
    for (k, (g, t)) in generators.iter().zip(targets).enumerate() {
        let e = g.spectral().eigenvalues();
        let (lo, hi) = (e[0], e[e.len() - 1]);
        if !(*t >= lo - tol && *t <= hi + tol) {
            return Err(Error::TargetUnreachable(format!("target {t} for J_{k} outside its spectrum [{lo}, {hi}]")));
        }
    }
    let mut cr = Cranker { chart, hamiltonian, generators, opts: *opts, warm: x_init.to_vec() };
    let mut lambda = lambda_init.to_vec();
    let (mut x, mut achieved) = cr.minimize(&lambda)?;
    for _ in 0..opts.max_sweeps {
        let worst = achieved.iter().zip(targets).fold(0.0f64, |a, (x, t)| a.max((x - t).abs()));
        if worst <= tol {
            break;
        }
        for k in 0..n {
            cr.solve_component(&mut lambda, k, targets[k], achieved[k])?;
            (x, achieved) = cr.minimize(&lambda)?;
        }
    }
    let worst = achieved.iter().zip(targets).fold(0.0f64, |a, (x, t)| a.max((x - t).abs()));
    if worst > tol {
        return Err(Error::NotConverged(format!("constraint error {worst:e} after {} sweeps", opts.max_sweeps)));
    }
    let mut residual = hamilton_gradient(chart, hamiltonian, &x)?;
    for (g, l) in generators.iter().zip(&lambda) {
        for (r, d) in residual.iter_mut().zip(hamilton_gradient(chart, g, &x)?) {
            *r -= l * d;
        }
    }
    let multiplier_residual = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(CrankedSolution {
        energy: hamilton_function(chart, hamiltonian, &x)?,
        state: chart.embed(&x),
        x_g: x,
        lambda,
        targets: targets.to_vec(),
        achieved,
        multiplier_residual,
    })
}

/// One-generator family over a list of targets, solved concurrently. Each
/// member starts from `x_init` and the previous member's multiplier is not shared.
pub fn solve_family(
    chart: &(impl ManifoldChart + ?Sized),
    hamiltonian: &HermitianOperator,
    generator: &HermitianOperator,
    targets: &[f64],
    x_init: &[f64],
    opts: &CrankingOptions,
) -> Result<Vec<CrankedSolution>> {
    let gens = [generator.clone()];
    targets
        .par_iter()
        .map(|t| solve_targets(chart, hamiltonian, &gens, &[*t], &[0.0], x_init, opts))
        .collect()
}

/// Cranking table with columns `I_target, lambda, energy, achieved`.
pub fn write_cranking_csv<W: Write>(solutions: &[CrankedSolution], mut w: W) -> std::io::Result<()> {
    writeln!(w, "I_target,lambda,energy,achieved")?;
    for s in solutions {
        for k in 0..s.targets.len() {
            writeln!(w, "{},{},{},{}", fmt17(s.targets[k]), fmt17(s.lambda[k]), fmt17(s.energy), fmt17(s.achieved[k]))?;
        }
    }
    Ok(())
}

/// Natural cubic spline through complex vectors.
#[derive(Debug, Clone)]
struct VectorSpline {
    knots: Vec<f64>,
    values: Vec<DVector<C64>>,
    second: Vec<DVector<C64>>,
}

impl VectorSpline {
    fn new(knots: Vec<f64>, values: Vec<DVector<C64>>) -> Self {
        let n = knots.len();
        let dim = values[0].len();
        let mut second = vec![DVector::zeros(dim); n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![DVector::<C64>::zeros(dim); m];
            for i in 0..m {
                let (h0, h1) = (knots[i + 1] - knots[i], knots[i + 2] - knots[i + 1]);
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = (&values[i + 2] - &values[i + 1]) * C64::new(6.0 / h1, 0.0)
                    - (&values[i + 1] - &values[i]) * C64::new(6.0 / h0, 0.0);
            }
            for i in 1..m {
                let lower = knots[i + 1] - knots[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                let prev = rhs[i - 1].clone();
                rhs[i] -= prev * C64::new(w, 0.0);
            }
            for i in (0..m).rev() {
                let mut v = rhs[i].clone();
                if i + 1 < m {
                    v -= &second[i + 2] * C64::new(upper[i], 0.0);
                }
                second[i + 1] = v / C64::new(diag[i], 0.0);
            }
        }
        Self { knots, values, second }
    }

    /// Value and derivative at `s`; the end cubics extend beyond the knots.
    fn eval(&self, s: f64) -> (DVector<C64>, DVector<C64>) {
        let n = self.knots.len();
        let i = match self.knots.iter().rposition(|k| *k <= s) {
            Some(i) => i.min(n - 2),
            None => 0,
        };
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - s) / h;
        let b = (s - self.knots[i]) / h;
        let (y0, y1, m0, m1) = (&self.values[i], &self.values[i + 1], &self.second[i], &self.second[i + 1]);
        let c = |v: f64| C64::new(v, 0.0);
        let value = y0 * c(a) + y1 * c(b) + m0 * c((a * a * a - a) * h * h / 6.0) + m1 * c((b * b * b - b) * h * h / 6.0);
        let deriv = (y1 - y0) * c(1.0 / h) - m0 * c((3.0 * a * a - 1.0) * h / 6.0) + m1 * c((3.0 * b * b - 1.0) * h / 6.0);
        (value, deriv)
    }
}

/// `|Z(phi, I)> = exp(-i phi J / hbar) |Z(0, I)>` for one generator, with the
/// leaf `|Z(0, I)>` interpolated across a solved cranking family and
/// reparametrized so that `<J> = I` exactly.
#[derive(Debug, Clone)]
pub struct ActionAngleChart {
    generator: HermitianOperator,
    hbar: f64,
    spline: VectorSpline,
    range: (f64, f64),
}

/// Rotation angle and phase putting `z` closest to `reference`.
fn align(generator: &HermitianOperator, hbar: f64, reference: &StateVector, z: &StateVector) -> Result<StateVector> {
    let spec = generator.spectral();
    let rotate = |phi: f64| spec.apply_function(z, |e| C64::from_polar(1.0, -phi * e / hbar));
    let overlap = |phi: f64| rotate(phi).and_then(|r| inner(reference, &r)).map(|c| c.norm()).unwrap_or(0.0);
    let grid = 64;
    let step = 2.0 * PI / grid as f64;
    let best = (0..grid).map(|k| k as f64 * step).max_by(|a, b| overlap(*a).total_cmp(&overlap(*b))).unwrap_or(0.0);
    let (phi, _) = golden_section_min(|p| -overlap(p), best - step, best + step, 1e-12);
    let r = rotate(phi)?;
    let c = inner(reference, &r)?;
    Ok(if c.norm() > 0.0 { r.scale(c.conj() / c.norm()) } else { r })
}

impl ActionAngleChart {
    fn leaf_at(&self, s: f64) -> (DVector<C64>, DVector<C64>, f64, f64) {
        let (u, du) = self.spline.eval(s);
        let n = u.norm();
        let z = &u / C64::new(n, 0.0);
        let dz = normalized_derivative(&u, &du);
        let j = self.generator.matrix();
        let jz = j * &z;
        let action = z.dotc(&jz).re;
        let slope = 2.0 * dz.dotc(&jz).re;
        (z, dz, action, slope)
    }

    /// Leaf state and its `I` derivative at exactly `<J> = action`.
    fn leaf(&self, action: f64) -> (DVector<C64>, DVector<C64>) {
        let mut s = action;
        let scale = self.hbar.max(action.abs());
        for _ in 0..30 {
            let (_, _, a, slope) = self.leaf_at(s);
            let err = a - action;
            if err.abs() <= 1e-15 * scale || slope == 0.0 {
                break;
            }
            s -= err / slope;
        }
        let (z, dz, _, slope) = self.leaf_at(s);
        (z, dz / C64::new(slope, 0.0))
    }

    fn rotate(&self, v: DVector<C64>, phi: f64) -> StateVector {
        let spec = self.generator.spectral();
        let v = StateVector::from_dvector_unchecked(v);
        spec.apply_function(&v, |e| C64::from_polar(1.0, -phi * e / self.hbar)).expect("dimension checked on construction")
    }

    pub fn action_range(&self) -> (f64, f64) {
        self.range
    }
}

impl ManifoldChart for ActionAngleChart {
    fn name(&self) -> &str {
        "action-angle"
    }

    fn n_params(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn hbar(&self) -> f64 {
        self.hbar
    }

    fn embed(&self, x: &[f64]) -> StateVector {
        let (z, _) = self.leaf(x[1]);
        self.rotate(z, x[0])
    }

    fn tangent(&self, x: &[f64]) -> Vec<StateVector> {
        let (z, dz) = self.leaf(x[1]);
        let state = self.rotate(z, x[0]);
        let d_phi = self.generator.apply(&state).expect("same dimension").scale(C64::new(0.0, -1.0 / self.hbar));
        vec![d_phi, self.rotate(dz, x[0])]
    }

    fn has_analytic_tangent(&self) -> bool {
        true
    }

    fn domain_hint(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 2.0 * PI), self.range]
    }
}

/// Action-angle chart over a solved one-generator family. Members are aligned
/// along the rotation orbit and in phase before interpolation.
pub fn build_action_angle_chart(
    chart: &(impl ManifoldChart + ?Sized),
    solved: &[CrankedSolution],
    generators: &[HermitianOperator],
) -> Result<ActionAngleChart> {
    if generators.len() != 1 {
        return Err(Error::InvalidInput(format!(
            "action-angle charts are built for one generator, got {}",
            generators.len()
        )));
    }
    if solved.len() < 2 {
        return Err(Error::InvalidInput("at least two cranked solutions are needed".into()));
    }
    let generator = generators[0].clone();
    if generator.dim() != chart.dim() {
        return Err(Error::DimensionMismatch { expected: chart.dim(), got: generator.dim() });
    }
    let hbar = chart.hbar();
    let mut members: Vec<&CrankedSolution> = solved.iter().collect();
    members.sort_by(|a, b| a.achieved[0].total_cmp(&b.achieved[0]));
    let knots: Vec<f64> = members.iter().map(|s| s.achieved[0]).collect();
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("cranked family has repeated actions".into()));
    }
    let mut values: Vec<DVector<C64>> = Vec::with_capacity(members.len());
    let mut prev = members[0].state.clone();
    for s in &members {
        let z = align(&generator, hbar, &prev, &s.state)?;
        values.push(z.amplitudes().clone());
        prev = z;
    }
    let range = (knots[0], knots[knots.len() - 1]);
    Ok(ActionAngleChart { generator, hbar, spline: VectorSpline::new(knots, values), range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::IntegratorOptions;
    use crate::manifold::symplectic_form;
    use crate::models::rotor::RotorModel;
    use crate::orbit::{quantize_family, QuantizeOptions};
    use crate::requantize::{angular_project, requantize};
    use std::sync::Arc;

    fn rotor() -> (RotorModel, crate::models::spin::SpinCoherentChart) {
        let r = RotorModel::new(3.0, 1.0, 1.0).unwrap();
        let c = r.spin_coherent_chart().unwrap();
        (r, c)
    }

    #[test]
    fn spline_reproduces_cubics() {
        let knots = vec![0.0, 0.5, 1.5, 2.0, 3.0];
        let f = |x: f64| DVector::from_vec(vec![C64::new(2.0 * x - 1.0, 0.5), C64::new(0.0, x)]);
        let sp = VectorSpline::new(knots, (0..5).map(|k| f([0.0, 0.5, 1.5, 2.0, 3.0][k])).collect());
        let (v, d) = sp.eval(1.1);
        assert!((v - f(1.1)).norm() < 1e-13);
        assert!((d[0] - C64::new(2.0, 0.0)).norm() < 1e-13 && (d[1] - C64::new(0.0, 1.0)).norm() < 1e-13);
    }

    #[test]
    fn constraint_spec_checks() {
        let (r, _) = rotor();
        let jx = r.spin.jx_operator(1.0);
        assert!(ConstraintSpec::new(vec![r.generator.clone(), jx], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(ConstraintSpec::new(vec![r.generator.clone()], vec![0.0; 2], vec![0.0]).is_err());
        assert!(ConstraintSpec::new(vec![r.generator.clone()], vec![1.0], vec![0.0]).is_ok());
    }

    #[test]
    fn zero_multiplier_is_plain_minimization() {
        let (r, c) = rotor();
        let cons = ConstraintSpec::new(vec![r.generator.clone()], vec![0.0], vec![0.0]).unwrap();
        let x = minimize_modified(&c, &r.hamiltonian, &cons, &[0.3, 0.2]).unwrap();
        let plain = crate::rpa::find_minimum(&c, &r.hamiltonian, &[0.3, 0.2]).unwrap();
        let e1 = hamilton_function(&c, &r.hamiltonian, &x).unwrap();
        let e0 = hamilton_function(&c, &r.hamiltonian, &plain).unwrap();
        assert!((e1 - e0).abs() < 1e-12);
    }

    #[test]
    fn cranked_expectation_monotone_and_saturating() {
        let (r, c) = rotor();
        let mut last = f64::NEG_INFINITY;
        for lambda in [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
            let cons = ConstraintSpec::new(vec![r.generator.clone()], vec![0.0], vec![lambda]).unwrap();
            let x = minimize_modified(&c, &r.hamiltonian, &cons, &[0.3, 0.2]).unwrap();
            let j = hamilton_function(&c, &r.generator, &x).unwrap();
            assert!((j - r.cranked_expectation(lambda)).abs() < 1e-8, "lambda {lambda}: {j}");
            assert!(j > last);
            last = j;
        }
        let cons = ConstraintSpec::new(vec![r.generator.clone()], vec![0.0], vec![-20.0]).unwrap();
        let x = minimize_modified(&c, &r.hamiltonian, &cons, &[0.3, 0.2]).unwrap();
        assert!((hamilton_function(&c, &r.generator, &x).unwrap() + 3.0).abs() < 1e-9);
    }

    #[test]
    fn targets_hit_and_multiplier_rule() {
        let (r, c) = rotor();
        for m in -2..=2 {
            let sol = solve_targets(&c, &r.hamiltonian, std::slice::from_ref(&r.generator), &[m as f64], &[0.0], &[0.3, 0.2], &Default::default()).unwrap();
            assert!(sol.max_constraint_error() <= 1e-8, "m = {m}");
            assert!(sol.multiplier_residual <= 1e-8);
            let expect = 2.0 * (r.j - 0.5) * m as f64 / r.j;
            assert!((sol.lambda[0] - expect).abs() < 1e-6, "{} vs {expect}", sol.lambda[0]);
        }
    }

    #[test]
    fn self_consistent_target_needs_no_multiplier() {
        let (r, c) = rotor();
        let x = crate::rpa::find_minimum(&c, &r.hamiltonian, &[0.3, 0.2]).unwrap();
        let i0 = hamilton_function(&c, &r.generator, &x).unwrap();
        let sol = solve_targets(&c, &r.hamiltonian, std::slice::from_ref(&r.generator), &[i0], &[0.0], &x, &Default::default()).unwrap();
        assert_eq!(sol.lambda[0], 0.0);
    }

    #[test]
    fn unreachable_target() {
        let (r, c) = rotor();
        let res = solve_targets(&c, &r.hamiltonian, std::slice::from_ref(&r.generator), &[3.5], &[0.0], &[0.3, 0.2], &Default::default());
        assert!(matches!(res, Err(Error::TargetUnreachable(_))));
    }

    fn action_angle(r: &RotorModel, c: &crate::models::spin::SpinCoherentChart) -> ActionAngleChart {
        let targets: Vec<f64> = (0..=12).map(|k| 0.25 + 0.2 * k as f64).collect();
        let fam = solve_family(c, &r.hamiltonian, &r.generator, &targets, &[0.3, 0.2], &Default::default()).unwrap();
        build_action_angle_chart(c, &fam, std::slice::from_ref(&r.generator)).unwrap()
    }

    #[test]
    fn action_angle_chart_is_canonical_and_axial() {
        let (r, c) = rotor();
        let aa = action_angle(&r, &c);
        for (phi, i) in [(0.0, 0.5), (1.3, 1.0), (4.0, 1.77), (2.2, 2.4)] {
            let w = symplectic_form(&aa, &[phi, i]).unwrap();
            assert!((2.0 * w.get(0, 1) - 1.0).abs() < 1e-8, "{}", w.get(0, 1));
            assert!(w.get(0, 0).abs() < 1e-12 && w.get(1, 1).abs() < 1e-12);
            let h0 = hamilton_function(&aa, &r.hamiltonian, &[0.0, i]).unwrap();
            let h1 = hamilton_function(&aa, &r.hamiltonian, &[phi, i]).unwrap();
            assert!((h0 - h1).abs() < 1e-10);
            assert!((hamilton_function(&aa, &r.generator, &[phi, i]).unwrap() - i).abs() < 1e-12);
        }
        let fd = crate::manifold::finite_difference_tangent(&aa, &[0.7, 1.2]);
        let an = aa.tangent(&[0.7, 1.2]);
        assert!(fd.iter().zip(&an).all(|(a, b)| a.distance(b) < 1e-6));
    }

    #[test]
    fn phi_cycle_requantization_is_angular_projection() {
        let (r, c) = rotor();
        let aa = Arc::new(action_angle(&r, &c));
        let opts = QuantizeOptions {
            t_max: 40.0,
            scan_points: 5,
            integrator: IntegratorOptions { samples: 9, store_states: false, ..Default::default() },
            ..Default::default()
        };
        let q = quantize_family(aa.clone(), &r.hamiltonian, |s| vec![0.0, s], (0.6, 1.4), &[1], &opts).unwrap();
        assert!((q[0].parameter - 1.0).abs() < 1e-6);
        let avg = requantize(&q[0], &r.hamiltonian, 64).unwrap();
        let proj = angular_project(&r.generator, &aa.embed(&[0.0, q[0].parameter]), 1, 1.0, 64).unwrap().normalized().unwrap();
        assert!(inner(&proj, &avg.normalized).unwrap().norm() >= 1.0 - 1e-9);
    }

    #[test]
    fn cranking_csv_layout() {
        let (r, c) = rotor();
        let sol = solve_targets(&c, &r.hamiltonian, std::slice::from_ref(&r.generator), &[1.0], &[0.0], &[0.3, 0.2], &Default::default()).unwrap();
        let mut buf = Vec::new();
        write_cranking_csv(&[sol], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "I_target,lambda,energy,achieved");
        assert_eq!(lines[1].split(',').count(), 4);
    }
}
