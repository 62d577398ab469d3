//! Entropic interpolations: the two-point problem `X'' = F''(X) F'(X)`,
//! `X_0 = x`, `X_T = y`.
//!
//! Two solvers are provided. [`solve_bridge_shooting`] shoots from both ends
//! towards the middle of the horizon and Newton-solves the matching
//! conditions; [`solve_bridge_action`] minimizes a discretized action with a
//! preconditioned L-BFGS. [`solve_bridge`] dispatches on
//! [`SolverOptions::method`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{default_steps, Trajectory};
use crate::functionals::{action_cost, conserved_energy};
use crate::linalg::{all_finite, dot, norm, sub, sup_norm};
use crate::ode;
use crate::potential::{Potential, PotentialKind};

/// Relative tolerance on energy conservation for ODE-based solutions.
pub const CONSERVATION_TOL: f64 = 1e-6;

const MAX_DAMPING_HALVINGS: u32 = 30;
const JACOBIAN_STEP: f64 = 1e-6;
const LBFGS_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const NEGLOG_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Shooting,
    Action,
    /// Shooting, falling back to action minimization.
    #[default]
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Newton iterations per shooting start.
    pub max_iter: usize,
    pub tol_boundary: f64,
    /// Nodes of the action-minimization grid.
    pub grid_points: usize,
    pub method: SolverMethod,
    /// Number of shooting starts.
    pub restarts: usize,
    /// RK4 intervals for shooting; `None` uses [`default_steps`].
    pub steps: Option<usize>,
    pub action_max_iter: usize,
    pub action_grad_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 100,
            tol_boundary: 1e-9,
            grid_points: 201,
            method: SolverMethod::Auto,
            restarts: 5,
            steps: None,
            action_max_iter: 100_000,
            action_grad_tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    Shooting,
    ActionMin,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeSolution {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub energy_mean: f64,
    pub energy_maxdev: f64,
    /// Bound that `energy_maxdev` is expected to respect for this solver.
    pub conservation_tol: f64,
    /// Max over interior nodes of `|second difference − F''F'|`; NaN below 5 nodes.
    pub newton_residual: f64,
    /// Shooting: mismatch of the two half-trajectories at the middle node.
    /// Action: largest endpoint deviation (zero, endpoints are pinned).
    pub boundary_error: f64,
    pub solver: SolverKind,
    /// Newton or L-BFGS iterations of the successful run.
    pub iterations: usize,
}

impl BridgeSolution {
    fn assemble(
        p: &Potential,
        trajectory: Trajectory,
        solver: SolverKind,
        boundary_error: f64,
        iterations: usize,
    ) -> Result<Self> {
        let cost = action_cost(&trajectory, p)?;
        let stats = conserved_energy(&trajectory, p)?;
        let newton_residual = if trajectory.len() >= 5 {
            newton_residual(&trajectory, p)?
        } else {
            f64::NAN
        };
        let conservation_tol = match solver {
            SolverKind::ActionMin => {
                let h = trajectory.horizon() / (trajectory.len() - 1) as f64;
                (CONSERVATION_TOL + 10.0 * h * h) * (1.0 + stats.mean.abs())
            }
            _ => CONSERVATION_TOL * (1.0 + stats.mean.abs()),
        };
        Ok(BridgeSolution {
            trajectory,
            cost,
            energy_mean: stats.mean,
            energy_maxdev: stats.maxdev,
            conservation_tol,
            newton_residual,
            boundary_error,
            solver,
            iterations,
        })
    }

    pub fn is_conserved(&self) -> bool {
        self.energy_maxdev <= self.conservation_tol
    }

    /// The bridge from `y` to `x`; cost and energy are unchanged.
    pub fn reversed(&self) -> BridgeSolution {
        BridgeSolution { trajectory: self.trajectory.reversed(), ..self.clone() }
    }
}

fn check_inputs(p: &Potential, x: &[f64], y: &[f64], horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    p.value(x)?;
    p.value(y)?;
    Ok(())
}

/// Solves with the method selected in `opts`.
pub fn solve_bridge(p: &Potential, x: &[f64], y: &[f64], horizon: f64, opts: &SolverOptions) -> Result<BridgeSolution> {
    match opts.method {
        SolverMethod::Shooting => solve_bridge_shooting(p, x, y, horizon, opts),
        SolverMethod::Action => solve_bridge_action(p, x, y, horizon, opts.grid_points, opts),
        SolverMethod::Auto => match solve_bridge_shooting(p, x, y, horizon, opts) {
            Ok(sol) => Ok(sol),
            Err(Error::NoConvergence { .. } | Error::DomainEscape { .. } | Error::NonFinite { .. }) => {
                solve_bridge_action(p, x, y, horizon, opts.grid_points, opts)
            }
            Err(e) => Err(e),
        },
    }
}

// ---------------------------------------------------------------------------
// Shooting

/// Phase-space RK4 for `(X, V)' = (V, F''(X)F'(X))` with reusable buffers.
struct PhaseIntegrator<'a> {
    p: &'a Potential,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
    next: Vec<f64>,
}

fn phase_rhs(p: &Potential, y: &[f64], out: &mut [f64]) -> Result<()> {
    let d = y.len() / 2;
    out[..d].copy_from_slice(&y[d..]);
    p.newton_force_into(&y[..d], &mut out[d..])
}

impl<'a> PhaseIntegrator<'a> {
    fn new(p: &'a Potential) -> Self {
        let n = 2 * p.dim();
        PhaseIntegrator {
            p,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
            next: vec![0.0; n],
        }
    }

    fn try_step(&mut self, y: &[f64], h: f64) -> Result<()> {
        let n = y.len();
        phase_rhs(self.p, y, &mut self.k1)?;
        for i in 0..n {
            self.stage[i] = y[i] + 0.5 * h * self.k1[i];
        }
        phase_rhs(self.p, &self.stage, &mut self.k2)?;
        for i in 0..n {
            self.stage[i] = y[i] + 0.5 * h * self.k2[i];
        }
        phase_rhs(self.p, &self.stage, &mut self.k3)?;
        for i in 0..n {
            self.stage[i] = y[i] + h * self.k3[i];
        }
        phase_rhs(self.p, &self.stage, &mut self.k4)?;
        for i in 0..n {
            self.next[i] = y[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }

    /// One step of size `h` from time `t`, in place. Falls back to the
    /// step-halving integrator when the plain step leaves the domain.
    fn step(&mut self, y: &mut Vec<f64>, t: f64, h: f64) -> Result<()> {
        let d = y.len() / 2;
        let plain = self.try_step(y, h);
        if plain.is_ok() && all_finite(&self.next) && self.p.contains(&self.next[..d]) {
            std::mem::swap(y, &mut self.next);
            return Ok(());
        }
        let p = self.p;
        let rhs = |z: &[f64]| -> Result<Vec<f64>> {
            let mut out = vec![0.0; z.len()];
            phase_rhs(p, z, &mut out)?;
            Ok(out)
        };
        let admissible = |z: &[f64]| p.contains(&z[..d]);
        *y = ode::advance(&rhs, &admissible, y, t, h)?;
        Ok(())
    }

    /// Integrates `steps` steps of size `h` from `(x, v)` at time `t0`,
    /// optionally recording every node (including the first).
    fn integrate(
        &mut self,
        x: &[f64],
        v: &[f64],
        t0: f64,
        h: f64,
        steps: usize,
        mut record: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = x.iter().chain(v).copied().collect();
        if let Some(r) = record.as_deref_mut() {
            r.push(y.clone());
        }
        for k in 0..steps {
            self.step(&mut y, t0 + k as f64 * h, h)?;
            if let Some(r) = record.as_deref_mut() {
                r.push(y.clone());
            }
        }
        Ok(y)
    }
}

struct Shooter<'a> {
    integrator: PhaseIntegrator<'a>,
    x: &'a [f64],
    y: &'a [f64],
    horizon: f64,
    h: f64,
    half: usize,
}

impl Shooter<'_> {
    fn forward(&mut self, v0: &[f64]) -> Result<Vec<f64>> {
        self.integrator.integrate(self.x, v0, 0.0, self.h, self.half, None)
    }

    fn backward(&mut self, vt: &[f64]) -> Result<Vec<f64>> {
        self.integrator.integrate(self.y, vt, self.horizon, -self.h, self.half, None)
    }

    /// Mismatch at the middle node for unknowns `u = (v0, vT)`.
    fn residual(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let d = u.len() / 2;
        let fwd = self.forward(&u[..d])?;
        let bwd = self.backward(&u[d..])?;
        Ok(sub(&fwd, &bwd))
    }

    fn jacobian(&mut self, u: &[f64]) -> Result<DMatrix<f64>> {
        let n = u.len();
        let d = n / 2;
        let fwd0 = self.forward(&u[..d])?;
        let bwd0 = self.backward(&u[d..])?;
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let delta = JACOBIAN_STEP * (1.0 + u[j].abs());
            let mut up = u.to_vec();
            up[j] += delta;
            let (col, sign) = if j < d {
                (sub(&self.forward(&up[..d])?, &fwd0), 1.0)
            } else {
                (sub(&self.backward(&up[d..])?, &bwd0), -1.0)
            };
            for i in 0..n {
                jac[(i, j)] = sign * col[i] / delta;
            }
        }
        Ok(jac)
    }

    /// Damped Newton from `u`; returns the unknowns, residual and iterations.
    /// A damped step is accepted when its simplified Newton correction
    /// `J⁻¹ r(trial)` is shorter than the full correction (a scale-invariant
    /// decrease test: positions and velocities at the middle node differ in
    /// sensitivity by orders of magnitude on long horizons).
    fn newton(&mut self, mut u: Vec<f64>, opts: &SolverOptions, tol: f64) -> std::result::Result<(Vec<f64>, f64, usize), f64> {
        let Ok(mut r) = self.residual(&u) else { return Err(f64::INFINITY) };
        let mut err = sup_norm(&r);
        for iter in 0..opts.max_iter {
            if err <= tol {
                return Ok((u, err, iter));
            }
            let Ok(jac) = self.jacobian(&u) else { return Err(err) };
            let lu = jac.lu();
            let Some(step) = lu.solve(&DVector::from_column_slice(&r)) else { return Err(err) };
            let step_norm = step.norm();
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_DAMPING_HALVINGS {
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
                if let Ok(rt) = self.residual(&trial) {
                    let et = sup_norm(&rt);
                    let simplified = lu.solve(&DVector::from_column_slice(&rt)).map_or(f64::INFINITY, |s| s.norm());
                    if et.is_finite() && (et <= tol || simplified < step_norm) {
                        u = trial;
                        r = rt;
                        err = et;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(err);
            }
        }
        if err <= tol {
            Ok((u, err, opts.max_iter))
        } else {
            Err(err)
        }
    }
}

/// Shooting solver. The path is integrated forward from `(x, v0)` and
/// backward from `(y, vT)` to the middle node; `(v0, vT)` solves the
/// position and velocity matching conditions by damped Newton with a
/// forward-difference Jacobian. Starts, in order: the chord slope
/// `(y − x)/T` at both ends, the turnpike guess `(−F'(x), F'(y))`, the end
/// slopes of an action minimizer, then blends of these.
///
/// Without an explicit `opts.steps`, the RK4 step count starts at
/// [`default_steps`] and is doubled (at most [`MAX_STEP_DOUBLINGS`] times)
/// until the energy is conserved to [`CONSERVATION_TOL`].
pub fn solve_bridge_shooting(
    p: &Potential,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    opts: &SolverOptions,
) -> Result<BridgeSolution> {
    check_inputs(p, x, y, horizon)?;
    let Some(steps) = opts.steps else {
        let mut steps = default_steps(horizon);
        let (mut sol, mut u) = shoot(p, x, y, horizon, steps, opts, None)?;
        for _ in 0..MAX_STEP_DOUBLINGS {
            if sol.is_conserved() {
                break;
            }
            steps *= 2;
            (sol, u) = shoot(p, x, y, horizon, steps, opts, Some(u))?;
        }
        return Ok(sol);
    };
    shoot(p, x, y, horizon, steps, opts, None).map(|(sol, _)| sol)
}

/// Step-count refinements tried when a shooting solution drifts in energy.
pub const MAX_STEP_DOUBLINGS: u32 = 4;

fn shoot(
    p: &Potential,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    steps: usize,
    opts: &SolverOptions,
    warm: Option<Vec<f64>>,
) -> Result<(BridgeSolution, Vec<f64>)> {
    let d = p.dim();
    let steps = steps.max(2);
    let steps = steps + steps % 2;
    let h = horizon / steps as f64;
    let mut shooter = Shooter { integrator: PhaseIntegrator::new(p), x, y, horizon, h, half: steps / 2 };

    let chord: Vec<f64> = x.iter().zip(y).map(|(a, b)| (b - a) / horizon).collect();
    let turnpike: Vec<f64> = p.gradient(x)?.iter().map(|g| -g).chain(p.gradient(y)?).collect();
    let chord_pair: Vec<f64> = chord.iter().chain(&chord).copied().collect();

    let tol = opts.tol_boundary * (1.0 + sup_norm(x).max(sup_norm(y)));
    let mut best = f64::INFINITY;
    if let Some(u) = warm {
        match shooter.newton(u, opts, tol) {
            Ok((u, err, iterations)) => return finish_shooting(p, &mut shooter, u, d, err, iterations),
            Err(e) => best = e,
        }
    }
    let mut action_slopes: Option<Vec<f64>> = None;
    for attempt in 0..opts.restarts.max(1) {
        let start = match attempt {
            0 => chord_pair.clone(),
            1 => turnpike.clone(),
            2 => match solve_bridge_action(p, x, y, horizon, opts.grid_points.max(5), opts) {
                Ok(sol) => {
                    let tr = &sol.trajectory;
                    let s: Vec<f64> = tr.velocities[0].iter().chain(&tr.velocities[tr.len() - 1]).copied().collect();
                    action_slopes = Some(s.clone());
                    s
                }
                Err(_) => continue,
            },
            k => {
                let other = action_slopes.as_ref().unwrap_or(&chord_pair);
                let w = 1.0 / (k as f64 - 1.0);
                turnpike.iter().zip(other).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            }
        };
        match shooter.newton(start, opts, tol) {
            Ok((u, err, iterations)) => return finish_shooting(p, &mut shooter, u, d, err, iterations),
            Err(e) => best = best.min(e),
        }
    }
    Err(Error::NoConvergence { residual: best })
}

fn finish_shooting(
    p: &Potential,
    shooter: &mut Shooter<'_>,
    u: Vec<f64>,
    d: usize,
    err: f64,
    iterations: usize,
) -> Result<(BridgeSolution, Vec<f64>)> {
    let half = shooter.half;
    let h = shooter.h;
    let horizon = shooter.horizon;
    let mut fwd = Vec::with_capacity(half + 1);
    shooter.integrator.integrate(shooter.x, &u[..d], 0.0, h, half, Some(&mut fwd))?;
    let mut bwd = Vec::with_capacity(half + 1);
    shooter.integrator.integrate(shooter.y, &u[d..], horizon, -h, half, Some(&mut bwd))?;
    bwd.pop();
    let steps = 2 * half;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    for (k, z) in fwd.into_iter().chain(bwd.into_iter().rev()).enumerate() {
        times.push(if k == steps { horizon } else { k as f64 * h });
        states.push(z[..d].to_vec());
        velocities.push(z[d..].to_vec());
    }
    let trajectory = Trajectory::new(times, states, velocities)?;
    Ok((BridgeSolution::assemble(p, trajectory, SolverKind::Shooting, err, iterations)?, u))
}

// ---------------------------------------------------------------------------
// Action minimization

struct Action<'a> {
    p: &'a Potential,
    x: &'a [f64],
    y: &'a [f64],
    h: f64,
    nodes: usize,
}

impl Action<'_> {
    fn node<'b>(&'b self, w: &'b [f64], i: usize) -> &'b [f64] {
        let d = self.x.len();
        if i == 0 {
            self.x
        } else if i == self.nodes - 1 {
            self.y
        } else {
            &w[(i - 1) * d..i * d]
        }
    }

    /// Discrete action; `+∞` outside the domain.
    fn value(&self, w: &[f64]) -> f64 {
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for i in 0..self.nodes {
            let wi = self.node(w, i);
            let g = match self.p.gradient(wi) {
                Ok(g) => g,
                Err(_) => return f64::INFINITY,
            };
            let c = if i == 0 || i == self.nodes - 1 { 0.5 } else { 1.0 };
            potential += c * dot(&g, &g);
            if i + 1 < self.nodes {
                let next = self.node(w, i + 1);
                kinetic += wi.iter().zip(next).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            }
        }
        let v = kinetic / self.h + self.h * potential;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let d = self.x.len();
        let mut g = vec![0.0; w.len()];
        for i in 1..self.nodes - 1 {
            let (prev, cur, next) = (self.node(w, i - 1), self.node(w, i), self.node(w, i + 1));
            let force = self.p.newton_force(cur)?;
            for k in 0..d {
                g[(i - 1) * d + k] =
                    2.0 / self.h * (2.0 * cur[k] - prev[k] - next[k]) + 2.0 * self.h * force[k];
            }
        }
        Ok(g)
    }

    /// Solves `P z = r` per coordinate, `P = (2/h) tridiag(−1, 2, −1) + 2h`.
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let d = self.x.len();
        let m = self.nodes - 2;
        let diag = 4.0 / self.h + 2.0 * self.h;
        let off = -2.0 / self.h;
        let mut z = vec![0.0; r.len()];
        let mut c = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for k in 0..d {
            // Thomas algorithm.
            let mut denom = diag;
            c[0] = off / denom;
            rhs[0] = r[k] / denom;
            for i in 1..m {
                denom = diag - off * c[i - 1];
                c[i] = off / denom;
                rhs[i] = (r[i * d + k] - off * rhs[i - 1]) / denom;
            }
            z[(m - 1) * d + k] = rhs[m - 1];
            for i in (0..m - 1).rev() {
                z[i * d + k] = rhs[i] - c[i] * z[(i + 1) * d + k];
            }
        }
        z
    }
}

/// Direct minimization of the discretized action over the interior nodes of a
/// uniform grid with `grid_points` nodes, by L-BFGS with Armijo backtracking.
/// Stored velocities are centered differences (second-order one-sided at the
/// ends); the cost is their trapezoidal action.
pub fn solve_bridge_action(
    p: &Potential,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    grid_points: usize,
    opts: &SolverOptions,
) -> Result<BridgeSolution> {
    check_inputs(p, x, y, horizon)?;
    if grid_points < 3 {
        return Err(Error::InvalidArgument("action grid needs at least 3 nodes".into()));
    }
    let nodes = grid_points;
    let h = horizon / (nodes - 1) as f64;
    let action = Action { p, x, y, h, nodes };
    let floor = matches!(p.kind(), PotentialKind::NegLog) || p.domain() == crate::potential::Domain::PositiveOrthant;

    let mut w: Vec<f64> = (1..nodes - 1)
        .flat_map(|i| {
            let s = i as f64 / (nodes - 1) as f64;
            x.iter().zip(y).map(move |(a, b)| a + s * (b - a)).collect::<Vec<_>>()
        })
        .map(|v| if floor { v.max(NEGLOG_FLOOR) } else { v })
        .collect();

    let mut value = action.value(&w);
    if !value.is_finite() {
        return Err(Error::DomainEscape { t: 0.0 });
    }
    let mut grad = action.gradient(&w)?;
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(LBFGS_MEMORY);
    let mut iterations = 0;
    loop {
        let gnorm = sup_norm(&grad);
        if gnorm < opts.action_grad_tol {
            break;
        }
        if iterations >= opts.action_max_iter {
            return Err(Error::MaxIterations { iterations, gradient: gnorm });
        }
        iterations += 1;

        let mut dir = lbfgs_direction(&action, &grad, &history);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = action.precondition(&grad).iter().map(|v| -v).collect();
            slope = dot(&grad, &dir);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let tv = action.value(&trial);
            if tv <= value + ARMIJO * alpha * slope || (tv.is_finite() && tv <= value + 1e-14 * (1.0 + value.abs()) && alpha < 1e-8) {
                accepted = Some((trial, tv));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, tv)) = accepted else {
            if history.is_empty() {
                return Err(Error::MaxIterations { iterations, gradient: gnorm });
            }
            history.clear();
            continue;
        };
        let new_grad = action.gradient(&trial)?;
        let s = sub(&trial, &w);
        let yv = sub(&new_grad, &grad);
        let sy = dot(&s, &yv);
        if sy > 1e-300 {
            if history.len() == LBFGS_MEMORY {
                history.remove(0);
            }
            history.push((s, yv, 1.0 / sy));
        }
        w = trial;
        value = tv;
        grad = new_grad;
    }

    let states: Vec<Vec<f64>> = (0..nodes).map(|i| action.node(&w, i).to_vec()).collect();
    let velocities = finite_difference_velocities(&states, h);
    let times = (0..nodes).map(|i| if i == nodes - 1 { horizon } else { i as f64 * h }).collect();
    let trajectory = Trajectory::new(times, states, velocities)?;
    BridgeSolution::assemble(p, trajectory, SolverKind::ActionMin, 0.0, iterations)
}

fn lbfgs_direction(action: &Action<'_>, grad: &[f64], history: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let mut r = action.precondition(&q);
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r.iter().map(|v| -v).collect()
}

fn finite_difference_velocities(states: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let n = states.len();
    let d = states[0].len();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|k| {
                    if n == 2 {
                        (states[1][k] - states[0][k]) / h
                    } else if i == 0 {
                        (-3.0 * states[0][k] + 4.0 * states[1][k] - states[2][k]) / (2.0 * h)
                    } else if i == n - 1 {
                        (3.0 * states[n - 1][k] - 4.0 * states[n - 2][k] + states[n - 3][k]) / (2.0 * h)
                    } else {
                        (states[i + 1][k] - states[i - 1][k]) / (2.0 * h)
                    }
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Diagnostics and closed forms

/// Max over interior nodes of `|(X_{i+1} − 2X_i + X_{i−1})/h² − F''(X_i)F'(X_i)|`.
pub fn newton_residual(traj: &Trajectory, p: &Potential) -> Result<f64> {
    if traj.len() < 5 {
        return Err(Error::InvalidArgument("newton residual needs at least 5 nodes".into()));
    }
    let h = traj.uniform_step()?;
    let s = &traj.states;
    let mut worst: f64 = 0.0;
    for i in 1..traj.len() - 1 {
        let force = p.newton_force(&s[i])?;
        let defect: Vec<f64> = (0..s[i].len())
            .map(|k| (s[i + 1][k] - 2.0 * s[i][k] + s[i - 1][k]) / (h * h) - force[k])
            .collect();
        worst = worst.max(norm(&defect));
    }
    Ok(worst)
}

/// `(α_T, β_T)` of the isotropic quadratic bridge
/// `X_t = e^{−t} α + e^{−(T−t)} β`.
pub fn quadratic_bridge_coefficients(x: &[f64], y: &[f64], horizon: f64) -> (Vec<f64>, Vec<f64>) {
    let q = (-horizon).exp();
    let denom = -(-2.0 * horizon).exp_m1();
    let alpha = x.iter().zip(y).map(|(a, b)| (a - b * q) / denom).collect();
    let beta = x.iter().zip(y).map(|(a, b)| (b - a * q) / denom).collect();
    (alpha, beta)
}

/// Conserved energy of the NegLog bridge from `x` to `x`:
/// `E = (x² − sqrt(x⁴ + T²)) / (T²/2) = −2 / (x² + sqrt(x⁴ + T²))`.
pub fn neglog_equal_endpoint_energy(x: f64, horizon: f64) -> f64 {
    let a = x * x;
    -2.0 / (a + (a * a + horizon * horizon).sqrt())
}

fn closed_form_state(p: &Potential, x: &[f64], y: &[f64], horizon: f64, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(p, x, y, horizon)?;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::OutOfRange { t, horizon });
    }
    match p.kind() {
        PotentialKind::QuadraticIsotropic => {
            let (alpha, beta) = quadratic_bridge_coefficients(x, y, horizon);
            let a = (-t).exp();
            let b = (-(horizon - t)).exp();
            let pos = alpha.iter().zip(&beta).map(|(al, be)| a * al + b * be).collect();
            let vel = alpha.iter().zip(&beta).map(|(al, be)| -a * al + b * be).collect();
            Ok((pos, vel))
        }
        PotentialKind::NegLog => {
            if x != y {
                return Err(Error::UnsupportedEndpoints);
            }
            // Components decouple: each is a one-dimensional bridge from x_i to x_i.
            let mut pos = Vec::with_capacity(x.len());
            let mut vel = Vec::with_capacity(x.len());
            for xi in x {
                let e = neglog_equal_endpoint_energy(*xi, horizon);
                let root = (1.0 + e * xi * xi).sqrt();
                let xt = (xi * xi + t * t * e + 2.0 * t * root).sqrt();
                pos.push(xt);
                vel.push((t * e + root) / xt);
            }
            Ok((pos, vel))
        }
        other => Err(Error::UnsupportedKind(other.name().into())),
    }
}

/// Closed-form `X_t^T` for the isotropic quadratic (any endpoints) and for
/// NegLog with equal endpoints.
pub fn closed_form_bridge(p: &Potential, x: &[f64], y: &[f64], horizon: f64, t: f64) -> Result<Vec<f64>> {
    closed_form_state(p, x, y, horizon, t).map(|(pos, _)| pos)
}

/// Closed-form velocity `dX_t^T/dt`.
pub fn closed_form_velocity(p: &Potential, x: &[f64], y: &[f64], horizon: f64, t: f64) -> Result<Vec<f64>> {
    closed_form_state(p, x, y, horizon, t).map(|(_, vel)| vel)
}

/// The closed-form bridge sampled on `grid_points` uniform nodes.
pub fn closed_form_bridge_solution(
    p: &Potential,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    grid_points: usize,
) -> Result<BridgeSolution> {
    if grid_points < 2 {
        return Err(Error::InvalidArgument("closed-form grid needs at least 2 nodes".into()));
    }
    let h = horizon / (grid_points - 1) as f64;
    let mut times = Vec::with_capacity(grid_points);
    let mut states = Vec::with_capacity(grid_points);
    let mut velocities = Vec::with_capacity(grid_points);
    for i in 0..grid_points {
        let t = if i == grid_points - 1 { horizon } else { i as f64 * h };
        let (pos, vel) = closed_form_state(p, x, y, horizon, t)?;
        times.push(t);
        states.push(pos);
        velocities.push(vel);
    }
    let trajectory = Trajectory::new(times, states, velocities)?;
    BridgeSolution::assemble(p, trajectory, SolverKind::ClosedForm, 0.0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sup_error(sol: &BridgeSolution, p: &Potential, x: &[f64], y: &[f64], horizon: f64) -> f64 {
        let tr = &sol.trajectory;
        tr.times
            .iter()
            .zip(&tr.states)
            .map(|(t, s)| sup_norm(&sub(s, &closed_form_bridge(p, x, y, horizon, *t).unwrap())))
            .fold(0.0, f64::max)
    }

    #[test]
    fn stationary_bridge_at_minimizer() {
        let p = Potential::quadratic(1);
        let sol = solve_bridge_shooting(&p, &[0.0], &[0.0], 3.0, &SolverOptions::default()).unwrap();
        assert!(sol.trajectory.states.iter().all(|s| s[0].abs() < 1e-15));
        assert_abs_diff_eq!(sol.cost, 0.0);
        assert_abs_diff_eq!(sol.energy_mean, 0.0);
    }

    #[test]
    fn quadratic_shooting_matches_closed_form() {
        let p = Potential::quadratic(1);
        let sol = solve_bridge_shooting(&p, &[2.0], &[1.0], 1.0, &SolverOptions::default()).unwrap();
        assert!(sup_error(&sol, &p, &[2.0], &[1.0], 1.0) < 1e-7);
        assert_eq!(sol.trajectory.first(), &[2.0]);
        assert_eq!(sol.trajectory.last(), &[1.0]);
        assert!(sol.is_conserved());
    }

    #[test]
    fn neglog_equal_endpoints_energy() {
        let p = Potential::neg_log(1);
        let sol = solve_bridge_shooting(&p, &[1.0], &[1.0], 2.0, &SolverOptions::default()).unwrap();
        let expected = (1.0 - 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(sol.energy_mean, expected, epsilon = 1e-6);
        assert_abs_diff_eq!(neglog_equal_endpoint_energy(1.0, 2.0), expected, epsilon = 1e-15);
        assert!(sup_error(&sol, &p, &[1.0], &[1.0], 2.0) < 1e-7);
    }

    #[test]
    fn action_agrees_with_shooting() {
        let p = Potential::quadratic(1);
        let opts = SolverOptions::default();
        let shot = solve_bridge_shooting(&p, &[2.0], &[1.0], 1.0, &opts).unwrap();
        let act = solve_bridge_action(&p, &[2.0], &[1.0], 1.0, 201, &opts).unwrap();
        assert!(((act.cost - shot.cost) / shot.cost).abs() < 1e-4);
        assert_eq!(act.solver, SolverKind::ActionMin);
        assert!(act.is_conserved());
    }

    #[test]
    fn action_at_minimizer_is_free() {
        let p = Potential::quadratic(2);
        let act = solve_bridge_action(&p, &[0.0, 0.0], &[0.0, 0.0], 4.0, 201, &SolverOptions::default()).unwrap();
        assert!(act.cost <= 1e-8);
    }

    #[test]
    fn neglog_action_agrees_with_shooting() {
        let p = Potential::neg_log(1);
        let opts = SolverOptions::default();
        let shot = solve_bridge_shooting(&p, &[1.0], &[1.0], 10.0, &opts).unwrap();
        let act = solve_bridge_action(&p, &[1.0], &[1.0], 10.0, 1001, &opts).unwrap();
        assert!(((act.cost - shot.cost) / shot.cost).abs() < 0.02);
    }

    #[test]
    fn closed_form_values() {
        let q = Potential::quadratic(1);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(closed_form_bridge(&q, &[0.0], &[0.0], 1.0, t).unwrap(), vec![0.0]);
        }
        let mid = closed_form_bridge(&q, &[1.0], &[1.0], 2.0, 1.0).unwrap()[0];
        let alpha = (1.0 - (-2f64).exp()) / (1.0 - (-4f64).exp());
        assert_abs_diff_eq!(mid, 2.0 * (-1f64).exp() * alpha, epsilon = 1e-15);
        assert_abs_diff_eq!(mid, 0.648054, epsilon = 1e-6);

        let l = Potential::neg_log(1);
        let mid = closed_form_bridge(&l, &[1.0], &[1.0], 2.0, 1.0).unwrap()[0];
        // The midpoint is the turning point: |F'(X)|² = −E there.
        assert_abs_diff_eq!(mid, 1.0 / (-neglog_equal_endpoint_energy(1.0, 2.0)).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(mid, 1.272020, epsilon = 1e-6);
        assert_eq!(closed_form_bridge(&l, &[1.0], &[2.0], 2.0, 1.0), Err(Error::UnsupportedEndpoints));
        let m = Potential::quadratic_matrix(&[vec![2.0]]).unwrap();
        assert!(matches!(closed_form_bridge(&m, &[1.0], &[1.0], 1.0, 0.5), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn residual_diagnostics() {
        let q = Potential::quadratic(1);
        let exact = closed_form_bridge_solution(&q, &[2.0], &[1.0], 1.0, 1001).unwrap();
        assert!(exact.newton_residual <= 1e-5);
        let still = closed_form_bridge_solution(&q, &[0.0], &[0.0], 1.0, 11).unwrap();
        assert!(still.newton_residual <= 1e-12);
        let times: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let states = times.iter().map(|t| vec![2.0 - t]).collect();
        let line = Trajectory::new(times, states, vec![vec![-1.0]; 11]).unwrap();
        assert!(newton_residual(&line, &q).unwrap() > 0.1);
        let bent = Trajectory::new(vec![0.0, 0.1, 0.3, 0.4, 0.5], vec![vec![0.0]; 5], vec![vec![0.0]; 5]).unwrap();
        assert_eq!(newton_residual(&bent, &q), Err(Error::NonUniformGrid));
    }

    #[test]
    fn reversal_preserves_cost() {
        let p = Potential::neg_log(2);
        let opts = SolverOptions::default();
        let fwd = solve_bridge_shooting(&p, &[1.0, 2.0], &[3.0, 0.5], 3.0, &opts).unwrap();
        let bwd = solve_bridge_shooting(&p, &[3.0, 0.5], &[1.0, 2.0], 3.0, &opts).unwrap();
        assert!(((fwd.cost - bwd.cost) / fwd.cost).abs() < 1e-6);
        assert!(fwd.is_conserved());
    }
}
