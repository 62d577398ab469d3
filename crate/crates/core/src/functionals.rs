//! Scalar functionals on trajectories: action cost, conserved energy, defect
//! field, the envelope identity and concavity profiles.

use serde::{Deserialize, Serialize};

use crate::bridge::{solve_bridge, SolverOptions};
use crate::error::{Error, Result};
use crate::flow::{default_steps, Trajectory, UNIFORM_GRID_TOL};
use crate::linalg::{add, dot, norm, norm_sq};
use crate::potential::Potential;

/// Relative tolerance of the concavity verdicts: `max second difference ≤ tol · max|Λ|`.
pub const CONCAVITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyStats {
    pub mean: f64,
    pub maxdev: f64,
    /// `(t, E(t))` per node.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityProfile {
    pub times: Vec<f64>,
    /// `Λ(t) = exp(−a Φ(t))`.
    pub values: Vec<f64>,
    /// Largest raw central second difference `Λ_{i+1} − 2Λ_i + Λ_{i−1}`.
    pub max_second_difference: f64,
    /// Node time where the largest second difference occurs.
    pub location: f64,
}

impl ConcavityProfile {
    /// `max|Λ|`, the scale of the concavity tolerance.
    pub fn scale(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn is_concave(&self) -> bool {
        self.max_second_difference <= CONCAVITY_TOL * self.scale()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// Central difference `(C_{T+h} − C_{T−h}) / 2h`.
    pub d_cost_dt: f64,
    /// `−E_T`.
    pub neg_energy: f64,
    pub gap: f64,
}

/// Trapezoidal quadrature of `|X'|² + |F'(X)|²` with the stored velocities,
/// plus the Euler-Maclaurin end correction `−h²/12 (f'(T) − f'(0))` with
/// second-order one-sided estimates of `f'`.
pub fn action_cost(traj: &Trajectory, p: &Potential) -> Result<f64> {
    if traj.len() < 3 {
        return Err(Error::InvalidArgument("action cost needs at least 3 nodes".into()));
    }
    let h = traj.uniform_step()?;
    let density = traj
        .states
        .iter()
        .zip(&traj.velocities)
        .map(|(s, v)| Ok(norm_sq(v) + norm_sq(&p.gradient(s)?)))
        .collect::<Result<Vec<f64>>>()?;
    let n = density.len();
    let trapezoid = density.iter().sum::<f64>() - 0.5 * (density[0] + density[n - 1]);
    let slope_start = (-3.0 * density[0] + 4.0 * density[1] - density[2]) / (2.0 * h);
    let slope_end = (3.0 * density[n - 1] - 4.0 * density[n - 2] + density[n - 3]) / (2.0 * h);
    Ok(h * trapezoid - h * h / 12.0 * (slope_end - slope_start))
}

/// `E(t) = |X'(t)|² − |F'(X(t))|²` per node, its mean and largest deviation.
pub fn conserved_energy(traj: &Trajectory, p: &Potential) -> Result<EnergyStats> {
    let mut samples = Vec::with_capacity(traj.len());
    for ((t, s), v) in traj.times.iter().zip(&traj.states).zip(&traj.velocities) {
        let g = p.gradient(s)?;
        samples.push((*t, norm_sq(v) - norm_sq(&g)));
    }
    let mean = samples.iter().map(|(_, e)| e).sum::<f64>() / samples.len() as f64;
    let maxdev = samples.iter().fold(0.0, |m: f64, (_, e)| m.max((e - mean).abs()));
    Ok(EnergyStats { mean, maxdev, samples })
}

/// `φ_t = F'(X_t) + X'_t` at the grid node `t`.
pub fn defect_field(traj: &Trajectory, p: &Potential, t: f64) -> Result<Vec<f64>> {
    let k = traj.node_index(t)?;
    Ok(add(&p.gradient(&traj.states[k])?, &traj.velocities[k]))
}

/// `|φ_t|` at every node.
pub fn defect_norms(traj: &Trajectory, p: &Potential) -> Result<Vec<f64>> {
    traj.states
        .iter()
        .zip(&traj.velocities)
        .map(|(s, v)| Ok(norm(&add(&p.gradient(s)?, v))))
        .collect()
}

/// Compares `dC_T/dT` (central difference of two bridge solves) with `−E_T`.
/// All three solves share one RK4 step count so the quadrature error is
/// smooth in `T`.
pub fn envelope_check(
    p: &Potential,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    h: f64,
    opts: &SolverOptions,
) -> Result<EnvelopeCheck> {
    if !(h > 0.0) || !(horizon - h > 0.0) {
        return Err(Error::InvalidArgument(format!("need 0 < h < T, got h = {h}, T = {horizon}")));
    }
    let mut shared = opts.clone();
    let mut steps = shared.steps.unwrap_or_else(|| default_steps(horizon + h));
    steps += steps % 2;
    shared.steps = Some(steps);
    shared.grid_points = shared.grid_points.max(steps + 1);
    let upper = solve_bridge(p, x, y, horizon + h, &shared)?;
    let lower = solve_bridge(p, x, y, horizon - h, &shared)?;
    let centre = solve_bridge(p, x, y, horizon, &shared)?;
    let d_cost_dt = (upper.cost - lower.cost) / (2.0 * h);
    let neg_energy = -centre.energy_mean;
    Ok(EnvelopeCheck { d_cost_dt, neg_energy, gap: (d_cost_dt - neg_energy).abs() })
}

/// `Λ = exp(−aΦ)` on a uniform grid and its largest central second difference.
pub fn concavity_profile(values: &[(f64, f64)], a: f64) -> Result<ConcavityProfile> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument("concavity profile needs at least 3 samples".into()));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("exponent must be positive, got {a}")));
    }
    let times: Vec<f64> = values.iter().map(|(t, _)| *t).collect();
    let span = times[times.len() - 1] - times[0];
    let h = span / (times.len() - 1) as f64;
    if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > UNIFORM_GRID_TOL * span.max(h)) {
        return Err(Error::NonUniformGrid);
    }
    let lambda: Vec<f64> = values.iter().map(|(_, phi)| (-a * phi).exp()).collect();
    let mut max_second_difference = f64::NEG_INFINITY;
    let mut location = times[1];
    for i in 1..lambda.len() - 1 {
        let d2 = lambda[i + 1] - 2.0 * lambda[i] + lambda[i - 1];
        if d2 > max_second_difference {
            max_second_difference = d2;
            location = times[i];
        }
    }
    Ok(ConcavityProfile { times, values: lambda, max_second_difference, location })
}

/// `(t, F(S_t))` along a gradient flow; concave after `exp(−(2/n)·)`.
pub fn costa_series(flow: &Trajectory, p: &Potential) -> Result<Vec<(f64, f64)>> {
    flow.times.iter().zip(&flow.states).map(|(t, s)| Ok((*t, p.value(s)?))).collect()
}

/// `(t, F(X_t))` along a bridge; concave after `exp(−(1/n)·)`.
pub fn ripani_series(bridge: &Trajectory, p: &Potential) -> Result<Vec<(f64, f64)>> {
    costa_series(bridge, p)
}

/// `(t, F(X_t) + ∫_0^t |F'(X_s)|² ds)` along a bridge; concave after
/// `exp(−(1/n)·)`. The running integral is the trapezoid rule with the
/// Euler-Maclaurin end correction, using `d/dt |F'(X)|² = 2⟨F''(X)F'(X), X'⟩`.
pub fn improved_ripani_series(bridge: &Trajectory, p: &Potential) -> Result<Vec<(f64, f64)>> {
    let n = bridge.len();
    let mut g = Vec::with_capacity(n);
    let mut dg = Vec::with_capacity(n);
    for (s, v) in bridge.states.iter().zip(&bridge.velocities) {
        let grad = p.gradient(s)?;
        g.push(norm_sq(&grad));
        dg.push(2.0 * dot(&p.hessian_apply(s, &grad)?, v));
    }
    let mut running = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let h = bridge.times[i] - bridge.times[i - 1];
            running += 0.5 * h * (g[i] + g[i - 1]) - h * h / 12.0 * (dg[i] - dg[i - 1]);
        }
        out.push((bridge.times[i], p.value(&bridge.states[i])? + running));
    }
    Ok(out)
}

/// `(t, ⟨F'(X_t), X'_t⟩ + |F'(X_t)|²)`, the derivative of the improved
/// Ripani functional.
pub fn improved_ripani_rate(bridge: &Trajectory, p: &Potential) -> Result<Vec<(f64, f64)>> {
    bridge
        .times
        .iter()
        .zip(bridge.states.iter().zip(&bridge.velocities))
        .map(|(t, (s, v))| {
            let grad = p.gradient(s)?;
            Ok((*t, dot(&grad, v) + norm_sq(&grad)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{closed_form_bridge_solution, quadratic_bridge_coefficients, solve_bridge_shooting};
    use crate::flow::gradient_flow;
    use approx::assert_abs_diff_eq;

    fn constant(x: &[f64], horizon: f64, nodes: usize) -> Trajectory {
        let times = (0..nodes).map(|i| horizon * i as f64 / (nodes - 1) as f64).collect();
        Trajectory::new(times, vec![x.to_vec(); nodes], vec![vec![0.0; x.len()]; nodes]).unwrap()
    }

    #[test]
    fn stationary_path_is_free() {
        let p = Potential::quadratic(2);
        let tr = constant(&[0.0, 0.0], 5.0, 11);
        assert_abs_diff_eq!(action_cost(&tr, &p).unwrap(), 0.0, epsilon = 1e-12);
        let e = conserved_energy(&tr, &p).unwrap();
        assert_eq!((e.mean, e.maxdev), (0.0, 0.0));
    }

    #[test]
    fn quadratic_cost_and_energy() {
        let p = Potential::quadratic(1);
        let sol = solve_bridge_shooting(&p, &[2.0], &[1.0], 1.0, &SolverOptions::default()).unwrap();
        let (a, b) = quadratic_bridge_coefficients(&[2.0], &[1.0], 1.0);
        let expected = (1.0 - (-2f64).exp()) * (a[0] * a[0] + b[0] * b[0]);
        assert_abs_diff_eq!(action_cost(&sol.trajectory, &p).unwrap(), expected, epsilon = 1e-6);
        assert_eq!(action_cost(&sol.trajectory, &p).unwrap(), sol.cost);

        let sol = solve_bridge_shooting(&p, &[1.0], &[1.0], 2.0, &SolverOptions::default()).unwrap();
        let (a, b) = quadratic_bridge_coefficients(&[1.0], &[1.0], 2.0);
        let stats = conserved_energy(&sol.trajectory, &p).unwrap();
        assert_abs_diff_eq!(stats.mean, -4.0 * (-2f64).exp() * a[0] * b[0], epsilon = 1e-7);
    }

    #[test]
    fn gradient_flow_has_zero_energy_and_defect() {
        let p = Potential::neg_log(1);
        let flow = gradient_flow(&p, &[1.0], 1.0, 100).unwrap();
        let e = conserved_energy(&flow, &p).unwrap();
        assert!(e.maxdev < 1e-14 && e.mean.abs() < 1e-14);
        assert!(defect_field(&flow, &p, 0.5).unwrap()[0].abs() < 1e-14);
        assert!(matches!(defect_field(&flow, &p, 0.505), Err(Error::OffGrid(_))));
    }

    #[test]
    fn quadratic_defect_field() {
        let p = Potential::quadratic(1);
        let sol = closed_form_bridge_solution(&p, &[2.0], &[1.0], 1.0, 101).unwrap();
        let (_, b) = quadratic_bridge_coefficients(&[2.0], &[1.0], 1.0);
        for t in [0.0, 0.5, 1.0] {
            let phi = defect_field(&sol.trajectory, &p, t).unwrap()[0];
            assert_abs_diff_eq!(phi, 2.0 * (-(1.0 - t)).exp() * b[0], epsilon = 1e-12);
        }
        let norms = defect_norms(&sol.trajectory, &p).unwrap();
        assert!(norms.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn envelope_identity() {
        let opts = SolverOptions::default();
        let q = envelope_check(&Potential::quadratic(1), &[2.0], &[1.0], 2.0, 1e-3, &opts).unwrap();
        assert!(q.gap <= 1e-4, "{q:?}");
        let l = envelope_check(&Potential::neg_log(1), &[1.0], &[1.0], 5.0, 1e-3, &opts).unwrap();
        assert!(l.gap <= 1e-4, "{l:?}");
        let z = envelope_check(&Potential::quadratic(1), &[0.0], &[0.0], 2.0, 1e-3, &opts).unwrap();
        assert!(z.gap <= 1e-10 && z.d_cost_dt == 0.0);
    }

    #[test]
    fn convex_control_is_flagged() {
        let series: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 * 0.01, i as f64 * 0.01)).collect();
        let prof = concavity_profile(&series, 1.0).unwrap();
        assert!(prof.max_second_difference > 0.0);
        assert!(!prof.is_concave());
    }

    #[test]
    fn costa_profile_on_neglog_flow() {
        let p = Potential::neg_log(1);
        let flow = gradient_flow(&p, &[1.0], 3.0, 300).unwrap();
        let prof = concavity_profile(&costa_series(&flow, &p).unwrap(), 2.0).unwrap();
        assert!(prof.is_concave(), "{}", prof.max_second_difference);
    }

    #[test]
    fn improved_ripani_on_neglog_bridge() {
        let p = Potential::neg_log(1);
        let sol = solve_bridge_shooting(&p, &[1.0], &[2.0], 4.0, &SolverOptions::default()).unwrap();
        let prof = concavity_profile(&improved_ripani_series(&sol.trajectory, &p).unwrap(), 1.0).unwrap();
        assert!(prof.is_concave(), "{}", prof.max_second_difference);
        let horizon = 4.0;
        for (t, rate) in improved_ripani_rate(&sol.trajectory, &p).unwrap() {
            if t > 0.0 && t < horizon {
                assert!(rate >= -1.0 / t - 1e-8 && rate <= 1.0 / (horizon - t) + 1e-8);
            }
        }
        assert!(sol.energy_mean.abs() * horizon <= sol.cost + 1e-8);
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let series = [(0.0, 0.0), (0.1, 0.0), (0.3, 0.0)];
        assert_eq!(concavity_profile(&series, 1.0), Err(Error::NonUniformGrid));
    }
}
