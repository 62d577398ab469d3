//! Sampled paths and the gradient flow `S' = −F'(S)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::scale;
use crate::ode;
use crate::potential::{Potential, PotentialKind};

/// Relative spacing tolerance for a grid to count as uniform.
pub const UNIFORM_GRID_TOL: f64 = 1e-12;

/// A path in `R^d` sampled on a time grid, with velocities at every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, velocities: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs at least two nodes".into()));
        }
        if states.len() != times.len() || velocities.len() != times.len() {
            return Err(Error::InvalidArgument("times, states and velocities differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        let d = states[0].len();
        if states.iter().chain(&velocities).any(|s| s.len() != d) {
            return Err(Error::InvalidArgument("inconsistent state dimension".into()));
        }
        Ok(Trajectory { times, states, velocities })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.len() - 1] - self.times[0]
    }

    pub fn first(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.states[self.len() - 1]
    }

    /// Grid step if the grid is uniform.
    pub fn uniform_step(&self) -> Result<f64> {
        let h = self.horizon() / (self.len() - 1) as f64;
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= UNIFORM_GRID_TOL * h.max(f64::MIN_POSITIVE).max(self.horizon()));
        if uniform {
            Ok(h)
        } else {
            Err(Error::NonUniformGrid)
        }
    }

    /// Index of the grid node at time `t`.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let h = self.uniform_step()?;
        let k = ((t - self.times[0]) / h).round();
        if k < 0.0 || k as usize >= self.len() {
            return Err(Error::OffGrid(t));
        }
        let k = k as usize;
        if (self.times[k] - t).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::OffGrid(t));
        }
        Ok(k)
    }

    /// Index of the grid node closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        if let Ok(h) = self.uniform_step() {
            let k = ((t - self.times[0]) / h).round().max(0.0) as usize;
            return k.min(self.len() - 1);
        }
        let mut best = 0;
        for (i, ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    /// Time reversal `s ↦ X_{T−s}` on the same grid; velocities change sign.
    pub fn reversed(&self) -> Trajectory {
        let t0 = self.times[0];
        let t1 = self.times[self.len() - 1];
        Trajectory {
            times: self.times.iter().rev().map(|t| t0 + t1 - t).collect(),
            states: self.states.iter().rev().cloned().collect(),
            velocities: self.velocities.iter().rev().map(|v| scale(v, -1.0)).collect(),
        }
    }
}

/// Default number of RK4 intervals on `[0, T]`: `ceil(max(100, 100 T))`.
pub fn default_steps(horizon: f64) -> usize {
    (100.0 * horizon).max(100.0).ceil() as usize
}

/// RK4 gradient flow from `x0` over `[0, T]` on `steps` uniform intervals.
/// Velocities are `−F'(state)`.
pub fn gradient_flow(p: &Potential, x0: &[f64], horizon: f64, steps: usize) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if steps < 2 {
        return Err(Error::InvalidArgument("steps must be at least 2".into()));
    }
    p.value(x0)?;
    let h = horizon / steps as f64;
    let rhs = |y: &[f64]| p.gradient(y).map(|g| scale(&g, -1.0));
    let admissible = |y: &[f64]| p.contains(y);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut y = x0.to_vec();
    for k in 0..=steps {
        let t = if k == steps { horizon } else { k as f64 * h };
        times.push(t);
        velocities.push(rhs(&y)?);
        states.push(y.clone());
        if k < steps {
            y = ode::advance(&rhs, &admissible, &y, t, h)?;
        }
    }
    Trajectory::new(times, states, velocities)
}

/// Closed-form gradient flows: `e^{−t} x0` for the isotropic quadratic and
/// `sqrt(2t + x0²)` componentwise for NegLog.
pub fn closed_form_flow(p: &Potential, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("flow time must be nonnegative, got {t}")));
    }
    p.value(x0)?;
    match p.kind() {
        PotentialKind::QuadraticIsotropic => Ok(scale(x0, (-t).exp())),
        PotentialKind::NegLog => Ok(x0.iter().map(|x| (2.0 * t + x * x).sqrt()).collect()),
        other => Err(Error::UnsupportedKind(other.name().into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_flow_reaches_inverse_e() {
        let p = Potential::quadratic(1);
        let tr = gradient_flow(&p, &[1.0], 1.0, default_steps(1.0)).unwrap();
        assert_abs_diff_eq!(tr.last()[0], (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn neglog_flow_reaches_three() {
        let p = Potential::neg_log(1);
        let tr = gradient_flow(&p, &[1.0], 4.0, default_steps(4.0)).unwrap();
        assert_abs_diff_eq!(tr.last()[0], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn initial_condition_is_exact() {
        for p in [Potential::quadratic(2), Potential::neg_log(2)] {
            let tr = gradient_flow(&p, &[0.7, 1.3], 0.5, 2).unwrap();
            assert_eq!(tr.len(), 3);
            assert_eq!(tr.first(), &[0.7, 1.3]);
            assert_eq!(tr.times[0], 0.0);
        }
    }

    #[test]
    fn closed_forms() {
        let q = Potential::quadratic(2);
        let s = closed_form_flow(&q, &[2.0, 0.0], 2f64.ln()).unwrap();
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.0);
        let l = Potential::neg_log(1);
        assert_eq!(closed_form_flow(&l, &[1.0], 0.0).unwrap(), vec![1.0]);
        assert_abs_diff_eq!(closed_form_flow(&l, &[1.0], 4.0).unwrap()[0], 3.0, epsilon = 1e-15);
        let m = Potential::quadratic_matrix(&[vec![2.0]]).unwrap();
        assert!(matches!(closed_form_flow(&m, &[1.0], 1.0), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        let l = Potential::neg_log(1);
        assert!(matches!(gradient_flow(&l, &[-1.0], 1.0, 10), Err(Error::Domain { .. })));
        assert!(gradient_flow(&l, &[1.0], 1.0, 1).is_err());
        assert!(gradient_flow(&l, &[1.0], 0.0, 10).is_err());
    }

    #[test]
    fn reversal_round_trip() {
        let p = Potential::quadratic(1);
        let tr = gradient_flow(&p, &[1.0], 1.0, 10).unwrap();
        let rr = tr.reversed().reversed();
        for (a, b) in tr.times.iter().zip(&rr.times) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert_eq!(tr.states, rr.states);
        assert_eq!(tr.reversed().first(), tr.last());
    }

    #[test]
    fn node_lookup() {
        let p = Potential::quadratic(1);
        let tr = gradient_flow(&p, &[1.0], 2.0, 200).unwrap();
        assert_eq!(tr.node_index(0.5).unwrap(), 50);
        assert!(matches!(tr.node_index(0.505), Err(Error::OffGrid(_))));
        assert!(matches!(tr.node_index(3.0), Err(Error::OffGrid(_))));
        assert_eq!(tr.nearest_index(0.504), 50);
    }
}
