//! The long-time inequality catalogue B1..B12 evaluated on solved bridges,
//! and least-squares rate fits.
//!
//! | id  | needs | inequality |
//! |-----|-------|------------|
//! | B1  | n | `−E_T ≤ 2n/T` and `C_T ≤ C_1 + 2n log T` |
//! | B2  | n | `|φ_t|² ≤ (2F(y) − 2F(x) + C_1 + 2n log T) / (T − t)` |
//! | B3  | n | `|F'(X_{θT})|² ≤ n / (2Tθ(1 − θ))` |
//! | B4  | ρ | `|φ_t|² ≤ 2ρ (e^{2ρ(T−t)} − 1)^{−1} (C_T + 2F(y) − 2F(x))` |
//! | B5  | ρ | `|E_T| ≤ 2ρ (e^{ρT} − 1)^{−1} sqrt(C_T² − 4(F(x) − F(y))²)` |
//! | B6  | ρ | `w(t) ≤ [sinh(2ρ(T−t)) w(0) + sinh(2ρt) w(T)] / sinh(2ρT)`, `w = F(X_t) − F(x*) + E_T/(4ρ)` |
//! | B7  | ρ | `|X_t − S_t(x)| ≤ t e^{−ρT} sqrt(2ρ (e^{−2ρt} − e^{−2ρT})^{−1} (C_T + 2F(y) − 2F(x)))` |
//! | B8  | n | `|X_t − S_t(x)| ≤ 2 sqrt(2(F(y) − F(x)) + C_1 + 2n log T) (√T − √(T − t))` |
//! | B9  | ρ | `C_T ≤ inf_t {2 coth(ρt)(F(x) − F(x*)) + 2 coth(ρ(T−t))(F(y) − F(x*))}` |
//! | B10 | ρ | `2ρ (F(X_t) − F(x*)) ≤ |F'(X_t)|²` |
//! | B11 | n | `F(x) − F(S_T(x)) ≤ (n/2) log(1 + (2T/n)|F'(x)|²)` |
//! | B12 | n | `|F'(S_t(x))|² ≤ n / (2t)` |
//!
//! `ρ` rows need a positive lower Hessian bound and a minimizer, `n` rows a
//! finite dimension parameter; inapplicable rows are skipped. Every bound is
//! evaluated on the bridge and on its time reversal (the bridge from `y` to
//! `x`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bridge::{solve_bridge, BridgeSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::flow::{gradient_flow, Trajectory};
use crate::linalg::{add, norm, norm_sq, sub};
use crate::potential::Potential;

/// Relative slack of the pass verdict: `margin ≥ −BOUND_TOL · (1 + |rhs|)`.
pub const BOUND_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B9,
    B10,
    B11,
    B12,
}

impl BoundId {
    pub const ALL: [BoundId; 12] = [
        BoundId::B1,
        BoundId::B2,
        BoundId::B3,
        BoundId::B4,
        BoundId::B5,
        BoundId::B6,
        BoundId::B7,
        BoundId::B8,
        BoundId::B9,
        BoundId::B10,
        BoundId::B11,
        BoundId::B12,
    ];

    /// Whether the bound needs `ρ > 0` (otherwise it needs a finite `n`).
    pub fn needs_rho(self) -> bool {
        matches!(self, BoundId::B4 | BoundId::B5 | BoundId::B6 | BoundId::B7 | BoundId::B9 | BoundId::B10)
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Forward,
    Reversed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub potential: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub t: Option<f64>,
    pub theta: Option<f64>,
    pub orientation: Orientation,
    pub tol_boundary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_id: BoundId,
    /// Distinguishes the two inequalities of B1 (`energy`, `cost`).
    pub part: Option<String>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub context: BoundContext,
}

/// Inputs of [`verify_bounds`].
#[derive(Clone, Debug)]
pub struct BoundCase<'a> {
    pub potential: &'a Potential,
    pub solution: &'a BridgeSolution,
    /// `C_1(x, y)`; solved on demand when absent.
    pub cost_unit: Option<f64>,
    /// Evaluation times in `(0, T)`, snapped to the nearest grid node.
    pub times: Vec<f64>,
    /// Fractions `θ ∈ (0, 1)` for B3.
    pub thetas: Vec<f64>,
    pub opts: SolverOptions,
}

impl<'a> BoundCase<'a> {
    pub fn new(potential: &'a Potential, solution: &'a BridgeSolution) -> Self {
        BoundCase {
            potential,
            solution,
            cost_unit: None,
            times: Vec::new(),
            thetas: Vec::new(),
            opts: SolverOptions::default(),
        }
    }
}

struct Oriented<'a> {
    p: &'a Potential,
    traj: Trajectory,
    flow: Option<Trajectory>,
    x: Vec<f64>,
    y: Vec<f64>,
    horizon: f64,
    cost: f64,
    energy: f64,
    cost_unit: Option<f64>,
    orientation: Orientation,
    tol_boundary: f64,
}

impl Oriented<'_> {
    fn context(&self, t: Option<f64>, theta: Option<f64>) -> BoundContext {
        BoundContext {
            potential: self.p.kind().name().to_string(),
            x: self.x.clone(),
            y: self.y.clone(),
            horizon: self.horizon,
            t,
            theta,
            orientation: self.orientation,
            tol_boundary: self.tol_boundary,
        }
    }

    fn report(&self, id: BoundId, part: Option<&str>, lhs: f64, rhs: f64, t: Option<f64>, theta: Option<f64>) -> BoundReport {
        let margin = rhs - lhs;
        BoundReport {
            bound_id: id,
            part: part.map(str::to_string),
            lhs,
            rhs,
            margin,
            pass: margin >= -BOUND_TOL * (1.0 + rhs.abs()),
            context: self.context(t, theta),
        }
    }

    fn f(&self, z: &[f64]) -> Result<f64> {
        self.p.value(z)
    }

    fn phi_sq(&self, k: usize) -> Result<f64> {
        Ok(norm_sq(&add(&self.p.gradient(&self.traj.states[k])?, &self.traj.velocities[k])))
    }

    fn cost_unit(&self) -> Result<f64> {
        self.cost_unit.ok_or_else(|| Error::MissingPrerequisite("C_1(x, y)".into()))
    }

    fn flow(&self) -> &Trajectory {
        self.flow.as_ref().expect("flow computed for every orientation")
    }
}

/// `(1 + e^{−2a}) / (1 − e^{−2a}) = coth(a)`.
fn coth(a: f64) -> f64 {
    1.0 / a.tanh()
}

/// `sinh(a) / sinh(b)` for `0 ≤ a ≤ b`, without overflow.
fn sinh_ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    (a - b).exp() * (-(-2.0 * a).exp_m1()) / (-(-2.0 * b).exp_m1())
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    fa.min(fb)
}

/// `inf_{t ∈ (0, T)}` of the two-term cost bound: a 400-point scan followed by
/// golden-section refinement around the best node.
fn two_term_cost_bound(rho: f64, horizon: f64, fx: f64, fy: f64) -> f64 {
    let term = |w: f64, s: f64| if w == 0.0 { 0.0 } else { 2.0 * coth(rho * s) * w };
    let g = |t: f64| term(fx, t) + term(fy, horizon - t);
    let n = 400;
    let grid: Vec<f64> = (1..n).map(|i| horizon * i as f64 / n as f64).collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, t)| (i, g(*t)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let lo = if best == 0 { horizon * 1e-12 } else { grid[best - 1] };
    let hi = if best + 1 == grid.len() { horizon * (1.0 - 1e-12) } else { grid[best + 1] };
    golden_min(g, lo, hi).min(g(grid[best]))
}

/// Evaluates every applicable bound of the catalogue on `case`, for the bridge
/// and its time reversal.
pub fn verify_bounds(case: &BoundCase<'_>) -> Result<Vec<BoundReport>> {
    let p = case.potential;
    let sol = case.solution;
    let traj = &sol.trajectory;
    let horizon = traj.horizon();
    let x = traj.first().to_vec();
    let y = traj.last().to_vec();
    let n_dim = p.n_dim();
    let rho = p.positive_rho().filter(|_| p.minimizer().is_some());
    let needs_unit = n_dim.is_some();
    let cost_unit = match (case.cost_unit, needs_unit) {
        (Some(c), _) => Some(c),
        (None, true) => Some(
            solve_bridge(p, &x, &y, 1.0, &case.opts)
                .map_err(|e| Error::MissingPrerequisite(format!("C_1(x, y): {e}")))?
                .cost,
        ),
        (None, false) => None,
    };

    let steps = traj.len() - 1;
    let mut reports = Vec::new();
    for orientation in [Orientation::Forward, Orientation::Reversed] {
        let (t_traj, start, end) = match orientation {
            Orientation::Forward => (traj.clone(), x.clone(), y.clone()),
            Orientation::Reversed => (traj.reversed(), y.clone(), x.clone()),
        };
        let flow = gradient_flow(p, &start, horizon, steps)?;
        let o = Oriented {
            p,
            traj: t_traj,
            flow: Some(flow),
            x: start,
            y: end,
            horizon,
            cost: sol.cost,
            energy: sol.energy_mean,
            cost_unit,
            orientation,
            tol_boundary: case.opts.tol_boundary,
        };
        if let Some(n) = n_dim {
            n_bounds(&o, n, case, &mut reports)?;
        }
        if let Some(rho) = rho {
            rho_bounds(&o, rho, case, &mut reports)?;
        }
    }
    reports.sort_by_key(|r| r.bound_id);
    Ok(reports)
}

fn n_bounds(o: &Oriented<'_>, n: f64, case: &BoundCase<'_>, out: &mut Vec<BoundReport>) -> Result<()> {
    let horizon = o.horizon;
    let c1 = o.cost_unit()?;
    let fx = o.f(&o.x)?;
    let fy = o.f(&o.y)?;
    let log_budget = c1 + 2.0 * n * horizon.ln();

    out.push(o.report(BoundId::B1, Some("energy"), -o.energy, 2.0 * n / horizon, None, None));
    out.push(o.report(BoundId::B1, Some("cost"), o.cost, log_budget, None, None));

    for &t in &case.times {
        let k = o.traj.nearest_index(t);
        let tk = o.traj.times[k];
        if tk <= 0.0 || tk >= horizon {
            continue;
        }
        out.push(o.report(BoundId::B2, None, o.phi_sq(k)?, (2.0 * fy - 2.0 * fx + log_budget) / (horizon - tk), Some(tk), None));

        let gap = norm(&sub(&o.traj.states[k], &o.flow().states[k]));
        let budget = 2.0 * (fy - fx) + log_budget;
        let rhs = 2.0 * budget.max(0.0).sqrt() * (horizon.sqrt() - (horizon - tk).sqrt());
        out.push(o.report(BoundId::B8, None, gap, rhs, Some(tk), None));

        let grad = o.p.gradient(&o.flow().states[k])?;
        out.push(o.report(BoundId::B12, None, norm_sq(&grad), n / (2.0 * tk), Some(tk), None));
    }

    for &theta in &case.thetas {
        let k = o.traj.nearest_index(theta * horizon);
        let tk = o.traj.times[k];
        if tk <= 0.0 || tk >= horizon {
            continue;
        }
        let th = tk / horizon;
        let lhs = norm_sq(&o.p.gradient(&o.traj.states[k])?);
        out.push(o.report(BoundId::B3, None, lhs, n / (2.0 * horizon * th * (1.0 - th)), Some(tk), Some(th)));
    }

    let flow = o.flow();
    let dissipated = fx - o.f(flow.last())?;
    let g0 = norm_sq(&o.p.gradient(&o.x)?);
    let rhs = 0.5 * n * (2.0 * horizon / n * g0).ln_1p();
    out.push(o.report(BoundId::B11, None, dissipated, rhs, Some(horizon), None));
    Ok(())
}

fn rho_bounds(o: &Oriented<'_>, rho: f64, case: &BoundCase<'_>, out: &mut Vec<BoundReport>) -> Result<()> {
    let horizon = o.horizon;
    let star = o.p.minimizer().ok_or_else(|| Error::MissingPrerequisite("minimizer".into()))?;
    let f_star = o.f(star)?;
    let fx = o.f(&o.x)?;
    let fy = o.f(&o.y)?;
    let dissipation_budget = o.cost + 2.0 * fy - 2.0 * fx;

    let root = (o.cost * o.cost - 4.0 * (fx - fy) * (fx - fy)).max(0.0).sqrt();
    out.push(o.report(BoundId::B5, None, o.energy.abs(), 2.0 * rho / (rho * horizon).exp_m1() * root, None, None));

    let two_term = two_term_cost_bound(rho, horizon, fx - f_star, fy - f_star);
    out.push(o.report(BoundId::B9, None, o.cost, two_term, None, None));

    let shift = o.energy / (4.0 * rho);
    for &t in &case.times {
        let k = o.traj.nearest_index(t);
        let tk = o.traj.times[k];
        if tk <= 0.0 || tk >= horizon {
            continue;
        }
        let state = &o.traj.states[k];
        let f_t = o.f(state)?;

        let rhs = 2.0 * rho / (2.0 * rho * (horizon - tk)).exp_m1() * dissipation_budget;
        out.push(o.report(BoundId::B4, None, o.phi_sq(k)?, rhs, Some(tk), None));

        let w0 = fx - f_star + shift;
        let w1 = fy - f_star + shift;
        let two_rho_t = 2.0 * rho * horizon;
        let rhs = sinh_ratio(2.0 * rho * (horizon - tk), two_rho_t) * w0
            + sinh_ratio(2.0 * rho * tk, two_rho_t) * w1
            + f_star
            - shift;
        out.push(o.report(BoundId::B6, None, f_t, rhs, Some(tk), None));

        let gap = norm(&sub(state, &o.flow().states[k]));
        let denom = (-2.0 * rho * tk).exp() - (-2.0 * rho * horizon).exp();
        let rhs = tk * (-rho * horizon).exp() * (2.0 * rho / denom * dissipation_budget.max(0.0)).sqrt();
        out.push(o.report(BoundId::B7, None, gap, rhs, Some(tk), None));

        let grad = o.p.gradient(state)?;
        out.push(o.report(BoundId::B10, None, 2.0 * rho * (f_t - f_star), norm_sq(&grad), Some(tk), None));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateModel {
    /// `value ≈ c · T^p`.
    PowerLaw,
    /// `value ≈ c · e^{pT}`.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// RMS of the fit residuals in log space.
    pub residual: f64,
    pub model: RateModel,
}

/// Least-squares fit of `log(value)` against `log T` (power law) or `T`
/// (exponential).
pub fn fit_rate(series: &[(f64, f64)], model: RateModel) -> Result<RateFit> {
    if series.len() < 3 {
        return Err(Error::InvalidArgument(format!("rate fit needs at least 3 points, got {}", series.len())));
    }
    if let Some(i) = series.iter().position(|(_, v)| !(*v > 0.0)) {
        return Err(Error::DegenerateSeries(i));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidArgument("abscissae must be increasing".into()));
    }
    if model == RateModel::PowerLaw && series[0].0 <= 0.0 {
        return Err(Error::InvalidArgument("power-law fit needs positive abscissae".into()));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .map(|(t, v)| {
            let u = match model {
                RateModel::PowerLaw => t.ln(),
                RateModel::Exponential => *t,
            };
            (u, v.ln())
        })
        .collect();
    let m = pts.len() as f64;
    let mu = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let suu: f64 = pts.iter().map(|p| (p.0 - mu) * (p.0 - mu)).sum();
    let suv: f64 = pts.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    let exponent = suv / suu;
    let intercept = mv - exponent * mu;
    let residual = (pts.iter().map(|p| (p.1 - intercept - exponent * p.0).powi(2)).sum::<f64>() / m).sqrt();
    Ok(RateFit { exponent, prefactor: intercept.exp(), residual, model })
}
