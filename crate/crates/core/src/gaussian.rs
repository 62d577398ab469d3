//! The Gaussian entropic interpolation of the heat semigroup on `R` between
//! `N(x0, 1)` and `N(x1, 1)`.
//!
//! Marginals are `N(x_t, σ_t)` with `σ_t` a variance:
//! `x_t = ((T − t) x0 + t x1) / T` and `σ_t = 1 + k t (T − t)`,
//! `k = 2 / (D_T² + T)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid Gaussian N({mean}, {variance})")));
        }
        Ok(Gaussian1D { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBridge {
    pub x0: f64,
    pub x1: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// `D_T²`.
    pub dt2: f64,
}

/// `D_T² = sqrt((T − 1)² + 2T) − (T − 1)`, evaluated as `1 + 1/(sqrt(1 + T²) + T)`.
pub fn fluct_param(horizon: f64) -> f64 {
    1.0 + 1.0 / ((1.0 + horizon * horizon).sqrt() + horizon)
}

impl GaussianBridge {
    pub fn new(x0: f64, x1: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if !x0.is_finite() || !x1.is_finite() {
            return Err(Error::InvalidArgument("endpoint means must be finite".into()));
        }
        Ok(GaussianBridge { x0, x1, horizon, dt2: fluct_param(horizon) })
    }

    /// `k = 2 / (D_T² + T)`.
    pub fn curvature(&self) -> f64 {
        2.0 / (self.dt2 + self.horizon)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::OutOfRange { t, horizon: self.horizon })
        }
    }

    pub fn mean(&self, t: f64) -> f64 {
        ((self.horizon - t) * self.x0 + t * self.x1) / self.horizon
    }

    pub fn variance(&self, t: f64) -> f64 {
        1.0 + self.curvature() * t * (self.horizon - t)
    }

    pub fn variance_rate(&self, t: f64) -> f64 {
        self.curvature() * (self.horizon - 2.0 * t)
    }

    /// Squared mean speed `((x1 − x0)/T)²`.
    fn drift_sq(&self) -> f64 {
        let v = (self.x1 - self.x0) / self.horizon;
        v * v
    }

    /// Integrand of the cost, `σ'²/(4σ) + ((x1 − x0)/T)² + 1/σ`.
    pub fn cost_density(&self, t: f64) -> f64 {
        let s = self.variance(t);
        let ds = self.variance_rate(t);
        ds * ds / (4.0 * s) + self.drift_sq() + 1.0 / s
    }

    /// Exact cost, using `σ'²/(4σ) = 1/σ − k` and a closed-form `∫ dt/σ`.
    pub fn exact_cost(&self) -> f64 {
        let k = self.curvature();
        let kt = k * self.horizon;
        let disc = (kt * kt + 4.0 * k).sqrt();
        let inv_var_integral = 2.0 / disc * ((disc + kt) / (disc - kt)).ln();
        2.0 * inv_var_integral - kt + self.drift_sq() * self.horizon
    }
}

/// Marginal `N(x_t, σ_t)` at time `t ∈ [0, T]`.
pub fn bridge_marginal(gb: &GaussianBridge, t: f64) -> Result<Gaussian1D> {
    gb.check_time(t)?;
    Gaussian1D::new(gb.mean(t), gb.variance(t))
}

/// Heat flow `N(m, v) ↦ N(m, v + 2t)`.
pub fn heat_flow_gaussian(g: &Gaussian1D, t: f64) -> Result<Gaussian1D> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("heat flow time must be nonnegative, got {t}")));
    }
    Gaussian1D::new(g.mean, g.variance + 2.0 * t)
}

/// Quadratic Wasserstein distance between two Gaussians on `R`.
pub fn w2_gaussian(g1: &Gaussian1D, g2: &Gaussian1D) -> f64 {
    (g1.std_dev() - g2.std_dev()).hypot(g1.mean - g2.mean)
}

/// `E_T = σ'²/(4σ) + ((x1 − x0)/T)² − 1/σ` at time `t`.
pub fn gaussian_energy(gb: &GaussianBridge, t: f64) -> Result<f64> {
    gb.check_time(t)?;
    let s = gb.variance(t);
    let ds = gb.variance_rate(t);
    Ok(ds * ds / (4.0 * s) + gb.drift_sq() - 1.0 / s)
}

/// Composite Simpson quadrature of the cost density on `quad_steps`
/// intervals (rounded up to even).
pub fn gaussian_cost(gb: &GaussianBridge, quad_steps: usize) -> Result<f64> {
    if quad_steps < 10 {
        return Err(Error::InvalidArgument(format!("quad_steps must be at least 10, got {quad_steps}")));
    }
    let n = quad_steps + quad_steps % 2;
    let h = gb.horizon / n as f64;
    let mut sum = gb.cost_density(0.0) + gb.cost_density(gb.horizon);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * gb.cost_density(i as f64 * h);
    }
    Ok(sum * h / 3.0)
}

/// Relative entropy with respect to Lebesgue measure, `−½ log(2πe v)`.
pub fn rel_entropy_gaussian(g: &Gaussian1D) -> f64 {
    -0.5 * (2.0 * PI * std::f64::consts::E * g.variance).ln()
}

/// Fisher information `1/v`.
pub fn fisher_information(g: &Gaussian1D) -> f64 {
    1.0 / g.variance
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaExpansion {
    /// `C_T − 2 log(4πT)`.
    pub excess: f64,
    /// `2F(μ) + 2F(ν)`.
    pub limit_target: f64,
    /// `T · (excess − limit_target)`.
    pub first_order: f64,
    /// `((x0 − x1)² + 2) / 4`.
    pub first_order_target: f64,
}

/// Long-horizon expansion of the cost.
pub fn gamma_expansion(gb: &GaussianBridge, quad_steps: usize) -> Result<GammaExpansion> {
    if gb.horizon < 1.0 {
        return Err(Error::InvalidArgument(format!("expansion needs T >= 1, got {}", gb.horizon)));
    }
    let cost = gaussian_cost(gb, quad_steps)?;
    let excess = cost - 2.0 * (4.0 * PI * gb.horizon).ln();
    let unit = |m: f64| rel_entropy_gaussian(&Gaussian1D { mean: m, variance: 1.0 });
    let limit_target = 2.0 * unit(gb.x0) + 2.0 * unit(gb.x1);
    let gap = gb.x0 - gb.x1;
    Ok(GammaExpansion {
        excess,
        limit_target,
        first_order: gb.horizon * (excess - limit_target),
        first_order_target: (gap * gap + 2.0) / 4.0,
    })
}

/// `Sch_T = C_T/4 + (F(μ) + F(ν))/2`.
pub fn schrodinger_value(gb: &GaussianBridge, quad_steps: usize) -> Result<f64> {
    let cost = gaussian_cost(gb, quad_steps)?;
    let f0 = rel_entropy_gaussian(&Gaussian1D { mean: gb.x0, variance: 1.0 });
    let f1 = rel_entropy_gaussian(&Gaussian1D { mean: gb.x1, variance: 1.0 });
    Ok(cost / 4.0 + (f0 + f1) / 2.0)
}
