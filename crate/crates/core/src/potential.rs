//! Convex potentials `F: R^d → R` with gradient, Hessian action and a declared
//! `(ρ, n)`-convexity class, meaning `F'' ⪰ ρ·Id + (1/n)·F' ⊗ F'`.
//!
//! Builtins:
//!
//! | kind | `F(x)` | ρ | n | domain |
//! |------|--------|---|---|--------|
//! | `QuadraticIsotropic` | `|x|²/2` | 1 | ∞ | `R^d` |
//! | `QuadraticMatrix(A)` | `xᵀAx/2` | `λ_min(A)` | ∞ | `R^d` |
//! | `NegLog` | `−Σ log x_i` | 0 | d | `(0, ∞)^d` |
//!
//! `Custom` potentials supply closures; a missing gradient or Hessian action is
//! replaced by central finite differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, norm_sq, scale, sub};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Gradient finite-difference step factor, `sqrt(eps)`.
pub const GRADIENT_STEP: f64 = 1.490_116_119_384_765_6e-8;
/// Hessian-action finite-difference step factor, `cbrt(eps)`.
pub const HESSIAN_STEP: f64 = 6.055_454_452_393_343e-6;

/// User-supplied potential.
#[derive(Clone)]
pub struct CustomPotential {
    pub value: ScalarFn,
    pub gradient: Option<VectorFn>,
    pub hessian_apply: Option<HessianFn>,
}

impl CustomPotential {
    pub fn new(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CustomPotential {
            value: Arc::new(value),
            gradient: None,
            hessian_apply: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian_apply(
        mut self,
        h: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian_apply = Some(Arc::new(h));
        self
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("gradient", &self.gradient.is_some())
            .field("hessian_apply", &self.hessian_apply.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum PotentialKind {
    QuadraticIsotropic,
    QuadraticMatrix(DMatrix<f64>),
    NegLog,
    Custom(CustomPotential),
}

impl PotentialKind {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialKind::QuadraticIsotropic => "QuadraticIsotropic",
            PotentialKind::QuadraticMatrix(_) => "QuadraticMatrix",
            PotentialKind::NegLog => "NegLog",
            PotentialKind::Custom(_) => "Custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    AllSpace,
    PositiveOrthant,
}

/// A potential together with its convexity certificate.
///
/// `rho = None` means no lower Hessian bound is declared; `n_dim = None` means
/// `n = ∞` (the rank-one term of the certificate is dropped).
#[derive(Clone, Debug)]
pub struct Potential {
    dim: usize,
    kind: PotentialKind,
    rho: Option<f64>,
    n_dim: Option<f64>,
    domain: Domain,
    minimizer: Option<Vec<f64>>,
}

impl Potential {
    /// `F(x) = |x|²/2`.
    pub fn quadratic(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Potential {
            dim,
            kind: PotentialKind::QuadraticIsotropic,
            rho: Some(1.0),
            n_dim: None,
            domain: Domain::AllSpace,
            minimizer: Some(vec![0.0; dim]),
        }
    }

    /// `F(x) = xᵀAx/2` for a symmetric matrix given by rows.
    pub fn quadratic_matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        let a = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        let asym = (&a - a.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + a.abs().max()) {
            return Err(Error::InvalidArgument("matrix is not symmetric".into()));
        }
        let rho = SymmetricEigen::new(a.clone()).eigenvalues.min();
        Ok(Potential {
            dim,
            kind: PotentialKind::QuadraticMatrix(a),
            rho: Some(rho),
            n_dim: None,
            domain: Domain::AllSpace,
            minimizer: (rho > 0.0).then(|| vec![0.0; dim]),
        })
    }

    /// `F(x) = −Σ log x_i` on the positive orthant; `(0, d)`-convex.
    pub fn neg_log(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Potential {
            dim,
            kind: PotentialKind::NegLog,
            rho: Some(0.0),
            n_dim: Some(dim as f64),
            domain: Domain::PositiveOrthant,
            minimizer: None,
        }
    }

    /// Wraps user closures. When `rho > 0` the minimizer is located by
    /// gradient descent to `|F'| < 1e-10`.
    pub fn custom(
        dim: usize,
        custom: CustomPotential,
        rho: Option<f64>,
        n_dim: Option<f64>,
        domain: Domain,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut p = Potential {
            dim,
            kind: PotentialKind::Custom(custom),
            rho,
            n_dim,
            domain,
            minimizer: None,
        };
        if rho.is_some_and(|r| r > 0.0) {
            p.minimizer = Some(p.descend_to_minimizer()?);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// `ρ` when it is strictly positive.
    pub fn positive_rho(&self) -> Option<f64> {
        self.rho.filter(|r| *r > 0.0)
    }

    /// Dimension parameter `n`; `None` is `n = ∞`.
    pub fn n_dim(&self) -> Option<f64> {
        self.n_dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Minimizer `x*`, available when `ρ > 0`.
    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && x.iter().all(|v| v.is_finite())
            && match self.domain {
                Domain::AllSpace => true,
                Domain::PositiveOrthant => x.iter().all(|v| *v > 0.0),
            }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if !self.contains(x) {
            return Err(Error::Domain { point: x.to_vec() });
        }
        Ok(())
    }

    /// `F(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(match &self.kind {
            PotentialKind::QuadraticIsotropic => 0.5 * norm_sq(x),
            PotentialKind::QuadraticMatrix(a) => 0.5 * dot(x, &mat_vec(a, x)),
            PotentialKind::NegLog => -x.iter().map(|v| v.ln()).sum::<f64>(),
            PotentialKind::Custom(c) => (c.value)(x),
        })
    }

    /// `F'(x)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match &self.kind {
            PotentialKind::QuadraticIsotropic => x.to_vec(),
            PotentialKind::QuadraticMatrix(a) => mat_vec(a, x),
            PotentialKind::NegLog => x.iter().map(|v| -1.0 / v).collect(),
            PotentialKind::Custom(c) => match &c.gradient {
                Some(g) => g(x),
                None => self.fd_gradient(&c.value, x)?,
            },
        })
    }

    /// `F''(x) v`.
    pub fn hessian_apply(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(match &self.kind {
            PotentialKind::QuadraticIsotropic => v.to_vec(),
            PotentialKind::QuadraticMatrix(a) => mat_vec(a, v),
            PotentialKind::NegLog => x.iter().zip(v).map(|(xi, vi)| vi / (xi * xi)).collect(),
            PotentialKind::Custom(c) => match &c.hessian_apply {
                Some(h) => h(x, v),
                None => self.fd_hessian_apply(x, v)?,
            },
        })
    }

    /// Newton acceleration `F''(x) F'(x) = ½ ∇|F'|²(x)`.
    pub fn newton_force(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.gradient(x)?;
        self.hessian_apply(x, &g)
    }

    /// Allocation-free `F''(x) F'(x)` for the builtins (hot loop of the
    /// phase-space integrator). `out` has length `dim`.
    pub(crate) fn newton_force_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            PotentialKind::QuadraticIsotropic => {
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::Domain { point: x.to_vec() });
                }
                out.copy_from_slice(x);
            }
            PotentialKind::NegLog => {
                for (o, xi) in out.iter_mut().zip(x) {
                    if !(*xi > 0.0) || !xi.is_finite() {
                        return Err(Error::Domain { point: x.to_vec() });
                    }
                    *o = -1.0 / (xi * xi * xi);
                }
            }
            PotentialKind::QuadraticMatrix(a) => {
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::Domain { point: x.to_vec() });
                }
                let d = self.dim;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..d)
                        .map(|j| a[(i, j)] * (0..d).map(|k| a[(j, k)] * x[k]).sum::<f64>())
                        .sum();
                }
            }
            PotentialKind::Custom(_) => out.copy_from_slice(&self.newton_force(x)?),
        }
        Ok(())
    }

    /// `vᵀ(F''(x) − ρ·Id − (1/n)F'(x)F'(x)ᵀ)v` with the declared `(ρ, n)`;
    /// an undeclared `ρ` counts as 0.
    pub fn convexity_defect(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.convexity_defect_with(x, v, self.rho.unwrap_or(0.0), self.n_dim)
    }

    /// Certificate defect for an explicit `(ρ, n)`; `n = None` is `n = ∞`.
    pub fn convexity_defect_with(
        &self,
        x: &[f64],
        v: &[f64],
        rho: f64,
        n_dim: Option<f64>,
    ) -> Result<f64> {
        let hv = self.hessian_apply(x, v)?;
        let mut defect = dot(v, &hv) - rho * norm_sq(v);
        if let Some(n) = n_dim {
            let g = self.gradient(x)?;
            let gv = dot(&g, v);
            defect -= gv * gv / n;
        }
        Ok(defect)
    }

    fn fd_gradient(&self, f: &ScalarFn, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Vec::with_capacity(self.dim);
        let mut xp = x.to_vec();
        for i in 0..self.dim {
            let h = GRADIENT_STEP * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            self.check(&xp)?;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            self.check(&xp)?;
            let fm = f(&xp);
            xp[i] = x[i];
            g.push((fp - fm) / (2.0 * h));
        }
        Ok(g)
    }

    fn fd_hessian_apply(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let vn = norm(v);
        if vn == 0.0 {
            return Ok(vec![0.0; self.dim]);
        }
        let h = HESSIAN_STEP * (1.0 + norm(x)) / vn;
        let gp = self.gradient(&axpy(x, h, v))?;
        let gm = self.gradient(&axpy(x, -h, v))?;
        Ok(scale(&sub(&gp, &gm), 0.5 / h))
    }

    fn descend_to_minimizer(&self) -> Result<Vec<f64>> {
        let mut x = match self.domain {
            Domain::AllSpace => vec![0.0; self.dim],
            Domain::PositiveOrthant => vec![1.0; self.dim],
        };
        let mut fx = self.value(&x)?;
        let mut step = 1.0;
        for _ in 0..100_000 {
            let g = self.gradient(&x)?;
            let gn2 = norm_sq(&g);
            if gn2.sqrt() < 1e-10 {
                return Ok(x);
            }
            step *= 2.0;
            loop {
                let trial = axpy(&x, -step, &g);
                if self.contains(&trial) {
                    let ft = self.value(&trial)?;
                    if ft <= fx - 1e-4 * step * gn2 {
                        x = trial;
                        fx = ft;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-300 {
                    return Err(Error::NoConvergence { residual: gn2.sqrt() });
                }
            }
        }
        Err(Error::NoConvergence { residual: norm(&self.gradient(&x)?) })
    }

    /// Builds a potential from a config descriptor.
    pub fn from_descriptor(d: &PotentialDescriptor) -> Result<Self> {
        if d.dim == 0 {
            return Err(Error::InvalidArgument("potential dim must be positive".into()));
        }
        match d.kind {
            DescriptorKind::Quadratic => Ok(Potential::quadratic(d.dim)),
            DescriptorKind::NegLog => Ok(Potential::neg_log(d.dim)),
            DescriptorKind::QuadraticMatrix => {
                let m = d.matrix.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("quadratic_matrix requires \"matrix\"".into())
                })?;
                let p = Potential::quadratic_matrix(m)?;
                if p.dim != d.dim {
                    return Err(Error::DimensionMismatch { expected: d.dim, got: p.dim });
                }
                Ok(p)
            }
        }
    }
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    #[serde(alias = "QuadraticIsotropic", alias = "quadratic_isotropic")]
    Quadratic,
    #[serde(alias = "QuadraticMatrix")]
    QuadraticMatrix,
    #[serde(alias = "NegLog", alias = "neglog")]
    NegLog,
}

/// Config form: `{"kind": "...", "dim": d, "matrix": [[...]]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialDescriptor {
    pub kind: DescriptorKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn builtin_values() {
        let q = Potential::quadratic(2);
        assert_abs_diff_eq!(q.value(&[3.0, 4.0]).unwrap(), 12.5);
        let l = Potential::neg_log(1);
        assert_abs_diff_eq!(l.value(&[std::f64::consts::E]).unwrap(), -1.0, epsilon = 1e-15);
        assert!(matches!(l.value(&[0.0]), Err(Error::Domain { .. })));
        assert!(matches!(l.value(&[-1.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn builtin_gradients() {
        assert_eq!(Potential::quadratic(2).gradient(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(Potential::neg_log(1).gradient(&[2.0]).unwrap(), vec![-0.5]);
        assert_eq!(Potential::neg_log(2).gradient(&[1.0, 4.0]).unwrap(), vec![-1.0, -0.25]);
    }

    #[test]
    fn builtin_hessians() {
        let q = Potential::quadratic(2);
        assert_eq!(q.hessian_apply(&[7.0, -3.0], &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(Potential::neg_log(1).hessian_apply(&[2.0], &[1.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn finite_difference_hessian_fallback() {
        let c = CustomPotential::new(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>())
            .with_gradient(|x| x.to_vec());
        let p = Potential::custom(2, c, Some(1.0), None, Domain::AllSpace).unwrap();
        let hv = p.hessian_apply(&[0.3, -1.7], &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(hv[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(hv[1], 2.0, epsilon = 1e-6);
        assert!(norm(p.minimizer().unwrap()) < 1e-10);
    }

    #[test]
    fn custom_minimizer_by_descent() {
        // F(x) = (x0 - 1)^2 + 2 (x1 + 0.5)^2, rho = 2
        let c = CustomPotential::new(|x| (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2));
        let p = Potential::custom(2, c, Some(2.0), None, Domain::AllSpace).unwrap();
        let m = p.minimizer().unwrap();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m[1], -0.5, epsilon = 1e-6);
    }

    #[test]
    fn convexity_defect_examples() {
        let q = Potential::quadratic(3);
        let v = [0.6, 0.0, 0.8];
        assert_abs_diff_eq!(q.convexity_defect(&[1.0, 2.0, 3.0], &v).unwrap(), 0.0, epsilon = 1e-15);
        let l1 = Potential::neg_log(1);
        for x in [0.1, 1.0, 7.5] {
            assert_abs_diff_eq!(l1.convexity_defect(&[x], &[1.0]).unwrap(), 0.0, epsilon = 1e-12);
        }
        let l2 = Potential::neg_log(2);
        assert_abs_diff_eq!(l2.convexity_defect(&[1.0, 2.0], &[1.0, 0.0]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_matrix_rho_is_min_eigenvalue() {
        let p = Potential::quadratic_matrix(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(p.rho().unwrap(), 1.0, epsilon = 1e-12);
        assert!(p.minimizer().is_some());
        assert!(Potential::quadratic_matrix(&[vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
        assert!(Potential::quadratic_matrix(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn descriptor_building() {
        let d = PotentialDescriptor {
            kind: DescriptorKind::QuadraticMatrix,
            dim: 2,
            matrix: Some(vec![vec![3.0, 0.0], vec![0.0, 1.0]]),
        };
        let p = Potential::from_descriptor(&d).unwrap();
        assert_abs_diff_eq!(p.rho().unwrap(), 1.0, epsilon = 1e-12);
        let missing = PotentialDescriptor { matrix: None, ..d.clone() };
        assert!(Potential::from_descriptor(&missing).is_err());
        let wrong_dim = PotentialDescriptor { dim: 3, ..d };
        assert!(Potential::from_descriptor(&wrong_dim).is_err());
    }

    fn central_diff(p: &Potential, x: &[f64], i: usize) -> f64 {
        let h = 1e-5 * (1.0 + x[i].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (p.value(&xp).unwrap() - p.value(&xm).unwrap()) / (2.0 * h)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_central_differences(
            a in 0.2f64..5.0, b in 0.2f64..5.0, c in -5.0f64..5.0,
        ) {
            let cases = [
                (Potential::quadratic(2), vec![c, a]),
                (Potential::neg_log(2), vec![a, b]),
                (Potential::quadratic_matrix(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(), vec![c, b]),
            ];
            for (p, x) in cases.iter() {
                let g = p.gradient(x).unwrap();
                for i in 0..2 {
                    prop_assert!(rel_close(g[i], central_diff(p, x, i), 1e-6));
                }
            }
        }

    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn neglog_is_zero_n_convex(
            x in proptest::collection::vec(1e-3f64..1e3, 1..5),
            seed in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let d = x.len();
            let p = Potential::neg_log(d);
            let v: Vec<f64> = seed[..d].to_vec();
            let vn = norm(&v).max(1e-12);
            let v = scale(&v, 1.0 / vn);
            let defect = p.convexity_defect_with(&x, &v, 0.0, Some(d as f64)).unwrap();
            let hv = p.hessian_apply(&x, &v).unwrap();
            prop_assert!(defect >= -1e-12 * (1.0 + dot(&v, &hv)));
        }

        #[test]
        fn quadratic_matrix_certificate(
            th in 0.0f64..std::f64::consts::TAU, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0,
        ) {
            let p = Potential::quadratic_matrix(&[vec![4.0, 1.0], vec![1.0, 2.0]]).unwrap();
            let v = [th.cos(), th.sin()];
            prop_assert!(p.convexity_defect(&[x0, x1], &v).unwrap() >= -1e-10);
        }
    }
}
