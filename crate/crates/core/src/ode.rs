// Fixed-step classical RK4 for autonomous systems y' = f(y).
//
// A step whose stages leave the domain (f returns Err) or whose result is not
// admissible is split in halves, recursively, at most MAX_HALVINGS deep.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy};

pub(crate) const MAX_HALVINGS: u32 = 40;

pub(crate) fn rk4_step<F>(f: &F, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(y)?;
    let k2 = f(&axpy(y, 0.5 * h, &k1))?;
    let k3 = f(&axpy(y, 0.5 * h, &k2))?;
    let k4 = f(&axpy(y, h, &k3))?;
    Ok(y
        .iter()
        .enumerate()
        .map(|(i, yi)| yi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Advances `y` from time `t` by `h` (negative `h` integrates backwards).
pub(crate) fn advance<F, A>(f: &F, admissible: &A, y: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    A: Fn(&[f64]) -> bool,
{
    advance_depth(f, admissible, y, t, h, 0)
}

fn advance_depth<F, A>(f: &F, admissible: &A, y: &[f64], t: f64, h: f64, depth: u32) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    A: Fn(&[f64]) -> bool,
{
    let failure = match rk4_step(f, y, h) {
        Ok(next) if all_finite(&next) && admissible(&next) => return Ok(next),
        Ok(next) if !all_finite(&next) => Error::NonFinite { t: t + h },
        Ok(_) | Err(Error::Domain { .. }) => Error::DomainEscape { t },
        Err(e) => return Err(e),
    };
    if depth >= MAX_HALVINGS {
        return Err(failure);
    }
    let mid = advance_depth(f, admissible, y, t, 0.5 * h, depth + 1)?;
    advance_depth(f, admissible, &mid, t + 0.5 * h, 0.5 * h, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let f = |y: &[f64]| -> Result<Vec<f64>> { Ok(vec![-y[0]]) };
        let mut y = vec![1.0];
        let n = 100;
        for i in 0..n {
            y = advance(&f, &|_: &[f64]| true, &y, i as f64 * 0.01, 0.01).unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn halving_recovers_near_boundary() {
        // y' = -1/y, leaves y > 0 at t = 0.5 from y0 = 1; a step of 0.4 from
        // y = 0.6 overshoots only in the first stage evaluation.
        let f = |y: &[f64]| -> Result<Vec<f64>> {
            if y[0] <= 0.0 {
                Err(Error::Domain { point: y.to_vec() })
            } else {
                Ok(vec![-0.1 / y[0]])
            }
        };
        let pos = |y: &[f64]| y[0] > 0.0;
        let y = advance(&f, &pos, &[0.05], 0.0, 0.01).unwrap();
        assert!(y[0] > 0.0);
        let escaped = advance(&f, &pos, &[0.05], 0.0, 1.0);
        assert!(matches!(escaped, Err(Error::DomainEscape { .. })));
    }
}
