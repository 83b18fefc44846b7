//! Adaptive Simpson quadrature with a recursion cap.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default recursion depth cap.
pub const MAX_DEPTH: u32 = 60;

/// Levels always refined before the error test is trusted. Coarse panels can
/// pass it by coincidence on sharply peaked integrands.
const MIN_LEVELS: u32 = 4;

#[derive(Clone, Copy, Debug)]
pub struct Integral<T> {
    pub value: T,
    pub error_estimate: T,
    pub evaluations: usize,
}

struct Simpson<'a, T, F> {
    f: &'a F,
    evaluations: usize,
    worst: Option<(T, T, T, T)>, // (a, b, err, tol) of a failed panel
    error_estimate: T,
    max_depth: u32,
}

impl<T: Real, F: Fn(T) -> T> Simpson<'_, T, F> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(&mut self, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> T {
        let half = T::lit(0.5);
        let m = (a + b) * half;
        let lm = (a + m) * half;
        let rm = (m + b) * half;
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        self.evaluations += 2;
        let sixth = T::one() / T::lit(6.0);
        let left = (m - a) * sixth * (fa + T::lit(4.0) * flm + fm);
        let right = (b - m) * sixth * (fm + T::lit(4.0) * frm + fb);
        let delta = left + right - whole;
        let fifteen = T::lit(15.0);
        if delta.abs() <= fifteen * tol && self.max_depth - depth >= MIN_LEVELS.min(self.max_depth) {
            self.error_estimate += delta.abs() / fifteen;
            return left + right + delta / fifteen;
        }
        if depth == 0 {
            self.error_estimate += delta.abs() / fifteen;
            let err = delta.abs() / fifteen;
            if self.worst.is_none_or(|w| err > w.2) {
                self.worst = Some((a, b, err, tol));
            }
            return left + right + delta / fifteen;
        }
        self.recurse(a, m, fa, flm, fm, left, tol * half, depth - 1)
            + self.recurse(m, b, fm, frm, fb, right, tol * half, depth - 1)
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Fails with [`Error::Quadrature`] when some panel still misses its share of
/// the tolerance at recursion depth `max_depth`.
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, tol: T, max_depth: u32) -> Result<Integral<T>> {
    if a == b {
        return Ok(Integral {
            value: T::zero(),
            error_estimate: T::zero(),
            evaluations: 0,
        });
    }
    let fa = f(a);
    let fb = f(b);
    let m = (a + b) * T::lit(0.5);
    let fm = f(m);
    let whole = (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb);
    let mut state = Simpson {
        f: &f,
        evaluations: 3,
        worst: None,
        error_estimate: T::zero(),
        max_depth,
    };
    let value = state.recurse(a, b, fa, fm, fb, whole, tol, max_depth);
    if let Some((lo, hi, err, panel_tol)) = state.worst {
        if err > panel_tol {
            return Err(Error::Quadrature {
                lower: lo.as_f64(),
                upper: hi.as_f64(),
                error_estimate: state.error_estimate.as_f64(),
                tolerance: tol.as_f64(),
                evaluations: state.evaluations,
            });
        }
    }
    Ok(Integral {
        value,
        error_estimate: state.error_estimate,
        evaluations: state.evaluations,
    })
}
