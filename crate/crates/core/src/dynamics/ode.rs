//! Adaptive Dormand–Prince 5(4) stepper for autonomous linear systems
//! `dy/dt = f(y)` over complex vectors.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::linalg::C64;

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
// fifth-order minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combo(y: &Array1<C64>, h: f64, terms: &[(f64, &Array1<C64>)]) -> Array1<C64> {
    let mut out = y.clone();
    for &(c, k) in terms {
        if c != 0.0 {
            out.scaled_add(C64::new(h * c, 0.0), k);
        }
    }
    out
}

/// One Dormand–Prince step; returns the fifth-order solution and the
/// embedded error vector.
pub(crate) fn dopri_step<F>(f: &F, y: &Array1<C64>, h: f64) -> (Array1<C64>, Array1<C64>)
where
    F: Fn(&Array1<C64>) -> Array1<C64>,
{
    let k1 = f(y);
    let k2 = f(&combo(y, h, &[(A21, &k1)]));
    let k3 = f(&combo(y, h, &[(A31, &k1), (A32, &k2)]));
    let k4 = f(&combo(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&combo(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&combo(y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y_new = combo(y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(&y_new);
    let zero = Array1::zeros(y.len());
    let err = combo(&zero, h, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)]);
    (y_new, err)
}

#[derive(Clone, Debug)]
pub(crate) struct AdaptiveStepper {
    rtol: f64,
    atol: f64,
    h: f64,
}

impl AdaptiveStepper {
    pub(crate) fn new(rtol: f64, atol: f64, h0: f64) -> Self {
        AdaptiveStepper { rtol, atol, h: h0 }
    }

    fn error_norm(&self, y: &Array1<C64>, y_new: &Array1<C64>, err: &Array1<C64>) -> f64 {
        let n = y.len() as f64;
        let sum: f64 = y
            .iter()
            .zip(y_new.iter())
            .zip(err.iter())
            .map(|((a, b), e)| {
                let scale = self.atol + self.rtol * a.norm().max(b.norm());
                (e.norm() / scale).powi(2)
            })
            .sum();
        (sum / n).sqrt()
    }

    /// Advances `y` in place by an accepted step no longer than `max_h`,
    /// returning the step length taken.
    pub(crate) fn advance<F>(&mut self, f: &F, y: &mut Array1<C64>, t: f64, max_h: f64) -> Result<f64>
    where
        F: Fn(&Array1<C64>) -> Array1<C64>,
    {
        loop {
            let clipped = self.h >= max_h;
            let h = if clipped { max_h } else { self.h };
            let (y_new, err) = dopri_step(f, y, h);
            let e = self.error_norm(y, &y_new, &err);
            if e.is_finite() && e <= 1.0 {
                let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                let proposal = h * factor;
                self.h = if clipped { self.h.max(proposal) } else { proposal };
                *y = y_new;
                return Ok(h);
            }
            let factor = if e.is_finite() { (0.9 * e.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            self.h = h * factor;
            if self.h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::IntegrationFailure { t, step: self.h });
            }
        }
    }
}
