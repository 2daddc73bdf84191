//! Adaptive Dormand–Prince 4(5) integration over one fixed interval.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rk45Error {
    #[error("step size underflow at t = {t} (dt = {dt:e})")]
    StepUnderflow { t: f64, dt: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { atol: 1e-8, rtol: 1e-8 }
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order solution minus the embedded fourth-order one.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_SUBSTEPS: usize = 100_000;

/// Integrates the autonomous system `ẏ = f(y)` from `y0` over exactly `h`
/// with local error control. Any control input is expected to be captured
/// in `f` and held constant for the interval.
pub fn rk45<const N: usize, F>(f: F, y0: [f64; N], h: f64, tol: Tolerance) -> Result<[f64; N], Rk45Error>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let mut y = y0;
    let mut t = 0.0;
    let mut dt = h;
    let mut k = [[0.0; N]; 7];
    k[0] = f(&y);
    for _ in 0..MAX_SUBSTEPS {
        if t >= h {
            return Ok(y);
        }
        let last = t + dt >= h;
        let step = if last { h - t } else { dt };

        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..N {
                        ys[i] += step * a * kj[i];
                    }
                }
            }
            k[s] = f(&ys);
        }
        let mut y_new = y;
        for (j, kj) in k.iter().enumerate().take(6) {
            let b = A[6][j];
            for i in 0..N {
                y_new[i] += step * b * kj[i];
            }
        }
        let mut err_sq = 0.0;
        for i in 0..N {
            let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * step;
            let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale).powi(2);
        }
        let err = (err_sq / N.max(1) as f64).sqrt();
        if !err.is_finite() {
            dt = step * 0.2;
        } else if err <= 1.0 {
            t = if last { h } else { t + step };
            y = y_new;
            // First-same-as-last: the seventh stage is f at the accepted point.
            k[0] = k[6];
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            dt = step * factor;
        } else {
            let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            dt = step * factor;
        }
        if dt < 1e-12 * h {
            return Err(Rk45Error::StepUnderflow { t, dt });
        }
    }
    Err(Rk45Error::StepUnderflow { t, dt })
}
