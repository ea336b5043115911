//! Adaptive Dormand–Prince 5(4) integrator for small autonomous systems.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeFailure {
    /// The adaptive step fell below the minimum step size.
    StepUnderflow { t: f64, h: f64 },
    /// The right-hand side produced a non-finite value.
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Dopri5 {
    pub fn with_tolerance(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, h_min: 1e-14, h_max: 0.05 }
    }
}

// Butcher tableau (autonomous systems, so the nodes are not needed)
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One embedded step of size `h`; returns the fifth-order solution and the
/// componentwise error estimate.
pub fn dopri_step<const N: usize>(f: &impl Fn(&[f64; N]) -> [f64; N], y: &[f64; N], h: f64) -> ([f64; N], [f64; N]) {
    let mut k = [[0.0; N]; 7];
    k[0] = f(y);
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for d in 0..N {
                    ys[d] += h * a * kj[d];
                }
            }
        }
        k[s] = f(&ys);
    }
    let mut y5 = *y;
    let mut err = [0.0; N];
    for d in 0..N {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for s in 0..7 {
            hi += B5[s] * k[s][d];
            lo += B4[s] * k[s][d];
        }
        y5[d] += h * hi;
        err[d] = h * (hi - lo);
    }
    (y5, err)
}

impl Dopri5 {
    fn error_norm<const N: usize>(&self, y: &[f64; N], y_new: &[f64; N], err: &[f64; N]) -> f64 {
        let mut acc = 0.0f64;
        for d in 0..N {
            let scale = self.atol + self.rtol * y[d].abs().max(y_new[d].abs());
            acc = acc.max((err[d] / scale).abs());
        }
        acc
    }

    /// Takes one accepted adaptive step from `(t, y)` with trial size `h`, never
    /// stepping past `t_stop`. Returns `(t_new, y_new, h_next)`.
    pub fn advance<const N: usize>(
        &self,
        f: &impl Fn(&[f64; N]) -> [f64; N],
        t: f64,
        y: &[f64; N],
        mut h: f64,
        t_stop: f64,
    ) -> Result<(f64, [f64; N], f64), OdeFailure> {
        h = h.min(self.h_max);
        loop {
            let clamp = t + h >= t_stop;
            let step = if clamp { t_stop - t } else { h };
            let (y_new, err) = dopri_step(f, y, step);
            if y_new.iter().any(|v| !v.is_finite()) {
                if step <= self.h_min {
                    return Err(OdeFailure::NonFinite { t });
                }
                h = step * 0.25;
                continue;
            }
            let e = self.error_norm(y, &y_new, &err);
            if e <= 1.0 {
                let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                let t_new = if clamp { t_stop } else { t + step };
                return Ok((t_new, y_new, (step * factor).min(self.h_max).max(h.min(self.h_max) * 0.2)));
            }
            h = step * (0.9 * e.powf(-0.2)).clamp(0.1, 0.9);
            if h < self.h_min {
                return Err(OdeFailure::StepUnderflow { t, h });
            }
        }
    }
}
