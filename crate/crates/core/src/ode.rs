//! Adaptive Dormand–Prince 4(5) integration with cubic Hermite dense output.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            initial_step: 1e-3,
            max_step: 0.5,
            max_steps: 1_000_000,
        }
    }
}

/// Accepted steps of an integration: times, states and right-hand sides.
#[derive(Debug, Clone)]
pub(crate) struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl Trajectory {
    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one point")
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    fn derivative(&self, i: usize) -> &[f64] {
        &self.derivatives[i * self.dim..(i + 1) * self.dim]
    }

    /// Cubic Hermite interpolation between accepted steps, clamped to the
    /// integrated range.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            return self.state(0).to_vec();
        }
        if t >= self.times[n - 1] {
            return self.state(n - 1).to_vec();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let dt = t1 - t0;
        let u = (t - t0) / dt;
        let (h00, h10) = ((1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u), u * (1.0 - u) * (1.0 - u));
        let (h01, h11) = (u * u * (3.0 - 2.0 * u), u * u * (u - 1.0));
        let (x0, x1) = (self.state(i), self.state(i + 1));
        let (f0, f1) = (self.derivative(i), self.derivative(i + 1));
        (0..self.dim)
            .map(|j| h00 * x0[j] + h10 * dt * f0[j] + h01 * x1[j] + h11 * dt * f1[j])
            .collect()
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
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `ẋ = f(x)` from `x0` at `t = 0` until `t_max` or until `stop`
/// breaks after an accepted step. `stop` sees the time and the new state.
pub(crate) fn integrate<F, S>(
    mut f: F,
    x0: &[f64],
    t_max: f64,
    opts: &OdeOptions,
    mut stop: S,
) -> Result<Trajectory>
where
    F: FnMut(&[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> ControlFlow<Result<()>>,
{
    let n = x0.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut x = x0.to_vec();
    let mut stage = vec![0.0; n];
    let mut next = vec![0.0; n];
    f(&x, &mut k[0]);
    let mut traj = Trajectory {
        dim: n,
        times: vec![0.0],
        states: x.clone(),
        derivatives: k[0].clone(),
    };
    let mut t = 0.0;
    let mut h = opts.initial_step;
    for _ in 0..opts.max_steps {
        if t >= t_max {
            return Ok(traj);
        }
        h = h.min(t_max - t).min(opts.max_step);
        for s in 1..7 {
            for j in 0..n {
                stage[j] = x[j] + h * (0..s).map(|r| A[s][r] * k[r][j]).sum::<f64>();
            }
            f(&stage, &mut k[s]);
        }
        // the last stage is evaluated at the fifth-order solution
        next.copy_from_slice(&stage);
        let mut err = 0.0f64;
        for j in 0..n {
            let e = h * (0..7).map(|r| E[r] * k[r][j]).sum::<f64>();
            let scale = opts.atol + opts.rtol * x[j].abs().max(next[j].abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::NonFinite("integrator state".into()));
        }
        if err <= 1.0 {
            t += h;
            x.copy_from_slice(&next);
            k.swap(0, 6);
            traj.times.push(t);
            traj.states.extend_from_slice(&x);
            traj.derivatives.extend_from_slice(&k[0]);
            if let ControlFlow::Break(r) = stop(t, &x) {
                r?;
                return Ok(traj);
            }
        }
        let factor = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
        h *= factor.clamp(0.2, 5.0);
        if h < 1e-14 * t.max(1.0) {
            return Err(Error::NonFinite(format!("integrator step underflow at t = {t}")));
        }
    }
    Err(Error::InvalidArgument(format!(
        "integration exceeded {} steps",
        opts.max_steps
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let traj = integrate(
            |x, f| f[0] = -x[0],
            &[1.0],
            5.0,
            &OdeOptions::default(),
            |_, _| ControlFlow::Continue(()),
        )
        .unwrap();
        assert!((traj.end_time() - 5.0).abs() < 1e-12);
        let end = traj.state(traj.times.len() - 1)[0];
        assert!((end - (-5.0f64).exp()).abs() < 1e-10);
        for t in [0.3, 1.7, 4.2] {
            assert!((traj.sample(t)[0] - (-t).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn harmonic_oscillator_and_stop() {
        let traj = integrate(
            |x, f| {
                f[0] = x[1];
                f[1] = -x[0];
            },
            &[1.0, 0.0],
            100.0,
            &OdeOptions::default(),
            |t, _| {
                if t > 3.0 {
                    ControlFlow::Break(Ok(()))
                } else {
                    ControlFlow::Continue(())
                }
            },
        )
        .unwrap();
        let t = traj.end_time();
        assert!(t > 3.0 && t < 4.0);
        let x = traj.state(traj.times.len() - 1);
        assert!((x[0] - t.cos()).abs() < 1e-9 && (x[1] + t.sin()).abs() < 1e-9);
    }
}
