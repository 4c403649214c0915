//! Test-only reference integrator and fixtures.

#![allow(dead_code)]

use nalgebra::DVector;

/// Dormand-Prince 5(4) with embedded error control. Integrates `f` from
/// `t0` to `t1` and returns the state at `t1`.
pub fn dopri5<F>(f: F, t0: f64, t1: f64, x0: &DVector<f64>, rtol: f64, atol: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
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
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut t = t0;
    let mut x = x0.clone();
    let mut dt = (t1 - t0) / 100.0;
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        assert!(steps < 10_000_000, "reference integrator did not converge");
        if t + dt > t1 {
            dt = t1 - t;
        }
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    xs.axpy(dt * A[s][j], kj, 1.0);
                }
            }
            k.push(f(t + C[s] * dt, &xs));
        }
        let mut x5 = x.clone();
        let mut err = DVector::zeros(x.len());
        for s in 0..7 {
            x5.axpy(dt * B5[s], &k[s], 1.0);
            err.axpy(dt * (B5[s] - B4[s]), &k[s], 1.0);
        }
        let norm = err
            .iter()
            .zip(x.iter().zip(x5.iter()))
            .map(|(e, (a, b))| e / (atol + rtol * a.abs().max(b.abs())))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if norm <= 1.0 {
            t += dt;
            x = x5;
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        dt *= factor;
    }
    x
}

/// Relative max-norm distance.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax()
}
