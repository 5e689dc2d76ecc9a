//! Target motion, bistatic geometry, steering vectors and the analytic
//! derivatives of delay and Doppler with respect to the target state.

use nalgebra::{DVector, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Position;

/// Speed of light (m/s).
pub const C0: f64 = 3e8;

pub type CVector = DVector<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub pos: Position,
    pub vel: Position,
    pub frame: usize,
}

impl TargetState {
    pub fn new(pos: Position, vel: Position) -> Self {
        Self { pos, vel, frame: 0 }
    }

    /// State as `[px, py, vx, vy]`.
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.pos.x, self.pos.y, self.vel.x, self.vel.y)
    }

    pub fn from_vector(x: &Vector4<f64>, frame: usize) -> Self {
        Self {
            pos: Position::new(x[0], x[1]),
            vel: Position::new(x[2], x[3]),
            frame,
        }
    }
}

/// Constant-velocity transition matrix for a frame of length `t_bar`.
pub fn transition_matrix(t_bar: f64) -> Matrix4<f64> {
    let mut g = Matrix4::identity();
    g[(0, 2)] = t_bar;
    g[(1, 3)] = t_bar;
    g
}

/// Process-noise covariance of the constant-velocity model.
pub fn process_noise(delta_q: f64, t_bar: f64) -> Matrix4<f64> {
    let pp = delta_q * t_bar.powi(3) / 3.0;
    let pv = delta_q * t_bar.powi(2) / 2.0;
    let vv = delta_q * t_bar;
    let mut e = Matrix4::zeros();
    for ax in 0..2 {
        e[(ax, ax)] = pp;
        e[(ax, ax + 2)] = pv;
        e[(ax + 2, ax)] = pv;
        e[(ax + 2, ax + 2)] = vv;
    }
    e
}

pub fn advance_target<R: Rng + ?Sized>(
    s: &TargetState,
    delta_q: f64,
    t_bar: f64,
    rng: &mut R,
) -> TargetState {
    let mut next = transition_matrix(t_bar) * s.to_vector();
    if delta_q > 0.0 {
        // Per-axis 2x2 Cholesky factor of the (position, velocity) block.
        let l11 = (delta_q * t_bar.powi(3) / 3.0).sqrt();
        let l21 = delta_q * t_bar.powi(2) / 2.0 / l11;
        let l22 = (delta_q * t_bar - l21 * l21).max(0.0).sqrt();
        for ax in 0..2 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            next[ax] += l11 * z1;
            next[ax + 2] += l21 * z1 + l22 * z2;
        }
    }
    TargetState::from_vector(&next, s.frame + 1)
}

/// Round-trip delay, Doppler shift and their gradients for the path
/// AP `a2` -> target -> AP `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDoppler {
    pub tau: f64,
    pub f: f64,
    pub d_tau_dx: Position,
    pub d_f_dx: Position,
    pub d_f_dv: Position,
}

pub fn delay_doppler(
    target: &TargetState,
    ap_a: &Position,
    ap_a2: &Position,
    f_c: f64,
) -> Result<DelayDoppler> {
    let mut out = DelayDoppler {
        tau: 0.0,
        f: 0.0,
        d_tau_dx: Position::zeros(),
        d_f_dx: Position::zeros(),
        d_f_dv: Position::zeros(),
    };
    let v = target.vel;
    let k = f_c / C0;
    for ap in [ap_a, ap_a2] {
        let r = ap - target.pos;
        let d = r.norm();
        if !(d > 0.0) {
            return Err(Error::DegenerateGeometry(format!(
                "target at ({}, {}) coincides with an AP",
                target.pos.x, target.pos.y
            )));
        }
        let u = r / d;
        let uv = u.dot(&v);
        out.tau += d / C0;
        out.f += k * uv;
        out.d_tau_dx -= u / C0;
        out.d_f_dv += u * k;
        out.d_f_dx += (u * uv - v) * (k / d);
    }
    Ok(out)
}

/// Half-wavelength uniform linear array response, unit norm.
pub fn steering(theta: f64, n_tx: usize) -> CVector {
    let norm = 1.0 / (n_tx as f64).sqrt();
    let s = theta.sin();
    CVector::from_fn(n_tx, |i, _| {
        Complex64::from_polar(norm, -std::f64::consts::PI * i as f64 * s)
    })
}

/// `atan(dy/dx)` in `(-pi/2, pi/2]`; a vertical offset maps to `+-pi/2`.
pub fn relative_angle(from: &Position, to: &Position) -> Result<f64> {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "angle between coincident points ({}, {})",
            from.x, from.y
        )));
    }
    if dx == 0.0 {
        return Ok(std::f64::consts::FRAC_PI_2.copysign(dy));
    }
    Ok((dy / dx).atan())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn state(px: f64, py: f64, vx: f64, vy: f64) -> TargetState {
        TargetState::new(Position::new(px, py), Position::new(vx, vy))
    }

    #[test]
    fn noiseless_step() {
        let mut rng = substream(1, Stream::Target);
        let s = advance_target(&state(0.0, 0.0, 10.0, 0.0), 0.0, 0.1, &mut rng);
        assert!((s.pos - Position::new(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(s.vel, Position::new(10.0, 0.0));
        assert_eq!(s.frame, 1);
    }

    #[test]
    fn zero_noise_is_linear() {
        let mut rng = substream(1, Stream::Target);
        let s0 = state(3.0, -2.0, 7.0, 4.5);
        let mut s = s0;
        for n in 1..=50 {
            s = advance_target(&s, 0.0, 0.25, &mut rng);
            let expect = s0.pos + s0.vel * (n as f64 * 0.25);
            assert!((s.pos - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn process_noise_covariance() {
        let (dq, t) = (100.0, 0.5);
        let mut rng = substream(9, Stream::Target);
        let s0 = state(0.0, 0.0, 0.0, 0.0);
        let n = 100_000;
        let mut acc = Matrix4::<f64>::zeros();
        for _ in 0..n {
            let x = advance_target(&s0, dq, t, &mut rng).to_vector();
            acc += x * x.transpose();
        }
        acc /= n as f64;
        let e = process_noise(dq, t);
        for i in 0..4 {
            for j in 0..4 {
                if e[(i, j)] != 0.0 {
                    let rel = (acc[(i, j)] - e[(i, j)]).abs() / e[(i, j)];
                    assert!(rel < 0.03, "({i},{j}) {} vs {}", acc[(i, j)], e[(i, j)]);
                } else {
                    let scale = (e[(i, i)] * e[(j, j)]).sqrt();
                    assert!(acc[(i, j)].abs() < 0.03 * scale);
                }
            }
        }
    }

    #[test]
    fn delay_on_axis() {
        let ap = Position::new(300.0, 0.0);
        let dd = delay_doppler(&state(0.0, 0.0, 0.0, 0.0), &ap, &ap, 5.89e9).unwrap();
        assert!((dd.tau - 2e-6).abs() < 1e-18);
        assert_eq!(dd.f, 0.0);
        assert_eq!(dd.d_f_dx, Position::zeros());
    }

    #[test]
    fn colocated_rejected() {
        let ap = Position::new(1.0, 2.0);
        let r = delay_doppler(&state(1.0, 2.0, 0.0, 0.0), &ap, &Position::new(5.0, 5.0), 1e9);
        assert!(matches!(r, Err(Error::DegenerateGeometry(_))));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(a.abs()).max(1e-300)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = substream(21, Stream::Scenario);
        let f_c = 5.89e9;
        let h = 1e-4;
        for _ in 0..100 {
            let mut p = || Position::new(rng.random_range(0.0..600.0), rng.random_range(0.0..600.0));
            let (a, a2, x) = (p(), p(), p());
            let mut rng2 = substream(0, Stream::Init);
            let v = Position::new(rng2.random_range(-80.0..80.0), rng2.random_range(-80.0..80.0));
            let s = TargetState::new(x, v);
            let dd = delay_doppler(&s, &a, &a2, f_c).unwrap();
            for ax in 0..2 {
                let mut e = Position::zeros();
                e[ax] = h;
                let plus = delay_doppler(&TargetState::new(x + e, v), &a, &a2, f_c).unwrap();
                let minus = delay_doppler(&TargetState::new(x - e, v), &a, &a2, f_c).unwrap();
                let fd_tau = (plus.tau - minus.tau) / (2.0 * h);
                let fd_fx = (plus.f - minus.f) / (2.0 * h);
                assert!(rel_err(dd.d_tau_dx[ax], fd_tau) < 1e-5, "tau {ax}");
                assert!(rel_err(dd.d_f_dx[ax], fd_fx) < 1e-5, "fx {ax}");
                let plus = delay_doppler(&TargetState::new(x, v + e), &a, &a2, f_c).unwrap();
                let minus = delay_doppler(&TargetState::new(x, v - e), &a, &a2, f_c).unwrap();
                let fd_fv = (plus.f - minus.f) / (2.0 * h);
                assert!(rel_err(dd.d_f_dv[ax], fd_fv) < 1e-5, "fv {ax}");
            }
        }
    }

    #[test]
    fn steering_examples() {
        let s = steering(0.0, 4);
        for z in s.iter() {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
        let s = steering(FRAC_PI_2, 2);
        let r = 1.0 / 2f64.sqrt();
        assert!((s[0] - Complex64::new(r, 0.0)).norm() < 1e-15);
        assert!((s[1] - Complex64::new(-r, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn angle_examples() {
        let o = Position::new(0.0, 0.0);
        assert_eq!(relative_angle(&o, &Position::new(1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(relative_angle(&o, &Position::new(0.0, 1.0)).unwrap(), FRAC_PI_2);
        assert!(relative_angle(&o, &o).is_err());
    }

    proptest! {
        #[test]
        fn steering_unit_norm(theta in -PI..PI, n in 1usize..=8) {
            prop_assert!((steering(theta, n).norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn angle_symmetric(ax in 0.0..600.0f64, ay in 0.0..600.0f64, bx in 0.0..600.0f64, by in 0.0..600.0f64) {
            prop_assume!(ax != bx);
            let a = Position::new(ax, ay);
            let b = Position::new(bx, by);
            prop_assert_eq!(relative_angle(&a, &b).unwrap(), relative_angle(&b, &a).unwrap());
        }

        #[test]
        fn delay_doppler_symmetric(
            ax in 0.0..600.0f64, ay in 0.0..600.0f64, bx in 0.0..600.0f64, by in 0.0..600.0f64,
            vx in -80.0..80.0f64, vy in -80.0..80.0f64,
        ) {
            let s = TargetState::new(Position::new(300.5, 299.5), Position::new(vx, vy));
            let a = Position::new(ax, ay);
            let b = Position::new(bx, by);
            let ab = delay_doppler(&s, &a, &b, 5.89e9).unwrap();
            let ba = delay_doppler(&s, &b, &a, 5.89e9).unwrap();
            prop_assert!((ab.tau - ba.tau).abs() <= 1e-12 * ab.tau);
            prop_assert!((ab.f - ba.f).abs() <= 1e-9 * ab.f.abs().max(1.0));
        }
    }
}
