//! Radar Fisher information, the Bayesian information recursion and the
//! resulting tracking errors.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{delay_doppler, relative_angle, steering, DelayDoppler, TargetState, C0};
use crate::comm_metrics::RegimeContext;
use crate::scenario::{Position, Scenario, ScenarioConfig};
use crate::topology::BeamPowerPlan;

/// Per-target tracking belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingBelief {
    /// Predicted state for the current frame.
    pub x_pred: Vector4<f64>,
    /// Bayesian information matrix of the previous frame.
    pub j_prev: Matrix4<f64>,
    /// Posterior estimate of the previous frame.
    pub x_est: Vector4<f64>,
}

impl SensingBelief {
    /// Frame-0 belief from the configured prior standard deviations.
    pub fn initial(x_est: Vector4<f64>, cfg: &ScenarioConfig) -> Self {
        Self {
            x_pred: predict_state(&x_est, cfg.t_bar()),
            j_prev: initial_information(cfg),
            x_est,
        }
    }
}

pub fn initial_information(cfg: &ScenarioConfig) -> Matrix4<f64> {
    let ip = 1.0 / (cfg.sigma_p0 * cfg.sigma_p0);
    let iv = 1.0 / (cfg.sigma_v0 * cfg.sigma_v0);
    Matrix4::from_diagonal(&Vector4::new(ip, ip, iv, iv))
}

/// Round-trip fading power of the path AP `a2` -> target -> AP `a`.
pub fn radar_fading(target: &Position, ap_a: &Position, ap_a2: &Position, cfg: &ScenarioConfig) -> f64 {
    let n = cfg.n_tx as f64;
    let num = cfg.g_r * n * n * C0 * C0 * cfg.sigma_rcs;
    let spread: f64 = [ap_a, ap_a2]
        .iter()
        .map(|ap| (target - *ap).norm_squared().powi(cfg.radar_range_power))
        .product();
    num / ((4.0 * PI).powi(3) * cfg.f_c * cfg.f_c * spread)
}

/// Power the AP in plan row `ap_slot` radiates towards `angle` on subband slot `si`.
pub fn sense_gain(ap_slot: usize, angle: f64, si: usize, plan: &BeamPowerPlan, n_tx: usize) -> f64 {
    let v = steering(angle, n_tx);
    (0..plan.n_entities)
        .map(|z| {
            let p = plan.power(ap_slot, z);
            if p == 0.0 {
                0.0
            } else {
                p * v.dotc(plan.beam(ap_slot, z, si)).norm_sqr()
            }
        })
        .sum()
}

/// Delay, Doppler and cross information weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WaveformWeights {
    pub tt: f64,
    pub ff: f64,
    pub tf: f64,
}

/// One subband's contribution to the waveform weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubbandTerm {
    /// Sensing gain of the transmitting AP towards the target.
    pub gain: f64,
    pub subcarriers: usize,
    pub slots: usize,
    /// Subband carrier over the reference carrier.
    pub carrier_ratio: f64,
}

fn sum_idx(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

fn sum_sq(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) * (2.0 * n - 1.0) / 6.0
}

pub fn waveform_weights(lambda_r: f64, terms: &[SubbandTerm], delta_f: f64, t_sym: f64) -> WaveformWeights {
    let mut w = WaveformWeights::default();
    let c = 8.0 * PI * PI * lambda_r;
    for t in terms {
        let g = c * t.gain;
        let (b, l) = (t.subcarriers, t.slots);
        w.tt += g * delta_f * delta_f * sum_sq(b) * l as f64;
        w.ff += g * (t.carrier_ratio * t_sym).powi(2) * b as f64 * sum_sq(l);
        w.tf += g * t_sym * delta_f * sum_idx(b) * sum_idx(l);
    }
    w
}

/// 2x2 blocks of one AP pair's Fisher information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FimPair {
    pub p: Matrix2<f64>,
    pub pv: Matrix2<f64>,
    pub v: Matrix2<f64>,
}

impl FimPair {
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut f = Matrix4::zeros();
        f.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.p);
        f.fixed_view_mut::<2, 2>(0, 2).copy_from(&self.pv);
        f.fixed_view_mut::<2, 2>(2, 0).copy_from(&self.pv.transpose());
        f.fixed_view_mut::<2, 2>(2, 2).copy_from(&self.v);
        f
    }
}

pub fn fim_pair(w: &WaveformWeights, dd: &DelayDoppler) -> FimPair {
    let tx = dd.d_tau_dx;
    let fx = dd.d_f_dx;
    let fv = dd.d_f_dv;
    let mut p = Matrix2::zeros();
    let mut pv = Matrix2::zeros();
    let mut v = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            p[(i, j)] = tx[i] * tx[j] * w.tt + fx[i] * fx[j] * w.ff - (fx[i] * tx[j] + fx[j] * tx[i]) * w.tf;
            pv[(i, j)] = fv[j] * (-w.tf * tx[i] + w.ff * fx[i]);
            v[(i, j)] = fv[i] * fv[j] * w.ff;
        }
    }
    FimPair { p, pv, v }
}

/// Fisher information about target `q` gathered by every AP pair of `ctx`.
pub fn fim_total(
    q: usize,
    target: &TargetState,
    ctx: &RegimeContext,
    plan: &BeamPowerPlan,
    scenario: &Scenario,
) -> Result<Matrix4<f64>> {
    let cfg = &scenario.config;
    if ctx.target_slot(q).is_none() {
        return Err(Error::Logic(format!("target {q} not served by {:?} context {}", ctx.regime, ctx.index)));
    }
    let mut f = Matrix4::zeros();
    let mut terms = Vec::with_capacity(ctx.subbands.len());
    for (s2, &a2) in ctx.aps.iter().enumerate() {
        let pos2 = &scenario.ap_positions[a2];
        let angle = relative_angle(pos2, &target.pos)?;
        terms.clear();
        for (si, &i) in ctx.subbands.iter().enumerate() {
            terms.push(SubbandTerm {
                gain: sense_gain(s2, angle, si, plan, cfg.n_tx),
                subcarriers: ctx.bandwidth[si],
                slots: ctx.slots,
                carrier_ratio: cfg.subband_carrier(i) / cfg.f_c,
            });
        }
        if terms.iter().all(|t| t.gain == 0.0) {
            continue;
        }
        for &a in &ctx.aps {
            let pos = &scenario.ap_positions[a];
            let dd = delay_doppler(target, pos, pos2, cfg.f_c)?;
            let lambda_r = radar_fading(&target.pos, pos, pos2, cfg);
            let w = waveform_weights(lambda_r, &terms, cfg.delta_f, cfg.t_sym());
            f += fim_pair(&w, &dd).to_matrix() / scenario.ap_noise[a];
        }
    }
    Ok((f + f.transpose()) * 0.5)
}

/// Symmetric pseudo-inverse; eigenvalues at or below `1e-12 * max` count as zero.
fn pseudo_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    if max == 0.0 {
        return Matrix4::zeros();
    }
    let inv = eig.eigenvalues.map(|e| if e > 1e-12 * max { 1.0 / e } else { 0.0 });
    eig.eigenvectors * Matrix4::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn spd_inverse(m: &Matrix4<f64>, what: &str) -> Result<Matrix4<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))?;
    let inv = chol.inverse();
    Ok((inv + inv.transpose()) * 0.5)
}

/// Measurement information: inverse of the diagonal of the measurement CRB.
pub fn measurement_information(f_meas: &Matrix4<f64>) -> Matrix4<f64> {
    let crb = pseudo_inverse(f_meas);
    Matrix4::from_diagonal(&crb.diagonal().map(|s| if s > 0.0 { 1.0 / s } else { 0.0 }))
}

/// Bayesian information after one prediction and one measurement.
pub fn bfim_update(
    j_prev: &Matrix4<f64>,
    f_meas: &Matrix4<f64>,
    g: &Matrix4<f64>,
    e: &Matrix4<f64>,
) -> Result<Matrix4<f64>> {
    let prior_cov = e + g * spd_inverse(j_prev, "previous information matrix")? * g.transpose();
    let prior = spd_inverse(&prior_cov, "predicted covariance")?;
    Ok(prior + measurement_information(f_meas))
}

/// `(position error m^2, velocity error (m/s)^2)`.
pub fn sensing_errors(j: &Matrix4<f64>) -> Result<(f64, f64)> {
    let c = spd_inverse(j, "information matrix")?;
    Ok((c[(0, 0)] + c[(1, 1)], c[(2, 2)] + c[(3, 3)]))
}

pub fn predict_state(x_est: &Vector4<f64>, t_bar: f64) -> Vector4<f64> {
    crate::kinematics::transition_matrix(t_bar) * x_est
}

/// Posterior estimate: truth plus independent noise with the per-coordinate CRB.
pub fn draw_posterior<R: Rng + ?Sized>(x_true: &Vector4<f64>, j: &Matrix4<f64>, rng: &mut R) -> Result<Vector4<f64>> {
    let c = spd_inverse(j, "information matrix")?;
    Ok(Vector4::from_fn(|i, _| {
        let z: f64 = rng.sample(StandardNormal);
        x_true[i] + c[(i, i)].max(0.0).sqrt() * z
    }))
}

/// Draw a frame-0 estimate around `x_true` using the prior information.
pub fn draw_initial_estimate<R: Rng + ?Sized>(x_true: &Vector4<f64>, cfg: &ScenarioConfig, rng: &mut R) -> Vector4<f64> {
    let sd = [cfg.sigma_p0, cfg.sigma_p0, cfg.sigma_v0, cfg.sigma_v0];
    Vector4::from_fn(|i, _| {
        let z: f64 = rng.sample(StandardNormal);
        x_true[i] + sd[i] * z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{advance_target, process_noise, transition_matrix};
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_subcarrier_or_slot() {
        let t = SubbandTerm { gain: 1.0, subcarriers: 1, slots: 50, carrier_ratio: 1.0 };
        let w = waveform_weights(1.0, &[t], 156.25e3, 6.4e-6);
        assert_eq!(w.tt, 0.0);
        assert!(w.ff > 0.0);
        let t = SubbandTerm { gain: 1.0, subcarriers: 16, slots: 1, carrier_ratio: 1.0 };
        let w = waveform_weights(1.0, &[t], 156.25e3, 6.4e-6);
        assert_eq!((w.ff, w.tf), (0.0, 0.0));
        assert!(w.tt > 0.0);
    }

    #[test]
    fn closed_form_matches_triple_sum() {
        let (df, ts, lam) = (156.25e3, 6.4e-6, 3.7e-9);
        let terms = [
            SubbandTerm { gain: 0.8, subcarriers: 16, slots: 96, carrier_ratio: 1.0 },
            SubbandTerm { gain: 0.3, subcarriers: 9, slots: 96, carrier_ratio: 1.0004 },
        ];
        let w = waveform_weights(lam, &terms, df, ts);
        let (mut tt, mut ff, mut tf) = (0.0, 0.0, 0.0);
        for t in &terms {
            for b in 0..t.subcarriers {
                for l in 0..t.slots {
                    let (b, l) = (b as f64, l as f64);
                    tt += 8.0 * (PI * b * df).powi(2) * lam * t.gain;
                    ff += 8.0 * (PI * t.carrier_ratio * l * ts).powi(2) * lam * t.gain;
                    tf += 8.0 * PI * PI * b * l * ts * df * lam * t.gain;
                }
            }
        }
        for (a, b) in [(w.tt, tt), (w.ff, ff), (w.tf, tf)] {
            assert!((a - b).abs() / b < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_and_no_doppler() {
        let dd = DelayDoppler {
            tau: 1e-6,
            f: 10.0,
            d_tau_dx: Position::new(1e-9, -2e-9),
            d_f_dx: Position::new(0.3, 0.1),
            d_f_dv: Position::new(19.0, -4.0),
        };
        let z = fim_pair(&WaveformWeights::default(), &dd).to_matrix();
        assert_eq!(z, Matrix4::zeros());
        let w = WaveformWeights { tt: 5e16, ff: 0.0, tf: 0.0 };
        let f = fim_pair(&w, &dd);
        assert_eq!(f.pv, Matrix2::zeros());
        assert_eq!(f.v, Matrix2::zeros());
        assert_eq!(f.p[(0, 1)], dd.d_tau_dx[0] * dd.d_tau_dx[1] * w.tt);
    }

    #[test]
    fn information_examples() {
        let j = Matrix4::identity() * 4.0;
        let (p, v) = sensing_errors(&j).unwrap();
        assert!((p - 0.5).abs() < 1e-15 && (v - 0.5).abs() < 1e-15);
        let j = Matrix4::from_diagonal(&Vector4::new(4.0, 4.0, 1.0, 1.0));
        assert_eq!(sensing_errors(&j).unwrap(), (0.5, 2.0));
        assert!(matches!(sensing_errors(&Matrix4::zeros()), Err(Error::Numeric(_))));
    }

    #[test]
    fn bfim_limits() {
        let cfg = ScenarioConfig::reference();
        let g = transition_matrix(cfg.t_bar());
        let e = process_noise(cfg.delta_q, cfg.t_bar());
        let j0 = initial_information(&cfg);
        let pure = bfim_update(&j0, &Matrix4::zeros(), &g, &e).unwrap();
        let expect = (e + g * j0.try_inverse().unwrap() * g.transpose()).try_inverse().unwrap();
        assert!((pure - expect).norm() < 1e-12 * expect.norm());
        let f = Matrix4::from_diagonal(&Vector4::new(2.0, 3.0, 4.0, 5.0));
        let static_update = bfim_update(&j0, &f, &Matrix4::identity(), &Matrix4::zeros()).unwrap();
        assert!((static_update - (j0 + f)).norm() < 1e-12);
        assert!(bfim_update(&Matrix4::zeros(), &f, &g, &e).is_err());
    }

    #[test]
    fn singular_measurement_contributes_only_informative_axes() {
        let mut f = Matrix4::zeros();
        f[(0, 0)] = 7.0;
        let m = measurement_information(&f);
        assert!((m[(0, 0)] - 7.0).abs() < 1e-12);
        assert_eq!(m[(1, 1)], 0.0);
        assert_eq!(m[(3, 3)], 0.0);
    }

    #[test]
    fn prediction() {
        let x = Vector4::new(0.0, 0.0, 10.0, 0.0);
        assert_eq!(predict_state(&x, 0.1), Vector4::new(1.0, 0.0, 10.0, 0.0));
        let x = Vector4::new(3.0, 4.0, 0.0, 0.0);
        assert_eq!(predict_state(&x, 0.7), x);
        let s = TargetState::from_vector(&Vector4::new(1.0, 2.0, 3.0, -4.0), 0);
        let mut rng = substream(0, Stream::Target);
        let adv = advance_target(&s, 0.0, 0.3, &mut rng);
        assert_eq!(adv.to_vector(), predict_state(&s.to_vector(), 0.3));
    }

    #[test]
    fn radar_fading_decreases_with_distance() {
        let cfg = ScenarioConfig::reference();
        let t = Position::new(0.0, 0.0);
        let a = Position::new(100.0, 0.0);
        let near = radar_fading(&t, &a, &Position::new(0.0, 50.0), &cfg);
        let far = radar_fading(&t, &a, &Position::new(0.0, 60.0), &cfg);
        assert!(far < near);
        let std = ScenarioConfig { radar_range_power: 1, ..cfg.clone() };
        let v = radar_fading(&t, &a, &a, &std);
        let expect = 16.0 * 9e16 / ((4.0 * PI).powi(3) * cfg.f_c * cfg.f_c * 1e8);
        assert!((v - expect).abs() < 1e-12 * expect);
    }

    fn random_spd(rng: &mut impl Rng, scale: f64) -> Matrix4<f64> {
        let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        (a * a.transpose() + Matrix4::identity() * 0.1) * scale
    }

    #[test]
    fn bfim_stays_positive_definite() {
        let mut rng = substream(3, Stream::Init);
        for _ in 0..100 {
            let jp = random_spd(&mut rng, 2.0);
            let e = random_spd(&mut rng, 0.01);
            let mut f = random_spd(&mut rng, 10.0);
            f[(3, 3)] = 0.0;
            let g = transition_matrix(rng.random_range(0.0..1.0));
            let j = bfim_update(&jp, &f, &g, &e).unwrap();
            assert!(SymmetricEigen::new(j).eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn loewner_monotone_errors() {
        let mut rng = substream(4, Stream::Init);
        for _ in 0..100 {
            let j1 = random_spd(&mut rng, 1.0);
            let d = random_spd(&mut rng, 0.5);
            let (p1, v1) = sensing_errors(&j1).unwrap();
            let (p2, v2) = sensing_errors(&(j1 + d)).unwrap();
            assert!(p2 <= p1 && v2 <= v1);
        }
    }

    proptest! {
        #[test]
        fn posterior_noise_scales_with_information(seed in 0u64..1000) {
            let mut rng = substream(seed, Stream::Posterior);
            let x = Vector4::new(1.0, 2.0, 3.0, 4.0);
            let j = Matrix4::identity() * 1e24;
            let est = draw_posterior(&x, &j, &mut rng).unwrap();
            prop_assert!((est - x).amax() < 1e-10);
        }
    }
}
