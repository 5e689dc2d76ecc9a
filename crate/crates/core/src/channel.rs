//! Communication channels: Rician initialisation, Gauss-Markov aging and the
//! pilot-limited MMSE estimation model.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{relative_angle, steering, CVector};
use crate::scenario::Scenario;

/// Path loss in dB at distance `d` (m) and carrier `f_c` (Hz).
pub fn path_loss_db(d: f64, f_c: f64) -> f64 {
    32.4 + 45.0 * d.log10() + 20.0 * (f_c / 1e9).log10()
}

/// Linear large-scale attenuation.
pub fn large_scale_fading(d: f64, f_c: f64) -> f64 {
    10f64.powf(-path_loss_db(d, f_c) / 10.0)
}

/// One draw of `CN(0, variance)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng, variance))
}

pub fn init_channel<R: Rng + ?Sized>(
    lambda: f64,
    kappa_bar: f64,
    theta: f64,
    n_tx: usize,
    rng: &mut R,
) -> CVector {
    let g = complex_normal(rng, 1.0);
    let nlos = complex_normal_vec(rng, n_tx, 1.0);
    let los = steering(theta, n_tx) * (g * (kappa_bar * n_tx as f64).sqrt());
    (los + nlos) * Complex64::from((lambda / (kappa_bar + 1.0)).sqrt())
}

pub fn evolve_channel<R: Rng + ?Sized>(h_prev: &CVector, rho: f64, lambda: f64, rng: &mut R) -> CVector {
    let innov = complex_normal_vec(rng, h_prev.len(), lambda);
    h_prev * Complex64::from(rho) + innov * Complex64::from((1.0 - rho * rho).max(0.0).sqrt())
}

/// Number of pilot symbols used to estimate user `k`'s channel on `subband`.
///
/// The user's own subband is estimated in the local phase with all `b`
/// subcarriers. Any other subband in `federated_subbands` is estimated
/// over that subband's `b_f` federated subcarriers.
pub fn pilot_count(
    user_cell: usize,
    subband: usize,
    federated_subbands: &[usize],
    b: usize,
    b_f: usize,
    d_ce: usize,
) -> Result<usize> {
    if subband == user_cell {
        Ok(b * d_ce)
    } else if federated_subbands.contains(&subband) {
        Ok(b_f * d_ce)
    } else {
        Err(Error::Logic(format!(
            "user of cell {user_cell} needs no estimate on subband {subband}"
        )))
    }
}

/// Per-entry MMSE error variance after `pilots` pilot symbols of power `p_ce`.
pub fn estimation_error_variance(lambda: f64, rho: f64, p_ce: f64, pilots: usize, sigma: f64) -> f64 {
    let lambda_bar = (1.0 - rho * rho) * lambda;
    let snr = p_ce * pilots as f64 * lambda_bar;
    if snr == 0.0 {
        return lambda_bar;
    }
    lambda_bar * (1.0 - snr / (snr + sigma))
}

pub fn estimate_channel<R: Rng + ?Sized>(h_true: &CVector, delta: f64, rng: &mut R) -> CVector {
    h_true + complex_normal_vec(rng, h_true.len(), delta)
}

/// True channels, current-frame estimates and error variances for every
/// (AP, user, subband) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBook {
    pub n_aps: usize,
    pub n_users: usize,
    pub n_subbands: usize,
    pub n_tx: usize,
    /// Large-scale attenuation per (AP, user).
    pub lambda: Vec<f64>,
    /// AP-to-user angle per (AP, user).
    pub theta: Vec<f64>,
    h: Vec<CVector>,
    h_hat: Vec<Option<CVector>>,
    delta: Vec<f64>,
    pub frame: usize,
}

impl ChannelBook {
    pub fn new<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Self> {
        let cfg = &scenario.config;
        let n_aps = cfg.total_aps();
        let n_users = cfg.total_users();
        let n_subbands = cfg.cells;
        let mut lambda = Vec::with_capacity(n_aps * n_users);
        let mut theta = Vec::with_capacity(n_aps * n_users);
        for a in 0..n_aps {
            for k in 0..n_users {
                let ap = &scenario.ap_positions[a];
                let ue = &scenario.user_positions[k];
                let d = (ue - ap).norm();
                if !(d > 0.0) {
                    return Err(Error::DegenerateGeometry(format!("user {k} coincides with AP {a}")));
                }
                lambda.push(large_scale_fading(d, cfg.f_c));
                theta.push(relative_angle(ap, ue)?);
            }
        }
        let mut h = Vec::with_capacity(n_aps * n_users * n_subbands);
        for pair in 0..n_aps * n_users {
            for _ in 0..n_subbands {
                h.push(init_channel(lambda[pair], cfg.kappa_bar, theta[pair], cfg.n_tx, rng));
            }
        }
        let n = h.len();
        Ok(Self {
            n_aps,
            n_users,
            n_subbands,
            n_tx: cfg.n_tx,
            lambda,
            theta,
            h,
            h_hat: vec![None; n],
            delta: vec![0.0; n],
            frame: 0,
        })
    }

    fn idx(&self, a: usize, k: usize, i: usize) -> usize {
        debug_assert!(a < self.n_aps && k < self.n_users && i < self.n_subbands);
        (a * self.n_users + k) * self.n_subbands + i
    }

    pub fn lambda(&self, a: usize, k: usize) -> f64 {
        self.lambda[a * self.n_users + k]
    }

    pub fn theta(&self, a: usize, k: usize) -> f64 {
        self.theta[a * self.n_users + k]
    }

    pub fn h(&self, a: usize, k: usize, i: usize) -> &CVector {
        &self.h[self.idx(a, k, i)]
    }

    pub fn h_hat(&self, a: usize, k: usize, i: usize) -> Option<&CVector> {
        self.h_hat[self.idx(a, k, i)].as_ref()
    }

    /// Estimate, failing if the triple has not been estimated this frame.
    pub fn h_hat_checked(&self, a: usize, k: usize, i: usize) -> Result<&CVector> {
        self.h_hat(a, k, i).ok_or_else(|| {
            Error::Logic(format!("no channel estimate for AP {a}, user {k}, subband {i}"))
        })
    }

    /// Error variance of the current estimate (0 when not estimated).
    pub fn delta(&self, a: usize, k: usize, i: usize) -> f64 {
        self.delta[self.idx(a, k, i)]
    }

    pub fn is_estimated(&self, a: usize, k: usize, i: usize) -> bool {
        self.h_hat[self.idx(a, k, i)].is_some()
    }

    /// Estimate one triple with the given error variance.
    pub fn estimate<R: Rng + ?Sized>(&mut self, a: usize, k: usize, i: usize, delta: f64, rng: &mut R) {
        let j = self.idx(a, k, i);
        self.h_hat[j] = Some(estimate_channel(&self.h[j], delta, rng));
        self.delta[j] = delta;
    }

    pub fn clear_estimates(&mut self) {
        self.h_hat.iter_mut().for_each(|h| *h = None);
        self.delta.iter_mut().for_each(|d| *d = 0.0);
    }

    /// Age every channel by one frame and drop the stale estimates.
    pub fn evolve<R: Rng + ?Sized>(&mut self, rho: f64, rng: &mut R) {
        for j in 0..self.h.len() {
            let pair = j / self.n_subbands;
            self.h[j] = evolve_channel(&self.h[j], rho, self.lambda[pair], rng);
        }
        self.clear_estimates();
        self.frame += 1;
    }

    /// Overwrite a true channel; used by tests building controlled geometries.
    pub fn set_h(&mut self, a: usize, k: usize, i: usize, h: CVector) {
        let j = self.idx(a, k, i);
        self.h[j] = h;
    }

    /// Overwrite an estimate and its error variance directly.
    pub fn set_estimate(&mut self, a: usize, k: usize, i: usize, h_hat: CVector, delta: f64) {
        let j = self.idx(a, k, i);
        self.h_hat[j] = Some(h_hat);
        self.delta[j] = delta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use crate::scenario::{build_scenario, ScenarioConfig};

    #[test]
    fn rician_second_moment() {
        let mut rng = substream(3, Stream::Channel);
        let (lambda, n) = (2.5, 4);
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| init_channel(lambda, 4.0, 0.3, n, &mut rng).norm_squared())
            .sum::<f64>()
            / draws as f64;
        assert!((mean / (lambda * n as f64) - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn rayleigh_limit_variance() {
        let mut rng = substream(4, Stream::Channel);
        let draws = 100_000;
        let var: f64 = (0..draws)
            .map(|_| init_channel(1.5, 0.0, 0.7, 1, &mut rng)[0].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((var / 1.5 - 1.0).abs() < 0.02);
    }

    #[test]
    fn los_limit_follows_steering() {
        let mut rng = substream(5, Stream::Channel);
        let theta = 0.4;
        let h = init_channel(1.0, 1e12, theta, 4, &mut rng);
        let v = steering(theta, 4);
        let proj = v.dotc(&h).norm();
        assert!((proj / h.norm() - 1.0).abs() < 1e-5);
        for z in h.iter() {
            assert!((z.norm() - h[0].norm()).abs() < 1e-5 * h[0].norm());
        }
    }

    #[test]
    fn frozen_and_memoryless_evolution() {
        let mut rng = substream(6, Stream::Channel);
        let h = init_channel(1.0, 4.0, 0.0, 4, &mut rng);
        assert_eq!(evolve_channel(&h, 1.0, 1.0, &mut rng), h);
        let draws = 100_000;
        let var: f64 = (0..draws)
            .map(|_| evolve_channel(&h, 0.0, 3.0, &mut rng)[1].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((var / 3.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn stationary_variance() {
        let mut rng = substream(7, Stream::Channel);
        let lambda = 0.8;
        let mut h = init_channel(lambda, 0.0, 0.0, 8, &mut rng);
        let steps = 200_000;
        let mut acc = 0.0;
        for _ in 0..steps {
            h = evolve_channel(&h, 0.98, lambda, &mut rng);
            acc += h.norm_squared() / 8.0;
        }
        assert!((acc / steps as f64 / lambda - 1.0).abs() < 0.03);
    }

    #[test]
    fn pilot_counts() {
        assert_eq!(pilot_count(0, 0, &[], 16, 0, 1).unwrap(), 16);
        assert_eq!(pilot_count(0, 1, &[0, 1], 16, 6, 1).unwrap(), 6);
        assert_eq!(pilot_count(0, 1, &[0, 1], 16, 0, 1).unwrap(), 0);
        assert!(matches!(pilot_count(0, 2, &[0, 1], 16, 6, 1), Err(Error::Logic(_))));
    }

    #[test]
    fn error_variance_examples() {
        assert_eq!(estimation_error_variance(1.0, 0.0, 2.0, 1, 2.0), 0.5);
        let lambda_bar = (1.0 - 0.98f64.powi(2)) * 3.0;
        assert_eq!(estimation_error_variance(3.0, 0.98, 1.0, 0, 1e-3), lambda_bar);
        assert!(estimation_error_variance(1.0, 0.5, 1e30, 16, 1e-15) < 1e-40);
        let mut prev = f64::INFINITY;
        for d in 0..40 {
            let v = estimation_error_variance(2.0, 0.9, 0.3, d, 0.1);
            assert!(v < prev && v <= (1.0 - 0.81) * 2.0);
            prev = v;
        }
    }

    #[test]
    fn estimation_error_statistics() {
        let mut rng = substream(8, Stream::Estimation);
        let n = 4;
        let delta = 0.7;
        let draws = 100_000;
        let mut err2 = 0.0;
        let (mut seh, mut see, mut shh) = (0.0, 0.0, 0.0);
        let mut hrng = substream(9, Stream::Channel);
        for _ in 0..draws {
            let h = init_channel(1.0, 0.0, 0.0, n, &mut hrng);
            let hh = estimate_channel(&h, delta, &mut rng);
            let e = &hh - &h;
            err2 += e.norm_squared();
            seh += (e[0] * h[0].conj()).re;
            see += e[0].norm_sqr();
            shh += h[0].norm_sqr();
        }
        assert!((err2 / draws as f64 / (delta * n as f64) - 1.0).abs() < 0.03);
        assert!((seh / (see * shh).sqrt()).abs() < 0.02);
        let h = init_channel(1.0, 0.0, 0.0, n, &mut hrng);
        assert_eq!(estimate_channel(&h, 0.0, &mut rng), h);
    }

    #[test]
    fn path_loss_reference() {
        let pl = path_loss_db(100.0, 5.89e9);
        let expect = 32.4 + 90.0 + 20.0 * 5.89f64.log10();
        assert!((pl - expect).abs() < 1e-12);
        assert!(large_scale_fading(200.0, 5.89e9) < large_scale_fading(100.0, 5.89e9));
    }

    #[test]
    fn book_layout() {
        let s = build_scenario(ScenarioConfig::desk(), 2).unwrap();
        let mut rng = substream(2, Stream::Channel);
        let mut book = ChannelBook::new(&s, &mut rng).unwrap();
        assert_eq!(book.h(3, 3, 1).len(), 4);
        assert!(!book.is_estimated(0, 0, 0));
        assert!(book.h_hat_checked(0, 0, 0).is_err());
        book.estimate(0, 0, 0, 0.0, &mut rng);
        assert_eq!(book.h_hat(0, 0, 0).unwrap(), book.h(0, 0, 0));
        let before = book.h(1, 2, 0).clone();
        book.evolve(0.98, &mut rng);
        assert!(!book.is_estimated(0, 0, 0));
        assert_ne!(book.h(1, 2, 0), &before);
        assert_eq!(book.frame, 1);
    }
}
