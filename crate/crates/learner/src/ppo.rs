//! Clipped surrogate and value losses, the moment-estimation optimiser and
//! the linear coefficient schedule.

/// Smooth-L1 penalty.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` with
/// `r = exp(logp_new - logp_old)`; returns `(value, ratio, d value / d logp_new)`.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> (f64, f64, f64) {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, ratio, unclipped)
    } else {
        // `clipped < unclipped` only when the ratio left the interval.
        (clipped, ratio, 0.0)
    }
}

/// Linear interpolation from `start` at step 0 to `end` at `total - 1`.
pub fn linear_anneal(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let frac = (step.min(total - 1)) as f64 / (total - 1) as f64;
    start + (end - start) * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn smooth_l1_slope_continuous_at_one() {
        let h = 1e-7;
        let left = (smooth_l1(1.0) - smooth_l1(1.0 - h)) / h;
        let right = (smooth_l1(1.0 + h) - smooth_l1(1.0)) / h;
        assert!((left - right).abs() < 1e-6);
        assert_eq!(smooth_l1_grad(1.0), 1.0);
    }

    #[test]
    fn on_policy_ratio_is_one() {
        let (v, r, g) = clipped_surrogate(-1.3, -1.3, 0.7, 0.2);
        assert_eq!((v, r, g), (0.7, 1.0, 0.7));
    }

    #[test]
    fn clipped_region_is_flat() {
        let (v, r, g) = clipped_surrogate(0.5, 0.0, 1.0, 0.2);
        assert!(r > 1.2);
        assert_eq!(g, 0.0);
        assert!((v - 1.2).abs() < 1e-15);
        // Negative advantage with a small ratio is clipped too.
        let (_, _, g) = clipped_surrogate(-0.5, 0.0, -1.0, 0.2);
        assert_eq!(g, 0.0);
        // Negative advantage with a large ratio is not.
        let (_, r, g) = clipped_surrogate(0.5, 0.0, -1.0, 0.2);
        assert_eq!(g, -r);
    }

    #[test]
    fn anneal_endpoints() {
        assert_eq!(linear_anneal(0.3, 0.15, 0, 100), 0.3);
        assert_eq!(linear_anneal(0.3, 0.15, 99, 100), 0.15);
        assert!((linear_anneal(1e-3, 1e-4, 50, 101) - 5.5e-4).abs() < 1e-18);
        assert_eq!(linear_anneal(0.3, 0.15, 0, 1), 0.3);
    }
}
