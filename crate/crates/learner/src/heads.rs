//! Factorised action distributions over mixed discrete and continuous
//! components.
//!
//! The actor network emits one logit per binary component, `n` logits per
//! categorical component and one mean per bounded component. Bounded
//! components also own a state-independent log standard deviation. A
//! bounded draw is a Gaussian `u` squashed into `[lo, hi]` by a sigmoid;
//! the stored action is the pre-squash `u`, and its log-probability
//! includes the change-of-variables term. Entropies of bounded components
//! are the closed-form Gaussian entropies before squashing.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LearnerError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Binary,
    /// One class per entry; the entry is the raw action value of that class.
    Categorical(Vec<f64>),
    Bounded { lo: f64, hi: f64 },
}

impl Component {
    fn outputs(&self) -> usize {
        match self {
            Component::Categorical(v) => v.len(),
            _ => 1,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std
}

/// Per-component gradient accumulator target.
pub struct HeadGrad<'a> {
    pub d_out: &'a mut [f64],
    pub d_log_std: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub components: Vec<Component>,
}

impl Head {
    pub fn new(components: Vec<Component>) -> Self {
        Self { components }
    }

    pub fn output_len(&self) -> usize {
        self.components.iter().map(Component::outputs).sum()
    }

    pub fn std_len(&self) -> usize {
        self.components.iter().filter(|c| matches!(c, Component::Bounded { .. })).count()
    }

    pub fn action_len(&self) -> usize {
        self.components.len()
    }

    fn check(&self, out: &[f64], log_std: &[f64], stored: Option<&[f64]>) -> Result<()> {
        if out.len() != self.output_len() || log_std.len() != self.std_len() {
            return Err(LearnerError::Shape(format!(
                "head expects {} outputs and {} log-stds, got {} and {}",
                self.output_len(),
                self.std_len(),
                out.len(),
                log_std.len()
            )));
        }
        if let Some(s) = stored {
            if s.len() != self.action_len() {
                return Err(LearnerError::Shape(format!("{} actions for {} components", s.len(), self.action_len())));
            }
        }
        Ok(())
    }

    /// Draw one action per component (stored form).
    pub fn sample<R: Rng + ?Sized>(&self, out: &[f64], log_std: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check(out, log_std, None)?;
        let (mut o, mut s) = (0, 0);
        let mut stored = Vec::with_capacity(self.components.len());
        for c in &self.components {
            match c {
                Component::Binary => {
                    stored.push(if rng.random::<f64>() < sigmoid(out[o]) { 1.0 } else { 0.0 });
                }
                Component::Categorical(values) => {
                    let lp = log_softmax(&out[o..o + values.len()]);
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = values.len() - 1;
                    for (i, l) in lp.iter().enumerate() {
                        acc += l.exp();
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    stored.push(pick as f64);
                }
                Component::Bounded { .. } => {
                    let z: f64 = rng.sample(StandardNormal);
                    stored.push(out[o] + log_std[s].exp() * z);
                    s += 1;
                }
            }
            o += c.outputs();
        }
        Ok(stored)
    }

    /// Most likely action per component (stored form).
    pub fn mode(&self, out: &[f64], log_std: &[f64]) -> Result<Vec<f64>> {
        self.check(out, log_std, None)?;
        let mut o = 0;
        let mut stored = Vec::with_capacity(self.components.len());
        for c in &self.components {
            stored.push(match c {
                Component::Binary => (out[o] >= 0.0) as u8 as f64,
                Component::Categorical(values) => {
                    let slice = &out[o..o + values.len()];
                    let mut best = 0;
                    for i in 1..slice.len() {
                        if slice[i] > slice[best] {
                            best = i;
                        }
                    }
                    best as f64
                }
                Component::Bounded { .. } => out[o],
            });
            o += c.outputs();
        }
        Ok(stored)
    }

    /// Map stored actions to the environment's raw action values.
    pub fn to_raw(&self, stored: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(stored)
            .map(|(c, &a)| match c {
                Component::Binary => a,
                Component::Categorical(values) => values[a as usize],
                Component::Bounded { lo, hi } => lo + (hi - lo) * sigmoid(a),
            })
            .collect()
    }

    /// `(log-probability, entropy)` of a stored action.
    pub fn evaluate(&self, out: &[f64], log_std: &[f64], stored: &[f64]) -> Result<(f64, f64)> {
        self.evaluate_impl(out, log_std, stored, 0.0, 0.0, None)
    }

    /// As [`Head::evaluate`], also accumulating the gradient of
    /// `w_logp * log_prob + w_entropy * entropy` into `grad`.
    pub fn evaluate_grad(
        &self,
        out: &[f64],
        log_std: &[f64],
        stored: &[f64],
        w_logp: f64,
        w_entropy: f64,
        grad: HeadGrad<'_>,
    ) -> Result<(f64, f64)> {
        self.evaluate_impl(out, log_std, stored, w_logp, w_entropy, Some(grad))
    }

    fn evaluate_impl(
        &self,
        out: &[f64],
        log_std: &[f64],
        stored: &[f64],
        w_logp: f64,
        w_ent: f64,
        mut grad: Option<HeadGrad<'_>>,
    ) -> Result<(f64, f64)> {
        self.check(out, log_std, Some(stored))?;
        let (mut o, mut s) = (0, 0);
        let (mut logp, mut ent) = (0.0, 0.0);
        for (c, &a) in self.components.iter().zip(stored) {
            match c {
                Component::Binary => {
                    if a != 0.0 && a != 1.0 {
                        return Err(LearnerError::Support(format!("binary action {a}")));
                    }
                    let x = out[o];
                    let p = sigmoid(x);
                    logp += -(a * softplus(-x) + (1.0 - a) * softplus(x));
                    let h = p * softplus(-x) + (1.0 - p) * softplus(x);
                    ent += h;
                    if let Some(g) = grad.as_mut() {
                        g.d_out[o] += w_logp * (a - p) - w_ent * x * p * (1.0 - p);
                    }
                }
                Component::Categorical(values) => {
                    let n = values.len();
                    if !(a >= 0.0 && a.fract() == 0.0 && (a as usize) < n) {
                        return Err(LearnerError::Support(format!("class {a} of {n}")));
                    }
                    let lp = log_softmax(&out[o..o + n]);
                    let h: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
                    logp += lp[a as usize];
                    ent += h;
                    if let Some(g) = grad.as_mut() {
                        for (j, l) in lp.iter().enumerate() {
                            let pj = l.exp();
                            let one = (j == a as usize) as u8 as f64;
                            g.d_out[o + j] += w_logp * (one - pj) - w_ent * pj * (l + h);
                        }
                    }
                }
                Component::Bounded { lo, hi } => {
                    if !a.is_finite() {
                        return Err(LearnerError::Support(format!("continuous action {a}")));
                    }
                    let (mu, ls) = (out[o], log_std[s]);
                    let z = (a - mu) * (-ls).exp();
                    let sg = sigmoid(a);
                    let jac = ((hi - lo) * sg * (1.0 - sg)).ln();
                    logp += -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln() - jac;
                    ent += gaussian_entropy(ls);
                    if let Some(g) = grad.as_mut() {
                        g.d_out[o] += w_logp * z * (-ls).exp();
                        g.d_log_std[s] += w_logp * (z * z - 1.0) + w_ent;
                    }
                    s += 1;
                }
            }
            o += c.outputs();
        }
        Ok((logp, ent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fair_bits() {
        let head = Head::new(vec![Component::Binary; 3]);
        let (lp, h) = head.evaluate(&[0.0; 3], &[], &[1.0, 0.0, 1.0]).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!((h - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_categorical() {
        let head = Head::new(vec![Component::Categorical((0..8).map(f64::from).collect())]);
        let (lp, h) = head.evaluate(&[0.3; 8], &[], &[5.0]).unwrap();
        assert!((h - 8f64.ln()).abs() < 1e-14);
        assert!((lp + 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn out_of_support_is_an_error() {
        let head = Head::new(vec![Component::Binary, Component::Categorical(vec![0.0, 1.0])]);
        assert!(head.evaluate(&[0.0; 3], &[], &[0.5, 0.0]).is_err());
        assert!(head.evaluate(&[0.0; 3], &[], &[1.0, 2.0]).is_err());
        assert!(head.evaluate(&[0.0; 3], &[], &[1.0]).is_err());
    }

    #[test]
    fn samples_stay_in_the_box_and_have_finite_log_probs() {
        let head = Head::new(vec![
            Component::Binary,
            Component::Categorical(vec![-1.0, 0.0, 1.0]),
            Component::Bounded { lo: 0.0, hi: 10.0 },
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = [4.0, 0.1, -2.0, 3.0, 1.5];
        for _ in 0..1000 {
            let a = head.sample(&out, &[0.5], &mut rng).unwrap();
            let raw = head.to_raw(&a);
            assert!((0.0..=10.0).contains(&raw[2]));
            assert!(head.evaluate(&out, &[0.5], &a).unwrap().0.is_finite());
        }
        assert_eq!(head.mode(&out, &[0.5]).unwrap(), vec![1.0, 2.0, 1.5]);
    }

    #[test]
    fn bounded_log_prob_is_a_density_of_the_squashed_value() {
        // Integrate the squashed density numerically over [lo, hi].
        let (lo, hi) = (2.0, 5.0);
        let head = Head::new(vec![Component::Bounded { lo, hi }]);
        let (mu, ls) = (0.4, -0.2);
        let n = 20000;
        let mut total = 0.0;
        for i in 0..n {
            let y = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
            let s = (y - lo) / (hi - lo);
            let u = (s / (1.0 - s)).ln();
            total += head.evaluate(&[mu], &[ls], &[u]).unwrap().0.exp() * (hi - lo) / n as f64;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }
}
