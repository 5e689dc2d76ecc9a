//! Temporal-difference errors, generalised advantages and returns.

/// Floor on the standard deviation used when standardising advantages.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub deltas: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Backward recursion over one episode. The value after the last frame is
/// taken as zero (true episode end).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Advantages {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let n = rewards.len();
    let mut deltas = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        deltas[t] = rewards[t] + gamma * next_v - values[t];
        next_adv = deltas[t] + gamma * lambda * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Advantages { deltas, advantages, returns }
}

/// Standardise advantages jointly over every agent of a role.
pub fn standardize(groups: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n: usize = groups.iter().map(Vec::len).sum();
    if n == 0 {
        return groups.to_vec();
    }
    let mean = groups.iter().flatten().sum::<f64>() / n as f64;
    let var = groups.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(STD_FLOOR);
    groups
        .iter()
        .map(|g| g.iter().map(|a| (a - mean) / std).collect())
        .collect()
}
