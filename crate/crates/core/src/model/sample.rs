use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::NUM_ENV_ACTIONS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "k", rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    TopK(usize),
}

/// Picks an environment action id from a row of logits. Ids at or above
/// the number of environment actions (the start token) are never chosen.
///
/// Greedy takes the argmax, lowest id on ties. Top-k renormalizes the
/// softmax over the `k` largest logits.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], mode: Sampling, rng: &mut R) -> usize {
    match mode {
        Sampling::Greedy => greedy_action(logits),
        Sampling::TopK(k) => {
            let legal = &logits[..NUM_ENV_ACTIONS.min(logits.len())];
            let mut order: Vec<usize> = (0..legal.len()).collect();
            // Stable sort keeps lower ids first among equal logits.
            order.sort_by(|&a, &b| legal[b].total_cmp(&legal[a]));
            let top = &order[..k.clamp(1, order.len())];
            let max = legal[top[0]];
            let weights: Vec<f64> = top.iter().map(|&i| (legal[i] - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (&i, w) in top.iter().zip(&weights) {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            *top.last().expect("k >= 1")
        }
    }
}

/// Argmax over environment actions, lowest id on ties.
pub fn greedy_action(logits: &[f64]) -> usize {
    let legal = &logits[..NUM_ENV_ACTIONS.min(logits.len())];
    (1..legal.len()).fold(0, |best, i| if legal[i] > legal[best] { i } else { best })
}
