//! Value-guided strategy selection: gate to the top-K strategies under the
//! policy prior, score each candidate by log prior plus the learned action
//! value, pick the argmax. Ties always break toward the lower strategy index.

use crate::model::{Strategy, NUM_STRATEGIES};
use crate::policy::{PolicyParams, StateFeatures, ValueParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("candidate count {0} out of range 1..=8")]
    BadCandidateCount(usize),
}

/// The K strategies with the highest policy prior, prior-descending, ties
/// broken by ascending strategy index.
pub fn candidate_set(
    policy: &PolicyParams,
    state: &StateFeatures,
    k: usize,
) -> Result<Vec<Strategy>, InferenceError> {
    if k == 0 || k > NUM_STRATEGIES {
        return Err(InferenceError::BadCandidateCount(k));
    }
    let prior = policy.prob(state);
    let mut order: Vec<usize> = (0..NUM_STRATEGIES).collect();
    order.sort_by(|a, b| {
        prior[*b]
            .partial_cmp(&prior[*a])
            .expect("finite probabilities")
            .then(a.cmp(b))
    });
    Ok(order.into_iter().take(k).map(|i| Strategy::ALL[i]).collect())
}

/// Candidate score: ln pi(a|s) + V(s,a).
pub fn score(
    policy: &PolicyParams,
    values: &ValueParams,
    state: &StateFeatures,
    action: Strategy,
) -> f64 {
    let prior = policy.prob(state);
    prior[action.index()].ln() + values.value_action(&state.key, action)
}

/// Argmax of `score` over the top-K candidate set; deterministic.
pub fn select_strategy(
    policy: &PolicyParams,
    values: &ValueParams,
    state: &StateFeatures,
    k: usize,
) -> Result<Strategy, InferenceError> {
    let candidates = candidate_set(policy, state, k)?;
    let mut best = candidates[0];
    let mut best_score = f64::NEG_INFINITY;
    for a in candidates {
        let s = score(policy, values, state, a);
        if s > best_score || (s == best_score && a.index() < best.index()) {
            best = a;
            best_score = s;
        }
    }
    Ok(best)
}
