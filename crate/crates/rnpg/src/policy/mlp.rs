//! Forward and backward passes for the two-layer softmax policy network.
//!
//! Flat layout: W1 (hidden x state_dim, row-major), b1, W2 (actions x hidden,
//! row-major), b2. The ReLU subgradient at zero is taken to be 0.

use crate::env::State;

struct Layout {
    state_dim: usize,
    hidden: usize,
    actions: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Layout {
    fn new(state_dim: usize, hidden: usize, actions: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + hidden * state_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + actions * hidden;
        Layout {
            state_dim,
            hidden,
            actions,
            w1,
            b1,
            w2,
            b2,
        }
    }
}

/// Forward pass: fills `pre` (pre-activation hidden), `hid` (post-ReLU) and
/// `logits`.
fn forward(theta: &[f64], lay: &Layout, state: &State, pre: &mut [f64], hid: &mut [f64], logits: &mut [f64]) {
    for j in 0..lay.hidden {
        let row = &theta[lay.w1 + j * lay.state_dim..lay.w1 + (j + 1) * lay.state_dim];
        let mut acc = theta[lay.b1 + j];
        for i in 0..lay.state_dim {
            acc += row[i] * state[i];
        }
        pre[j] = acc;
        hid[j] = acc.max(0.0);
    }
    for k in 0..lay.actions {
        let row = &theta[lay.w2 + k * lay.hidden..lay.w2 + (k + 1) * lay.hidden];
        let mut acc = theta[lay.b2 + k];
        for j in 0..lay.hidden {
            acc += row[j] * hid[j];
        }
        logits[k] = acc;
    }
}

fn log_softmax_denom(logits: &[f64]) -> (f64, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    (max, sum)
}

pub(super) fn logp(
    theta: &[f64],
    state_dim: usize,
    hidden: usize,
    actions: usize,
    state: &State,
    action: usize,
) -> f64 {
    let lay = Layout::new(state_dim, hidden, actions);
    let mut pre = vec![0.0; hidden];
    let mut hid = vec![0.0; hidden];
    let mut logits = vec![0.0; actions];
    forward(theta, &lay, state, &mut pre, &mut hid, &mut logits);
    let (max, sum) = log_softmax_denom(&logits);
    logits[action] - max - sum.ln()
}

pub(super) fn action_probs(
    theta: &[f64],
    state_dim: usize,
    hidden: usize,
    actions: usize,
    state: &State,
) -> Vec<f64> {
    let lay = Layout::new(state_dim, hidden, actions);
    let mut pre = vec![0.0; hidden];
    let mut hid = vec![0.0; hidden];
    let mut logits = vec![0.0; actions];
    forward(theta, &lay, state, &mut pre, &mut hid, &mut logits);
    let (max, sum) = log_softmax_denom(&logits);
    logits.iter().map(|z| (z - max).exp() / sum).collect()
}

/// Exact backprop of d log pi(a|s) / d theta into `out`.
pub(super) fn score_into(
    theta: &[f64],
    state_dim: usize,
    hidden: usize,
    actions: usize,
    state: &State,
    action: usize,
    out: &mut [f64],
) {
    let lay = Layout::new(state_dim, hidden, actions);
    let mut pre = vec![0.0; hidden];
    let mut hid = vec![0.0; hidden];
    let mut logits = vec![0.0; actions];
    forward(theta, &lay, state, &mut pre, &mut hid, &mut logits);
    let (max, sum) = log_softmax_denom(&logits);

    // d logp / d logit_k = delta_{a,k} - p_k
    let mut dlogits = vec![0.0; actions];
    for k in 0..actions {
        let p = (logits[k] - max).exp() / sum;
        dlogits[k] = if k == action { 1.0 - p } else { -p };
    }

    // Second layer: dW2[k][j] = dlogits[k] * hid[j], db2 = dlogits.
    for k in 0..actions {
        let row = &mut out[lay.w2 + k * hidden..lay.w2 + (k + 1) * hidden];
        for j in 0..hidden {
            row[j] = dlogits[k] * hid[j];
        }
        out[lay.b2 + k] = dlogits[k];
    }

    // Back through ReLU into the first layer.
    for j in 0..hidden {
        let mut dh = 0.0;
        for k in 0..actions {
            dh += theta[lay.w2 + k * hidden + j] * dlogits[k];
        }
        let dpre = if pre[j] > 0.0 { dh } else { 0.0 };
        let row = &mut out[lay.w1 + j * state_dim..lay.w1 + (j + 1) * state_dim];
        for i in 0..state_dim {
            row[i] = dpre * state[i];
        }
        out[lay.b1 + j] = dpre;
    }
}
