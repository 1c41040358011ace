//! Discrete scheduling head: factorized dueling Q-values, masked
//! ε-greedy selection, the double-Q target and its regression loss.

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;

use crate::env::Assignment;
use crate::nn::{DenseNet, Grads};
use crate::num::Real;

/// Width of the head output for `d` subcarriers and `k1 = K+1` choices:
/// one value per subcarrier followed by `d` rows of advantages.
pub fn head_output_len(d: usize, k1: usize) -> usize {
    d * (k1 + 1)
}

/// Per subcarrier, `Q = V + A − mean(A)`. Returns a `D × (K+1)` matrix.
pub fn dueling_q<T: Real>(head_out: &[T], d: usize, k1: usize) -> Array2<T> {
    assert_eq!(head_out.len(), head_output_len(d, k1), "head output width mismatch");
    let kf = T::lit(k1 as f64);
    Array2::from_shape_fn((d, k1), |(i, a)| {
        let adv = &head_out[d + i * k1..d + (i + 1) * k1];
        let mean = adv.iter().fold(T::zero(), |s, &x| s + x) / kf;
        head_out[i] + adv[a] - mean
    })
}

/// Batched [`dueling_q`], shape `B × D × (K+1)`.
pub fn dueling_q_batch<T: Real>(head_out: ArrayView2<'_, T>, d: usize, k1: usize) -> Array3<T> {
    let b = head_out.nrows();
    let mut q = Array3::zeros((b, d, k1));
    for (i, row) in head_out.rows().into_iter().enumerate() {
        let row: Vec<T> = row.to_vec();
        q.index_axis_mut(ndarray::Axis(0), i).assign(&dueling_q(&row, d, k1));
    }
    q
}

/// Joint value of a schedule, `Σ_d Q_d(x_d)`.
pub fn joint_q<T: Real>(q: ArrayView2<'_, T>, x: &Assignment) -> T {
    x.0.iter().enumerate().fold(T::zero(), |s, (d, &a)| s + q[[d, a]])
}

fn row_argmax<T: Real>(q: ArrayView2<'_, T>, mask: Option<ArrayView2<'_, bool>>, d: usize) -> usize {
    let mut best: Option<usize> = None;
    for a in 0..q.ncols() {
        if mask.is_some_and(|m| !m[[d, a]]) {
            continue;
        }
        if best.is_none_or(|b| q[[d, a]] > q[[d, b]]) {
            best = Some(a);
        }
    }
    best.expect("every schedule row needs an allowed entry")
}

/// Per-row argmax, lowest index on ties.
pub fn greedy<T: Real>(q: ArrayView2<'_, T>, mask: Option<ArrayView2<'_, bool>>) -> Assignment {
    Assignment((0..q.nrows()).map(|d| row_argmax(q, mask, d)).collect())
}

/// Masked ε-greedy schedule. Panics on a fully masked row.
pub fn select_discrete<T: Real, R: Rng + ?Sized>(
    q: ArrayView2<'_, T>,
    mask: ArrayView2<'_, bool>,
    explore_rate: f64,
    rng: &mut R,
) -> Assignment {
    assert_eq!(q.dim(), mask.dim(), "mask shape mismatch");
    let rows = (0..q.nrows())
        .map(|d| {
            let allowed: Vec<usize> = (0..q.ncols()).filter(|&a| mask[[d, a]]).collect();
            assert!(!allowed.is_empty(), "subcarrier {d} has no allowed choice");
            if rng.random::<f64>() < explore_rate {
                allowed[rng.random_range(0..allowed.len())]
            } else {
                row_argmax(q, Some(mask), d)
            }
        })
        .collect();
    Assignment(rows)
}

/// `r + γ Σ_d Q_target,d(s', argmax_a Q_online,d(s', a))`, or `r` at a terminal.
pub fn double_q_target<T: Real>(
    reward: T,
    next_online: ArrayView2<'_, T>,
    next_target: ArrayView2<'_, T>,
    gamma: T,
    terminal: bool,
) -> T {
    if terminal {
        return reward;
    }
    let x = greedy(next_online, None);
    reward + gamma * joint_q(next_target, &x)
}

/// Loss and gradients of the regression `mean_b (y_b − Q(s_b, X_b))²`.
#[derive(Debug, Clone)]
pub struct D3qnLoss<T: Real> {
    pub loss: T,
    pub encoder: Grads<T>,
    pub head: Grads<T>,
}

/// Head-only part of the loss on precomputed features. Also returns the
/// gradient with respect to the features.
pub fn d3qn_head_loss<T: Real>(
    head: &DenseNet<T>,
    features: ArrayView2<'_, T>,
    actions: &[Assignment],
    targets: &[T],
    d: usize,
    k1: usize,
) -> (T, Grads<T>, Array2<T>) {
    let b = features.nrows();
    assert!(actions.len() == b && targets.len() == b, "batch size mismatch");
    let cache = head.forward_cached(features);
    let q = dueling_q_batch(cache.output().view(), d, k1);
    let bf = T::lit(b as f64);
    let inv_k1 = T::one() / T::lit(k1 as f64);
    let mut loss = T::zero();
    let mut g = Array2::zeros((b, head_output_len(d, k1)));
    for i in 0..b {
        let qi = joint_q(q.index_axis(ndarray::Axis(0), i), &actions[i]);
        let resid = targets[i] - qi;
        loss += resid * resid / bf;
        let dq = -T::lit(2.0) * resid / bf;
        for (dd, &a) in actions[i].0.iter().enumerate() {
            g[[i, dd]] += dq;
            for aa in 0..k1 {
                let ind = if aa == a { T::one() } else { T::zero() };
                g[[i, d + dd * k1 + aa]] += dq * (ind - inv_k1);
            }
        }
    }
    let (grads, feat_grad) = head.backward(&cache, g.view());
    (loss, grads, feat_grad)
}

/// Full loss through the shared encoder; `targets` are held constant.
pub fn d3qn_loss<T: Real>(
    encoder: &DenseNet<T>,
    head: &DenseNet<T>,
    observations: ArrayView2<'_, T>,
    actions: &[Assignment],
    targets: &[T],
    d: usize,
    k1: usize,
) -> D3qnLoss<T> {
    let enc = encoder.forward_cached(observations);
    let (loss, head_grads, feat_grad) = d3qn_head_loss(head, enc.output().view(), actions, targets, d, k1);
    let (encoder_grads, _) = encoder.backward(&enc, feat_grad.view());
    D3qnLoss { loss, encoder: encoder_grads, head: head_grads }
}
