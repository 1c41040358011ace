use super::*;
use crate::config::SystemConfig;
use crate::env::Assignment;
use crate::nn::{Activation, DenseNet, Layer};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Central differences of `loss` against `analytic` at `probes` random
/// parameter indices of `net`.
fn fd_check(net: &mut DenseNet<f64>, analytic: &[f64], probes: usize, r: &mut ChaCha8Rng, loss: impl Fn(&DenseNet<f64>) -> f64) {
    let h = 1e-5;
    for _ in 0..probes {
        let i = r.random_range(0..net.num_params());
        let orig = *net.params_mut().nth(i).unwrap();
        *net.params_mut().nth(i).unwrap() = orig + h;
        let up = loss(net);
        *net.params_mut().nth(i).unwrap() = orig - h;
        let down = loss(net);
        *net.params_mut().nth(i).unwrap() = orig;
        let fd = (up - down) / (2.0 * h);
        assert!(rel_err(analytic[i], fd) < 1e-4, "param {i}: analytic {} vs fd {fd}", analytic[i]);
    }
}

fn small_net(sizes: &[usize], r: &mut ChaCha8Rng) -> DenseNet<f64> {
    DenseNet::new(sizes, Activation::Tanh, Activation::Identity, r)
}

#[test]
fn equal_advantages_give_value() {
    let out = [1.5, -2.0, 0.3, 0.3, 0.3, 7.0, 7.0, 7.0];
    let q = dueling_q(&out, 2, 3);
    assert_eq!(q.row(0).to_vec(), vec![1.5; 3]);
    assert_eq!(q.row(1).to_vec(), vec![-2.0; 3]);
}

#[test]
fn advantage_shift_leaves_q_unchanged() {
    let mut r = rng(1);
    for _ in 0..100 {
        let out: Vec<f64> = (0..8).map(|_| r.random_range(-3.0..3.0)).collect();
        let c = r.random_range(-10.0..10.0);
        let mut shifted = out.clone();
        for v in &mut shifted[2..5] {
            *v += c;
        }
        let (a, b) = (dueling_q(&out, 2, 3), dueling_q(&shifted, 2, 3));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // row means of Q recover V
        assert!((a.row(1).mean().unwrap() - out[1]).abs() < 1e-12);
    }
}

#[test]
fn argmax_q_equals_argmax_advantage() {
    let mut r = rng(2);
    for _ in 0..200 {
        let out: Vec<f64> = (0..12).map(|_| r.random_range(-3.0..3.0)).collect();
        let q = dueling_q(&out, 3, 3);
        let x = greedy(q.view(), None);
        for d in 0..3 {
            let adv = &out[3 + d * 3..3 + (d + 1) * 3];
            let best = (0..3).fold(0, |b, a| if adv[a] > adv[b] { a } else { b });
            assert_eq!(x.0[d], best);
        }
    }
}

#[test]
fn greedy_selection_without_exploration() {
    let q = array![[0.1, 0.9, 0.3], [2.0, -1.0, 1.0]];
    let mask = Array2::from_elem((2, 3), true);
    let x = select_discrete(q.view(), mask.view(), 0.0, &mut rng(0));
    assert_eq!(x, Assignment(vec![1, 0]));
    let m = x.to_matrix(2);
    assert_eq!(m.sum(), 2);
}

#[test]
fn ties_break_to_lowest_index() {
    let q = array![[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]];
    assert_eq!(greedy(q.view(), None), Assignment(vec![0, 1]));
}

#[test]
fn masked_entries_never_selected() {
    let q = array![[0.0, 5.0, 1.0], [0.0, 1.0, 9.0]];
    let mask = array![[true, false, true], [true, true, false]];
    let mut r = rng(3);
    for _ in 0..10_000 {
        let x = select_discrete(q.view(), mask.view(), 0.5, &mut r);
        assert_ne!(x.0[0], 1);
        assert_ne!(x.0[1], 2);
    }
}

#[test]
fn full_exploration_is_uniform_over_allowed() {
    let q = array![[0.0, 5.0, 1.0, 2.0]];
    let mask = array![[true, true, false, true]];
    let mut r = rng(4);
    let n = 30_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[select_discrete(q.view(), mask.view(), 1.0, &mut r).0[0]] += 1;
    }
    assert_eq!(counts[2], 0);
    let e = n as f64 / 3.0;
    let chi2: f64 = [0, 1, 3].iter().map(|&i| (counts[i] as f64 - e).powi(2) / e).sum();
    // χ² with 2 degrees of freedom, 1% critical value
    assert!(chi2 < 9.21, "{counts:?}");
}

#[test]
#[should_panic]
fn fully_masked_row_panics() {
    let q = array![[0.0, 1.0]];
    let mask = array![[false, false]];
    select_discrete(q.view(), mask.view(), 0.0, &mut rng(0));
}

#[test]
fn double_q_target_examples() {
    let online = array![[1.0, 2.0], [3.0, 0.0]];
    let target = array![[10.0, 20.0], [30.0, 40.0]];
    // online picks (1, 0); target evaluates 20 + 30
    assert_eq!(double_q_target(1.0, online.view(), target.view(), 0.5, false), 26.0);
    // plain max over the target would give 20 + 40
    assert_ne!(double_q_target(1.0, target.view(), target.view(), 0.5, false), 26.0);
    assert_eq!(double_q_target(1.0, target.view(), target.view(), 0.5, false), 31.0);
    assert_eq!(double_q_target(1.0, online.view(), target.view(), 0.5, true), 1.0);
}

fn d3qn_setup(r: &mut ChaCha8Rng) -> (DenseNet<f64>, DenseNet<f64>, Array2<f64>, Vec<Assignment>, Vec<f64>) {
    let (d, k1) = (3, 3);
    let enc = DenseNet::new(&[5, 6, 4], Activation::Tanh, Activation::Tanh, r);
    let head = small_net(&[4, 5, head_output_len(d, k1)], r);
    let obs = Array2::from_shape_fn((6, 5), |_| r.random_range(-1.0..1.0));
    let acts = (0..6).map(|_| Assignment((0..d).map(|_| r.random_range(0..k1)).collect())).collect();
    let y = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
    (enc, head, obs, acts, y)
}

#[test]
fn d3qn_loss_zero_at_fixed_point() {
    let mut r = rng(5);
    let (enc, head, obs, acts, _) = d3qn_setup(&mut r);
    let q = dueling_q_batch(head.forward(enc.forward(obs.view()).view()).view(), 3, 3);
    let y: Vec<f64> = (0..6).map(|i| joint_q(q.index_axis(ndarray::Axis(0), i), &acts[i])).collect();
    let l = d3qn_loss(&enc, &head, obs.view(), &acts, &y, 3, 3);
    assert!(l.loss < 1e-24);
    assert!(l.encoder.iter().chain(l.head.iter()).all(|g| g.abs() < 1e-12));
}

#[test]
fn d3qn_loss_single_sample_is_squared_error() {
    let mut r = rng(6);
    let (enc, head, obs, acts, _) = d3qn_setup(&mut r);
    let obs1 = obs.slice(ndarray::s![0..1, ..]).to_owned();
    let q = dueling_q_batch(head.forward(enc.forward(obs1.view()).view()).view(), 3, 3);
    let qv = joint_q(q.index_axis(ndarray::Axis(0), 0), &acts[0]);
    let l = d3qn_loss(&enc, &head, obs1.view(), &acts[..1], &[qv + 0.7], 3, 3);
    assert!((l.loss - 0.49).abs() < 1e-12);
}

#[test]
fn d3qn_loss_matches_finite_differences() {
    let mut r = rng(7);
    let (mut enc, mut head, obs, acts, y) = d3qn_setup(&mut r);
    let l = d3qn_loss(&enc, &head, obs.view(), &acts, &y, 3, 3);
    let g_head: Vec<f64> = l.head.iter().copied().collect();
    let g_enc: Vec<f64> = l.encoder.iter().copied().collect();
    let enc_c = enc.clone();
    fd_check(&mut head, &g_head, 60, &mut r, |h| d3qn_loss(&enc_c, h, obs.view(), &acts, &y, 3, 3).loss);
    let head_c = head.clone();
    fd_check(&mut enc, &g_enc, 60, &mut r, |e| d3qn_loss(e, &head_c, obs.view(), &acts, &y, 3, 3).loss);
}

#[test]
fn squashed_sample_degenerates_to_tanh_mean() {
    let mu = [0.3, -1.2, 2.0];
    let (a, _) = sample_tanh_gaussian(&mu, &[-20.0; 3], &mut rng(8));
    for (x, m) in a.iter().zip(mu) {
        assert!((x - f64::tanh(m)).abs() < 1e-8);
    }
    // log-std below the clamp behaves like the clamp
    let xi = [0.4, -0.1, 1.0];
    assert_eq!(tanh_gaussian(&mu, &[-50.0; 3], &xi), tanh_gaussian(&mu, &[-20.0; 3], &xi));
}

#[test]
fn squashed_samples_stay_inside() {
    let mut r = rng(9);
    for _ in 0..1000 {
        let mu: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        let ls: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..2.0)).collect();
        let (a, lp) = sample_tanh_gaussian(&mu, &ls, &mut r);
        assert!(a.iter().all(|x| x.abs() < 1.0));
        assert!(lp.is_finite());
    }
}

/// CDF of `tanh(X)` by trapezoidal integration of the analytic density.
fn numeric_cdf(mu: f64, ls: f64, grid: usize) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..=grid).map(|i| -1.0 + 2.0 * i as f64 / grid as f64).collect();
    let pdf: Vec<f64> = xs
        .iter()
        .map(|&a| if a.abs() >= 1.0 { 0.0 } else { squashed_log_density(a, mu, ls).exp() })
        .collect();
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (pdf[i] + pdf[i - 1]) * (xs[i] - xs[i - 1]);
    }
    (xs, cdf)
}

#[test]
fn squashed_samples_follow_analytic_density() {
    let (mu, ls) = (0.4, -0.4);
    let (xs, cdf) = numeric_cdf(mu, ls, 200_000);
    let n = 100_000;
    let mut r = rng(10);
    let mut s: Vec<f64> = (0..n).map(|_| sample_tanh_gaussian(&[mu], &[ls], &mut r).0[0]).collect();
    s.sort_by(f64::total_cmp);
    let step = 2.0 / (xs.len() - 1) as f64;
    let mut ks = 0.0f64;
    for (i, &a) in s.iter().enumerate() {
        let j = (((a + 1.0) / step) as usize).min(xs.len() - 2);
        let t = (a - xs[j]) / step;
        let f = cdf[j] * (1.0 - t) + cdf[j + 1] * t;
        ks = ks.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
    }
    // Kolmogorov-Smirnov 1% critical value
    assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
}

#[test]
fn squashed_log_prob_integrates_to_one() {
    let (mu, ls) = (0.3, -0.5);
    let sigma = f64::exp(ls);
    let mut r = rng(11);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let a: f64 = r.random_range(-1.0..1.0);
        let xi = (a.atanh() - mu) / sigma;
        let (_, lp) = tanh_gaussian(&[mu], &[ls], &[xi]);
        acc += lp.exp();
    }
    let integral = 2.0 * acc / n as f64;
    assert!((integral - 1.0).abs() < 0.01, "{integral}");
}

#[test]
fn log_prob_matches_analytic_density() {
    let mut r = rng(12);
    for _ in 0..100 {
        let (mu, ls) = (r.random_range(-1.0..1.0), r.random_range(-1.0..0.5));
        let (a, lp): (Vec<f64>, f64) = sample_tanh_gaussian(&[mu], &[ls], &mut r);
        if a[0].abs() < 0.99 {
            assert!((lp - squashed_log_density(a[0], mu, ls)).abs() < 1e-4);
        }
    }
}

fn desk_layout() -> (SystemConfig, ActionLayout) {
    let cfg = SystemConfig::desk();
    (cfg.clone(), ActionLayout::from_config(&cfg))
}

#[test]
fn decode_of_zeros() {
    let (cfg, layout) = desk_layout();
    assert_eq!(layout.dim(), 2 * 2 * 2 * 4 + 8 + 3);
    let c = layout.decode(&vec![0.0; layout.dim()], &cfg).unwrap();
    assert_eq!(c.w.total_power(), 0.0);
    assert!(c.irs.phases().iter().all(|&p| (p - std::f64::consts::PI).abs() < 1e-15));
    assert_eq!(c.a, crate::vec3::Vec3::zero());
}

#[test]
fn decode_phase_boundary() {
    let (cfg, layout) = desk_layout();
    let mut u = vec![0.0; layout.dim()];
    u[layout.beamformer_len()] = 1.0 - 1e-9;
    let c = layout.decode(&u, &cfg).unwrap();
    let p = c.irs.phases()[0];
    assert!(p < 2.0 * std::f64::consts::PI && p > 2.0 * std::f64::consts::PI - 1e-8);
}

#[test]
fn decode_scales_by_power_budget() {
    let (cfg, layout) = desk_layout();
    let c = layout.decode(&vec![1.0; layout.dim()], &cfg).unwrap();
    // every entry at sqrt(P/(2KD)): total N_t·P
    assert!((c.w.total_power() - 2.0 * cfg.p_max_w()).abs() < 1e-12);
    assert_eq!(c.a.to_array(), [5.0, 5.0, 5.0]);
    assert!(layout.decode(&[0.0; 3], &cfg).is_err());
}

#[test]
fn decode_encode_round_trip() {
    let (cfg, layout) = desk_layout();
    let mut r = rng(13);
    for _ in 0..200 {
        let u: Vec<f64> = (0..layout.dim()).map(|_| r.random_range(-0.999..0.999)).collect();
        let back = layout.encode(&layout.decode(&u, &cfg).unwrap(), &cfg).unwrap();
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn wideband_layout_for_many_subcarriers() {
    let cfg = SystemConfig::full();
    let layout = ActionLayout::from_config(&cfg);
    assert_eq!(layout.mode, BeamformerMode::Wideband);
    assert_eq!(layout.dim(), 2 * 4 * 4 + 4 * 64 + 64 + 3);
    let u = vec![0.5; layout.dim()];
    let c = layout.decode(&u, &cfg).unwrap();
    assert!(c.w.is_finite() && c.w.total_power() > 0.0);
    assert!(layout.encode(&c, &cfg).is_err());
}

#[test]
fn soft_bellman_examples() {
    assert_eq!(soft_bellman_target(1.0, 0.9, true, 2.0, 0.1, -3.0), 1.0);
    assert_eq!(soft_bellman_target(1.0, 0.9, false, 2.0, 0.0, -3.0), 1.0 + 0.9 * 2.0);
    assert!((soft_bellman_target(1.0f64, 0.9, false, 2.0, 0.1, -3.0) - 3.07).abs() < 1e-12);
}

fn critic_setup(r: &mut ChaCha8Rng) -> (DenseNet<f64>, [DenseNet<f64>; 2], Array2<f64>, Array2<f64>, Vec<f64>) {
    let enc = DenseNet::new(&[5, 6, 4], Activation::Tanh, Activation::Tanh, r);
    let critics = [small_net(&[7, 5, 1], r), small_net(&[7, 5, 1], r)];
    let obs = Array2::from_shape_fn((6, 5), |_| r.random_range(-1.0..1.0));
    let act = Array2::from_shape_fn((6, 3), |_| r.random_range(-0.9..0.9));
    let y = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
    (enc, critics, obs, act, y)
}

#[test]
fn critic_loss_zero_when_targets_match() {
    let mut r = rng(14);
    let (enc, mut critics, obs, act, _) = critic_setup(&mut r);
    critics[1] = critics[0].clone();
    let f = enc.forward(obs.view());
    let q = critics[0].forward(policy::critic_input(f.view(), act.view()).view());
    let y: Vec<f64> = q.column(0).to_vec();
    let l = critic_loss(&enc, [&critics[0], &critics[1]], obs.view(), act.view(), &y);
    assert!(l.loss < 1e-24);
}

#[test]
fn critic_loss_is_quadratic_in_residuals() {
    let mut r = rng(15);
    let (enc, critics, obs, act, _) = critic_setup(&mut r);
    let f = enc.forward(obs.view());
    let x = policy::critic_input(f.view(), act.view());
    let q0 = critics[0].forward(x.view());
    let q1 = critics[1].forward(x.view());
    let y1: Vec<f64> = (0..6).map(|i| 0.5 * (q0[[i, 0]] + q1[[i, 0]])).collect();
    // residual of both critics doubles when their gap is doubled around the same midpoint
    let base = critic_loss(&enc, [&critics[0], &critics[1]], obs.view(), act.view(), &y1).loss;
    let mut c2 = critics.clone();
    for c in &mut c2 {
        c.scale_output_layer(2.0);
    }
    let q0b = c2[0].forward(x.view());
    let q1b = c2[1].forward(x.view());
    let y2: Vec<f64> = (0..6).map(|i| 0.5 * (q0b[[i, 0]] + q1b[[i, 0]])).collect();
    let doubled = critic_loss(&enc, [&c2[0], &c2[1]], obs.view(), act.view(), &y2).loss;
    assert!((doubled - 4.0 * base).abs() < 1e-10 * doubled.max(1.0));
}

#[test]
fn critic_loss_matches_finite_differences() {
    let mut r = rng(16);
    let (mut enc, critics, obs, act, y) = critic_setup(&mut r);
    let l = critic_loss(&enc, [&critics[0], &critics[1]], obs.view(), act.view(), &y);
    for j in 0..2 {
        let g: Vec<f64> = l.critics[j].iter().copied().collect();
        let mut c = critics.clone();
        let other = c[1 - j].clone();
        fd_check(&mut c[j], &g, 40, &mut r, |cj| {
            let pair = if j == 0 { [cj, &other] } else { [&other, cj] };
            critic_loss(&enc, pair, obs.view(), act.view(), &y).loss
        });
    }
    let g: Vec<f64> = l.encoder.iter().copied().collect();
    fd_check(&mut enc, &g, 40, &mut r, |e| critic_loss(e, [&critics[0], &critics[1]], obs.view(), act.view(), &y).loss);
}

#[test]
fn actor_loss_matches_finite_differences() {
    let mut r = rng(17);
    let critics = [small_net(&[7, 5, 1], &mut r), small_net(&[7, 5, 1], &mut r)];
    let mut actor = small_net(&[4, 5, 6], &mut r);
    let feats = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
    let noise = Array2::from_shape_fn((6, 3), |_| r.random_range(-1.5..1.5));
    let l = actor_loss(&actor, [&critics[0], &critics[1]], feats.view(), noise.view(), 0.3);
    let g: Vec<f64> = l.actor.iter().copied().collect();
    fd_check(&mut actor, &g, 100, &mut r, |a| actor_loss(a, [&critics[0], &critics[1]], feats.view(), noise.view(), 0.3).loss);
}

#[test]
fn constant_critics_without_entropy_give_zero_actor_gradient() {
    let mut r = rng(18);
    let mut critics = [small_net(&[7, 5, 1], &mut r), small_net(&[7, 5, 1], &mut r)];
    for c in &mut critics {
        c.scale_output_layer(0.0);
    }
    let actor = small_net(&[4, 5, 6], &mut r);
    let feats = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
    let noise = Array2::from_shape_fn((6, 3), |_| r.random_range(-1.5..1.5));
    let l = actor_loss(&actor, [&critics[0], &critics[1]], feats.view(), noise.view(), 0.0);
    assert!(l.actor.iter().all(|&g| g == 0.0));
}

/// Critic `Q(a) = tanh(a − a* + 1) − tanh(a − a* − 1)`, peaked at `a*`.
fn bump_critic(a_star: f64) -> DenseNet<f64> {
    let l1 = Layer { w: array![[0.0, 0.0], [1.0, 1.0]], b: array![1.0 - a_star, -1.0 - a_star] };
    let l2 = Layer { w: array![[1.0], [-1.0]], b: Array1::zeros(1) };
    DenseNet::from_layers(vec![l1, l2], Activation::Tanh, Activation::Identity)
}

#[test]
fn actor_mean_moves_toward_critic_peak() {
    let a_star = 0.5;
    let critic = bump_critic(a_star);
    let mut actor: DenseNet<f64> = DenseNet::from_layers(
        vec![Layer { w: array![[0.0, 0.0]], b: array![0.0, -1.0] }],
        Activation::Identity,
        Activation::Identity,
    );
    let mut opt = crate::nn::Adam::new(&actor, 0.01);
    let feats = Array2::ones((32, 1));
    let mut r = rng(19);
    let start = (actor.forward_one(&[1.0])[0].tanh() - a_star).abs();
    for _ in 0..500 {
        let noise = Array2::from_shape_simple_fn((32, 1), || <f64 as crate::Real>::sample_standard_normal(&mut r));
        let l = actor_loss(&actor, [&critic, &critic], feats.view(), noise.view(), 0.0);
        opt.update(&mut actor, &l.actor);
    }
    let end = (actor.forward_one(&[1.0])[0].tanh() - a_star).abs();
    assert!(start == 0.5 && end < 0.05, "distance to peak {start} -> {end}");
}

#[test]
fn temperature_loss_examples() {
    let h = -3.0;
    let (_, g) = temperature_loss(0.2f64.ln(), &[3.0, 3.0], h);
    assert_eq!(g, 0.0);
    // entropy below target: log π > −H̄, gradient negative so descent raises α
    let (loss, g) = temperature_loss(0.2f64.ln(), &[4.0, 3.5], h);
    assert!(g < 0.0 && loss == g);
    let mut log_alpha = 0.2f64.ln();
    let mut opt = crate::nn::ScalarAdam::new(0.1);
    opt.update(&mut log_alpha, g);
    assert!(log_alpha.exp() > 0.2);
    for _ in 0..100 {
        opt.update(&mut log_alpha, 1e3);
    }
    assert!(log_alpha.exp() > 0.0);
}

#[test]
fn temperature_gradient_matches_finite_differences() {
    let lp = [0.3, -2.0, 1.1];
    let h = 1e-6;
    for la in [-2.0, 0.0, 0.7] {
        let (_, g) = temperature_loss(la, &lp, -1.5);
        let fd = (temperature_loss(la + h, &lp, -1.5).0 - temperature_loss(la - h, &lp, -1.5).0) / (2.0 * h);
        assert!(rel_err(g, fd) < 1e-6);
    }
}

#[test]
fn exploration_schedule() {
    let hp = AgentHparams::default();
    assert_eq!(exploration_rate(&hp, 0, 100), 1.0);
    assert!((exploration_rate(&hp, 15, 100) - 0.525).abs() < 1e-12);
    assert_eq!(exploration_rate(&hp, 30, 100), 0.05);
    assert_eq!(exploration_rate(&hp, 99, 100), 0.05);
}

#[test]
fn hparams_validation() {
    assert!(AgentHparams::default().validate().is_ok());
    for bad in [
        AgentHparams { gamma: 0.0, ..Default::default() },
        AgentHparams { tau: 1.5, ..Default::default() },
        AgentHparams { batch_size: 0, ..Default::default() },
        AgentHparams { buffer_capacity: 8, ..Default::default() },
        AgentHparams { lr_actor: -1.0, ..Default::default() },
        AgentHparams { encoder_hidden: vec![], ..Default::default() },
        AgentHparams { init_alpha: 0.0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(crate::Error::Config { .. })), "{bad:?}");
    }
}

fn tiny_hparams() -> AgentHparams {
    AgentHparams {
        batch_size: 8,
        encoder_hidden: vec![16],
        head_hidden: vec![8],
        buffer_capacity: 1000,
        ..Default::default()
    }
}

fn tiny_config() -> SystemConfig {
    SystemConfig { num_slots: 6, ..SystemConfig::desk() }
}

#[test]
fn targets_move_only_by_polyak_averaging() {
    let mut t = Trainer::new(tiny_config(), tiny_hparams(), 3, 1).unwrap();
    t.run_episode().unwrap();
    t.run_episode().unwrap();
    let mut agent = t.agent().clone();
    let batch = t.replay().sample::<f64, _>(8, &mut rng(0)).unwrap();
    let before = agent.params.clone();
    agent.update(&batch, &mut rng(1)).unwrap();
    let mut expect = before.q_target.clone();
    crate::nn::soft_update(&mut expect, &agent.params.q_online, 0.005);
    assert_eq!(agent.params.q_target, expect);
    for j in 0..2 {
        let mut e = before.critic_targets[j].clone();
        crate::nn::soft_update(&mut e, &agent.params.critics[j], 0.005);
        assert_eq!(agent.params.critic_targets[j], e);
    }
    assert_ne!(agent.params.q_online, before.q_online);
    assert_ne!(agent.params.actor, before.actor);
}

#[test]
fn zero_gradient_steps_leave_parameters_unchanged() {
    let hp = AgentHparams { grad_steps_per_slot: 0, ..tiny_hparams() };
    let mut t = Trainer::new(tiny_config(), hp, 3, 2).unwrap();
    let before = t.agent().params.clone();
    t.run().unwrap();
    assert_eq!(t.agent().params, before);
    assert_eq!(t.replay().len(), 18);
    assert_eq!(t.report().len(), 3);
}

#[test]
fn training_is_deterministic() {
    let a = train(tiny_config(), tiny_hparams(), 3, 5).unwrap();
    let b = train(tiny_config(), tiny_hparams(), 3, 5).unwrap();
    assert_eq!(a.report(), b.report());
    assert_eq!(a.agent(), b.agent());
    let c = train(tiny_config(), tiny_hparams(), 3, 6).unwrap();
    assert_ne!(a.report(), c.report());
}

#[test]
fn resume_from_checkpoint_is_exact() {
    let full = train(tiny_config(), tiny_hparams(), 4, 9).unwrap();
    let mut half = Trainer::new(tiny_config(), tiny_hparams(), 4, 9).unwrap();
    half.run_episode().unwrap();
    half.run_episode().unwrap();
    let json = serde_json::to_string(&half.checkpoint()).unwrap();
    let ckpt: Checkpoint = serde_json::from_str(&json).unwrap();
    let mut resumed = Trainer::resume(ckpt).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.report(), full.report());
    assert_eq!(resumed.agent(), full.agent());
}

#[test]
fn checkpoint_rejects_other_config() {
    let t = Trainer::new(tiny_config(), tiny_hparams(), 1, 0).unwrap();
    let ckpt = t.checkpoint();
    assert!(ckpt.verify(&tiny_config()).is_ok());
    let other = SystemConfig { p_max_dbm: 20.0, ..tiny_config() };
    assert!(matches!(ckpt.verify(&other), Err(crate::Error::ConfigHashMismatch { .. })));
}

#[test]
fn replay_keeps_unprojected_actions() {
    let cfg = tiny_config();
    let mut t = Trainer::new(cfg.clone(), AgentHparams { grad_steps_per_slot: 0, ..tiny_hparams() }, 4, 3).unwrap();
    t.run().unwrap();
    let layout = ActionLayout::from_config(t.config());
    let mut projected = 0;
    for i in 0..t.replay().len() {
        let tr = t.replay().get(i);
        assert!(tr.action.iter().all(|u| u.abs() < 1.0));
        let raw = layout.decode(&tr.action, &cfg).unwrap().into_hybrid(tr.assignment.clone());
        let proj = crate::env::project_actions(&raw, &cfg);
        if raw.w_raw.total_power() > cfg.p_max_w() || raw.a_raw.horizontal().norm() > cfg.a_max {
            projected += 1;
            assert!(proj.w != raw.w_raw || proj.a != raw.a_raw);
        }
    }
    assert!(projected > 0);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let hp = AgentHparams { reward_scale: Some(1e306), ..tiny_hparams() };
    let mut t = Trainer::new(tiny_config(), hp, 3, 0).unwrap();
    let err = t.run().unwrap_err();
    match err {
        crate::Error::NonFinite(msg) => assert!(msg.contains("episode"), "{msg}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn f32_agent_updates_stay_finite() {
    let mut t = Trainer::new(tiny_config(), AgentHparams { grad_steps_per_slot: 0, ..tiny_hparams() }, 2, 4).unwrap();
    t.run().unwrap();
    let cfg = t.config().clone();
    let mut r = rng(20);
    let mut agent = Agent::<f32>::new(crate::env::observation_len(&cfg), ActionLayout::from_config(&cfg), tiny_hparams(), &mut r).unwrap();
    for _ in 0..5 {
        let batch = t.replay().sample::<f32, _>(8, &mut r).unwrap();
        let stats = agent.update(&batch, &mut r).unwrap();
        assert!(stats.q_loss.is_finite() && stats.critic_loss.is_finite());
    }
    assert!(agent.params.actor.is_finite());
}
