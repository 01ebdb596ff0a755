mod common;

use proptest::prelude::*;

use ris_noma::env::{
    drift_terms, lyapunov_drift, outage_stats, reward, update_queue, update_virtual_queue, DriftCaps,
};

/// Literal one-step change of ½(q² + Y²) against the drift bound for every
/// user over 10⁴ transitions of random feasible actions, in 200-slot
/// episodes of the two-AP network.
#[test]
fn drift_bound_holds_along_episodes() {
    let net = ris_noma::NetworkConfig::medium();
    let mut env = common::env_with(net.clone(), 200, 17);
    let mut rng = common::rng(18);
    let caps = env.drift_caps();
    let mut checked = 0usize;
    let mut worst = f64::NEG_INFINITY;
    while checked < 10_000 {
        if env.done() {
            env.reset().unwrap();
        }
        let o = env.step(common::random_action(&net, &mut rng)).unwrap();
        for (u, d) in o.drift_terms(&caps).iter().enumerate() {
            let lhs = lyapunov_drift(o.q_before[u], o.y_before[u], o.q_after[u], o.y_after[u]);
            let rhs = d.bound(o.arrivals[u], o.served[u]);
            worst = worst.max(lhs - rhs);
            assert!(lhs <= rhs + 1e-9, "slot {} user {u}: ΔL {lhs} > {rhs}", o.t);
        }
        checked += 1;
    }
    assert!(worst < 0.0);
}

/// The bound leans on the backlog covering the service: an empty queue with
/// a large virtual backlog and full service breaks it.
#[test]
fn drift_bound_needs_backlog() {
    let caps = DriftCaps { arrival_max: 0.05, service_max: 1.0, q_max: 0.025, eps: 0.1 };
    let (q, y, a, r) = (0.0, 10.0, 0.0, 1.0);
    let q_next = update_queue(q, r, a);
    let y_next = update_virtual_queue(y, q_next, caps.q_max, caps.eps);
    let lhs = lyapunov_drift(q, y, q_next, y_next);
    let rhs = drift_terms(q, y, a, &caps).bound(a, r);
    assert!(lhs > rhs, "{lhs} <= {rhs}");
}

#[test]
fn reward_recomposes_from_logged_terms() {
    let net = common::small_net();
    let mut env = common::env_with(net.clone(), 50, 4);
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let o = env.step(common::random_action(&net, &mut rng)).unwrap();
        let r = reward(o.eta, o.delta, &o.lambda, &o.rates_gbps, env.env.zeta, env.env.xi_penalty);
        assert_eq!(r, o.reward);
        let weighted: f64 = o.lambda.iter().zip(&o.rates_gbps).map(|(l, r)| l * r).sum();
        let by_hand = env.env.zeta * o.eta - env.env.xi_penalty * o.delta + weighted;
        assert!((by_hand - o.reward).abs() <= 1e-12 * o.reward.abs().max(1.0));
        let eta = o.rates_gbps.iter().sum::<f64>() / o.power_w;
        assert!((eta - o.eta).abs() <= 1e-12 * eta.max(1.0));
    }
}

#[test]
fn queues_follow_their_recursions() {
    let net = common::small_net();
    let mut env = common::env_with(net.clone(), 100, 9);
    let mut rng = common::rng(10);
    for _ in 0..100 {
        let o = env.step(common::random_action(&net, &mut rng)).unwrap();
        for u in 0..o.q_after.len() {
            let qm = env.queues().q_max[u];
            assert_eq!(o.q_after[u], update_queue(o.q_before[u], o.served[u], o.arrivals[u]));
            assert_eq!(o.y_after[u], update_virtual_queue(o.y_before[u], o.q_after[u], qm, env.env.outage_eps));
            assert_eq!(o.outage[u], o.q_after[u] >= qm);
            assert_eq!(o.lambda[u], o.y_before[u] + 2.0 * o.q_before[u]);
        }
        assert_eq!(env.queues().q, o.q_after);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let net = common::small_net();
    let run = |seed: u64| {
        let mut env = common::env_with(net.clone(), 30, seed);
        let mut rng = common::rng(99);
        (0..30).map(|_| env.step(common::random_action(&net, &mut rng)).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn reset_with_seed_replays_episode() {
    let net = common::small_net();
    let mut env = common::env_with(net.clone(), 20, 3);
    let play = |env: &mut ris_noma::env::Environment| {
        env.reset_with_seed(42).unwrap();
        let mut rng = common::rng(1);
        (0..20).map(|_| env.step(common::random_action(&net, &mut rng)).unwrap()).collect::<Vec<_>>()
    };
    let a = play(&mut env);
    env.reset().unwrap();
    let b = play(&mut env);
    assert_eq!(a, b);
    assert!(env.done());
}

proptest! {
    #[test]
    fn queue_updates_are_nonnegative(q in 0.0f64..10.0, s in 0.0f64..10.0, a in 0.0f64..10.0, y in 0.0f64..10.0) {
        let next = update_queue(q, s, a);
        prop_assert!(next >= a);
        prop_assert!(next <= q + a);
        prop_assert!(update_virtual_queue(y, next, 1.0, 0.1) >= 0.0);
    }

    #[test]
    fn drift_bound_holds_with_backlog(
        q in 0.0f64..2.0, y in 0.0f64..2.0, a in 0.0f64..0.5, frac in 0.0f64..=1.0,
    ) {
        // Service never exceeding the backlog is the regime the bound covers.
        let caps = DriftCaps { arrival_max: 0.5, service_max: 2.0, q_max: 1.0, eps: 0.1 };
        let r = (q * frac).min(caps.service_max);
        let q_next = update_queue(q, r, a);
        let y_next = update_virtual_queue(y, q_next, caps.q_max, caps.eps);
        let lhs = lyapunov_drift(q, y, q_next, y_next);
        prop_assert!(lhs <= drift_terms(q, y, a, &caps).bound(a, r) + 1e-9);
    }

    #[test]
    fn markov_bound_dominates_outage(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..3.0, 3), 1..50)) {
        let q_max = [1.0, 0.5, 2.0];
        let s = outage_stats(&rows, &q_max).unwrap();
        for u in 0..3 {
            prop_assert!(s.empirical[u] <= s.markov_bound[u] + 1e-15);
            prop_assert!((0.0..=1.0).contains(&s.empirical[u]));
        }
    }
}
