mod common;

use proptest::prelude::*;
use rand::Rng;

use ris_noma::autodiff::{
    add_gru, check_gradients, dense, gru_step, Activation, AggKind, HyperMixer, Init, ParamGrads, ParamStore, Tape,
};
use ris_noma::gevdac::{gaussian_log_prob, ris_log_prob, Model, ModelDims, Variant};
use ris_noma::Result;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn assert_grad<F>(label: &str, store: &ParamStore, f: F)
where
    F: Fn(&mut Tape) -> Result<ris_noma::autodiff::Var>,
{
    let c = check_gradients(store, STEP, FLOOR, f).unwrap();
    assert!(
        c.max_rel_err < TOL,
        "{label}: {}[{}] analytic {} numeric {} (rel {:e})",
        c.worst_param,
        c.worst_index,
        c.analytic,
        c.numeric,
        c.max_rel_err
    );
}

/// Stores an input vector as a parameter so its gradient is checked too.
fn add_input<R: Rng>(s: &mut ParamStore, name: &str, n: usize, rng: &mut R) {
    s.add(name, vec![n], Init::Constant(0.0)).unwrap();
    for v in &mut s.get_mut(name).unwrap().values {
        *v = rng.random_range(-1.5..1.5);
    }
}

/// Every building block on its own, over 25 random shapes.
#[test]
fn blocks_match_finite_differences() {
    let mut rng = common::rng(20);
    for case in 0..25 {
        let n_in = rng.random_range(1..=5);
        let n_out = rng.random_range(1..=5);
        let mut s = ParamStore::new(case);
        add_input(&mut s, "x", n_in, &mut rng);
        add_input(&mut s, "h", n_out, &mut rng);
        add_input(&mut s, "y", n_out, &mut rng);
        s.add_dense("d", n_in, n_out).unwrap();
        add_gru(&mut s, "g", n_in, n_out).unwrap();
        let mixer = HyperMixer { agents: n_out, state_dim: n_in, hidden: rng.random_range(1..=4), activation: Activation::Elu };
        mixer.add_params(&mut s, "mix").unwrap();
        let levels = rng.random_range(2..=4);
        add_input(&mut s, "ris", n_in * (1 + levels), &mut rng);
        let on: Vec<bool> = (0..n_in).map(|_| rng.random()).collect();
        let phase: Vec<u32> = (0..n_in).map(|_| rng.random_range(0..levels as u32)).collect();
        let sample: Vec<f64> = (0..n_out).map(|_| rng.random_range(-2.0..2.0)).collect();

        for act in [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Elu, Activation::Sigmoid] {
            assert_grad(&format!("case {case} dense {act:?}"), &s, |t| {
                let x = t.param("x")?;
                let y = dense(t, "d", x, act)?;
                let w = t.param("y")?;
                t.dot(y, w)
            });
        }
        assert_grad(&format!("case {case} gru"), &s, |t| {
            let x = t.param("x")?;
            let h = t.param("h")?;
            let h1 = gru_step(t, "g", x, h)?;
            let h2 = gru_step(t, "g", x, h1)?;
            let w = t.param("y")?;
            t.dot(h2, w)
        });
        assert_grad(&format!("case {case} mixer"), &s, |t| {
            let st = t.param("x")?;
            let v = t.param("h")?;
            mixer.forward(t, "mix", st, v)
        });
        assert_grad(&format!("case {case} gaussian"), &s, |t| {
            let mean = t.param("h")?;
            let ls = t.param("y")?;
            let ls = t.affine(ls, 0.3, 0.0);
            gaussian_log_prob(t, mean, ls, &sample)
        });
        assert_grad(&format!("case {case} ris"), &s, |t| {
            let head = t.param("ris")?;
            ris_log_prob(t, head, &on, &phase, n_in, levels)
        });
        for kind in [AggKind::Sum, AggKind::Mean, AggKind::Max] {
            assert_grad(&format!("case {case} aggregate {kind:?}"), &s, |t| {
                let a = t.param("h")?;
                let b = t.param("y")?;
                let c = t.tanh(a);
                let agg = t.aggregate(kind, &[a, b, c], n_out)?;
                let sq = t.square(agg);
                Ok(t.sum(sq))
            });
        }
        assert_grad(&format!("case {case} elementwise"), &s, |t| {
            let a = t.param("h")?;
            let b = t.param("y")?;
            let e = t.exp(a);
            let c = t.clamp(b, -0.9, 0.9);
            let m = t.mul(e, c)?;
            let ab = t.abs(a);
            let ls = t.log_sigmoid(ab);
            let sm = t.softmax(m);
            let lsm = t.log_softmax(b);
            let cat = t.concat(&[ls, sm, lsm]);
            let sl = t.slice(cat, 1, 2 * n_out - 1)?;
            let sub = t.sub(sl, sl)?;
            let both = t.add(sl, sub)?;
            let sig = t.sigmoid(both);
            Ok(t.sum(sig))
        });
        assert_grad(&format!("case {case} matvec"), &s, |t| {
            let w = t.param("d.w")?;
            let w = t.reshape(w, vec![n_out, n_in])?;
            let x = t.param("x")?;
            let y = t.matvec(w, x)?;
            let z = t.param("y")?;
            let d = t.dot(y, z)?;
            let e = t.add_all(&[d, d])?;
            Ok(t.affine(e, 0.5, 1.0))
        });
    }
}

/// Full actor, critic and mixer pass of every learner variant: the scalar
/// is `V_tot` plus the summed log-probability of a fixed joint action.
#[test]
fn full_composition_matches_finite_differences() {
    let mut rng = common::rng(21);
    let variants = [Variant::Gevdac, Variant::IeVdac, Variant::Vdac, Variant::CentralCritic];
    for case in 0..24 {
        let net = common::random_small_net(&mut rng);
        let env = common::warmed_env(&net, 3, &mut rng);
        let mut cfg = common::narrow_model(variants[case % variants.len()]);
        cfg.layers = rng.random_range(0..=2);
        cfg.aggregation = [AggKind::Sum, AggKind::Mean, AggKind::Max][rng.random_range(0..3)];
        let model = Model::new(cfg, ModelDims::from_env(&env), case as u64).unwrap();
        let graph = env.comm_graph();
        let state = env.global_state();
        let h = common::random_hidden(graph.nodes.len(), model.cfg.hidden_dim, &mut rng);
        let actions = common::sample_actions(&model, &env, &h, &mut rng);
        assert_grad(&format!("case {case} {:?}", model.cfg.variant), &model.params, |t| {
            let fw = model.forward(t, &graph, &state, &h)?;
            let mut terms = vec![fw.v_tot];
            for (i, node) in graph.nodes.iter().enumerate() {
                terms.push(model.log_prob(t, node.kind, fw.heads[i], &actions[i])?);
            }
            t.add_all(&terms)
        });
    }
}

#[test]
fn model_checkpoint_round_trip() {
    let mut rng = common::rng(3);
    let net = common::small_net();
    let env = common::warmed_env(&net, 2, &mut rng);
    let model = Model::new(common::narrow_model(Variant::Gevdac), ModelDims::from_env(&env), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.params");
    model.params.save(&path).unwrap();
    let loaded = ParamStore::load(&path).unwrap();
    assert_eq!(loaded, model.params);

    let h = model.zero_hidden(net.num_aps + net.num_ris);
    let eval = |store: &ParamStore| {
        let mut t = Tape::with_params(store);
        let fw = model.forward(&mut t, &env.comm_graph(), &env.global_state(), &h).unwrap();
        t.scalar(fw.v_tot).to_bits()
    };
    assert_eq!(eval(&loaded), eval(&model.params));
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let mut s = ParamStore::new(1);
    s.add_dense("d", 3, 2).unwrap();
    let mut bytes = Vec::new();
    s.write_to(&mut bytes).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(ParamStore::read_from(bytes.as_slice()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let mut s = ParamStore::new(seed);
        s.add_dense("d", 3, 2).unwrap();
        let x = vec![0.3, -0.2, 0.9];
        let grads = |ca: f64, cb: f64| -> ParamGrads {
            let mut t = Tape::with_params(&s);
            let xi = t.input(x.clone());
            let y = dense(&mut t, "d", xi, Activation::Tanh).unwrap();
            let f = t.sum(y);
            let sq = t.square(y);
            let g = t.sum(sq);
            let fa = t.affine(f, ca, 0.0);
            let gb = t.affine(g, cb, 0.0);
            let out = t.add(fa, gb).unwrap();
            let gr = t.backward(out).unwrap();
            t.param_grads(&gr)
        };
        let mut combined = grads(a, 0.0);
        combined.add_scaled(&grads(0.0, b), 1.0).unwrap();
        let direct = grads(a, b);
        for (x, y) in combined.values.iter().flatten().zip(direct.values.iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-30.0f64..30.0, 1..10)) {
        let mut t = Tape::new();
        let x = t.input(v.clone());
        let p = t.softmax(x);
        let lp = t.log_softmax(x);
        let sum: f64 = t.value(p).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(t.value(lp).iter().all(|&l| l <= 1e-15));
        for (p, l) in t.value(p).iter().zip(t.value(lp)) {
            prop_assert!((p.ln() - l).abs() < 1e-9 || *p < 1e-300);
        }
    }

    #[test]
    fn aggregation_ignores_order(
        rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..6),
        rot in 0usize..6,
    ) {
        for kind in [AggKind::Sum, AggKind::Mean, AggKind::Max] {
            let mut t = Tape::new();
            let xs: Vec<_> = rows.iter().map(|r| t.input(r.clone())).collect();
            let mut ys = xs.clone();
            ys.rotate_left(rot % xs.len());
            ys.reverse();
            let a = t.aggregate(kind, &xs, 3).unwrap();
            let b = t.aggregate(kind, &ys, 3).unwrap();
            let (va, vb): (Vec<u64>, Vec<u64>) =
                (t.value(a).iter().map(|v| v.to_bits()).collect(), t.value(b).iter().map(|v| v.to_bits()).collect());
            prop_assert_eq!(va, vb);
        }
    }
}
