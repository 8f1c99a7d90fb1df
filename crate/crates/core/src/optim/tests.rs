use proptest::prelude::*;

use super::*;
use crate::model::{build_variant, init_params, BackboneSpec, ParamSet, Variant};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn scalar_set(v: f64) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(v));
    p
}

fn value(p: &ParamSet<f64>) -> f64 {
    p.get("w").unwrap().data()[0]
}

#[test]
fn sgd_closed_forms() {
    let w = scalar_set(1.0);
    assert_eq!(value(&sgd_step(&w, &scalar_set(0.5), 0.1).unwrap()), 0.95);
    assert_eq!(sgd_step(&w, &scalar_set(0.0), 0.1).unwrap(), w);
    assert_eq!(sgd_step(&w, &scalar_set(123.0), 0.0).unwrap(), w);
}

#[test]
fn updates_leave_slots_without_gradients_alone() {
    let mut w = scalar_set(1.0);
    w.insert("frozen", Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
    let g = scalar_set(1.0);
    let s = sgd_step(&w, &g, 0.5).unwrap();
    assert_eq!(s.get("frozen"), w.get("frozen"));
    let (state, a) = adam_step(&AdamState::default(), &w, &g).unwrap();
    assert_eq!(a.get("frozen"), w.get("frozen"));
    assert!(state.m.get("frozen").is_none());
}

#[test]
fn update_shape_errors() {
    let w = scalar_set(1.0);
    let mut bad = ParamSet::new();
    bad.insert("w", Tensor::<f64>::zeros(&[2]));
    assert!(sgd_step(&w, &bad, 0.1).is_err());
    assert!(adam_step(&AdamState::default(), &w, &bad).is_err());
    let mut unknown = ParamSet::new();
    unknown.insert("v", Tensor::<f64>::scalar(1.0));
    assert!(sgd_step(&w, &unknown, 0.1).is_err());
}

#[test]
fn adam_fresh_state_cases() {
    let w = scalar_set(0.0);
    let (s, out) = adam_step(&AdamState::default(), &w, &scalar_set(0.0)).unwrap();
    assert_eq!(out, w);
    assert_eq!(value(&s.m), 0.0);
    assert_eq!(value(&s.v), 0.0);
    assert_eq!(s.t, 1);

    let (_, out) = adam_step(&AdamState::default(), &w, &scalar_set(1.0)).unwrap();
    let expected = -0.001 / (1.0 + 1e-8);
    assert!((value(&out) - expected).abs() < 1e-18);
    assert!((value(&out) + 0.00099999999).abs() < 1e-13);
}

#[test]
fn adam_two_steps_match_recurrence() {
    // Oracle: the textbook recurrence written out per step.
    let (a, b1, b2, eps) = (0.001f64, 0.9f64, 0.999f64, 1e-8f64);
    let mut m = 0.0;
    let mut v = 0.0;
    let mut x = 0.5;
    for (t, g) in [(1, 1.0f64), (2, -1.0)] {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        x -= a * mh / (vh.sqrt() + eps);
    }
    let mut state = AdamState::default();
    let mut w = scalar_set(0.5);
    for g in [1.0, -1.0] {
        let (s, next) = adam_step(&state, &w, &scalar_set(g)).unwrap();
        state = s;
        w = next;
    }
    assert_eq!(state.t, 2);
    assert!((value(&w) - x).abs() < 1e-15, "{} vs {x}", value(&w));
}

proptest! {
    #[test]
    fn adam_without_momentum_is_normalized_sgd(
        x in -10.0f64..10.0, g in -5.0f64..5.0, eps in 0.1f64..10.0, alpha in 0.001f64..1.0
    ) {
        let state = AdamState::new(alpha, 0.0, 0.0, eps);
        let (_, out) = adam_step(&state, &scalar_set(x), &scalar_set(g)).unwrap();
        let expected = x - alpha * g / (g.abs() + eps);
        prop_assert!((value(&out) - expected).abs() < 1e-12);
    }

    #[test]
    fn updates_preserve_shapes(len in 1usize..20, seed in any::<u64>()) {
        let mut r = Rng::new(seed);
        let mk = |r: &mut Rng| {
            let mut p = ParamSet::new();
            p.insert("a", Tensor::new(vec![len], (0..len).map(|_| r.normal()).collect()).unwrap());
            p
        };
        let w = mk(&mut r);
        let g = mk(&mut r);
        prop_assert!(sgd_step(&w, &g, 0.1).unwrap().same_layout(&w));
        prop_assert!(adam_step(&AdamState::default(), &w, &g).unwrap().1.same_layout(&w));
    }
}

#[test]
fn svrg_first_step_follows_full_gradient() {
    let obj = QuadraticObjective::new(vec![1.0, 3.0, -2.0, 5.0], 2);
    let w: ParamSet<f64> = obj.init(0.25);
    let mut state = svrg_prepare(&obj, &w, &[0, 1, 2, 3], 4, 0).unwrap();
    let full = state.full_grad.clone();
    let (_, next) = svrg_step(&mut state, &obj, &w, &[2], 0.1, 0).unwrap();
    assert_eq!(next, sgd_step(&w, &full, 0.1).unwrap());
    assert_eq!(state.inner_steps, 1);
}

#[test]
fn svrg_quadratic_matches_hand_recurrence() {
    // per-sample (w - 1)^2 and (w - 3)^2; the mean is (w - 2)^2 + 1, and with
    // equal curvature the correction removes all sampling noise:
    // w <- w - 0.1 * 2 (w - 2): 0 -> 0.4 -> 0.72 -> 0.976
    let obj = QuadraticObjective::new(vec![1.0, 3.0], 1);
    let mut w: ParamSet<f64> = obj.init(0.0);
    let mut state = svrg_prepare(&obj, &w, &[0, 1], 2, 0).unwrap();
    let mut seen = vec![];
    for batch in [[0], [1], [0]] {
        let (_, next) = svrg_step(&mut state, &obj, &w, &batch, 0.1, 0).unwrap();
        w = next;
        seen.push(value(&w));
    }
    for (a, b) in seen.iter().zip([0.4, 0.72, 0.976]) {
        assert!((a - b).abs() < 1e-15, "{seen:?}");
    }
}

#[test]
fn svrg_on_whole_dataset_is_bitwise_gradient_descent() {
    let obj = QuadraticObjective::new(vec![0.3, -1.7, 2.2], 3);
    let all = [0, 1, 2];
    let mut a: ParamSet<f64> = obj.init(1.0);
    let mut b = a.clone();
    for _ in 0..5 {
        let mut state = svrg_prepare(&obj, &a, &all, 3, 0).unwrap();
        for _ in 0..3 {
            a = svrg_step(&mut state, &obj, &a, &all, 0.05, 0).unwrap().1;
            let g = Objective::<f64>::evaluate(&obj, &b, &all, 0).unwrap().grads;
            b = sgd_step(&b, &g, 0.05).unwrap();
        }
    }
    assert_eq!(a, b);
}

#[test]
fn svrg_on_whole_dataset_matches_sgd_for_a_model() {
    // Model4 has no dropout, so its training-mode loss is deterministic.
    let g = build_variant(Variant::Model4, &BackboneSpec::with_width(0.25, [8, 8, 3]), 2).unwrap();
    let mut r = Rng::new(3);
    let x = Tensor::new(vec![4, 8, 8, 3], (0..4 * 192).map(|_| r.next_f64()).collect()).unwrap();
    let labels = [0, 1, 1, 0];
    let obj = ModelObjective::new(&g, &x, &labels).unwrap();
    let w0: ParamSet<f64> = init_params(&g, 1);
    let all = [0, 1, 2, 3];
    let mut svrg = OptimizerConfig::svrg(0.1).build::<f64>().unwrap();
    let mut sgd = OptimizerConfig::sgd(0.1).build::<f64>().unwrap();
    let (mut a, mut b) = (w0.clone(), w0);
    svrg.begin_epoch(&obj, &a, &all, 4, 0).unwrap();
    for step in 0..3 {
        svrg.step(&obj, &mut a, &all, step).unwrap();
        sgd.step(&obj, &mut b, &all, step).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn svrg_rejects_empty_data_and_unprepared_steps() {
    let obj = QuadraticObjective::new(vec![1.0], 1);
    let w: ParamSet<f64> = obj.init(0.0);
    assert!(svrg_prepare(&obj, &w, &[], 4, 0).is_err());
    let mut opt = OptimizerConfig::svrg(0.1).build::<f64>().unwrap();
    let mut w2 = w.clone();
    assert!(opt.step(&obj, &mut w2, &[0], 0).is_err());
}

#[test]
fn chunked_full_gradient_equals_single_pass() {
    let obj = QuadraticObjective::new((0..10).map(|i| i as f64 * 0.37).collect(), 1);
    let w: ParamSet<f64> = obj.init(0.5);
    let idx: Vec<usize> = (0..10).collect();
    let whole = svrg_prepare(&obj, &w, &idx, 10, 0).unwrap();
    let chunked = svrg_prepare(&obj, &w, &idx, 3, 0).unwrap();
    let d = whole.full_grad.distance(&chunked.full_grad).unwrap();
    assert!(d < 1e-14, "{d}");
}

#[test]
fn lr_reduction() {
    assert!((reduce_lr(0.1, 3.0).unwrap() - 0.1 / 3.0).abs() == 0.0);
    let twice = reduce_lr(reduce_lr(0.1, 3.0).unwrap(), 3.0).unwrap();
    assert!((twice - 0.1 / 9.0).abs() < 1e-17);
    assert!(reduce_lr(0.1, 1.0).is_err());
    assert!(reduce_lr(0.1, 0.5).is_err());
}

#[test]
fn optimizer_config_json() {
    let c: OptimizerConfig = serde_json::from_str(r#"{"type":"adam","lr":0.001}"#).unwrap();
    assert_eq!(c, OptimizerConfig::adam(0.001));
    assert_eq!(c.betas, [0.9, 0.999]);
    assert_eq!(c.epsilon, 1e-8);
    let c: OptimizerConfig = serde_json::from_str(r#"{"type":"svrg","lr":0.1}"#).unwrap();
    assert_eq!(c.kind, OptimizerKind::Svrg);
    assert!(serde_json::from_str::<OptimizerConfig>(r#"{"type":"adam","lr":0.1,"momentum":0.9}"#).is_err());
    assert!(serde_json::from_str::<OptimizerConfig>(r#"{"type":"lamb","lr":0.1}"#).is_err());
    assert!(OptimizerConfig::sgd(-1.0).build::<f64>().is_err());
    let mut bad = OptimizerConfig::adam(0.1);
    bad.betas = [0.9, 1.0];
    assert!(bad.validate().is_err());
    let back: OptimizerConfig = serde_json::from_str(&serde_json::to_string(&bad).unwrap()).unwrap();
    assert_eq!(back, bad);
}

#[test]
fn optimizer_lr_is_adjustable() {
    for c in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.1), OptimizerConfig::svrg(0.1)] {
        let mut o = c.build::<f64>().unwrap();
        assert_eq!(o.lr(), 0.1);
        o.set_lr(0.05);
        assert_eq!(o.lr(), 0.05);
    }
}

#[test]
fn shuffled_order_is_a_seeded_permutation() {
    let idx = [9, 3, 5, 1, 7];
    let a = shuffled_order(&idx, 1, 0);
    let mut sorted = a.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![1, 3, 5, 7, 9]);
    assert_eq!(a, shuffled_order(&[1, 3, 5, 7, 9], 1, 0));
    assert_ne!(shuffled_order(&(0..50).collect::<Vec<_>>(), 1, 0), shuffled_order(&(0..50).collect::<Vec<_>>(), 1, 1));
}

#[test]
fn epoch_driver_counts_steps_and_reduces_loss() {
    let obj = QuadraticObjective::new(vec![1.0; 10], 1);
    let idx: Vec<usize> = (0..10).collect();
    let mut w: ParamSet<f64> = obj.init(0.0);
    let mut opt = OptimizerConfig::sgd(0.1).build::<f64>().unwrap();
    let s1 = run_epoch(&mut opt, &obj, &mut w, &idx, &EpochPlan::new(4, 0, 0)).unwrap();
    assert_eq!((s1.steps, s1.samples), (3, 10));
    let plan = EpochPlan { max_steps: Some(2), ..EpochPlan::new(4, 0, 1) };
    let s2 = run_epoch(&mut opt, &obj, &mut w, &idx, &plan).unwrap();
    assert_eq!((s2.steps, s2.samples), (2, 8));
    assert!(s2.mean_loss < s1.mean_loss);
    assert!(run_epoch(&mut opt, &obj, &mut w, &idx, &EpochPlan::new(0, 0, 0)).is_err());
    assert!(run_epoch(&mut opt, &obj, &mut w, &[], &EpochPlan::new(4, 0, 0)).is_err());
}

#[test]
fn model_training_reduces_loss() {
    let g = build_variant(Variant::DeepMediX, &BackboneSpec::with_width(0.25, [8, 8, 3]), 2).unwrap();
    let mut r = Rng::new(5);
    let n = 16;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut data = Vec::new();
    for &l in &labels {
        for _ in 0..192 {
            data.push(l as f64 + 0.1 * r.normal());
        }
    }
    let x = Tensor::new(vec![n, 8, 8, 3], data).unwrap();
    let obj = ModelObjective::new(&g, &x, &labels).unwrap();
    let mut w: ParamSet<f64> = init_params(&g, 2);
    let idx: Vec<usize> = (0..n).collect();
    let mut opt = OptimizerConfig::adam(0.01).build::<f64>().unwrap();
    let first = run_epoch(&mut opt, &obj, &mut w, &idx, &EpochPlan::new(8, 7, 0)).unwrap();
    let mut last = first;
    for e in 1..15 {
        last = run_epoch(&mut opt, &obj, &mut w, &idx, &EpochPlan::new(8, 7, e)).unwrap();
    }
    assert!(last.mean_loss < first.mean_loss, "{} -> {}", first.mean_loss, last.mean_loss);
}
