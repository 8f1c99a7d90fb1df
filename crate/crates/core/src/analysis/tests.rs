use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::model::{
    build_backbone, build_head, build_variant, init_params, BackboneSpec, GraphBuilder, ModelGraph, ParamSet, Variant,
};
use crate::rng::Rng;
use crate::tensor::ops::{ConvSpec, Padding};
use crate::tensor::Tensor;

fn linear_model(a: &[Vec<f64>]) -> (ModelGraph, ParamSet<f64>) {
    let (k, n) = (a.len(), a[0].len());
    let mut b = GraphBuilder::new(&[n]);
    let d = b.dense("fc", GraphBuilder::INPUT, k).unwrap();
    let g = b.finish(d);
    let mut p = ParamSet::new();
    // Weight layout is [d_in, d_out].
    let w: Vec<f64> = (0..n).flat_map(|j| (0..k).map(move |i| (i, j))).map(|(i, j)| a[i][j]).collect();
    p.insert("fc/weight", Tensor::new(vec![n, k], w).unwrap());
    p.insert("fc/bias", Tensor::from_f64(&[k], &vec![0.5; k]).unwrap());
    (g, p)
}

fn random_matrix(k: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = Rng::new(seed);
    (0..k).map(|_| (0..n).map(|_| r.uniform(-2.0, 2.0)).collect()).collect()
}

fn gram_oracle(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a[0].len();
    (0..n).map(|p| (0..n).map(|q| a.iter().map(|row| row[p] * row[q]).sum()).collect()).collect()
}

fn tiny_net(seed: u64) -> (ModelGraph, ParamSet<f64>) {
    let mut b = GraphBuilder::new(&[4, 4, 2]);
    let c = b.conv("conv", GraphBuilder::INPUT, ConvSpec::standard(3, 1, Padding::Same, 2, 3), true).unwrap();
    let r = b.relu("relu", c).unwrap();
    let f = b.flatten("flat", r).unwrap();
    let d = b.dense("fc", f, 3).unwrap();
    let s = b.softmax("sm", d).unwrap();
    let g = b.finish(s);
    let mut p: ParamSet<f64> = init_params(&g, seed);
    let mut rng = Rng::derived(seed, "bias", 0);
    for x in p.get_mut("conv/bias").unwrap().data_mut() {
        *x = rng.uniform(-0.2, 0.2);
    }
    (g, p)
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.uniform(-1.0, 1.0)).collect()).unwrap()
}

#[test]
fn dense_and_depthwise_formulas() {
    let mut b = GraphBuilder::new(&[1280]);
    let d = b.dense("fc", GraphBuilder::INPUT, 4).unwrap();
    let r = count_flops(&b.finish(d));
    assert_eq!(r.rows[1].flops, 10_244);
    assert_eq!(r.total_params, 1280 * 4 + 4);

    let mut b = GraphBuilder::new(&[112, 112, 32]);
    let d = b.conv("dw", GraphBuilder::INPUT, ConvSpec::depthwise(3, 1, Padding::Same, 32), false).unwrap();
    let r = count_flops(&b.finish(d));
    assert_eq!(r.rows[1].flops, 7_225_344);
    assert_eq!(r.rows[1].params, 9 * 32);
}

#[test]
fn deep_medix_cost_is_near_reference() {
    let g = build_variant(Variant::DeepMediX, &BackboneSpec::default(), 4).unwrap();
    let r = count_flops(&g);
    assert_eq!(r.total_flops, r.rows.iter().map(|x| x.flops).sum::<u64>());
    assert_eq!(r.total_params, crate::model::count_params(&g) as u64);
    let rel = (r.total_flops as f64 - 0.613e9).abs() / 0.613e9;
    assert!(rel < 0.08, "{} GFLOPs", r.gflops());
}

#[test]
fn cost_is_additive_over_composition() {
    let spec = BackboneSpec { width_multiplier: 0.5, input_size: [64, 64, 3], ..BackboneSpec::default() };
    let base = build_backbone(&spec).unwrap();
    let [h, w, d] = <[usize; 3]>::try_from(base.output_shape()).unwrap();
    let head = build_head(&Variant::Model5.head_spec(d, [h, w], 3)).unwrap();
    let (fb, fh) = (count_flops(&base).total_flops, count_flops(&head).total_flops);
    let whole = count_flops(&base.compose(head).unwrap());
    assert_eq!(whole.total_flops, fb + fh);
}

#[test]
fn stem_cost_scales_with_area() {
    let stem = |side: usize| {
        let spec = BackboneSpec { width_multiplier: 0.25, input_size: [side, side, 3], ..BackboneSpec::default() };
        let r = count_flops(&build_backbone(&spec).unwrap());
        r.rows.iter().find(|x| x.name.starts_with("backbone/stem") && x.kind == "conv").unwrap().flops
    };
    assert_eq!(stem(64), 4 * stem(32));
    assert_eq!(stem(224), 4 * stem(112));
}

#[test]
fn cost_outputs() {
    let g = build_variant(Variant::Model1, &BackboneSpec { width_multiplier: 0.25, input_size: [32, 32, 3], ..BackboneSpec::default() }, 2).unwrap();
    let r = count_flops(&g);
    let text = r.to_string();
    assert!(text.contains("GFLOPs per sample") && text.contains("global_max_pool"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cost.csv");
    r.write_csv(&path).unwrap();
    let csv = std::fs::read_to_string(path).unwrap();
    assert!(csv.starts_with("name,kind,output_shape,flops,params\n"));
    assert!(csv.trim_end().ends_with(&format!("total,,,{},{}", r.total_flops, r.total_params)));
}

#[test]
fn linear_jacobian_and_metric_are_exact() {
    let a = random_matrix(3, 5, 7);
    let (g, p) = linear_model(&a);
    let x = random_input(&[5], 1);
    let m = pullback_metric(&g, &p, &x).unwrap();
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(m.jacobian[(i, j)], v);
        }
    }
    for (r, row) in gram_oracle(&a).iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            assert_eq!(m.metric[(r, c)], v);
        }
    }
}

#[test]
fn identity_model_has_identity_jacobian() {
    let g = GraphBuilder::new(&[4]).finish(GraphBuilder::INPUT);
    let j = jacobian(&g, &ParamSet::<f64>::new(), &random_input(&[4], 3)).unwrap();
    assert_eq!(j, DMatrix::identity(4, 4));
}

#[test]
fn jacobian_matches_finite_differences() {
    let (g, p) = tiny_net(5);
    let x = random_input(&[4, 4, 2], 9);
    let j = jacobian(&g, &p, &x).unwrap();
    let f = |x: &Tensor<f64>| g.forward(&p, &x.clone().reshape(&[1, 4, 4, 2]).unwrap(), crate::model::Mode::Eval).unwrap();
    let h = 1e-6;
    for col in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[col] += h;
        let mut xm = x.clone();
        xm.data_mut()[col] -= h;
        let (yp, ym) = (f(&xp), f(&xm));
        for row in 0..3 {
            let fd = (yp.data()[row] - ym.data()[row]) / (2.0 * h);
            let err = (fd - j[(row, col)]).abs() / fd.abs().max(j[(row, col)].abs()).max(1e-3);
            assert!(err < 1e-4, "({row},{col}) {fd} vs {}", j[(row, col)]);
        }
    }
    // Softmax outputs sum to one, so every column of J sums to zero.
    for col in 0..x.len() {
        assert!(j.column(col).sum().abs() < 1e-8);
    }
}

#[test]
fn metric_form_identities_and_errors() {
    let (g, p) = tiny_net(2);
    let x = random_input(&[4, 4, 2], 4);
    let m = pullback_metric(&g, &p, &x).unwrap();
    let u: Vec<f64> = random_input(&[32], 6).to_f64_vec();
    let ju = &m.jacobian * nalgebra::DVector::from_column_slice(&u);
    let form = metric_form(&m.metric, &u, &u).unwrap();
    assert!((form - ju.norm_squared()).abs() < 1e-9);
    assert!(metric_form(&m.metric, &u[..5], &u).is_err());
    assert!(jacobian(&g, &p, &random_input(&[4, 4, 3], 1)).is_err());
}

#[test]
fn power_iteration_finds_known_spectrum() {
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 3.0, 1.0, 0.5]));
    let q = DMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64).sin()).qr().q();
    let g = &q * d * q.transpose();
    let pairs = top_eigenpairs(&g, 3, 1, POWER_TOLERANCE, POWER_MAX_ITERS).unwrap();
    for (p, want) in pairs.iter().zip([5.0, 3.0, 1.0]) {
        assert!(p.converged);
        assert!((p.value - want).abs() < 1e-6, "{} vs {want}", p.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metric_is_symmetric_psd_and_bounds_rayleigh(seed in 0u64..10_000) {
        let (g, p) = tiny_net(seed);
        let x = random_input(&[4, 4, 2], seed + 1);
        let m = pullback_metric(&g, &p, &x).unwrap();
        prop_assert_eq!(m.metric.clone(), m.metric.transpose());
        let eig = m.metric.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9));
        let top = m.spectrum(1, seed).unwrap();
        let mut r = Rng::new(seed);
        for _ in 0..20 {
            let u: Vec<f64> = (0..32).map(|_| r.normal()).collect();
            let rayleigh = metric_form(&m.metric, &u, &u).unwrap() / u.iter().map(|v| v * v).sum::<f64>();
            prop_assert!(rayleigh >= 0.0);
            prop_assert!(top.eigenvalues[0] >= rayleigh - 1e-9 * top.eigenvalues[0].max(1.0));
        }
    }
}
