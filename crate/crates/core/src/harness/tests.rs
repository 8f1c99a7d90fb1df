use proptest::prelude::*;

use super::*;
use crate::model::{build_variant, init_params, BackboneSpec, ParamSet, Variant};
use crate::optim::{EpochStats, Optimizer, OptimizerConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Replays a fixed validation-accuracy sequence and records learning rates.
struct Scripted {
    accuracies: Vec<f64>,
    lrs: Vec<f64>,
}

impl TrainTask<f64> for Scripted {
    fn train_epoch(&mut self, opt: &mut Optimizer<f64>, w: &mut ParamSet<f64>, epoch: u64) -> crate::Result<EpochStats> {
        self.lrs.push(opt.lr());
        w.get_mut("w").unwrap().data_mut()[0] = epoch as f64 + 1.0;
        Ok(EpochStats { mean_loss: 1.0, steps: 1, samples: 1 })
    }

    fn validate(&mut self, _: &ParamSet<f64>) -> crate::Result<f64> {
        Ok(self.accuracies[self.lrs.len() - 1])
    }
}

fn scripted(accuracies: Vec<f64>, max_epochs: usize) -> (TrainOutcome<f64>, Vec<f64>) {
    let mut task = Scripted { accuracies, lrs: Vec::new() };
    let mut w = ParamSet::new();
    w.insert("w", Tensor::scalar(0.0));
    let config = TrainConfig { max_epochs, optimizer: OptimizerConfig::sgd(0.9), ..TrainConfig::default() };
    let out = train(&mut task, w, &config).unwrap();
    (out, task.lrs)
}

fn epochs_where(history: &[EpochRecord], f: impl Fn(&EpochRecord) -> bool) -> Vec<usize> {
    history.iter().filter(|r| f(r)).map(|r| r.epoch).collect()
}

#[test]
fn increasing_accuracy_never_reduces_or_stops() {
    let (out, lrs) = scripted((0..50).map(|i| i as f64 / 50.0).collect(), 50);
    assert_eq!(out.history.len(), 50);
    assert!(lrs.iter().all(|&lr| lr == 0.9));
    assert_eq!(out.best.epoch, 50);
    assert_eq!(out.best.weights.get("w").unwrap().data(), &[50.0]);
    assert!(epochs_where(&out.history, |r| r.reduced_lr || r.stopped).is_empty());
}

#[test]
fn plateau_after_first_epoch() {
    let (out, lrs) = scripted(vec![0.6; 50], 50);
    assert_eq!(epochs_where(&out.history, |r| r.reduced_lr), vec![4, 7, 10, 13]);
    assert_eq!(epochs_where(&out.history, |r| r.stopped), vec![16]);
    assert_eq!(out.history.len(), 16);
    assert_eq!(out.best.epoch, 1);
    assert_eq!(out.best.weights.get("w").unwrap().data(), &[1.0]);
    // Each reduction is a single division of the previous rate.
    let mut expected = vec![0.9; 4];
    let mut lr = 0.9;
    for _ in 0..4 {
        lr /= 3.0;
        expected.extend([lr; 3]);
    }
    assert_eq!(lrs, expected);
    assert_eq!(lrs[15], 0.9 / 3.0 / 3.0 / 3.0 / 3.0);
}

#[test]
fn ties_are_not_improvements() {
    let mut acc = vec![0.5, 0.7, 0.7, 0.6, 0.7, 0.8];
    acc.extend([0.8; 20]);
    let (out, _) = scripted(acc, 50);
    assert_eq!(epochs_where(&out.history, |r| r.improved), vec![1, 2, 6]);
    assert_eq!(out.best.epoch, 6);
    assert_eq!(out.history.len(), 21);
    assert_eq!(epochs_where(&out.history, |r| r.reduced_lr), vec![5, 9, 12, 15, 18]);
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let (out, lrs) = scripted(vec![], 0);
    assert!(out.history.is_empty() && lrs.is_empty());
    assert_eq!(out.best.epoch, 0);
    assert_eq!(out.best.val_accuracy, None);
    assert_eq!(out.best.weights.get("w").unwrap().data(), &[0.0]);
}

#[test]
fn schedule_rejects_bad_settings() {
    assert!(Schedule::new(2, LrReduce { factor: 3.0, window: 3 }).is_err());
    assert!(Schedule::new(5, LrReduce { factor: 3.0, window: 0 }).is_err());
    assert!(Schedule::new(5, LrReduce { factor: 1.0, window: 3 }).is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
}

proptest! {
    #[test]
    fn early_stop_and_best_follow_the_history(acc in prop::collection::vec(0u8..20, 1..80)) {
        let acc: Vec<f64> = acc.into_iter().map(|a| f64::from(a) / 20.0).collect();
        let (out, lrs) = scripted(acc.clone(), 200.min(acc.len()));
        let seen = &acc[..out.history.len()];
        let max = seen.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first_best = seen.iter().position(|&a| a == max).unwrap() + 1;
        prop_assert_eq!(out.best.epoch, first_best);
        prop_assert_eq!(out.best.val_accuracy, Some(max));
        if out.history.last().unwrap().stopped {
            prop_assert_eq!(out.history.len(), first_best + 15);
        } else {
            prop_assert_eq!(out.history.len(), acc.len());
        }
        let mut lr = 0.9;
        for (record, &used) in out.history.iter().zip(&lrs) {
            prop_assert_eq!(used, lr);
            if record.reduced_lr {
                lr /= 3.0;
            }
        }
    }
}

fn one_hot_rows(pred: &[usize], k: usize) -> Vec<Vec<f64>> {
    pred.iter().map(|&p| (0..k).map(|j| if j == p { 0.9 } else { 0.1 / (k - 1) as f64 }).collect()).collect()
}

#[test]
fn perfect_predictions_score_one() {
    let labels = [0, 1, 2, 1, 0, 2];
    let r = compute_metrics(&one_hot_rows(&labels, 3), &labels).unwrap();
    assert_eq!(r.averaging, Averaging::Macro);
    for v in [r.precision, r.recall, r.f1, r.roc_auc, Some(r.accuracy)] {
        assert_eq!(v, Some(1.0));
    }
}

#[test]
fn binary_confusion_fixture() {
    // TP=2, FN=1, FP=1, TN=6.
    let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
    let pred = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
    let r = compute_metrics(&one_hot_rows(&pred, 2), &labels).unwrap();
    assert_eq!(r.averaging, Averaging::Binary);
    assert_eq!(r.confusion, vec![vec![6, 1], vec![1, 2]]);
    assert_eq!(r.precision, Some(2.0 / 3.0));
    assert_eq!(r.recall, Some(2.0 / 3.0));
    assert_eq!(r.f1, Some(2.0 / 3.0));
    assert_eq!(r.accuracy, 0.8);
    assert_eq!(r.per_class[0].precision, Some(6.0 / 7.0));
}

#[test]
fn multiclass_macro_fixture() {
    // Confusion [[2,1,0],[0,3,1],[1,0,2]].
    let labels = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
    let pred = [0, 0, 1, 1, 1, 1, 2, 2, 2, 0];
    let r = compute_metrics(&one_hot_rows(&pred, 3), &labels).unwrap();
    assert_eq!(r.confusion, vec![vec![2, 1, 0], vec![0, 3, 1], vec![1, 0, 2]]);
    let p = [2.0 / 3.0, 3.0 / 4.0, 2.0 / 3.0];
    let rc = [2.0 / 3.0, 3.0 / 4.0, 2.0 / 3.0];
    let f: Vec<f64> = p.iter().zip(rc).map(|(p, r)| 2.0 * p * r / (p + r)).collect();
    assert_eq!(r.precision, Some((p[0] + p[1] + p[2]) / 3.0));
    assert_eq!(r.recall, Some((rc[0] + rc[1] + rc[2]) / 3.0));
    assert_eq!(r.f1, Some((f[0] + f[1] + f[2]) / 3.0));
    assert_eq!(r.accuracy, 0.7);
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 10);
}

#[test]
fn absent_class_is_flagged_and_skipped() {
    let labels = [0, 0, 1, 1];
    let pred = [0, 2, 1, 1];
    let r = compute_metrics(&one_hot_rows(&pred, 3), &labels).unwrap();
    assert_eq!(r.absent_classes, vec![2]);
    assert_eq!(r.per_class[2].recall, None);
    assert_eq!(r.recall, Some((0.5 + 1.0) / 2.0));
    assert_eq!(r.precision, Some(1.0));
}

#[test]
fn argmax_ties_pick_lowest_class() {
    assert_eq!(argmax(&[0.5, 0.5]), 0);
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    let r = compute_metrics(&[vec![0.5, 0.5]], &[1]).unwrap();
    assert_eq!(r.accuracy, 0.0);
}

#[test]
fn auc_extremes() {
    let pos = [false, false, true, true];
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &pos).unwrap(), Some(1.0));
    assert_eq!(roc_auc(&[0.5; 4], &pos).unwrap(), Some(0.5));
    assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &pos).unwrap(), Some(0.0));
    assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]).unwrap(), None);
    assert!(roc_auc(&[0.1], &[true, false]).is_err());
}

fn pair_count_auc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate().filter(|(i, _)| pos[*i]) {
        for (j, &b) in scores.iter().enumerate().filter(|(j, _)| !pos[*j]) {
            let _ = (i, j);
            pairs += 1.0;
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn auc_matches_pair_counting(
        rows in prop::collection::vec((0u8..12, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| f64::from(r.0) / 11.0).collect();
        let pos: Vec<bool> = rows.iter().map(|r| r.1).collect();
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let auc = roc_auc(&scores, &pos).unwrap().unwrap();
        prop_assert!((auc - pair_count_auc(&scores, &pos)).abs() < 1e-12);
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).tanh()).collect();
        prop_assert_eq!(roc_auc(&squashed, &pos).unwrap().unwrap(), auc);
    }

    #[test]
    fn report_invariants(rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 4), 0usize..4), 1..50)) {
        let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let r = compute_metrics(&probs, &labels).unwrap();
        let total: usize = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total, labels.len());
        let trace: usize = (0..4).map(|c| r.confusion[c][c]).sum();
        prop_assert_eq!(r.accuracy, trace as f64 / labels.len() as f64);
        let present: Vec<f64> = r.per_class.iter().filter(|m| m.support > 0).filter_map(|m| m.f1).collect();
        prop_assert_eq!(r.f1, Some(present.iter().sum::<f64>() / present.len() as f64));
        for v in [r.precision, r.recall, r.f1, r.roc_auc].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

fn tiny_split(n: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut r = Rng::new(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data = labels
        .iter()
        .flat_map(|&c| (0..192).map(|_| 0.4 * r.uniform(0.0, 1.0) + 0.6 * c as f64).collect::<Vec<_>>())
        .collect();
    (Tensor::new(vec![n, 8, 8, 3], data).unwrap(), labels)
}

#[test]
fn model_training_and_evaluation() {
    let backbone = BackboneSpec { width_multiplier: 0.25, input_size: [8, 8, 3], ..BackboneSpec::default() };
    let graph = build_variant(Variant::DeepMediX, &backbone, 2).unwrap();
    let (xt, yt) = tiny_split(64, 1);
    let (xv, yv) = tiny_split(130, 2);
    let train_split = Split::new(&xt, &yt).unwrap();
    let val = Split::new(&xv, &yv).unwrap();
    let mut task = ModelTask::new(&graph, train_split, val, 16, 3).unwrap();
    let config = TrainConfig { max_epochs: 6, optimizer: OptimizerConfig::adam(0.01), ..TrainConfig::default() };
    let out = train(&mut task, init_params::<f64>(&graph, 4), &config).unwrap();
    assert_eq!(out.history.len(), 6);
    let best = out.history.iter().map(|r| r.val_accuracy).fold(0.0, f64::max);
    assert_eq!(out.best.val_accuracy, Some(best));
    assert!(out.history[5].train_loss < out.history[0].train_loss);

    let report = evaluate(&graph, &out.best.weights, val).unwrap();
    assert_eq!(report.accuracy, best);
    assert_eq!(report, evaluate(&graph, &out.best.weights, val).unwrap());
    let one = evaluate(&graph, &out.best.weights, Split::new(&xv.gather(&[3]).unwrap(), &yv[3..4]).unwrap()).unwrap();
    assert!(one.accuracy == 0.0 || one.accuracy == 1.0);
    assert!(Split::new(&xv.gather(&[]).unwrap(), &[]).is_err());

    let dir = tempfile::tempdir().unwrap();
    write_history_csv(&dir.path().join("history.csv"), &out.history).unwrap();
    let text = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(text.starts_with("epoch,lr,train_loss,val_accuracy,improved,reduced_lr,stopped\n"));
    out.best.save(&dir.path().join("best")).unwrap();
    assert_eq!(CheckpointRecord::<f64>::load(&dir.path().join("best")).unwrap(), out.best);
}
