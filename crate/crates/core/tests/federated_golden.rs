//! Seeded regression run of the federated protocol. Set `MEDNET_BLESS=1`
//! to rewrite the recorded trajectory.

use std::path::PathBuf;

use mednet_core::data::{generate_synthetic, SyntheticSpec};
use mednet_core::federated::{make_clients, run_federated, FederatedConfig, LocalMethod};
use mednet_core::harness::{evaluate, Split};
use mednet_core::model::{build_variant, init_params, BackboneSpec, Variant};
use mednet_core::optim::ModelObjective;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct Golden {
    train_loss: Vec<f64>,
    val_accuracy: Vec<f64>,
    selected: Vec<String>,
    weight_sum: f64,
    weight_sq_sum: f64,
}

const REL_TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn four_client_iid_run_matches_recording() {
    let spec = SyntheticSpec { noise: 0.1, ..SyntheticSpec::new(240, 2, 17) };
    let (x, y) = generate_synthetic::<f64>(&spec).unwrap();
    let train_idx: Vec<usize> = (0..160).collect();
    let val_idx: Vec<usize> = (160..240).collect();
    let (xt, yt) = (x.gather(&train_idx).unwrap(), y[..160].to_vec());
    let (xv, yv) = (x.gather(&val_idx).unwrap(), y[160..].to_vec());
    let backbone = BackboneSpec { width_multiplier: 0.25, input_size: [32, 32, 3], ..BackboneSpec::default() };
    let graph = build_variant(Variant::DeepMediX, &backbone, 2).unwrap();
    let objective = ModelObjective::new(&graph, &xt, &yt).unwrap();
    let config = FederatedConfig {
        batch_size: 32,
        lr: 0.1,
        seed: 23,
        ..FederatedConfig::new(4, 1, 10, LocalMethod::Sgd)
    };
    let clients = make_clients(&config, 160, &yt).unwrap();
    let val = Split::new(&xv, &yv).unwrap();
    let run = run_federated(&config, &clients, &objective, init_params::<f64>(&graph, 29), |w| {
        Ok(Some(evaluate(&graph, w, val)?.accuracy))
    })
    .unwrap();

    let flat = run.server.weights.flatten();
    let got = Golden {
        train_loss: run.history.iter().map(|r| r.train_loss.unwrap()).collect(),
        val_accuracy: run.history.iter().map(|r| r.val_accuracy.unwrap()).collect(),
        selected: run.history.iter().map(|r| r.selected_ids.clone()).collect(),
        weight_sum: flat.iter().sum(),
        weight_sq_sum: flat.iter().map(|v| v * v).sum(),
    };

    // Three-round moving average of the training loss does not rise.
    let smooth: Vec<f64> = got.train_loss.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    assert!(smooth.windows(2).all(|w| w[1] <= w[0]), "{:?}", got.train_loss);

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/federated_iid.json");
    if std::env::var_os("MEDNET_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap()).unwrap();
        return;
    }
    let want: Golden = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(got.selected, want.selected);
    assert_eq!(got.val_accuracy, want.val_accuracy);
    for (a, b) in got.train_loss.iter().zip(&want.train_loss) {
        assert!(close(*a, *b), "{a} vs {b}");
    }
    assert!(close(got.weight_sum, want.weight_sum));
    assert!(close(got.weight_sq_sum, want.weight_sq_sum));
}
