use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, aggregate_delta, delta, Contribution};
use super::partition::{partition_iid, partition_label_skew, select_clients};
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::optim::{run_epoch, EpochPlan, Objective, Optimizer};
use crate::rng::derive;
use crate::tensor::Scalar;

/// Local optimizer run by each client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalMethod {
    Sgd,
    Svrg,
}

/// Unit of the local budget `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalMode {
    /// `E` full passes over the client partition.
    #[default]
    Epochs,
    /// `E` minibatch updates, wrapping into further passes as needed.
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Partitioner {
    #[default]
    Iid,
    LabelSkew { shards_per_client: usize },
}

/// Server update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `sum n_k w_k / sum n_k` over the selected clients.
    #[default]
    Model,
    /// `w + (1/N) sum n_k (w_k - w)` with `N` counting every client.
    Delta,
}

fn default_fraction() -> f64 {
    1.0
}

fn default_lr() -> f64 {
    0.1
}

fn default_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedConfig {
    pub clients: usize,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub local_epochs: usize,
    #[serde(default)]
    pub local_mode: LocalMode,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub method: LocalMethod,
    pub rounds: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub partitioner: Partitioner,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub seed: u64,
}

impl FederatedConfig {
    pub fn new(clients: usize, local_epochs: usize, rounds: usize, method: LocalMethod) -> Self {
        FederatedConfig {
            clients,
            fraction: 1.0,
            local_epochs,
            local_mode: LocalMode::Epochs,
            lr: default_lr(),
            method,
            rounds,
            batch_size: default_batch(),
            partitioner: Partitioner::Iid,
            aggregation: Aggregation::Model,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("clients must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction must be in (0, 1], got {}", self.fraction)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("local learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Partitioner::LabelSkew { shards_per_client: 0 } = self.partitioner {
            return Err(Error::Config("shards_per_client must be positive".into()));
        }
        Ok(())
    }

    /// Clients selected per round.
    pub fn per_round(&self) -> usize {
        ((self.clients as f64 * self.fraction).ceil() as usize).clamp(1, self.clients.max(1))
    }

    fn optimizer<T: Scalar>(&self) -> Optimizer<T> {
        match self.method {
            LocalMethod::Sgd => Optimizer::Sgd { lr: self.lr },
            LocalMethod::Svrg => Optimizer::Svrg { lr: self.lr, state: None },
        }
    }
}

/// A client's private view: its id and the indices of its local samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientState {
    pub client_id: usize,
    pub partition: Vec<usize>,
}

impl ClientState {
    pub fn n_k(&self) -> usize {
        self.partition.len()
    }
}

/// Builds the client population for `n` samples. `labels` is only read by
/// the label-skew partitioner.
pub fn make_clients(config: &FederatedConfig, n: usize, labels: &[usize]) -> Result<Vec<ClientState>> {
    config.validate()?;
    let parts = match config.partitioner {
        Partitioner::Iid => partition_iid(n, config.clients, config.seed)?,
        Partitioner::LabelSkew { shards_per_client } => {
            if labels.len() != n {
                return Err(Error::Data(format!("label skew needs {n} labels, got {}", labels.len())));
            }
            partition_label_skew(labels, config.clients, shards_per_client, config.seed)?
        }
    };
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(client_id, partition)| ClientState { client_id, partition })
        .collect())
}

/// Global model and the number of completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ServerState<T> {
    pub weights: ParamSet<T>,
    pub round: u64,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(weights: ParamSet<T>) -> Self {
        ServerState { weights, round: 0 }
    }
}

/// Everything a client sends back to the server after local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub n_k: usize,
    pub weights: ParamSet<T>,
    /// Sample-weighted mean minibatch loss, absent when no step was taken.
    pub train_loss: Option<f64>,
}

/// Independent copies of the global weights, one per selected client.
pub fn broadcast<T: Scalar>(server: &ServerState<T>, selected: &[usize]) -> Result<Vec<ParamSet<T>>> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no clients selected".into()));
    }
    Ok(selected.iter().map(|_| server.weights.clone()).collect())
}

/// Shuffle and dropout stream of a client. The centralized trainer uses
/// client 0's stream so a one-client federation replays it exactly.
pub fn client_stream(seed: u64, client_id: usize) -> u64 {
    derive(seed, "client", client_id as u64)
}

/// Runs the local budget of `round` on `client`, starting from `w`.
/// Epoch `e` of round `t` uses epoch index `t * E + e`; SVRG takes its
/// snapshot once, at the start of the round.
pub fn local_update<T: Scalar, O: Objective<T> + ?Sized>(
    client: &ClientState,
    w: ParamSet<T>,
    objective: &O,
    config: &FederatedConfig,
    round: u64,
) -> Result<ClientUpdate<T>> {
    if client.partition.is_empty() {
        return Err(Error::Data(format!("client {} has no samples", client.client_id)));
    }
    let mut w = w;
    let mut optimizer = config.optimizer::<T>();
    let stream = client_stream(config.seed, client.client_id);
    let budget = config.local_epochs;
    let base = round * budget as u64;
    let (mut loss_sum, mut samples, mut steps) = (0.0, 0usize, 0usize);
    let mut pass = 0u64;
    while match config.local_mode {
        LocalMode::Epochs => (pass as usize) < budget,
        LocalMode::Steps => steps < budget,
    } {
        let plan = EpochPlan {
            batch_size: config.batch_size,
            stream,
            epoch: base + pass,
            max_steps: match config.local_mode {
                LocalMode::Epochs => None,
                LocalMode::Steps => Some(budget - steps),
            },
            refresh_snapshot: pass == 0,
        };
        let stats = run_epoch(&mut optimizer, objective, &mut w, &client.partition, &plan)?;
        if stats.samples > 0 {
            loss_sum += stats.mean_loss * stats.samples as f64;
            samples += stats.samples;
        }
        steps += stats.steps;
        pass += 1;
    }
    Ok(ClientUpdate {
        client_id: client.client_id,
        n_k: client.n_k(),
        weights: w,
        train_loss: (samples > 0).then(|| loss_sum / samples as f64),
    })
}

/// Combines client updates into the next global weights.
pub fn server_update<T: Scalar>(
    base: &ParamSet<T>,
    updates: &[ClientUpdate<T>],
    rule: Aggregation,
    total_samples: usize,
) -> Result<ParamSet<T>> {
    match rule {
        Aggregation::Model => {
            let parts: Vec<_> = updates
                .iter()
                .map(|u| Contribution { client_id: u.client_id, weights: &u.weights, n_k: u.n_k })
                .collect();
            aggregate(&parts)
        }
        Aggregation::Delta => {
            let deltas = updates.iter().map(|u| delta(&u.weights, base)).collect::<Result<Vec<_>>>()?;
            let parts: Vec<_> = updates
                .iter()
                .zip(&deltas)
                .map(|(u, d)| Contribution { client_id: u.client_id, weights: d, n_k: u.n_k })
                .collect();
            aggregate_delta(base, &parts, total_samples)
        }
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Number of completed rounds after this one.
    pub round: u64,
    /// Selected client ids joined with `;`.
    pub selected_ids: String,
    pub train_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub wall_ms: u64,
}

/// Outcome of one round: the new server state, the report and the raw
/// client updates the server received.
#[derive(Debug, Clone)]
pub struct RoundOutcome<T> {
    pub server: ServerState<T>,
    pub report: RoundReport,
    pub updates: Vec<ClientUpdate<T>>,
}

/// One round: select, broadcast, train locally in parallel, aggregate.
/// `evaluate` scores the new global weights, returning a validation
/// accuracy when one is available.
pub fn run_round<T, O, F>(
    server: &ServerState<T>,
    clients: &[ClientState],
    objective: &O,
    config: &FederatedConfig,
    evaluate: F,
) -> Result<RoundOutcome<T>>
where
    T: Scalar,
    O: Objective<T> + Sync + ?Sized,
    F: FnOnce(&ParamSet<T>) -> Result<Option<f64>>,
{
    config.validate()?;
    if clients.len() != config.clients {
        return Err(Error::Config(format!("config has {} clients, got {}", config.clients, clients.len())));
    }
    let start = Instant::now();
    let selected = select_clients(config.clients, config.fraction, config.seed, server.round)?;
    let copies = broadcast(server, &selected)?;
    let updates = selected
        .par_iter()
        .zip(copies)
        .map(|(&id, w)| local_update(&clients[id], w, objective, config, server.round))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = clients.iter().map(ClientState::n_k).sum();
    let weights = server_update(&server.weights, &updates, config.aggregation, total)?;
    if !weights.is_finite() {
        return Err(Error::NonFinite(format!("global weights after round {}", server.round + 1)));
    }
    let (loss_sum, loss_n) = updates
        .iter()
        .filter_map(|u| u.train_loss.map(|l| (l * u.n_k as f64, u.n_k)))
        .fold((0.0, 0usize), |(s, n), (l, k)| (s + l, n + k));
    let val_accuracy = evaluate(&weights)?;
    let next = ServerState { weights, round: server.round + 1 };
    let report = RoundReport {
        round: next.round,
        selected_ids: selected.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        train_loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
        val_accuracy,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(RoundOutcome { server: next, report, updates })
}

/// Result of a complete federated run.
#[derive(Debug, Clone)]
pub struct FederatedRun<T> {
    pub server: ServerState<T>,
    pub history: Vec<RoundReport>,
}

/// `config.rounds` rounds starting from `initial`. `evaluate` is called
/// after every round with the new global weights.
pub fn run_federated<T, O, F>(
    config: &FederatedConfig,
    clients: &[ClientState],
    objective: &O,
    initial: ParamSet<T>,
    mut evaluate: F,
) -> Result<FederatedRun<T>>
where
    T: Scalar,
    O: Objective<T> + Sync + ?Sized,
    F: FnMut(&ParamSet<T>) -> Result<Option<f64>>,
{
    config.validate()?;
    let mut server = ServerState::new(initial);
    let mut history = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let outcome = run_round(&server, clients, objective, config, &mut evaluate)?;
        server = outcome.server;
        history.push(outcome.report);
    }
    Ok(FederatedRun { server, history })
}

/// Writes round reports as CSV with a header row.
pub fn write_rounds_csv(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
