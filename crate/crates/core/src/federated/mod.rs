//! Single-process federated averaging: client partitions, broadcast,
//! local SGD or SVRG updates and sample-weighted aggregation.

mod aggregate;
mod partition;
mod protocol;

pub use aggregate::{aggregate, aggregate_delta, delta, Contribution};
pub use partition::{partition_iid, partition_label_skew, select_clients};
pub use protocol::{
    broadcast, client_stream, local_update, make_clients, run_federated, run_round, server_update,
    write_rounds_csv, Aggregation, ClientState, ClientUpdate, FederatedConfig, FederatedRun, LocalMethod,
    LocalMode, Partitioner, RoundOutcome, RoundReport, ServerState,
};
