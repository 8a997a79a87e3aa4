//! Centralized, client-server and peer-to-peer pretraining schedules.
//!
//! Federation runs in-process as sequential client visits. A [`Client`]
//! owns its images and optimizer state and only ever hands back model
//! snapshots, loss values and validation-loss sums; nothing in this module
//! reads another client's images.
//!
//! Client `c` draws its shuffles and augmentations from stream `c` of the
//! federation seed, with the client's cumulative local epoch as counter.
//! Centralized training uses stream 0 with the epoch index, so a single
//! client with id 0 retraces centralized training exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::PixelImage;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optim::OptimizerState;
use crate::snapshot::{ModelSnapshot, NamedTensor};
use crate::ssl::{ssl_train, validation_loss_parts, SslConfig, SslLearner, SslOutcome};
use crate::stopping::{EarlyStopping, Verdict};
use crate::tensor::Tensor;

pub const DEFAULT_PEER_ROUNDS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Centralized,
    #[default]
    ClientServer,
    PeerToPeer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    DataSize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    /// Local epochs per client visit (`E`).
    pub local_epochs: usize,
    /// Rounds (`R`). When unset, client-server runs `max_epochs` rounds of
    /// the SSL config and peer-to-peer runs [`DEFAULT_PEER_ROUNDS`] cycles.
    pub rounds: Option<usize>,
    pub topology: Topology,
    pub start_client: usize,
    pub weighting: Weighting,
    pub seed: u64,
    /// Whether client-server rounds visit clients concurrently.
    pub execution: Execution,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            rounds: None,
            topology: Topology::ClientServer,
            start_client: 0,
            weighting: Weighting::Uniform,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl FederationConfig {
    pub fn rounds_for(&self, ssl: &SslConfig) -> usize {
        self.rounds.unwrap_or(match self.topology {
            Topology::PeerToPeer => DEFAULT_PEER_ROUNDS,
            _ => ssl.max_epochs,
        })
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if self.rounds == Some(0) {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.topology == Topology::PeerToPeer && self.start_client >= clients {
            return Err(Error::config(
                "start_client",
                format!("{} is not one of the {clients} clients", self.start_client),
            ));
        }
        Ok(())
    }
}

/// Per-parameter weighted mean, accumulated in snapshot order.
///
/// Weights are normalized first, so a single snapshot comes back unchanged.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn aggregate_average(snapshots: &[ModelSnapshot], weights: Option<&[f64]>) -> Result<ModelSnapshot> {
    let first = snapshots.first().ok_or_else(|| Error::Aggregation {
        name: String::new(),
        reason: "no snapshots to aggregate".into(),
    })?;
    let raw: Vec<f64> = match weights {
        Some(w) if w.len() != snapshots.len() => {
            return Err(Error::Aggregation {
                name: String::new(),
                reason: format!("{} weights for {} snapshots", w.len(), snapshots.len()),
            })
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; snapshots.len()],
    };
    let total: f64 = raw.iter().sum();
    if raw.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || !(total > 0.0) {
        return Err(Error::Aggregation {
            name: String::new(),
            reason: format!("weights must be nonnegative with a positive sum, got {raw:?}"),
        });
    }
    let norm: Vec<f64> = raw.iter().map(|w| w / total).collect();

    for s in &snapshots[1..] {
        if s.role() != first.role() || s.params().len() != first.params().len() {
            let name = first
                .params()
                .iter()
                .zip(s.params())
                .find(|(a, b)| a.name != b.name)
                .map_or_else(|| first.params().last().expect("nonempty").name.clone(), |(a, _)| a.name.clone());
            return Err(Error::Aggregation {
                name,
                reason: "snapshots differ in role or parameter count".into(),
            });
        }
        for (a, b) in first.params().iter().zip(s.params()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Aggregation {
                    name: a.name.clone(),
                    reason: format!("`{}` {:?} vs `{}` {:?}", a.name, a.tensor.shape(), b.name, b.tensor.shape()),
                });
            }
        }
    }

    let params = first
        .params()
        .iter()
        .enumerate()
        .map(|(p, named)| {
            let mut data = vec![0.0; named.tensor.len()];
            for (s, &w) in snapshots.iter().zip(&norm) {
                for (acc, v) in data.iter_mut().zip(s.params()[p].tensor.data()) {
                    *acc += w * v;
                }
            }
            NamedTensor {
                name: named.name.clone(),
                tensor: Tensor::new(named.tensor.shape().to_vec(), data).expect("same shape"),
            }
        })
        .collect();
    ModelSnapshot::new(first.role(), params)
}

/// One participant: private images, optimizer state and epoch counter.
#[derive(Clone, Debug)]
pub struct Client {
    id: usize,
    train: Vec<PixelImage>,
    valid: Vec<PixelImage>,
    optimizer: Option<OptimizerState>,
    epochs_done: u64,
}

impl Client {
    pub fn new(id: usize, train: Vec<PixelImage>, valid: Vec<PixelImage>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config(format!("client {id}"), "no local training images"));
        }
        Ok(Self {
            id,
            train,
            valid,
            optimizer: None,
            epochs_done: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn epochs_done(&self) -> u64 {
        self.epochs_done
    }

    /// Runs `epochs` local epochs from `model`; returns the updated snapshot
    /// and the mean training loss. Momentum buffers persist across visits.
    pub fn local_train(
        &mut self,
        model: ModelSnapshot,
        epochs: usize,
        ssl: &SslConfig,
        augment: &AugmentConfig,
        seed: u64,
    ) -> Result<(ModelSnapshot, f64)> {
        let optimizer = self
            .optimizer
            .take()
            .unwrap_or_else(|| OptimizerState::new(ssl.sgd(), model.tensors()));
        let mut learner = SslLearner { model, optimizer };
        let cfg = SslConfig { seed, ..ssl.clone() };
        let mut total = 0.0;
        for _ in 0..epochs {
            total += learner.train_epoch(&self.train, &cfg, augment, self.id as u64, self.epochs_done)?;
            self.epochs_done += 1;
        }
        self.optimizer = Some(learner.optimizer);
        Ok((learner.model, total / epochs as f64))
    }

    /// `(sum of batch losses, batch count)` on the local validation images.
    pub fn validation_parts(
        &self,
        model: &ModelSnapshot,
        ssl: &SslConfig,
        augment: &AugmentConfig,
        seed: u64,
    ) -> Result<(f64, usize)> {
        if self.valid.is_empty() {
            return Ok((0.0, 0));
        }
        validation_loss_parts(model, &self.valid, &SslConfig { seed, ..ssl.clone() }, augment)
    }
}

/// Batch-weighted mean of the clients' local validation losses.
pub fn pooled_validation_loss(
    model: &ModelSnapshot,
    clients: &[Client],
    ssl: &SslConfig,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0;
    for c in clients {
        let (t, b) = c.validation_parts(model, ssl, augment, seed)?;
        total += t;
        batches += b;
    }
    if batches == 0 {
        return Err(Error::config("valid", "no client holds validation images"));
    }
    Ok(total / batches as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub client_id: Option<usize>,
    pub local_loss: Option<f64>,
    pub server_valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FederatedOutcome {
    /// The schedule's result: best round for client-server, final model for peer-to-peer.
    pub model: ModelSnapshot,
    pub best_round: Option<usize>,
    pub last: ModelSnapshot,
    pub rounds_ran: usize,
    pub log: Vec<RoundRecord>,
}

fn check_clients(clients: &[Client], ssl: &SslConfig) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::config("clients", "need at least one client"));
    }
    for c in clients {
        if c.train_len() < ssl.batch_half {
            return Err(Error::config(
                format!("client {}", c.id),
                format!("{} images cannot fill a half batch of {}", c.train_len(), ssl.batch_half),
            ));
        }
    }
    Ok(())
}

fn client_weights(clients: &[Client], weighting: Weighting) -> Vec<f64> {
    clients
        .iter()
        .map(|c| match weighting {
            Weighting::Uniform => 1.0,
            Weighting::DataSize => c.train_len() as f64,
        })
        .collect()
}

/// Broadcast, `E` local epochs on every client, weighted average.
/// Returns the new server model and each client's mean local loss.
pub fn csfssl_round(
    server: &ModelSnapshot,
    clients: &mut [Client],
    federation: &FederationConfig,
    ssl: &SslConfig,
    augment: &AugmentConfig,
) -> Result<(ModelSnapshot, Vec<f64>)> {
    check_clients(clients, ssl)?;
    let updates = federation.execution.map_mut(clients, |_, client| {
        client.local_train(server.clone(), federation.local_epochs, ssl, augment, federation.seed)
    });
    let (snapshots, losses): (Vec<ModelSnapshot>, Vec<f64>) = updates.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let weights = client_weights(clients, federation.weighting);
    Ok((aggregate_average(&snapshots, Some(&weights))?, losses))
}

/// Client-server federated SSL with early stopping on the pooled validation
/// loss (patience counted in rounds). Returns the best-round snapshot.
pub fn csfssl_run(
    initial: ModelSnapshot,
    clients: &mut [Client],
    federation: &FederationConfig,
    ssl: &SslConfig,
    augment: &AugmentConfig,
) -> Result<FederatedOutcome> {
    ssl.validate()?;
    augment.validate()?;
    federation.validate(clients.len())?;
    check_clients(clients, ssl)?;
    let rounds = federation.rounds_for(ssl);
    let seed = federation.seed;
    let mut log = vec![RoundRecord {
        round: 0,
        client_id: None,
        local_loss: None,
        server_valid_loss: pooled_validation_loss(&initial, clients, ssl, augment, seed)?,
    }];
    let mut stopper = EarlyStopping::new(ssl.patience)?;
    let mut server = initial;
    let mut best = server.clone();
    let mut rounds_ran = 0;
    for round in 1..=rounds {
        let (next, losses) = csfssl_round(&server, clients, federation, ssl, augment)?;
        server = next;
        rounds_ran = round;
        let valid = pooled_validation_loss(&server, clients, ssl, augment, seed)?;
        for (c, loss) in clients.iter().zip(losses) {
            log.push(RoundRecord {
                round,
                client_id: Some(c.id),
                local_loss: Some(loss),
                server_valid_loss: valid,
            });
        }
        let verdict = stopper.observe(round, valid)?;
        log::debug!("csfssl round {round}: valid {valid:.5} {verdict:?}");
        if verdict == Verdict::Improved {
            best = server.clone();
        }
        if verdict == Verdict::Stop {
            break;
        }
    }
    Ok(FederatedOutcome {
        model: best,
        best_round: stopper.best().map(|(r, _)| r),
        last: server,
        rounds_ran,
        log,
    })
}

/// Peer-to-peer ring: each cycle visits every client once, starting at
/// `start_client`, handing the model on after `E` local epochs. Returns the
/// model after the last cycle.
pub fn ppfssl_run(
    initial: ModelSnapshot,
    clients: &mut [Client],
    federation: &FederationConfig,
    ssl: &SslConfig,
    augment: &AugmentConfig,
) -> Result<FederatedOutcome> {
    ssl.validate()?;
    augment.validate()?;
    federation.validate(clients.len())?;
    check_clients(clients, ssl)?;
    let rounds = federation.rounds_for(ssl);
    let n = clients.len();
    let mut model = initial;
    let mut log = Vec::new();
    for cycle in 1..=rounds {
        let mut visits = Vec::with_capacity(n);
        for k in 0..n {
            let client = &mut clients[(federation.start_client + k) % n];
            let (next, loss) = client.local_train(model, federation.local_epochs, ssl, augment, federation.seed)?;
            model = next;
            visits.push((client.id, loss));
        }
        let valid = pooled_validation_loss(&model, clients, ssl, augment, federation.seed)?;
        log::debug!("ppfssl cycle {cycle}: valid {valid:.5}");
        log.extend(visits.into_iter().map(|(id, loss)| RoundRecord {
            round: cycle,
            client_id: Some(id),
            local_loss: Some(loss),
            server_valid_loss: valid,
        }));
    }
    Ok(FederatedOutcome {
        last: model.clone(),
        model,
        best_round: None,
        rounds_ran: rounds,
        log,
    })
}

/// Centralized SSL on the union of every site's images, in site order.
pub fn cssl_run(
    initial: ModelSnapshot,
    sites: &[(&[PixelImage], &[PixelImage])],
    ssl: &SslConfig,
    augment: &AugmentConfig,
) -> Result<SslOutcome> {
    let train: Vec<PixelImage> = sites.iter().flat_map(|(t, _)| t.iter().cloned()).collect();
    let valid: Vec<PixelImage> = sites.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    log::info!("cssl: pooled {} training and {} validation images", train.len(), valid.len());
    ssl_train(initial, &train, &valid, ssl, augment)
}

pub fn write_round_log(records: &[RoundRecord], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
