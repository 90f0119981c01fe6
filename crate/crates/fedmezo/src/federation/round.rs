//! Round orchestration: broadcast, local training, aggregation.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::objective::ObjectiveHandle;
use crate::params::ParamsView;
use crate::rng::{derive_seed, RngRecipe, StreamDomain};
use crate::zoo::{mezo_step_inplace, RestoreMode, ZooConfig};

use super::comm::{comm_cost, CommLedger};

/// Bounded loss-history window kept per client for the personalization
/// signals (five-round averages need at least 5 entries).
pub const LOSS_HISTORY_WINDOW: usize = 8;

/// Which update rule clients apply locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Seed-replay zeroth-order steps.
    Fedmezo,
    /// First-order baseline: exact mini-batch gradient steps through the same
    /// batch schedule.
    BpFedavg,
}

/// One participant: its shard-bound objective, trainable vector, learning
/// rate, and the signal state the personalization layer reads.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub objective: ObjectiveHandle,
    pub params: ParamsView,
    pub eta: f64,
    pub loss_history: VecDeque<f64>,
    pub last_update: Option<DenseVector>,
    pub failed_rounds: u64,
}

impl ClientState {
    pub fn new(id: usize, objective: ObjectiveHandle, eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidArgument("client eta must be > 0".into()));
        }
        let params = ParamsView::zeros(Arc::clone(objective.layout()));
        Ok(Self {
            id,
            objective,
            params,
            eta,
            loss_history: VecDeque::with_capacity(LOSS_HISTORY_WINDOW),
            last_update: None,
            failed_rounds: 0,
        })
    }

    pub fn shard(&self) -> &Arc<crate::data::Dataset> {
        self.objective.data()
    }

    fn push_loss(&mut self, loss: f64) {
        if self.loss_history.len() == LOSS_HISTORY_WINDOW {
            self.loss_history.pop_front();
        }
        self.loss_history.push_back(loss);
    }
}

/// Global model and round counter.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_params: ParamsView,
    pub round: u64,
    pub master_seed: u64,
}

impl ServerState {
    pub fn new(global_params: ParamsView, master_seed: u64) -> Self {
        Self {
            global_params,
            round: 0,
            master_seed,
        }
    }
}

/// Per-round metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Mean train loss per client, in ascending client-id order; `None` for
    /// clients whose round failed.
    pub client_train_loss: Vec<Option<f64>>,
    pub global_eval_loss: f64,
    /// Learning rate each client used this round, ascending id order.
    pub client_eta: Vec<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub failed_clients: Vec<usize>,
    /// Wall time; excluded from the deterministic metrics stream.
    pub elapsed_ms: f64,
    /// Batch indices drawn per client (ascending id), present when tracing.
    pub batch_trace: Option<Vec<Vec<usize>>>,
}

/// Options shared by every client in one round.
#[derive(Debug, Clone, Copy)]
pub struct LocalTrainOpts {
    pub master_seed: u64,
    pub round: u64,
    pub local_steps: usize,
    pub zoo: ZooConfig,
    pub batch_size: usize,
    pub rule: OptimizerKind,
    pub restore: RestoreMode,
    pub trace_batches: bool,
}

/// What one client reports back.
#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub mean_train_loss: f64,
    pub failed: bool,
    pub batch_trace: Option<Vec<usize>>,
}

/// Run `H` local steps from the broadcast global vector.
///
/// Step `k` uses the perturbation seed `derive_seed(m, t, i, k)` and a batch
/// drawn from the batch-domain stream for the same coordinates, so the
/// schedule is identical for both optimizer rules. On a non-finite loss the
/// client flags the round and hands back the global vector unchanged.
pub fn local_train(
    client: &mut ClientState,
    global: &ParamsView,
    opts: &LocalTrainOpts,
) -> Result<LocalOutcome> {
    if opts.local_steps == 0 {
        return Err(Error::InvalidArgument("local_steps must be >= 1".into()));
    }
    client.params.copy_from(global);
    let shard_len = client.objective.n_samples();
    let mut loss_sum = 0.0;
    let mut trace = opts.trace_batches.then(Vec::new);

    for k in 1..=opts.local_steps as u64 {
        let recipe = RngRecipe::new(opts.master_seed, opts.round, client.id as u64, k);
        let mut batch_stream = crate::rng::SeedStream::from_seed(derive_seed(&RngRecipe {
            master_seed: StreamDomain::Batch.shift(opts.master_seed),
            ..recipe
        }));
        let batch = Batch::sample(&mut batch_stream, opts.batch_size, shard_len)?;
        if let Some(t) = trace.as_mut() {
            t.extend_from_slice(batch.indices());
        }

        let step_loss = match opts.rule {
            OptimizerKind::Fedmezo => {
                let seed = derive_seed(&recipe);
                match mezo_step_inplace(
                    &client.objective,
                    &mut client.params,
                    &batch,
                    &opts.zoo,
                    client.eta,
                    seed,
                    opts.restore,
                ) {
                    Ok(outcome) => outcome.loss_plus,
                    Err(Error::NumericalOverflow { .. }) => {
                        client.params.copy_from(global);
                        client.failed_rounds += 1;
                        return Ok(LocalOutcome {
                            mean_train_loss: f64::NAN,
                            failed: true,
                            batch_trace: trace,
                        });
                    }
                    Err(other) => return Err(other),
                }
            }
            OptimizerKind::BpFedavg => {
                let loss = client.objective.eval_loss(&client.params, &batch)?;
                if !loss.is_finite() {
                    client.params.copy_from(global);
                    client.failed_rounds += 1;
                    return Ok(LocalOutcome {
                        mean_train_loss: f64::NAN,
                        failed: true,
                        batch_trace: trace,
                    });
                }
                let grad = client.objective.true_grad(&client.params, &batch)?;
                for (p, g) in client.params.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                    *p -= client.eta * g;
                }
                loss
            }
        };
        loss_sum += step_loss;
    }

    let mean = loss_sum / opts.local_steps as f64;
    let update: Vec<f64> = client
        .params
        .as_slice()
        .iter()
        .zip(global.as_slice())
        .map(|(p, g)| p - g)
        .collect();
    client.last_update = Some(DenseVector::new(update)?);
    client.push_loss(mean);
    Ok(LocalOutcome {
        mean_train_loss: mean,
        failed: false,
        batch_trace: trace,
    })
}

/// Arithmetic mean of trainable vectors, accumulated in the order given.
/// Callers pass vectors in ascending client-id order so the floating-point
/// sum is independent of execution order.
pub fn aggregate(vecs: &[&[f64]]) -> Result<DenseVector> {
    let first = vecs
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one vector".into()))?;
    let d = first.len();
    if vecs.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidArgument(
            "aggregate: vector length mismatch".into(),
        ));
    }
    let mut out = vec![0.0; d];
    for v in vecs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let inv = 1.0 / vecs.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    DenseVector::new(out)
}

/// Assigns this round's per-client learning rates before local training.
/// Implemented by the personalization strategies; the no-op keeps `eta_0`.
pub trait LrAssigner: Send {
    fn assign(&mut self, round: u64, master_seed: u64, clients: &[ClientState]) -> Vec<f64>;
}

/// Keeps every client at the same base rate.
pub struct FixedLr(pub f64);

impl LrAssigner for FixedLr {
    fn assign(&mut self, _round: u64, _master_seed: u64, clients: &[ClientState]) -> Vec<f64> {
        vec![self.0; clients.len()]
    }
}

/// One communication round: assign learning rates, broadcast, fan out local
/// training (parallel-safe), aggregate the survivors in id order, advance the
/// server, and record metrics.
///
/// `evaluator` measures the post-aggregation global loss (held-out split or
/// exact global objective). Partial client failures are flagged and skipped;
/// a round where every client fails is an error.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    opts: &LocalTrainOpts,
    strategy: &mut dyn LrAssigner,
    ledger: &mut CommLedger,
    evaluator: &(dyn Fn(&ParamsView) -> Result<f64> + Sync),
) -> Result<RoundRecord> {
    if clients.is_empty() {
        return Err(Error::InvalidArgument("no clients".into()));
    }
    let started = Instant::now();
    let round = server.round;

    let etas = strategy.assign(round, server.master_seed, clients);
    if etas.len() != clients.len() {
        return Err(Error::InvalidArgument(
            "strategy returned wrong number of learning rates".into(),
        ));
    }
    for (client, eta) in clients.iter_mut().zip(etas.iter()) {
        client.eta = *eta;
    }

    let global = server.global_params.snapshot();
    let opts = LocalTrainOpts { round, ..*opts };
    let outcomes: Vec<Result<LocalOutcome>> = clients
        .par_iter_mut()
        .map(|client| local_train(client, &global, &opts))
        .collect();

    // Deterministic ascending-id order for aggregation and records.
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by_key(|&slot| clients[slot].id);

    let mut survivors: Vec<&[f64]> = Vec::with_capacity(clients.len());
    let mut train_loss = Vec::with_capacity(clients.len());
    let mut etas_by_id = Vec::with_capacity(clients.len());
    let mut failed_clients = Vec::new();
    let mut batch_trace = opts.trace_batches.then(Vec::new);
    for &slot in &order {
        let outcome = outcomes[slot]
            .as_ref()
            .map_err(|e| Error::RoundFailed {
                round,
                reason: e.to_string(),
            })?;
        etas_by_id.push(clients[slot].eta);
        if outcome.failed {
            failed_clients.push(clients[slot].id);
            train_loss.push(None);
        } else {
            train_loss.push(Some(outcome.mean_train_loss));
            survivors.push(clients[slot].params.as_slice());
        }
        if let (Some(t), Some(bt)) = (batch_trace.as_mut(), outcome.batch_trace.as_ref()) {
            t.push(bt.clone());
        }
    }
    if survivors.is_empty() {
        return Err(Error::RoundFailed {
            round,
            reason: "all clients reported non-finite losses".into(),
        });
    }

    let mean = aggregate(&survivors)?;
    server
        .global_params
        .as_mut_slice()
        .copy_from_slice(mean.as_slice());
    if !server.global_params.all_finite() {
        return Err(Error::RoundFailed {
            round,
            reason: "aggregated global parameters are non-finite".into(),
        });
    }
    server.round += 1;

    let (bytes_up, bytes_down) = ledger.record_round(clients.len() as u64);
    debug_assert_eq!(
        bytes_up,
        clients.len() as u64 * comm_cost(ledger.trainable_count, ledger.bytes_per_param)
    );
    let global_eval_loss = evaluator(&server.global_params)?;

    Ok(RoundRecord {
        round,
        client_train_loss: train_loss,
        global_eval_loss,
        client_eta: etas_by_id,
        bytes_up,
        bytes_down,
        failed_clients,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        batch_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ObjectiveHandle, QuadraticSpec};

    fn quad_client(id: usize, optimum: Vec<f64>, eta: f64) -> ClientState {
        let d = optimum.len();
        let spec = Arc::new(QuadraticSpec::isotropic(d, 1.0, optimum, 0.0).unwrap());
        let obj = ObjectiveHandle::quadratic_uniform(spec, 4).unwrap();
        ClientState::new(id, obj, eta).unwrap()
    }

    fn opts(master_seed: u64) -> LocalTrainOpts {
        LocalTrainOpts {
            master_seed,
            round: 0,
            local_steps: 5,
            zoo: ZooConfig::new(1e-3).unwrap(),
            batch_size: 1,
            rule: OptimizerKind::Fedmezo,
            restore: RestoreMode::InPlace,
            trace_batches: false,
        }
    }

    #[test]
    fn aggregate_mean() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let m = aggregate(&[&a, &b]).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn aggregate_idempotent_on_identical_inputs() {
        let a = [0.25, -1.5, 3.0];
        let m = aggregate(&[&a, &a, &a]).unwrap();
        assert_eq!(m.as_slice(), &a);
    }

    #[test]
    fn aggregate_rejects_mismatch() {
        let a = [1.0, 2.0];
        let b = [3.0];
        assert!(aggregate(&[&a, &b]).is_err());
    }

    #[test]
    fn local_train_zero_eta_returns_global() {
        let mut client = quad_client(0, vec![1.0, 1.0, 1.0], 1.0);
        client.eta = f64::MIN_POSITIVE; // eta must be > 0; effectively zero
        let global = ParamsView::from_vec(
            Arc::clone(client.objective.layout()),
            vec![0.5, -0.25, 2.0],
        )
        .unwrap();
        let out = local_train(&mut client, &global, &opts(3)).unwrap();
        assert!(!out.failed);
        for (p, g) in client.params.as_slice().iter().zip(global.as_slice()) {
            assert!((p - g).abs() < 1e-10);
        }
    }

    #[test]
    fn local_train_is_deterministic() {
        let global = ParamsView::from_vec(
            Arc::clone(quad_client(0, vec![0.0; 3], 0.1).objective.layout()),
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let mut c1 = quad_client(1, vec![0.0; 3], 0.1);
        let mut c2 = quad_client(1, vec![0.0; 3], 0.1);
        let o1 = local_train(&mut c1, &global, &opts(77)).unwrap();
        let o2 = local_train(&mut c2, &global, &opts(77)).unwrap();
        assert_eq!(c1.params.as_slice(), c2.params.as_slice());
        assert_eq!(o1.mean_train_loss, o2.mean_train_loss);
        assert_eq!(
            c1.last_update.as_ref().unwrap().as_slice(),
            c2.last_update.as_ref().unwrap().as_slice()
        );
    }

    #[test]
    fn run_round_aggregates_and_advances() {
        let mut clients = vec![
            quad_client(0, vec![1.0, 0.0], 0.05),
            quad_client(1, vec![-1.0, 0.0], 0.05),
        ];
        let layout = Arc::clone(clients[0].objective.layout());
        let mut server =
            ServerState::new(ParamsView::from_vec(layout, vec![2.0, 2.0]).unwrap(), 11);
        let mut ledger = CommLedger::new(2, 8);
        let mut fixed = FixedLr(0.05);
        let record = run_round(
            &mut server,
            &mut clients,
            &opts(11),
            &mut fixed,
            &mut ledger,
            &|p| Ok(p.norm()),
        )
        .unwrap();
        assert_eq!(server.round, 1);
        assert_eq!(record.round, 0);
        assert_eq!(record.bytes_up, 2 * 2 * 8);
        assert!(record.failed_clients.is_empty());
        assert!(ledger.consistent_with(2));
        // Aggregated vector is the mean of the two client vectors.
        let mean = aggregate(&[clients[0].params.as_slice(), clients[1].params.as_slice()])
            .unwrap();
        assert_eq!(server.global_params.as_slice(), mean.as_slice());
    }

    #[test]
    fn client_slice_order_does_not_change_results() {
        let build = || {
            vec![
                quad_client(0, vec![1.0, 0.5], 0.05),
                quad_client(1, vec![-1.0, 0.25], 0.05),
                quad_client(2, vec![0.0, -0.75], 0.05),
            ]
        };
        let run = |mut clients: Vec<ClientState>| {
            let layout = Arc::clone(clients[0].objective.layout());
            let mut server =
                ServerState::new(ParamsView::from_vec(layout, vec![1.5, -0.5]).unwrap(), 13);
            let mut ledger = CommLedger::new(2, 8);
            let mut fixed = FixedLr(0.05);
            for _ in 0..3 {
                run_round(
                    &mut server,
                    &mut clients,
                    &opts(13),
                    &mut fixed,
                    &mut ledger,
                    &|p| Ok(p.norm()),
                )
                .unwrap();
            }
            server.global_params.as_slice().to_vec()
        };
        let forward = run(build());
        let mut shuffled = build();
        shuffled.reverse();
        let backward = run(shuffled);
        assert_eq!(forward, backward);
    }

    #[test]
    fn failed_client_is_flagged_and_skipped() {
        // One client whose optimum is absurdly far away overflows immediately;
        // the other trains normally.
        let spec = Arc::new(
            QuadraticSpec::isotropic(2, 1.0, vec![-1e160, 0.0], 0.0).unwrap(),
        );
        let bad_obj = ObjectiveHandle::quadratic_uniform(spec, 2).unwrap();
        let mut clients = vec![
            quad_client(0, vec![1.0, 0.0], 0.05),
            ClientState::new(1, bad_obj, 0.05).unwrap(),
        ];
        let layout = Arc::clone(clients[0].objective.layout());
        let mut server = ServerState::new(
            ParamsView::from_vec(layout, vec![1.0, 0.0]).unwrap(),
            5,
        );
        let mut ledger = CommLedger::new(2, 8);
        let mut fixed = FixedLr(0.05);
        let record = run_round(
            &mut server,
            &mut clients,
            &opts(5),
            &mut fixed,
            &mut ledger,
            &|p| Ok(p.norm()),
        )
        .unwrap();
        assert_eq!(record.failed_clients, vec![1]);
        assert!(record.client_train_loss[1].is_none());
        assert!(record.client_train_loss[0].is_some());
    }
}
