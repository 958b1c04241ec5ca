//! The federated engine: server rounds, party-local training and
//! server-side aggregation.
//!
//! Each round the server samples parties, every sampled party trains from
//! an immutable snapshot of the global model, and the server averages the
//! returned models weighted by local sample count (renormalized over the
//! participants). Local training is a pure function of the party state,
//! the snapshot and seeds derived from `(master_seed, party, round,
//! epoch)`, so serial and parallel execution produce identical models.

use std::collections::VecDeque;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset, Partition};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::losses;
use crate::metrics::{party_stats, top1_accuracy};
use crate::nn::{Architecture, Network, ParamVector, SgdState};
use crate::rng::{derive_seed, stream, Rng};
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    FedAvg,
    Moon,
    FedProx,
    Scaffold,
    Solo,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::FedAvg => "fedavg",
            Variant::Moon => "moon",
            Variant::FedProx => "fedprox",
            Variant::Scaffold => "scaffold",
            Variant::Solo => "solo",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    /// Weight of the contrastive term (moon) or the proximal term (fedprox).
    pub mu: f64,
    pub temperature: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub sample_fraction: f64,
    /// FedAvgM server momentum; zero disables it.
    pub server_momentum: f64,
    pub max_negative_pairs: usize,
    pub master_seed: u64,
    pub solo_epochs: usize,
    /// Keep SCAFFOLD control variates pinned at zero.
    pub freeze_control_variates: bool,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Moon,
            mu: 1.0,
            temperature: 0.5,
            local_epochs: 10,
            rounds: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 64,
            sample_fraction: 1.0,
            server_momentum: 0.0,
            max_negative_pairs: 1,
            master_seed: 0,
            solo_epochs: 300,
            freeze_control_variates: false,
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.local_epochs == 0 || self.rounds == 0 {
            return fail("local_epochs and rounds must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return fail(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.server_momentum) {
            return fail(format!(
                "server_momentum must be in [0, 1), got {}",
                self.server_momentum
            ));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return fail(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        if self.variant == Variant::Moon && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_negative_pairs == 0 {
            return fail("max_negative_pairs must be at least 1".into());
        }
        if self.variant == Variant::Solo && self.solo_epochs == 0 {
            return fail("solo_epochs must be at least 1".into());
        }
        SgdState::new(self.learning_rate, self.momentum, self.weight_decay, 0)?;
        Ok(())
    }

    /// Name used in logs: the variant, with FedAvgM folded in when server
    /// momentum is on.
    pub fn label(&self) -> String {
        match (self.variant, self.server_momentum > 0.0) {
            (Variant::FedAvg, true) => "fedavgm".into(),
            (Variant::Solo, _) | (_, false) => self.variant.to_string(),
            (v, true) => format!("{v}+fedavgm"),
        }
    }

    fn contrastive(&self) -> losses::ContrastiveConfig {
        losses::ContrastiveConfig {
            temperature: self.temperature,
            mu: self.mu,
            max_negative_pairs: self.max_negative_pairs,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PartyState {
    pub id: usize,
    data: Dataset,
    /// Most recent local model first.
    prev_models: VecDeque<ParamVector>,
    control_variate: Option<ParamVector>,
}

impl PartyState {
    pub fn new(id: usize, data: Dataset) -> Self {
        Self {
            id,
            data,
            prev_models: VecDeque::new(),
            control_variate: None,
        }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn sample_count(&self) -> usize {
        self.data.len()
    }

    pub fn prev_models(&self) -> &VecDeque<ParamVector> {
        &self.prev_models
    }

    pub fn control_variate(&self) -> Option<&ParamVector> {
        self.control_variate.as_ref()
    }

    /// Push the just-trained model, keeping at most `keep` models.
    pub fn record_local_model(&mut self, model: ParamVector, keep: usize) {
        self.prev_models.push_front(model);
        self.prev_models.truncate(keep);
    }

    pub(crate) fn restore(&mut self, prev: Vec<ParamVector>, control: Option<ParamVector>) {
        self.prev_models = prev.into();
        self.control_variate = control;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    pub round: usize,
    pub model: ParamVector,
    pub server_velocity: Option<ParamVector>,
    pub control_variate: Option<ParamVector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// Rounds completed, starting at 1.
    pub round: usize,
    pub participants: Vec<usize>,
    pub accuracy: Option<f64>,
    pub mean_sup_loss: f64,
    pub mean_con_loss: Option<f64>,
    pub wall_time: Duration,
}

/// Result of one party's local training.
#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub model: ParamVector,
    pub steps: usize,
    pub mean_sup_loss: f64,
    pub mean_con_loss: Option<f64>,
    /// SCAFFOLD: `(c_i+, c_i+ - c_i)`.
    pub control: Option<(ParamVector, ParamVector)>,
}

enum Objective<'a> {
    Supervised,
    Contrastive { prevs: Vec<&'a ParamVector> },
    Proximal,
    Corrected { correction: Option<ParamVector> },
}

fn batch_seed(cfg: &AlgorithmConfig, lane: u64, party: usize, round: usize, epoch: usize) -> u64 {
    derive_seed(cfg.master_seed, &[lane, party as u64, round as u64, epoch as u64])
}

/// SGD on the party's data starting from `start`, for `epochs` epochs.
/// `start` is also the frozen reference for the contrastive and proximal
/// terms.
fn train(
    party: &PartyState,
    start: &ParamVector,
    arch: &Architecture,
    cfg: &AlgorithmConfig,
    objective: &Objective<'_>,
    epochs: usize,
    seed_of: impl Fn(usize) -> u64,
) -> Result<(ParamVector, usize, f64, Option<f64>)> {
    let mut net = Network::from_vector(arch, start.clone())?;
    // The control-variate refresh divides the model drift by K * lr, which
    // is the drift of plain SGD; momentum would inflate it by ~1/(1 - m).
    // With corrections frozen the path is FedAvg and keeps its momentum.
    let momentum = match objective {
        Objective::Corrected { correction: Some(_) } => 0.0,
        _ => cfg.momentum,
    };
    let mut sgd = SgdState::new(cfg.learning_rate, momentum, cfg.weight_decay, start.len())?;
    let start_net = Network::from_vector(arch, start.clone())?;
    let prev_nets: Vec<Network> = match objective {
        Objective::Contrastive { prevs } => prevs
            .iter()
            .map(|p| Network::from_vector(arch, (*p).clone()))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let contrastive = cfg.contrastive();

    let (mut steps, mut sup_total, mut con_total) = (0usize, 0.0, 0.0);
    for epoch in 0..epochs {
        for (x, y) in batches(&party.data, cfg.batch_size, seed_of(epoch))? {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);

            let loss = match objective {
                Objective::Contrastive { .. } if !prev_nets.is_empty() => {
                    let z_glob = start_net.forward_repr(&x)?;
                    let z_prevs = prev_nets
                        .iter()
                        .map(|p| p.forward_repr(&x))
                        .collect::<Result<Vec<_>>>()?;
                    let xv = tape.constant(x);
                    let z = bound.forward_repr(&mut tape, xv)?;
                    let logits = bound.output_layer(&mut tape, z)?;
                    let sup = losses::cross_entropy(&mut tape, logits, &y)?;
                    let gv = tape.constant(z_glob);
                    let pvs: Vec<_> = z_prevs.into_iter().map(|p| tape.constant(p)).collect();
                    let con = if pvs.len() == 1 {
                        losses::model_contrastive_loss(&mut tape, z, gv, pvs[0], contrastive.temperature)?
                    } else {
                        losses::multi_negative_contrastive(&mut tape, z, gv, &pvs, contrastive.temperature)?
                    };
                    sup_total += tape.value(sup).item();
                    con_total += tape.value(con).item();
                    if contrastive.mu == 0.0 {
                        sup
                    } else {
                        let weighted = tape.scale(con, contrastive.mu);
                        tape.add(sup, weighted)?
                    }
                }
                Objective::Proximal => {
                    let xv = tape.constant(x);
                    let logits = bound.forward_full(&mut tape, xv)?;
                    let sup = losses::cross_entropy(&mut tape, logits, &y)?;
                    sup_total += tape.value(sup).item();
                    if cfg.mu == 0.0 {
                        sup
                    } else {
                        let prox = losses::proximal_term(&mut tape, &bound.leaves(), start)?;
                        let weighted = tape.scale(prox, cfg.mu);
                        tape.add(sup, weighted)?
                    }
                }
                _ => {
                    let xv = tape.constant(x);
                    let logits = bound.forward_full(&mut tape, xv)?;
                    let sup = losses::cross_entropy(&mut tape, logits, &y)?;
                    sup_total += tape.value(sup).item();
                    sup
                }
            };
            tape.backward(loss)?;
            let mut grad = bound.gradient(&tape)?;
            if let Objective::Corrected { correction: Some(c) } = objective {
                grad.add_scaled(1.0, c)?;
            }
            sgd.step(net.params_mut(), &grad)?;
            steps += 1;
        }
    }
    let denom = steps.max(1) as f64;
    let con_mean = match objective {
        Objective::Contrastive { .. } if !prev_nets.is_empty() => Some(con_total / denom),
        _ => None,
    };
    Ok((net.into_params(), steps, sup_total / denom, con_mean))
}

fn outcome(parts: (ParamVector, usize, f64, Option<f64>)) -> LocalOutcome {
    let (model, steps, mean_sup_loss, mean_con_loss) = parts;
    LocalOutcome {
        model,
        steps,
        mean_sup_loss,
        mean_con_loss,
        control: None,
    }
}

fn local_seed(cfg: &AlgorithmConfig, party: usize, round: usize) -> impl Fn(usize) -> u64 + '_ {
    move |epoch| batch_seed(cfg, stream::BATCH, party, round, epoch)
}

/// `E` epochs of SGD on cross-entropy alone.
pub fn local_train_fedavg(
    party: &PartyState,
    global: &ParamVector,
    arch: &Architecture,
    cfg: &AlgorithmConfig,
    round: usize,
) -> Result<LocalOutcome> {
    let parts = train(
        party,
        global,
        arch,
        cfg,
        &Objective::Supervised,
        cfg.local_epochs,
        local_seed(cfg, party.id, round),
    )?;
    Ok(outcome(parts))
}

/// Cross-entropy plus `mu` times the model-contrastive term against the
/// frozen global model (positive) and up to `max_negative_pairs` of the
/// party's previous local models (negatives). A party with no previous
/// model trains on cross-entropy alone.
pub fn local_train_moon(
    party: &PartyState,
    global: &ParamVector,
    arch: &Architecture,
    cfg: &AlgorithmConfig,
    round: usize,
) -> Result<LocalOutcome> {
    let prevs = party.prev_models.iter().take(cfg.max_negative_pairs).collect();
    let parts = train(
        party,
        global,
        arch,
        cfg,
        &Objective::Contrastive { prevs },
        cfg.local_epochs,
        local_seed(cfg, party.id, round),
    )?;
    Ok(outcome(parts))
}

/// Cross-entropy plus `mu / 2 * ||w - w_global||^2`.
pub fn local_train_fedprox(
    party: &PartyState,
    global: &ParamVector,
    arch: &Architecture,
    cfg: &AlgorithmConfig,
    round: usize,
) -> Result<LocalOutcome> {
    let parts = train(
        party,
        global,
        arch,
        cfg,
        &Objective::Proximal,
        cfg.local_epochs,
        local_seed(cfg, party.id, round),
    )?;
    Ok(outcome(parts))
}

/// Plain SGD (no momentum) with gradients corrected by `c - c_i`, followed
/// by the control variate refresh `c_i+ = c_i - c + (w_global - w) / (K * lr)`
/// over the `K` local steps. With frozen control variates this is the
/// FedAvg update, momentum included.
pub fn local_train_scaffold(
    party: &PartyState,
    global: &ParamVector,
    server_control: &ParamVector,
    arch: &Architecture,
    cfg: &AlgorithmConfig,
    round: usize,
) -> Result<LocalOutcome> {
    let zeros = ParamVector::zeros(global.len());
    let local_control = party.control_variate.as_ref().unwrap_or(&zeros);
    let correction = if cfg.freeze_control_variates {
        None
    } else {
        Some(server_control.sub(local_control)?)
    };
    let parts = train(
        party,
        global,
        arch,
        cfg,
        &Objective::Corrected { correction },
        cfg.local_epochs,
        local_seed(cfg, party.id, round),
    )?;
    let mut out = outcome(parts);
    if !cfg.freeze_control_variates && out.steps > 0 {
        let refreshed = scaffold_control_update(
            local_control,
            server_control,
            global,
            &out.model,
            out.steps,
            cfg.learning_rate,
        )?;
        let delta = refreshed.sub(local_control)?;
        out.control = Some((refreshed, delta));
    }
    Ok(out)
}

/// `c_i - c + (w_global - w_local) / (steps * lr)`; the last term is taken
/// as zero when `lr == 0` (the model cannot move).
pub fn scaffold_control_update(
    local_control: &ParamVector,
    server_control: &ParamVector,
    global: &ParamVector,
    local: &ParamVector,
    steps: usize,
    lr: f64,
) -> Result<ParamVector> {
    let mut next = local_control.sub(server_control)?;
    if lr > 0.0 && steps > 0 {
        let drift = global.sub(local)?;
        next.add_scaled(1.0 / (steps as f64 * lr), &drift)?;
    }
    Ok(next)
}

/// Train a fresh model on the party's data alone for `solo_epochs`.
pub fn solo_train(party: &PartyState, arch: &Architecture, cfg: &AlgorithmConfig) -> Result<LocalOutcome> {
    let init = Network::init(arch, derive_seed(cfg.master_seed, &[stream::SOLO, party.id as u64])).into_params();
    let parts = train(
        party,
        &init,
        arch,
        cfg,
        &Objective::Supervised,
        cfg.solo_epochs,
        |epoch| batch_seed(cfg, stream::SOLO, party.id, 0, epoch),
    )?;
    Ok(outcome(parts))
}

/// `max(1, round(fraction * n))` distinct party ids in ascending order.
pub fn sample_clients(n: usize, fraction: f64, round_seed: u64) -> Vec<usize> {
    let k = ((fraction * n as f64).round() as usize).clamp(1, n.max(1));
    if k >= n {
        return (0..n).collect();
    }
    let mut picked = Rng::new(round_seed).sample_without_replacement(n, k);
    picked.sort_unstable();
    picked
}

/// Weighted average with weights `count_i / sum(counts)`.
///
/// Computed as `m_0 + sum_{i>0} w_i (m_i - m_0)`, accumulated in input
/// order, so a single model or a set of identical models comes back
/// bit-for-bit.
pub fn aggregate(models: &[ParamVector], counts: &[usize]) -> Result<ParamVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::Contract("aggregate of an empty model list".into()))?;
    if models.len() != counts.len() {
        return Err(Error::dim("aggregate", &[models.len()], &[counts.len()]));
    }
    if counts.contains(&0) {
        return Err(Error::Contract("aggregation weights must be positive".into()));
    }
    let total: usize = counts.iter().sum();
    let mut out = first.clone();
    for (m, &c) in models.iter().zip(counts).skip(1) {
        let w = c as f64 / total as f64;
        if m.len() != out.len() {
            return Err(Error::dim("aggregate", &[out.len()], &[m.len()]));
        }
        for ((o, &x), &base) in out.as_mut_slice().iter_mut().zip(m.as_slice()).zip(first.as_slice()) {
            *o += w * (x - base);
        }
    }
    Ok(out)
}

/// FedAvgM server step: `v = beta v + (w - aggregated)`, `w' = w - v`.
/// With `beta == 0` the aggregated model is returned unchanged.
pub fn fedavgm_server_update(
    current: &ParamVector,
    velocity: &mut ParamVector,
    aggregated: &ParamVector,
    beta: f64,
) -> Result<ParamVector> {
    let delta = current.sub(aggregated)?;
    if beta == 0.0 {
        *velocity = delta;
        return Ok(aggregated.clone());
    }
    let mut v = velocity.scale(beta);
    v.add_scaled(1.0, &delta)?;
    *velocity = v;
    current.sub(velocity)
}

/// Server plus parties for a federated run.
pub struct Federation {
    cfg: AlgorithmConfig,
    arch: Architecture,
    parties: Vec<PartyState>,
    global: GlobalState,
    exec: Executor,
}

impl Federation {
    pub fn new(cfg: AlgorithmConfig, arch: Architecture, train: &Dataset, partition: &Partition) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        if train.dim() != arch.input_dim {
            return Err(Error::Config(format!(
                "dataset has {} features but the network expects {}",
                train.dim(),
                arch.input_dim
            )));
        }
        if train.num_classes() > arch.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the network outputs {}",
                train.num_classes(),
                arch.num_classes
            )));
        }
        let parties = partition
            .index_sets()
            .iter()
            .enumerate()
            .map(|(id, idx)| PartyState::new(id, train.subset(idx)))
            .collect();
        let model = Network::init(&arch, derive_seed(cfg.master_seed, &[stream::INIT])).into_params();
        let len = model.len();
        let global = GlobalState {
            round: 0,
            model,
            server_velocity: (cfg.server_momentum > 0.0).then(|| ParamVector::zeros(len)),
            control_variate: (cfg.variant == Variant::Scaffold).then(|| ParamVector::zeros(len)),
        };
        Ok(Self {
            cfg,
            arch,
            parties,
            global,
            exec: Executor::serial(),
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.exec = Executor::new(workers)?;
        Ok(self)
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn global(&self) -> &GlobalState {
        &self.global
    }

    pub fn global_network(&self) -> Network {
        Network::from_vector(&self.arch, self.global.model.clone()).expect("global model matches architecture")
    }

    pub fn parties(&self) -> &[PartyState] {
        &self.parties
    }

    pub fn parties_mut(&mut self) -> &mut [PartyState] {
        &mut self.parties
    }

    pub(crate) fn replace_global(&mut self, global: GlobalState) {
        self.global = global;
    }

    /// Run one communication round. The returned record carries no
    /// accuracy; see [`run`].
    pub fn round(&mut self) -> Result<RoundRecord> {
        if self.cfg.variant == Variant::Solo {
            return Err(Error::Contract("solo runs have no communication rounds".into()));
        }
        let started = Instant::now();
        let t = self.global.round;
        let selected = sample_clients(
            self.parties.len(),
            self.cfg.sample_fraction,
            derive_seed(self.cfg.master_seed, &[stream::SAMPLE, t as u64]),
        );

        let (cfg, arch, parties, global) = (&self.cfg, &self.arch, &self.parties, &self.global);
        let outcomes = self.exec.map(&selected, |id| {
            let party = &parties[id];
            match cfg.variant {
                Variant::FedAvg => local_train_fedavg(party, &global.model, arch, cfg, t),
                Variant::Moon => local_train_moon(party, &global.model, arch, cfg, t),
                Variant::FedProx => local_train_fedprox(party, &global.model, arch, cfg, t),
                Variant::Scaffold => {
                    let c = global
                        .control_variate
                        .as_ref()
                        .expect("scaffold keeps a server control variate");
                    local_train_scaffold(party, &global.model, c, arch, cfg, t)
                }
                Variant::Solo => unreachable!("rejected above"),
            }
        })?;

        let mut models = Vec::new();
        let mut counts = Vec::new();
        let mut control_deltas = Vec::new();
        let mut sup = Vec::new();
        let mut con = Vec::new();
        for (&id, out) in selected.iter().zip(outcomes) {
            if out.steps == 0 {
                log::warn!("party {id} has no samples; skipped in round {}", t + 1);
                continue;
            }
            sup.push(out.mean_sup_loss);
            con.extend(out.mean_con_loss);
            let party = &mut self.parties[id];
            if self.cfg.variant == Variant::Moon {
                party.record_local_model(out.model.clone(), self.cfg.max_negative_pairs);
            }
            if let Some((refreshed, delta)) = out.control {
                party.control_variate = Some(refreshed);
                control_deltas.push(delta);
            }
            counts.push(party.sample_count());
            models.push(out.model);
        }
        if models.is_empty() {
            return Err(Error::Contract(format!("no party trained in round {}", t + 1)));
        }

        let aggregated = aggregate(&models, &counts)?;
        self.global.model = match self.global.server_velocity.as_mut() {
            Some(v) => fedavgm_server_update(&self.global.model, v, &aggregated, self.cfg.server_momentum)?,
            None => aggregated,
        };
        if let Some(c) = self.global.control_variate.as_mut() {
            let scale = 1.0 / self.parties.len() as f64;
            for delta in &control_deltas {
                c.add_scaled(scale, delta)?;
            }
        }
        self.global.round += 1;

        Ok(RoundRecord {
            round: self.global.round,
            participants: selected,
            accuracy: None,
            mean_sup_loss: sup.iter().sum::<f64>() / sup.len() as f64,
            mean_con_loss: (!con.is_empty()).then(|| con.iter().sum::<f64>() / con.len() as f64),
            wall_time: started.elapsed(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoloSummary {
    pub per_party_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub label: String,
    pub records: Vec<RoundRecord>,
    pub final_model: ParamVector,
    pub solo: Option<SoloSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Evaluate test accuracy every this many rounds (and always after the
    /// last round).
    pub eval_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            eval_every: 1,
        }
    }
}

/// Run all rounds, evaluating on `test` per `opts.eval_every`.
pub fn run(
    cfg: &AlgorithmConfig,
    arch: &Architecture,
    partition: &Partition,
    train: &Dataset,
    test: &Dataset,
    opts: RunOptions,
) -> Result<RunOutput> {
    run_with(cfg, arch, partition, train, test, opts, |_| Ok(()))
}

/// [`run`] with a callback invoked after each round's record is final.
pub fn run_with(
    cfg: &AlgorithmConfig,
    arch: &Architecture,
    partition: &Partition,
    train: &Dataset,
    test: &Dataset,
    opts: RunOptions,
    on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<RunOutput> {
    let mut fed = Federation::new(cfg.clone(), arch.clone(), train, partition)?.with_workers(opts.workers)?;
    drive(&mut fed, test, opts.eval_every, on_round)
}

/// Run the federation's remaining rounds (all of them for a fresh one).
pub fn drive(
    fed: &mut Federation,
    test: &Dataset,
    eval_every: usize,
    mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<RunOutput> {
    if eval_every == 0 {
        return Err(Error::Config("eval_every must be at least 1".into()));
    }
    let label = fed.cfg.label();
    if fed.cfg.variant == Variant::Solo {
        return run_solo(fed, test, on_round);
    }
    let total = fed.cfg.rounds;
    let mut records = Vec::with_capacity(total.saturating_sub(fed.global.round));
    while fed.global.round < total {
        let mut record = fed.round()?;
        if record.round % eval_every == 0 || record.round == total {
            record.accuracy = Some(top1_accuracy(&fed.global_network(), test)?);
        }
        log::info!(
            "{label} round {}: accuracy {:?} sup {:.4} con {:?}",
            record.round,
            record.accuracy,
            record.mean_sup_loss,
            record.mean_con_loss
        );
        on_round(&record)?;
        records.push(record);
    }
    Ok(RunOutput {
        label,
        records,
        final_model: fed.global.model.clone(),
        solo: None,
    })
}

fn run_solo(
    fed: &Federation,
    test: &Dataset,
    mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<RunOutput> {
    let started = Instant::now();
    let ids: Vec<usize> = (0..fed.parties.len()).collect();
    let (cfg, arch, parties) = (&fed.cfg, &fed.arch, &fed.parties);
    let results = fed.exec.map(&ids, |id| {
        let out = solo_train(&parties[id], arch, cfg)?;
        let acc = top1_accuracy(&Network::from_vector(arch, out.model)?, test)?;
        Ok((acc, out.mean_sup_loss))
    })?;
    let per_party_accuracy: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (mean, std) = party_stats(&per_party_accuracy)?;
    let record = RoundRecord {
        round: 1,
        participants: ids,
        accuracy: Some(mean),
        mean_sup_loss: results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64,
        mean_con_loss: None,
        wall_time: started.elapsed(),
    };
    log::info!(
        "solo: accuracy {mean:.4} ± {std:.4} across {} parties",
        per_party_accuracy.len()
    );
    on_round(&record)?;
    Ok(RunOutput {
        label: cfg.label(),
        records: vec![record],
        final_model: fed.global.model.clone(),
        solo: Some(SoloSummary {
            per_party_accuracy,
            mean,
            std,
        }),
    })
}
