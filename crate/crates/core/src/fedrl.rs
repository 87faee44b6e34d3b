//! Federated training on the EBM: latitude decomposition, FedAvg, the
//! fine-tune-local/aggregate-global cycle and the two multi-agent topologies.
//!
//! In the private-instance topology (`V2`) every agent integrates its own
//! full EBM, observes the whole field and controls its own band. In the
//! parent topology (`V3`) one shared EBM is stepped by a parent that gathers
//! every agent's action, so agents move in lockstep and only see their slice.
//!
//! All coordination runs over [`FedMessage`] frames sent through channels;
//! no mutable state is shared between threads.

use std::ops::Range;
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread;

use crate::ebm::{
    ebm_step, reward_mse_over, weighted_rmse, Climatology, ControlLayout, EbmEnv, EbmParams, EbmState, LatGrid,
    EPISODE_LENGTH, INITIAL_TEMP_C, OBS_SCALE,
};
use crate::env::{map_action, BoundedBox, Env, Info, StepResult};
use crate::eval::{area_wrmse, zonal_bias, TrainingCurve, ZonalBands};
use crate::nn::ParamVector;
use crate::rl::train::train_episode;
use crate::rl::{make_agent, Agent, Algo, AlgoConfig, Scope};
use crate::{Error, Result};

/// Disjoint contiguous latitude blocks covering the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    ranges: Vec<Range<usize>>,
}

impl RegionSpec {
    pub fn n_agents(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn region(&self, agent: usize) -> Range<usize> {
        self.ranges[agent].clone()
    }
}

/// Splits the grid into hemispheres (2) or six equal bands (6).
pub fn decompose(grid: &LatGrid, n_agents: usize) -> Result<RegionSpec> {
    if !matches!(n_agents, 2 | 6) {
        return Err(Error::Config(format!(
            "{n_agents} agents: only 2- and 6-region splits are supported"
        )));
    }
    let n = grid.len();
    if !n.is_multiple_of(n_agents) {
        return Err(Error::Config(format!(
            "{n} latitudes do not split into {n_agents} equal blocks"
        )));
    }
    let size = n / n_agents;
    Ok(RegionSpec {
        ranges: (0..n_agents).map(|i| i * size..(i + 1) * size).collect(),
    })
}

/// Mean of `values` that is exact for identical inputs and independent of
/// their order.
fn exact_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let first = values[0];
    let spread: f64 = values.iter().map(|v| v - first).sum();
    first + spread / values.len() as f64
}

/// Elementwise arithmetic mean of equally laid out parameter vectors.
pub fn fedavg(vectors: &[&ParamVector]) -> Result<ParamVector> {
    let first = *vectors.first().ok_or(Error::Empty("fedavg input"))?;
    if let Some(bad) = vectors.iter().position(|v| !v.same_layout(first)) {
        return Err(Error::LayoutMismatch(format!(
            "vector {bad} does not match the layout of vector 0"
        )));
    }
    let mut column = vec![0.0; vectors.len()];
    let flat = (0..first.len())
        .map(|i| {
            for (c, v) in column.iter_mut().zip(vectors) {
                *c = v.flat[i];
            }
            exact_mean(&mut column)
        })
        .collect();
    Ok(ParamVector {
        layouts: first.layouts.clone(),
        flat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    WeightsUp = 0,
    GlobalDown = 1,
    ScalarsUp = 2,
    StateDown = 3,
    Barrier = 4,
    /// A participant failed; everyone stops without averaging.
    Abort = 5,
}

impl MessageKind {
    fn from_u8(b: u8) -> Option<Self> {
        use MessageKind::*;
        [WeightsUp, GlobalDown, ScalarsUp, StateDown, Barrier, Abort]
            .into_iter()
            .find(|k| *k as u8 == b)
    }
}

pub const HEADER_LEN: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct FedMessage {
    pub kind: MessageKind,
    pub agent_id: u16,
    pub round: u32,
    pub payload: Vec<f64>,
}

impl FedMessage {
    pub fn new(kind: MessageKind, agent_id: u16, round: u32, payload: Vec<f64>) -> Self {
        Self {
            kind,
            agent_id,
            round,
            payload,
        }
    }

    /// Frame layout: kind u8, agent u16, round u32, payload count u32, then
    /// the payload as little-endian f64. Header integers are little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.push(self.kind as u8);
        out.extend(self.agent_id.to_le_bytes());
        out.extend(self.round.to_le_bytes());
        out.extend((self.payload.len() as u32).to_le_bytes());
        for v in &self.payload {
            out.extend(v.to_le_bytes());
        }
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let bad = |why: &str| Error::Federation(format!("bad frame: {why}"));
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        let kind = MessageKind::from_u8(bytes[0]).ok_or_else(|| bad("unknown kind"))?;
        let agent_id = u16::from_le_bytes([bytes[1], bytes[2]]);
        let round = u32::from_le_bytes(bytes[3..7].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let end = HEADER_LEN + 8 * n;
        if bytes.len() < end {
            return Err(bad("truncated payload"));
        }
        let payload = bytes[HEADER_LEN..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self::new(kind, agent_id, round, payload), end))
    }
}

fn send(tx: &Sender<Vec<u8>>, msg: FedMessage) -> Result<()> {
    tx.send(msg.encode())
        .map_err(|_| Error::Federation("peer hung up".into()))
}

fn recv(rx: &Receiver<Vec<u8>>) -> Result<FedMessage> {
    let frame = rx.recv().map_err(|_| Error::Federation("peer hung up".into()))?;
    Ok(FedMessage::decode(&frame)?.0)
}

/// When and what to average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationPolicy {
    /// Episodes between synchronisations; `None` never synchronises.
    pub every: Option<usize>,
    pub scope: Scope,
}

impl AggregationPolicy {
    pub fn every(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("aggregation period must be at least one episode".into()));
        }
        Ok(Self {
            every: Some(k),
            scope: Scope::All,
        })
    }

    pub fn nofed() -> Self {
        Self {
            every: None,
            scope: Scope::All,
        }
    }

    pub fn with_scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    /// Number of synchronisations in a run of `episodes`.
    pub fn rounds(&self, episodes: usize) -> usize {
        self.every.map_or(0, |k| episodes / k)
    }

    fn syncs_after(&self, episode: usize) -> Option<u32> {
        let k = self.every?;
        (episode + 1).is_multiple_of(k).then_some(((episode + 1) / k) as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPolicy {
    pub weights: ParamVector,
    pub source_round: u32,
    pub scope: Scope,
}

pub struct FedMember {
    pub agent: Box<dyn Agent>,
    pub env: Box<dyn Env>,
}

pub struct FedOutcome {
    pub members: Vec<FedMember>,
    pub history: Vec<GlobalPolicy>,
    pub agent_curves: Vec<TrainingCurve>,
    /// Mean over agents of the per-episode returns.
    pub curve: TrainingCurve,
}

impl FedOutcome {
    pub fn global_policy(&self) -> Option<&GlobalPolicy> {
        self.history.last()
    }
}

/// Trains every member for `episodes` episodes on its own thread; a
/// coordinator thread averages parameters at each synchronisation barrier
/// and broadcasts the mean back. Optimiser moments are reset after every
/// broadcast. Replay buffers are never touched.
pub fn flag_cycle(
    members: Vec<FedMember>,
    policy: AggregationPolicy,
    episodes: usize,
    seed: u64,
) -> Result<FedOutcome> {
    let first = members.first().ok_or(Error::Empty("federation members"))?;
    let layout = first.agent.params(policy.scope);
    for (i, m) in members.iter().enumerate() {
        if !m.agent.params(policy.scope).same_layout(&layout) {
            return Err(Error::LayoutMismatch(format!("agent {i} differs from agent 0")));
        }
        if m.agent.action_dim() != m.env.action_dim() {
            return Err(Error::dim("member action", m.env.action_dim(), m.agent.action_dim()));
        }
    }
    let n = members.len();
    let (up_tx, up_rx) = mpsc::channel::<Vec<u8>>();
    let mut down_txs = Vec::with_capacity(n);
    let mut workers = Vec::with_capacity(n);
    for (id, member) in members.into_iter().enumerate() {
        let (down_tx, down_rx) = mpsc::channel::<Vec<u8>>();
        down_txs.push(down_tx);
        let up = up_tx.clone();
        workers.push(thread::spawn(move || {
            let result = run_member(member, id as u16, policy, episodes, seed, &up, &down_rx);
            if let Err(e) = &result {
                let _ = send(&up, FedMessage::new(MessageKind::Abort, id as u16, 0, vec![]));
                return Err(Error::Federation(format!("agent {id}: {e}")));
            }
            result
        }));
    }
    drop(up_tx);

    let coordinated = coordinate(n, policy, episodes, &layout, &up_rx, &down_txs);
    drop(down_txs);
    let mut finished = Vec::with_capacity(n);
    let mut first_err = None;
    for w in workers {
        match w.join() {
            Ok(Ok(m)) => finished.push(m),
            Ok(Err(e)) => {
                first_err.get_or_insert(e);
            }
            Err(_) => {
                first_err.get_or_insert(Error::Federation("agent thread panicked".into()));
            }
        }
    }
    let (history, returns) = coordinated?;
    if let Some(e) = first_err {
        return Err(e);
    }
    let length = finished[0].0.env.episode_length();
    let agent_curves: Vec<TrainingCurve> = finished.iter().map(|(_, c)| c.clone()).collect();
    let mean: Vec<f64> = (0..episodes)
        .map(|e| returns.iter().map(|r| r[e]).sum::<f64>() / n as f64)
        .collect();
    Ok(FedOutcome {
        members: finished.into_iter().map(|(m, _)| m).collect(),
        history,
        agent_curves,
        curve: TrainingCurve::from_returns(&mean, length),
    })
}

fn run_member(
    mut member: FedMember,
    id: u16,
    policy: AggregationPolicy,
    episodes: usize,
    seed: u64,
    up: &Sender<Vec<u8>>,
    down: &Receiver<Vec<u8>>,
) -> Result<(FedMember, TrainingCurve)> {
    let mut curve = TrainingCurve::default();
    let mut step = 0;
    for episode in 0..episodes {
        let ret = train_episode(
            &mut member.env,
            member.agent.as_mut(),
            episode,
            seed,
            &mut step,
            &mut (),
        )?;
        curve.push(step, ret)?;
        send(up, FedMessage::new(MessageKind::Barrier, id, episode as u32, vec![ret]))?;
        if let Some(round) = policy.syncs_after(episode) {
            let weights = member.agent.params(policy.scope);
            send(up, FedMessage::new(MessageKind::WeightsUp, id, round, weights.flat))?;
            let reply = recv(down)?;
            if reply.kind != MessageKind::GlobalDown || reply.round != round {
                return Err(Error::Federation(format!(
                    "expected global weights for round {round}, got {:?} round {}",
                    reply.kind, reply.round
                )));
            }
            let global = ParamVector {
                layouts: weights.layouts,
                flat: reply.payload,
            };
            member.agent.set_params(policy.scope, &global)?;
            member.agent.reset_optimizers();
        }
    }
    Ok((member, curve))
}

type Coordinated = (Vec<GlobalPolicy>, Vec<Vec<f64>>);

fn coordinate(
    n: usize,
    policy: AggregationPolicy,
    episodes: usize,
    layout: &ParamVector,
    up: &Receiver<Vec<u8>>,
    down: &[Sender<Vec<u8>>],
) -> Result<Coordinated> {
    let mut returns = vec![vec![f64::NAN; episodes]; n];
    let mut history = Vec::with_capacity(policy.rounds(episodes));
    let mut pending: Vec<Option<ParamVector>> = vec![None; n];
    // Every sender hanging up ends the loop.
    while let Ok(frame) = up.recv() {
        let msg = FedMessage::decode(&frame)?.0;
        let id = msg.agent_id as usize;
        match msg.kind {
            MessageKind::Barrier => returns[id][msg.round as usize] = msg.payload[0],
            MessageKind::WeightsUp => {
                let round = history.len() as u32 + 1;
                if msg.round != round || pending[id].is_some() {
                    return Err(Error::Federation(format!(
                        "agent {id} sent round {} while round {round} is open",
                        msg.round
                    )));
                }
                let weights = ParamVector {
                    layouts: layout.layouts.clone(),
                    flat: msg.payload,
                };
                if !weights.same_layout(layout) {
                    return Err(Error::LayoutMismatch(format!("agent {id} weights")));
                }
                pending[id] = Some(weights);
                if pending.iter().all(Option::is_some) {
                    let collected: Vec<ParamVector> = pending.iter_mut().map(|p| p.take().unwrap()).collect();
                    let global = fedavg(&collected.iter().collect::<Vec<_>>())?;
                    for tx in down {
                        send(
                            tx,
                            FedMessage::new(MessageKind::GlobalDown, 0, round, global.flat.clone()),
                        )?;
                    }
                    history.push(GlobalPolicy {
                        weights: global,
                        source_round: round,
                        scope: policy.scope,
                    });
                }
            }
            MessageKind::Abort => {
                return Err(Error::Federation(format!("agent {id} aborted, no averaging performed")));
            }
            other => {
                return Err(Error::Federation(format!("unexpected {other:?} from agent {id}")));
            }
        }
    }
    if returns.iter().flatten().any(|r| r.is_nan()) {
        return Err(Error::Federation("an agent stopped before the final episode".into()));
    }
    Ok((history, returns))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedTopology {
    /// Private full EBM per agent.
    V2,
    /// One parent EBM, sliced observations.
    V3,
}

impl FedTopology {
    pub fn name(self) -> &'static str {
        match self {
            FedTopology::V2 => "ebm-v2",
            FedTopology::V3 => "ebm-v3",
        }
    }
}

/// One private EBM per region; each observes the whole field and is scored on
/// its own band.
pub fn make_ebm_v2(regions: &RegionSpec, climatology: &Climatology) -> Result<Vec<EbmEnv>> {
    check_regions(regions)?;
    regions
        .ranges()
        .iter()
        .map(|r| {
            EbmEnv::new(
                FedTopology::V2.name(),
                ControlLayout::Regional(r.clone()),
                r.clone(),
                climatology.clone(),
            )
        })
        .collect()
}

fn check_regions(regions: &RegionSpec) -> Result<()> {
    let mut next = 0;
    for r in regions.ranges() {
        if r.start != next || r.is_empty() {
            return Err(Error::Config(format!("region {r:?} breaks the contiguous cover")));
        }
        next = r.end;
    }
    if next != crate::ebm::N_LAT {
        return Err(Error::Config(format!(
            "regions cover {next} of {} latitudes",
            crate::ebm::N_LAT
        )));
    }
    Ok(())
}

/// Shared EBM stepped by a parent that assembles the agents' actions.
#[derive(Debug, Clone)]
pub struct ParentEbm {
    grid: LatGrid,
    base: EbmParams,
    climatology: Climatology,
    regions: RegionSpec,
    bounds: Vec<BoundedBox>,
    state: Option<EbmState>,
}

impl ParentEbm {
    pub fn new(regions: &RegionSpec, climatology: &Climatology) -> Result<Self> {
        check_regions(regions)?;
        let grid = LatGrid::standard();
        if climatology.temps.len() != grid.len() {
            return Err(Error::dim("climatology", grid.len(), climatology.temps.len()));
        }
        Ok(Self {
            bounds: regions
                .ranges()
                .iter()
                .map(|r| ControlLayout::Regional(r.clone()).bounds())
                .collect(),
            grid,
            base: EbmParams::canonical(),
            climatology: climatology.clone(),
            regions: regions.clone(),
            state: None,
        })
    }

    pub fn regions(&self) -> &RegionSpec {
        &self.regions
    }

    pub fn grid(&self) -> &LatGrid {
        &self.grid
    }

    pub fn temperature(&self) -> Option<&[f64]> {
        self.state.as_ref().map(|s| s.temps.as_slice())
    }

    pub fn obs_dim(&self, agent: usize) -> usize {
        self.regions.region(agent).len()
    }

    pub fn action_dim(&self, agent: usize) -> usize {
        self.bounds[agent].dim()
    }

    fn slices(&self) -> Vec<Vec<f64>> {
        let temps = &self.state.as_ref().expect("parent is reset").temps;
        self.regions
            .ranges()
            .iter()
            .map(|r| temps[r.clone()].iter().map(|t| t * OBS_SCALE).collect())
            .collect()
    }

    /// Starts every episode from the same isothermal field; returns each
    /// agent's slice.
    pub fn reset(&mut self) -> Vec<Vec<f64>> {
        self.state = Some(EbmState::isothermal(INITIAL_TEMP_C, &self.grid));
        self.slices()
    }

    /// Builds the full parameter set from physical per-agent actions
    /// `[A.., B.., α0, α2, D]`: bands come from their owners, the scalar
    /// triple is the agent mean.
    pub fn assemble(&self, physical: &[Vec<f64>]) -> Result<EbmParams> {
        if physical.len() != self.regions.n_agents() {
            return Err(Error::Federation(format!(
                "{} of {} agent actions arrived",
                physical.len(),
                self.regions.n_agents()
            )));
        }
        let mut params = self.base.clone();
        for (i, p) in physical.iter().enumerate() {
            if p.len() != self.action_dim(i) {
                return Err(Error::dim("agent action", self.action_dim(i), p.len()));
            }
            ControlLayout::Regional(self.regions.region(i)).apply(p, &mut params);
        }
        let mut triple = [0.0; 3];
        for (k, slot) in triple.iter_mut().enumerate() {
            let mut column: Vec<f64> = physical.iter().map(|p| p[p.len() - 3 + k]).collect();
            *slot = exact_mean(&mut column);
        }
        params.alpha0 = triple[0];
        params.alpha2 = triple[1];
        params.d = triple[2];
        Ok(params)
    }

    /// Advances with physical actions; returns per-agent results.
    pub fn step_physical(&mut self, physical: Vec<Vec<f64>>) -> Result<Vec<StepResult>> {
        let state = self.state.as_ref().ok_or(Error::NotReset)?;
        let params = self.assemble(&physical)?;
        let next = ebm_step(state, &params, &self.grid)?;
        let truncated = next.t >= EPISODE_LENGTH;
        let mut rewards = Vec::with_capacity(physical.len());
        for r in self.regions.ranges() {
            rewards.push(reward_mse_over(&next.temps, &self.climatology.temps, r.clone())?);
        }
        self.state = Some(next);
        Ok(self
            .slices()
            .into_iter()
            .zip(rewards)
            .zip(physical)
            .map(|((observation, reward), params)| StepResult {
                observation,
                reward,
                terminated: false,
                truncated,
                info: Info {
                    params,
                    ..Info::default()
                },
            })
            .collect())
    }

    /// Advances with raw `[-1, 1]` actions.
    pub fn step(&mut self, raw: &[Vec<f64>]) -> Result<Vec<StepResult>> {
        if raw.len() != self.bounds.len() {
            return Err(Error::Federation(format!(
                "{} of {} agent actions arrived",
                raw.len(),
                self.bounds.len()
            )));
        }
        let physical = raw
            .iter()
            .zip(&self.bounds)
            .map(|(a, b)| map_action(a, b))
            .collect::<Result<Vec<_>>>()?;
        self.step_physical(physical)
    }
}

/// An agent's handle on the parent EBM. Every call is a message round trip;
/// once the parent is gone, steps fail.
pub struct ParentView {
    agent: u16,
    obs_dim: usize,
    action_dim: usize,
    up: Sender<Vec<u8>>,
    down: Receiver<Vec<u8>>,
    calls: u32,
    broken: bool,
}

impl ParentView {
    fn exchange(&mut self, kind: MessageKind, payload: Vec<f64>) -> Result<FedMessage> {
        self.calls += 1;
        let reply =
            send(&self.up, FedMessage::new(kind, self.agent, self.calls, payload)).and_then(|_| recv(&self.down));
        match reply {
            Ok(m) if m.kind == MessageKind::StateDown => Ok(m),
            Ok(m) => {
                self.broken = true;
                Err(Error::Federation(format!("parent replied with {:?}", m.kind)))
            }
            Err(e) => {
                self.broken = true;
                Err(e)
            }
        }
    }
}

/// State frames carry `[reward, truncated, obs..]`.
fn state_frame(agent: u16, round: u32, reward: f64, truncated: bool, obs: &[f64]) -> FedMessage {
    let mut payload = Vec::with_capacity(obs.len() + 2);
    payload.push(reward);
    payload.push(if truncated { 1.0 } else { 0.0 });
    payload.extend_from_slice(obs);
    FedMessage::new(MessageKind::StateDown, agent, round, payload)
}

impl Env for ParentView {
    fn id(&self) -> &str {
        FedTopology::V3.name()
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn episode_length(&self) -> usize {
        EPISODE_LENGTH
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        match self.exchange(MessageKind::Barrier, vec![]) {
            Ok(m) => m.payload[2..].to_vec(),
            Err(_) => vec![0.0; self.obs_dim],
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.broken {
            return Err(Error::Federation("parent integrator unavailable".into()));
        }
        if action.len() != self.action_dim {
            return Err(Error::dim("agent action", self.action_dim, action.len()));
        }
        let m = self.exchange(MessageKind::ScalarsUp, action.to_vec())?;
        Ok(StepResult {
            observation: m.payload[2..].to_vec(),
            reward: m.payload[0],
            terminated: false,
            truncated: m.payload[1] != 0.0,
            info: Info::default(),
        })
    }
}

/// Runs `parent` on its own thread, serving one [`ParentView`] per agent.
/// Each phase waits for every agent; a missing message aborts the parent,
/// which in turn fails every view.
pub fn spawn_parent(mut parent: ParentEbm) -> (Vec<ParentView>, thread::JoinHandle<Result<ParentEbm>>) {
    let n = parent.regions.n_agents();
    let mut views = Vec::with_capacity(n);
    let mut ups = Vec::with_capacity(n);
    let mut downs = Vec::with_capacity(n);
    for i in 0..n {
        let (up_tx, up_rx) = mpsc::channel();
        let (down_tx, down_rx) = mpsc::channel();
        ups.push(up_rx);
        downs.push(down_tx);
        views.push(ParentView {
            agent: i as u16,
            obs_dim: parent.obs_dim(i),
            action_dim: parent.action_dim(i),
            up: up_tx,
            down: down_rx,
            calls: 0,
            broken: false,
        });
    }
    let handle = thread::spawn(move || {
        loop {
            let mut msgs = Vec::with_capacity(n);
            for (i, rx) in ups.iter().enumerate() {
                match rx.recv() {
                    Ok(frame) => msgs.push(FedMessage::decode(&frame)?.0),
                    Err(_) if i == 0 && msgs.is_empty() => {
                        // Agent 0 finished; everyone else must have too.
                        if ups[1..].iter().all(|r| r.recv().is_err()) {
                            return Ok(parent);
                        }
                        return Err(Error::Federation("agents finished at different steps".into()));
                    }
                    Err(_) => return Err(Error::Federation(format!("agent {i} missed the step barrier"))),
                }
            }
            let kind = msgs[0].kind;
            if msgs.iter().any(|m| m.kind != kind) {
                return Err(Error::Federation("agents out of phase".into()));
            }
            let replies: Vec<FedMessage> = match kind {
                MessageKind::Barrier => parent
                    .reset()
                    .iter()
                    .enumerate()
                    .map(|(i, obs)| state_frame(i as u16, msgs[i].round, 0.0, false, obs))
                    .collect(),
                MessageKind::ScalarsUp => {
                    let round: Vec<u32> = msgs.iter().map(|m| m.round).collect();
                    let actions = msgs.into_iter().map(|m| m.payload).collect::<Vec<_>>();
                    parent
                        .step(&actions)?
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| state_frame(i as u16, round[i], s.reward, s.truncated, &s.observation))
                        .collect()
                }
                other => return Err(Error::Federation(format!("parent cannot serve {other:?}"))),
            };
            for (tx, reply) in downs.iter().zip(replies) {
                send(tx, reply)?;
            }
        }
    });
    (views, handle)
}

/// Everything needed to build a federated run.
#[derive(Debug, Clone)]
pub struct FedSetup {
    pub topology: FedTopology,
    pub regions: RegionSpec,
    pub climatology: Climatology,
}

impl FedSetup {
    pub fn new(topology: FedTopology, n_agents: usize, climatology: Climatology) -> Result<Self> {
        Ok(Self {
            topology,
            regions: decompose(&LatGrid::standard(), n_agents)?,
            climatology,
        })
    }

    pub fn obs_dim(&self, agent: usize) -> usize {
        match self.topology {
            FedTopology::V2 => crate::ebm::N_LAT,
            FedTopology::V3 => self.regions.region(agent).len(),
        }
    }

    pub fn action_dim(&self, agent: usize) -> usize {
        ControlLayout::Regional(self.regions.region(agent)).action_dim()
    }
}

/// Seed of agent `i` in a run seeded with `seed`.
pub fn member_seed(seed: u64, agent: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(7919 * (agent as u64 + 1))
}

/// Builds the agents, wires the topology and runs the FLAG cycle.
pub fn fed_train(
    setup: &FedSetup,
    algo: Algo,
    cfg: &AlgoConfig,
    policy: AggregationPolicy,
    episodes: usize,
    seed: u64,
) -> Result<FedOutcome> {
    let n = setup.regions.n_agents();
    let agents = (0..n)
        .map(|i| make_agent(algo, setup.obs_dim(i), setup.action_dim(i), cfg, member_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    match setup.topology {
        FedTopology::V2 => {
            let envs = make_ebm_v2(&setup.regions, &setup.climatology)?;
            let members = agents
                .into_iter()
                .zip(envs)
                .map(|(agent, env)| FedMember {
                    agent,
                    env: Box::new(env),
                })
                .collect();
            flag_cycle(members, policy, episodes, seed)
        }
        FedTopology::V3 => {
            let (views, parent) = spawn_parent(ParentEbm::new(&setup.regions, &setup.climatology)?);
            let members = agents
                .into_iter()
                .zip(views)
                .map(|(agent, env)| FedMember {
                    agent,
                    env: Box::new(env),
                })
                .collect();
            let outcome = flag_cycle(members, policy, episodes, seed);
            // Views live inside the outcome; drop them so the parent exits.
            let outcome = outcome.map(|mut o| {
                for m in &mut o.members {
                    m.env = Box::new(Detached(m.env.obs_dim(), m.env.action_dim()));
                }
                o
            });
            let parent_result = parent
                .join()
                .map_err(|_| Error::Federation("parent thread panicked".into()))?;
            let outcome = outcome?;
            parent_result?;
            Ok(outcome)
        }
    }
}

/// Placeholder left in place of a view whose parent has shut down.
struct Detached(usize, usize);

impl Env for Detached {
    fn id(&self) -> &str {
        FedTopology::V3.name()
    }
    fn obs_dim(&self) -> usize {
        self.0
    }
    fn action_dim(&self) -> usize {
        self.1
    }
    fn episode_length(&self) -> usize {
        EPISODE_LENGTH
    }
    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![0.0; self.0]
    }
    fn step(&mut self, _action: &[f64]) -> Result<StepResult> {
        Err(Error::Federation("parent integrator has shut down".into()))
    }
}

#[derive(Debug, Clone)]
pub struct RolloutReport {
    pub label: String,
    /// Final field assembled from each region's own band.
    pub temps: Vec<f64>,
    pub agent_returns: Vec<f64>,
    pub episodic_return: f64,
    pub total_rmse: f64,
    pub band_rmse: Vec<f64>,
    pub band_bias: Vec<f64>,
}

/// Runs one inference episode of the whole federation. `act(i, obs)` gives
/// agent `i`'s raw action.
pub fn rollout(
    setup: &FedSetup,
    label: impl Into<String>,
    seed: u64,
    act: &mut dyn FnMut(usize, &[f64]) -> Vec<f64>,
) -> Result<RolloutReport> {
    let grid = LatGrid::standard();
    let n = setup.regions.n_agents();
    let mut returns = vec![0.0; n];
    let mut temps = vec![0.0; grid.len()];
    match setup.topology {
        FedTopology::V2 => {
            for (i, mut env) in make_ebm_v2(&setup.regions, &setup.climatology)?.into_iter().enumerate() {
                let mut obs = env.reset(seed);
                loop {
                    let s = env.step(&act(i, &obs))?;
                    returns[i] += s.reward;
                    obs = s.observation;
                    if s.truncated {
                        break;
                    }
                }
                let r = setup.regions.region(i);
                temps[r.clone()].copy_from_slice(&env.temperature().expect("stepped")[r]);
            }
        }
        FedTopology::V3 => {
            let mut parent = ParentEbm::new(&setup.regions, &setup.climatology)?;
            let mut obs = parent.reset();
            loop {
                let actions: Vec<Vec<f64>> = (0..n).map(|i| act(i, &obs[i])).collect();
                let results = parent.step(&actions)?;
                let done = results[0].truncated;
                obs = results
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        returns[i] += s.reward;
                        s.observation
                    })
                    .collect();
                if done {
                    break;
                }
            }
            temps.copy_from_slice(parent.temperature().expect("stepped"));
        }
    }
    let clim = &setup.climatology.temps;
    let bands = ZonalBands::standard(&grid);
    Ok(RolloutReport {
        label: label.into(),
        episodic_return: returns.iter().sum::<f64>() / n as f64,
        agent_returns: returns,
        total_rmse: weighted_rmse(&temps, clim, &grid),
        band_rmse: area_wrmse(&temps, clim, &bands)?,
        band_bias: zonal_bias(&temps, clim, &bands)?,
        temps,
    })
}

/// Inference with the averaged policy driving every region. `label` gets the
/// `-GLOBAL` suffix. Runs without a global policy are rejected.
pub fn global_policy_rollout(
    outcome: &mut FedOutcome,
    setup: &FedSetup,
    label: &str,
    seed: u64,
) -> Result<RolloutReport> {
    let global = outcome
        .global_policy()
        .cloned()
        .ok_or_else(|| Error::Config(format!("{label}: run never aggregated, no global policy")))?;
    let dims: Vec<(usize, usize)> = (0..setup.regions.n_agents())
        .map(|i| (setup.obs_dim(i), setup.action_dim(i)))
        .collect();
    if dims.iter().any(|d| *d != dims[0]) {
        return Err(Error::LayoutMismatch(
            "regions differ in observation or action width".into(),
        ));
    }
    let agent = &mut outcome.members[0].agent;
    let saved = agent.params(global.scope);
    agent.set_params(global.scope, &global.weights)?;
    let report = rollout(setup, format!("{label}-GLOBAL"), seed, &mut |_, obs| {
        agent.act(obs, crate::env::Mode::Infer)
    });
    agent.set_params(global.scope, &saved)?;
    report
}

/// Inference with each agent driving its own region.
pub fn local_rollout(outcome: &mut FedOutcome, setup: &FedSetup, label: &str, seed: u64) -> Result<RolloutReport> {
    let members = &mut outcome.members;
    rollout(setup, label, seed, &mut |i, obs| {
        members[i].agent.act(obs, crate::env::Mode::Infer)
    })
}
