//! Deterministic discrete-event network simulator.
//!
//! One event loop over a priority queue keyed by `(time, sequence)`. All
//! randomness (latency, drops, mining timers) comes from a single seeded
//! ChaCha stream, and all iteration is over ordered collections, so a
//! fixed configuration always yields the same trace.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

use super::{Message, NodeCore, Outbound};
use crate::consensus::{slot_start, ConsensusConfig, ConsensusKind};
use crate::crypto::{generate_identity, Digest, Identity};
use crate::ehr::{GenesisAccount, Payload, Profile, Role};
use crate::ledger::{genesis_block, Block, Transaction};

/// Genesis time used by generated scenarios.
pub const SIM_GENESIS_MS: u64 = 1_700_000_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub start_ms: u64,
    pub end_ms: u64,
    /// One side of the cut; every other node is on the other side.
    pub side: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub node_count: usize,
    pub rng_seed: u64,
    /// Inclusive uniform range of one-way message latency.
    pub latency_ms: (u64, u64),
    pub drop_rate: f64,
    /// Times are relative to genesis.
    pub partitions: Vec<Partition>,
    pub offline_nodes: BTreeSet<usize>,
    pub time_limit_ms: u64,
    pub heartbeat_ms: u64,
}

impl SimConfig {
    pub fn new(node_count: usize, rng_seed: u64) -> SimConfig {
        SimConfig {
            node_count,
            rng_seed,
            latency_ms: (5, 50),
            drop_rate: 0.0,
            partitions: Vec::new(),
            offline_nodes: BTreeSet::new(),
            time_limit_ms: 120_000,
            heartbeat_ms: 1_000,
        }
    }

    fn online(&self, node: usize) -> bool {
        !self.offline_nodes.contains(&node)
    }

    /// Time after genesis at which the last partition heals.
    fn partitions_end_ms(&self) -> u64 {
        self.partitions.iter().map(|p| p.end_ms).max().unwrap_or(0)
    }

    fn connected(&self, a: usize, b: usize, rel_ms: u64) -> bool {
        !self
            .partitions
            .iter()
            .any(|p| p.start_ms <= rel_ms && rel_ms < p.end_ms && p.side.contains(&a) != p.side.contains(&b))
    }
}

/// One pre-signed transaction submitted to `node` at `at_ms` after genesis.
#[derive(Clone, Debug)]
pub struct WorkItem {
    pub at_ms: u64,
    pub node: usize,
    pub tx: Transaction,
}

/// Everything a run needs besides the network configuration.
#[derive(Clone)]
pub struct Scenario {
    pub genesis: Block,
    pub nodes: Vec<Identity>,
    pub consensus: ConsensusConfig,
    pub workload: Vec<WorkItem>,
}

pub fn node_identity(index: usize) -> Identity {
    generate_identity(format!("sim-node-{index}").as_bytes()).expect("non-empty seed")
}

/// Consensus settings used by generated scenarios: equal stakes, all nodes
/// as delegates in index order, 100x time compression.
pub fn sim_consensus(kind: ConsensusKind, nodes: &[Identity]) -> ConsensusConfig {
    let mut c = ConsensusConfig::new(kind);
    c.difficulty_bits = 8;
    c.time_compression = 100.0;
    c.stakes = nodes.iter().map(|n| (n.address(), 1)).collect();
    c.delegates = nodes.iter().map(Identity::address).collect();
    c
}

impl Scenario {
    /// `tx_count` IoT readings from pre-registered patients, spread over the
    /// first second, each submitted to a random node.
    pub fn generate(kind: ConsensusKind, node_count: usize, tx_count: usize, seed: u64) -> Scenario {
        const PATIENTS: usize = 20;
        let nodes: Vec<Identity> = (0..node_count).map(node_identity).collect();
        let admin = generate_identity(b"sim-admin").expect("non-empty seed");
        let patients: Vec<Identity> =
            (0..PATIENTS).map(|i| generate_identity(format!("sim-patient-{i}").as_bytes()).expect("seed")).collect();
        let accounts = patients
            .iter()
            .enumerate()
            .map(|(i, p)| GenesisAccount {
                public_key: p.public_key().clone(),
                role: Role::Patient,
                profile: Profile::named(format!("Patient {i}")),
            })
            .collect();
        let genesis = genesis_block(&admin, "Administrator", accounts, None, SIM_GENESIS_MS);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_10ad);
        let mut times: Vec<u64> = (0..tx_count).map(|_| rng.gen_range(1..1_000)).collect();
        times.sort_unstable();
        let mut nonces = vec![0u64; PATIENTS];
        let workload = times
            .into_iter()
            .enumerate()
            .map(|(i, at_ms)| {
                let p = i % PATIENTS;
                let patient = &patients[p];
                let payload = Payload::RecordIoT {
                    device_id: format!("device-{p}"),
                    patient: patient.address(),
                    metric: "heart_rate".into(),
                    value: Decimal::from(rng.gen_range(50..130)),
                    unit: "bpm".into(),
                    observed_at: SIM_GENESIS_MS + at_ms,
                };
                let tx = Transaction::new_signed(patient, nonces[p], SIM_GENESIS_MS + at_ms, payload);
                nonces[p] += 1;
                WorkItem { at_ms, node: rng.gen_range(0..node_count), tx }
            })
            .collect();
        let consensus = sim_consensus(kind, &nodes);
        Scenario { genesis, nodes, consensus, workload }
    }

    /// Same genesis and workload under another consensus kind.
    pub fn with_kind(&self, kind: ConsensusKind) -> Scenario {
        Scenario { consensus: sim_consensus(kind, &self.nodes), ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time_ms: u64,
    pub node: Option<usize>,
    pub event: String,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Every online node holds the same tip and committed every transaction.
    Converged,
    /// Some transaction never reached confirmation before the time limit.
    Stalled,
    /// Everything committed but online tips still differ.
    Diverged,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Stalled => "stalled",
            Outcome::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub kind: ConsensusKind,
    pub events: Vec<TraceEvent>,
    pub delivered: u64,
    pub dropped: u64,
    pub submitted: usize,
    /// Transactions confirmed at the node they were submitted to.
    pub committed: usize,
    pub all_committed: bool,
    pub converged: bool,
    pub outcome: Outcome,
    pub tps: f64,
    pub mean_latency_ms: f64,
    pub forks: usize,
    pub invalid_blocks: u64,
    /// Final `(height, digest)` per node; `None` for offline nodes.
    pub tips: Vec<Option<(u64, Digest)>>,
    pub duration_ms: u64,
}

impl SimTrace {
    pub fn summary(&self) -> String {
        format!(
            "kind={} outcome={} submitted={} committed={} tps={:.3} mean_latency_ms={:.3} forks={} delivered={} dropped={} duration_ms={}",
            self.kind,
            self.outcome.as_str(),
            self.submitted,
            self.committed,
            self.tps,
            self.mean_latency_ms,
            self.forks,
            self.delivered,
            self.dropped,
            self.duration_ms
        )
    }

    /// Event log as CSV `time_ms,node,event,detail`, ending with a summary row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["time_ms", "node", "event", "detail"]).expect("in-memory write");
        for e in &self.events {
            let node = e.node.map(|n| n.to_string()).unwrap_or_default();
            w.write_record([e.time_ms.to_string(), node, e.event.clone(), e.detail.clone()]).expect("in-memory write");
        }
        w.write_record([self.duration_ms.to_string(), String::new(), "summary".into(), self.summary()])
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

enum Ev {
    Submit(usize),
    Deliver { from: usize, to: usize, msg: Message },
    Slot(u64),
    Mine(usize),
    Heartbeat,
}

struct Queued {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Heartbeat rounds still sent after every transaction has committed.
const DRAIN_HEARTBEATS: u32 = 3;

struct Sim<'a> {
    config: &'a SimConfig,
    scenario: &'a Scenario,
    nodes: Vec<NodeCore>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    rng: ChaCha8Rng,
    t0: u64,
    events: Vec<TraceEvent>,
    delivered: u64,
    dropped: u64,
    /// Node each workload item was actually submitted to, and when.
    submitted_to: Vec<Option<(usize, u64)>>,
    draining: bool,
    drain_left: u32,
}

impl Sim<'_> {
    fn schedule(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Queued { time, seq: self.seq, ev });
    }

    fn trace(&mut self, now: u64, node: Option<usize>, event: &str, detail: String) {
        self.events.push(TraceEvent { time_ms: now - self.t0, node, event: event.to_string(), detail });
    }

    fn collect_events(&mut self, node: usize, now: u64) {
        for e in self.nodes[node].take_events() {
            self.trace(now, Some(node), e.kind, e.detail);
        }
    }

    fn send(&mut self, from: usize, to: usize, msg: Message, now: u64) {
        if !self.config.online(to) || !self.config.connected(from, to, now - self.t0) {
            self.dropped += 1;
            return;
        }
        if self.config.drop_rate > 0.0 && self.rng.gen::<f64>() < self.config.drop_rate {
            self.dropped += 1;
            return;
        }
        let (lo, hi) = self.config.latency_ms;
        let latency = self.rng.gen_range(lo..=hi.max(lo));
        self.schedule(now + latency, Ev::Deliver { from, to, msg });
    }

    fn dispatch(&mut self, from: usize, outs: Vec<Outbound>, reply_to: Option<usize>, now: u64) {
        for out in outs {
            match out {
                Outbound::Broadcast(msg) => {
                    for peer in 0..self.nodes.len() {
                        if peer != from {
                            self.send(from, peer, msg.clone(), now);
                        }
                    }
                }
                Outbound::Reply(msg) => {
                    if let Some(to) = reply_to {
                        self.send(from, to, msg, now);
                    }
                }
            }
        }
        self.collect_events(from, now);
    }

    fn mining_delay(&mut self) -> u64 {
        let mean = (self.scenario.consensus.effective_slot_ms() * self.nodes.len() as u64) as f64;
        let u: f64 = self.rng.gen();
        (-mean * (1.0 - u).ln()).round().max(1.0) as u64
    }

    fn all_committed(&self) -> bool {
        let online: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.config.online(i)).collect();
        self.submitted_to.iter().all(Option::is_some)
            && self
                .scenario
                .workload
                .iter()
                .all(|w| online.iter().all(|&i| self.nodes[i].committed_at(&w.tx.tx_id).is_some()))
    }

    fn step(&mut self, q: Queued) {
        let now = q.time;
        let committed_before: u64 = self.nodes.iter().map(NodeCore::confirmed_height).sum();
        let heartbeat = matches!(q.ev, Ev::Heartbeat);
        match q.ev {
            Ev::Submit(i) => {
                let item = &self.scenario.workload[i];
                let n = self.nodes.len();
                let Some(target) = (0..n).map(|k| (item.node + k) % n).find(|&k| self.config.online(k)) else {
                    return;
                };
                let tx = item.tx.clone();
                self.trace(now, Some(target), "submit_request", tx.tx_id.to_string());
                self.submitted_to[i] = Some((target, now));
                match self.nodes[target].submit_transaction(tx, now) {
                    Ok(outs) => self.dispatch(target, outs, None, now),
                    Err(v) => self.trace(now, Some(target), "submit_rejected", v.to_string()),
                }
            }
            Ev::Deliver { from, to, msg } => {
                self.delivered += 1;
                let outs = self.nodes[to].handle_message(msg, now);
                self.dispatch(to, outs, Some(from), now);
            }
            Ev::Slot(slot) => {
                for i in 0..self.nodes.len() {
                    if self.config.online(i) {
                        if let Some(outs) = self.nodes[i].propose(now) {
                            self.dispatch(i, outs, None, now);
                        }
                    }
                }
                if !self.draining {
                    let next = slot_start(&self.scenario.consensus, self.t0, slot + 1);
                    self.schedule(next, Ev::Slot(slot + 1));
                }
            }
            Ev::Mine(i) => {
                if self.draining {
                    return;
                }
                let outs = self.nodes[i].mine(now);
                self.dispatch(i, outs, None, now);
                let delay = self.mining_delay();
                self.schedule(now + delay, Ev::Mine(i));
            }
            Ev::Heartbeat => {
                for i in 0..self.nodes.len() {
                    if self.config.online(i) {
                        let tip = self.nodes[i].tip_message();
                        self.dispatch(i, vec![Outbound::Broadcast(tip)], None, now);
                    }
                }
                if self.draining {
                    self.drain_left = self.drain_left.saturating_sub(1);
                }
                if !self.draining || self.drain_left > 0 {
                    self.schedule(now + self.config.heartbeat_ms, Ev::Heartbeat);
                }
            }
        }
        let committed_after: u64 = self.nodes.iter().map(NodeCore::confirmed_height).sum();
        let healed = now - self.t0 >= self.config.partitions_end_ms();
        if !self.draining && healed && (heartbeat || committed_after != committed_before) && self.all_committed() {
            self.draining = true;
            self.drain_left = DRAIN_HEARTBEATS;
            self.trace(now, None, "all_committed", String::new());
        }
    }
}

/// Runs `scenario` over the simulated network until every transaction is
/// committed everywhere and the network is quiet, or the time limit hits.
pub fn run_simulation(config: &SimConfig, scenario: &Scenario) -> SimTrace {
    assert_eq!(config.node_count, scenario.nodes.len(), "one identity per simulated node");
    let t0 = scenario.genesis.header.timestamp;
    let nodes: Vec<NodeCore> = scenario
        .nodes
        .iter()
        .map(|id| NodeCore::new(id.clone(), scenario.consensus.clone(), scenario.genesis.clone()).expect("valid genesis"))
        .collect();
    let mut sim = Sim {
        config,
        scenario,
        nodes,
        queue: BinaryHeap::new(),
        seq: 0,
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        t0,
        events: Vec::new(),
        delivered: 0,
        dropped: 0,
        submitted_to: vec![None; scenario.workload.len()],
        draining: false,
        drain_left: 0,
    };
    for (i, item) in scenario.workload.iter().enumerate() {
        sim.schedule(t0 + item.at_ms, Ev::Submit(i));
    }
    match scenario.consensus.kind {
        ConsensusKind::PoW => {
            for i in 0..config.node_count {
                if config.online(i) {
                    let delay = sim.mining_delay();
                    sim.schedule(t0 + delay, Ev::Mine(i));
                }
            }
        }
        _ => sim.schedule(slot_start(&scenario.consensus, t0, 1), Ev::Slot(1)),
    }
    sim.schedule(t0 + config.heartbeat_ms, Ev::Heartbeat);

    let deadline = t0 + config.time_limit_ms;
    let mut end = t0;
    while let Some(q) = sim.queue.pop() {
        if q.time > deadline {
            end = deadline;
            break;
        }
        end = q.time;
        sim.step(q);
    }
    finish(sim, end)
}

fn finish(sim: Sim<'_>, end: u64) -> SimTrace {
    let online: Vec<usize> = (0..sim.nodes.len()).filter(|&i| sim.config.online(i)).collect();
    let tips: Vec<Option<(u64, Digest)>> = (0..sim.nodes.len())
        .map(|i| sim.config.online(i).then(|| (sim.nodes[i].tip_height(), sim.nodes[i].tip())))
        .collect();
    let converged = online.windows(2).all(|w| tips[w[0]] == tips[w[1]]);
    let all_committed = sim.all_committed();

    let mut latencies = Vec::new();
    let mut first_submit = u64::MAX;
    let mut last_commit = 0u64;
    for (item, sub) in sim.scenario.workload.iter().zip(&sim.submitted_to) {
        let Some((node, at)) = *sub else { continue };
        first_submit = first_submit.min(at);
        if let Some(c) = sim.nodes[node].committed_at(&item.tx.tx_id) {
            latencies.push(c.saturating_sub(at));
            last_commit = last_commit.max(c);
        }
    }
    let committed = latencies.len();
    let mean_latency_ms =
        if committed == 0 { 0.0 } else { latencies.iter().sum::<u64>() as f64 / committed as f64 };
    let tps = if committed == 0 || last_commit <= first_submit {
        0.0
    } else {
        committed as f64 * 1000.0 / (last_commit - first_submit) as f64
    };

    let forks = match online.first() {
        Some(&reference) => {
            let canonical: HashSet<Digest> = sim.nodes[reference].canonical().iter().map(|b| b.digest()).collect();
            let known: BTreeSet<Digest> =
                online.iter().flat_map(|&i| sim.nodes[i].known_blocks().copied()).collect();
            known.iter().filter(|d| !canonical.contains(d)).count()
        }
        None => 0,
    };
    let invalid_blocks = sim.nodes.iter().map(|n| n.stats().blocks_rejected).sum();
    let outcome = if !all_committed {
        Outcome::Stalled
    } else if !converged {
        Outcome::Diverged
    } else {
        Outcome::Converged
    };
    SimTrace {
        kind: sim.scenario.consensus.kind,
        events: sim.events,
        delivered: sim.delivered,
        dropped: sim.dropped,
        submitted: sim.submitted_to.iter().filter(|s| s.is_some()).count(),
        committed,
        all_committed,
        converged,
        outcome,
        tps,
        mean_latency_ms,
        forks,
        invalid_blocks,
        tips,
        duration_ms: end - sim.t0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dpos_no_faults_converges() {
        let scenario = Scenario::generate(ConsensusKind::DPoS, 5, 100, 7);
        let trace = run_simulation(&SimConfig::new(5, 7), &scenario);
        assert_eq!(trace.outcome, Outcome::Converged, "{}", trace.summary());
        assert_eq!(trace.committed, 100);
        assert!(trace.tips.iter().all(|t| *t == trace.tips[0]));
    }

    #[test]
    fn identical_seed_identical_trace() {
        let scenario = Scenario::generate(ConsensusKind::PoS, 4, 40, 3);
        let mut config = SimConfig::new(4, 3);
        config.drop_rate = 0.1;
        let a = run_simulation(&config, &scenario).to_csv();
        let b = run_simulation(&config, &scenario).to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn single_node_network() {
        let scenario = Scenario::generate(ConsensusKind::DPoS, 1, 10, 1);
        let trace = run_simulation(&SimConfig::new(1, 1), &scenario);
        assert_eq!(trace.outcome, Outcome::Converged);
        assert_eq!(trace.delivered, 0);
    }
}
