//! A persisted node: chain file, keystore, block production, peer
//! transport and the gateway.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use tokio::net::TcpListener;

use crate::config::{ConfigError, NodeConfig};
use crate::consensus::{slot_at, slot_start, ConsensusKind};
use crate::crypto::Identity;
use crate::gateway::{http, Gateway};
use crate::keystore::{Keystore, KeystoreError};
use crate::ledger::{genesis_block, read_blocks, write_blocks, ChainError, ChainStore, StoreError};
use crate::network::tcp::{now_ms, serve, PeerSet, SharedNode};
use crate::network::{Message, NodeCore, Outbound};

pub const ADMIN_KEY: &str = "admin";
pub const NODE_KEY: &str = "node";

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Keystore(#[from] KeystoreError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("chain rejected: {0:?}")]
    Chain(ChainError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("genesis file {0} holds no block")]
    EmptyGenesis(std::path::PathBuf),
    #[error("{0}")]
    Other(String),
}

impl From<ChainError> for NodeError {
    fn from(e: ChainError) -> NodeError {
        NodeError::Chain(e)
    }
}

pub struct Node {
    core: SharedNode,
    store: Mutex<ChainStore>,
    keystore: Keystore,
    admin: Identity,
}

impl Node {
    /// Loads the persisted chain, or creates genesis in a fresh data dir.
    pub fn open(config: &NodeConfig, now: u64) -> Result<Node, NodeError> {
        std::fs::create_dir_all(&config.data_dir)?;
        let mut keystore = Keystore::open(config.keystore_dir())?;
        let admin = match keystore.by_label(ADMIN_KEY) {
            Some(a) => a.clone(),
            None => keystore.create_random(ADMIN_KEY)?,
        };
        let identity = match keystore.by_label(NODE_KEY) {
            Some(n) => n.clone(),
            None => keystore.create_random(NODE_KEY)?,
        };
        let consensus = config.effective_consensus(identity.address())?;
        let mut store = ChainStore::open(config.chain_path())?;
        let mut blocks = store.load()?;
        if blocks.is_empty() {
            let genesis = match &config.genesis.file {
                Some(path) if path.exists() => read_blocks(std::fs::File::open(path)?)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| NodeError::EmptyGenesis(path.clone()))?,
                _ => genesis_block(
                    &admin,
                    &config.genesis.admin_name,
                    Vec::new(),
                    config.genesis.system_start_date,
                    config.genesis.timestamp_ms.unwrap_or(now),
                ),
            };
            store.append(&genesis)?;
            write_blocks(std::fs::File::create(config.data_dir.join("genesis.bin"))?, [&genesis])?;
            blocks.push(genesis);
        }
        let genesis = blocks[0].clone();
        let mut core = NodeCore::new(identity, consensus, genesis)?;
        core.import(blocks.into_iter().skip(1))?;
        Ok(Node { core: Arc::new(Mutex::new(core)), store: Mutex::new(store), keystore, admin })
    }

    pub fn core(&self) -> &SharedNode {
        &self.core
    }

    pub fn keystore(&self) -> &Keystore {
        &self.keystore
    }

    pub fn keystore_mut(&mut self) -> &mut Keystore {
        &mut self.keystore
    }

    /// Identity behind the genesis admin when this node created genesis.
    pub fn admin(&self) -> &Identity {
        &self.admin
    }

    pub fn height(&self) -> u64 {
        self.core.lock().expect("node lock").tip_height()
    }

    pub fn confirmed_height(&self) -> u64 {
        self.core.lock().expect("node lock").confirmed_height()
    }

    /// Appends newly confirmed blocks to the chain file, or rewrites it
    /// when a reorganization discarded confirmed blocks.
    pub fn persist(&self) -> Result<usize, NodeError> {
        let mut core = self.core.lock().expect("node lock");
        let blocks = core.take_newly_confirmed();
        let mut store = self.store.lock().expect("store lock");
        if core.take_confirmed_rewound() {
            let chain = core.confirmed_chain();
            store.rewrite(chain.iter().map(|b| b.as_ref()))?;
            return Ok(blocks.len());
        }
        drop(core);
        for b in &blocks {
            store.append(b)?;
        }
        Ok(blocks.len())
    }

    /// Tries to produce a block at `now`: a slot proposal, or a mined
    /// block under PoW.
    pub fn produce(&self, now: u64) -> Vec<Outbound> {
        let mut core = self.core.lock().expect("node lock");
        if core.consensus().kind == ConsensusKind::PoW {
            core.mine(now)
        } else {
            core.propose(now).unwrap_or_default()
        }
    }

    /// Produces blocks back to back, at the earliest slot this node may
    /// fill, until the mempool is empty and every transaction is confirmed.
    /// Used for embedded operation without a running node.
    pub fn produce_until_committed(&self, now: u64, max_blocks: usize) -> Result<(), NodeError> {
        for _ in 0..max_blocks {
            {
                let core = self.core.lock().expect("node lock");
                let pending = core.canonical_from(core.confirmed_height() + 1);
                if core.mempool_len() == 0 && pending.iter().all(|b| b.transactions.is_empty()) {
                    return Ok(());
                }
            }
            self.produce_next(now)?;
        }
        Err(NodeError::Other(format!("transactions not committed after {max_blocks} blocks")))
    }

    fn produce_next(&self, now: u64) -> Result<(), NodeError> {
        let mut core = self.core.lock().expect("node lock");
        let tip_ts = core.tip_entry().block.header.timestamp;
        if core.consensus().kind == ConsensusKind::PoW {
            core.mine(now.max(tip_ts));
            return Ok(());
        }
        let cfg = core.consensus().clone();
        let genesis_ts = core.genesis_timestamp();
        let tip_slot = core.tip_entry().block.header.consensus_proof.slot().unwrap_or(0);
        let mut slot = slot_at(&cfg, genesis_ts, now.max(tip_ts)).unwrap_or(0).max(tip_slot + 1);
        for _ in 0..100_000 {
            if core.propose(slot_start(&cfg, genesis_ts, slot)).is_some() {
                return Ok(());
            }
            slot += 1;
        }
        Err(NodeError::Other("this node is never scheduled to propose".into()))
    }
}

fn production_tick(node: &NodeCore) -> Duration {
    let slot = node.consensus().effective_slot_ms();
    Duration::from_millis((slot / 4).clamp(10, 250))
}

/// Runs the node until interrupted.
pub async fn run(config: NodeConfig) -> Result<(), NodeError> {
    let node = Arc::new(Node::open(&config, now_ms())?);
    let (tick, kind, eff_slot) = {
        let core = node.core.lock().expect("node lock");
        eprintln!(
            "node {} ({}) resuming at height {} tip {}",
            core.address(),
            core.consensus().kind,
            core.tip_height(),
            core.tip()
        );
        (production_tick(&core), core.consensus().kind, core.consensus().effective_slot_ms())
    };
    let peers = PeerSet::new();
    let listener = TcpListener::bind(config.listen).await?;
    eprintln!("p2p listening on {}", listener.local_addr()?);
    tokio::spawn(serve(listener, node.core.clone(), peers.clone()));
    for addr in &config.peers {
        peers.connect(*addr, node.core.clone());
    }
    if let Some(api) = config.api_listen {
        let hook_peers = peers.clone();
        let gateway = Gateway::new(node.core.clone(), node.keystore.clone())
            .with_outbound(move |outs| hook_peers.route(outs, None));
        let listener = TcpListener::bind(api).await?;
        eprintln!("gateway listening on http://{}", listener.local_addr()?);
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, http::router(Arc::new(gateway))).await {
                eprintln!("gateway stopped: {e}");
            }
        });
    }

    // Each PoW node mines at an exponential rate so the network as a whole
    // targets one block per slot.
    let miners = (config.peers.len() + 1) as f64;
    let mut next_mine = now_ms();
    let mut last_sync = 0u64;
    let mut interval = tokio::time::interval(tick);
    loop {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => break,
            _ = interval.tick() => {}
        }
        let now = now_ms();
        let outs = if kind == ConsensusKind::PoW {
            if now < next_mine {
                Vec::new()
            } else {
                let u: f64 = rand::thread_rng().gen_range(f64::EPSILON..1.0);
                next_mine = now + (-u.ln() * eff_slot as f64 * miners) as u64;
                let n = node.clone();
                tokio::task::spawn_blocking(move || n.produce(now)).await.unwrap_or_default()
            }
        } else {
            node.produce(now)
        };
        peers.route(outs, None);
        if now.saturating_sub(last_sync) >= 2000 {
            peers.broadcast(&Message::RequestTip);
            last_sync = now;
        }
        node.persist()?;
    }
    let n = node.persist()?;
    eprintln!("stopped at height {} ({n} blocks flushed)", node.height());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{Payload, Profile, Role};
    use crate::ledger::Transaction;

    fn config(dir: &std::path::Path, kind: &str) -> NodeConfig {
        let text = format!("data_dir = \"{}\"\n[consensus]\nkind = \"{kind}\"\ndifficulty_bits = 4\n", dir.display());
        NodeConfig::parse(&text, &dir.join("node.toml")).unwrap()
    }

    #[test]
    fn fresh_dir_creates_genesis_and_restart_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "DPoS");
        let now = 1_700_000_000_000;
        let node = Node::open(&cfg, now).unwrap();
        assert_eq!(node.height(), 0);
        let user = crate::crypto::generate_identity(b"restart-user").unwrap();
        let tx = Transaction::new_signed(
            &user,
            0,
            now,
            Payload::RegisterUser { public_key: user.public_key().clone(), role: Role::Patient, profile: Profile::named("U") },
        );
        node.core().lock().unwrap().submit_transaction(tx, now).unwrap();
        node.produce_until_committed(now, 10).unwrap();
        node.persist().unwrap();
        let (height, tip) = {
            let c = node.core().lock().unwrap();
            (c.tip_height(), c.tip())
        };
        assert!(height >= 1);
        drop(node);

        let again = Node::open(&cfg, now + 1).unwrap();
        let c = again.core().lock().unwrap();
        assert_eq!((c.tip_height(), c.tip()), (height, tip));
        assert!(c.tip_state().account(&user.address()).is_some());
    }

    #[test]
    fn pow_embedded_production() {
        let dir = tempfile::tempdir().unwrap();
        let now = 1_700_000_000_000;
        let node = Node::open(&config(dir.path(), "PoW"), now).unwrap();
        let user = crate::crypto::generate_identity(b"pow-user").unwrap();
        let tx = Transaction::new_signed(
            &user,
            0,
            now,
            Payload::RegisterUser { public_key: user.public_key().clone(), role: Role::Doctor, profile: Profile::named("D") },
        );
        let id = tx.tx_id;
        node.core().lock().unwrap().submit_transaction(tx, now).unwrap();
        node.produce_until_committed(now, 10).unwrap();
        let c = node.core().lock().unwrap();
        let (height, _) = c.find_tx(&id).unwrap();
        assert!(height <= c.confirmed_height());
        assert_eq!(c.tip_height() + 1, c.confirmed_height() + c.consensus().confirmation_depth);
    }
}
