use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use medledger::bench::{run_bench, MIN_TXS};
use medledger::config::{resolve_config_path, NodeConfig, CONFIG_ENV};
use medledger::exporter::{export, Dataset, DatasetKind, ExportFormat};
use medledger::network::tcp::now_ms;
use medledger::node::{self, Node};

#[derive(Parser)]
#[command(name = "medledger", version, about = "Permissioned EHR blockchain node and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Node operations.
    Node {
        #[command(subcommand)]
        action: NodeAction,
    },
    /// Populate a fresh chain with demo accounts, inventory and appointments.
    SeedDemo {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare PoW, PoS and DPoS on one simulated workload.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        txs: usize,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        csv: bool,
    },
    /// Export a dataset from the persisted chain.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: DatasetKind,
        #[arg(long)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NodeAction {
    /// Run a node, its peer transport and (if configured) the gateway.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(flag: Option<PathBuf>) -> Result<NodeConfig, String> {
    let path = resolve_config_path(flag).ok_or_else(|| format!("no config given: pass --config or set {CONFIG_ENV}"))?;
    NodeConfig::load(&path).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Node { action: NodeAction::Run { config } } => {
            let config = load_config(config)?;
            config.effective_consensus(medledger::crypto::Address([0; 20])).map_err(|e| e.to_string())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(node::run(config)).map_err(|e| e.to_string())
        }
        Command::SeedDemo { config } => {
            let config = load_config(config)?;
            let mut node = Node::open(&config, now_ms()).map_err(|e| e.to_string())?;
            let summary = medledger::demo::seed_demo(&mut node, now_ms()).map_err(|e| e.to_string())?;
            if summary.already_seeded {
                println!("already seeded (height {}); nothing to do", summary.height);
            }
            for a in &summary.accounts {
                println!("account {:<16} {:<8} {}", a.label, a.role.to_string(), a.address);
            }
            for (what, id) in &summary.transactions {
                println!("tx {id} {what}");
            }
            if !summary.already_seeded {
                println!("seeded {} transactions; height {}", summary.transactions.len(), summary.height);
            }
            Ok(())
        }
        Command::Bench { config, txs, nodes, seed, csv } => {
            if let Some(path) = resolve_config_path(config) {
                NodeConfig::load(&path).map_err(|e| e.to_string())?;
            }
            if txs < MIN_TXS {
                return Err(format!("--txs must be at least {MIN_TXS}"));
            }
            if nodes == 0 {
                return Err("--nodes must be at least 1".into());
            }
            let report = run_bench(txs, nodes, seed);
            if csv {
                print!("{}", report.to_csv());
                eprint!("{}", report.ordering_lines());
            } else {
                print!("{}", report.to_table());
            }
            if report.passed() {
                Ok(())
            } else {
                Err("consensus ordering check failed".into())
            }
        }
        Command::Export { config, dataset, format, out } => {
            let config = load_config(config)?;
            if !config.chain_path().exists() {
                return Err(format!("no chain at {}; run a node or seed-demo first", config.chain_path().display()));
            }
            let node = Node::open(&config, now_ms()).map_err(|e| e.to_string())?;
            let state = node.core().lock().expect("node lock").tip_state().clone();
            let bytes = export(&Dataset::from_state(dataset, &state), format);
            std::fs::write(&out, &bytes).map_err(|e| format!("cannot write {}: {e}", out.display()))?;
            eprintln!("wrote {} bytes to {}", bytes.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
