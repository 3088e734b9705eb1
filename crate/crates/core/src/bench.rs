//! Consensus comparison: one simulation per engine over the same workload.

use std::fmt::Write as _;

use crate::consensus::ConsensusKind;
use crate::network::sim::{run_simulation, Scenario, SimConfig};

pub const MIN_TXS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kind: ConsensusKind,
    pub tps: f64,
    pub mean_latency_ms: f64,
    pub forks: usize,
    pub submitted: usize,
    pub committed: usize,
    pub outcome: &'static str,
    pub duration_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub tx_count: usize,
    pub node_count: usize,
    pub seed: u64,
    /// PoW, PoS, DPoS in that order.
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    fn row(&self, kind: ConsensusKind) -> &BenchRow {
        self.rows.iter().find(|r| r.kind == kind).expect("every kind is benchmarked")
    }

    /// TPS(DPoS) > TPS(PoS) > TPS(PoW).
    pub fn tps_ordered(&self) -> bool {
        use ConsensusKind::*;
        self.row(DPoS).tps > self.row(PoS).tps && self.row(PoS).tps > self.row(PoW).tps
    }

    /// latency(PoW) > latency(PoS) > latency(DPoS).
    pub fn latency_ordered(&self) -> bool {
        use ConsensusKind::*;
        let l = |k| self.row(k).mean_latency_ms;
        l(PoW) > l(PoS) && l(PoS) > l(DPoS)
    }

    pub fn all_committed(&self) -> bool {
        self.rows.iter().all(|r| r.committed == r.submitted)
    }

    pub fn passed(&self) -> bool {
        self.tps_ordered() && self.latency_ordered() && self.all_committed()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let header = ["kind", "tps", "mean_latency_ms", "forks", "submitted", "committed", "outcome", "sim_duration_ms"];
        w.write_record(header).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.kind.to_string(),
                format!("{:.3}", r.tps),
                format!("{:.3}", r.mean_latency_ms),
                r.forks.to_string(),
                r.submitted.to_string(),
                r.committed.to_string(),
                r.outcome.to_string(),
                r.duration_ms.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn ordering_lines(&self) -> String {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        format!(
            "ordering TPS(DPoS) > TPS(PoS) > TPS(PoW): {}\nordering latency(PoW) > latency(PoS) > latency(DPoS): {}\n",
            verdict(self.tps_ordered()),
            verdict(self.latency_ordered())
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("txs={} nodes={} seed={}\n", self.tx_count, self.node_count, self.seed);
        let _ = writeln!(s, "{:<6}{:>12}{:>18}{:>7}{:>12}  outcome", "kind", "tps", "latency_ms", "forks", "committed");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}{:>12.3}{:>18.3}{:>7}{:>12}  {}",
                r.kind.to_string(),
                r.tps,
                r.mean_latency_ms,
                r.forks,
                format!("{}/{}", r.committed, r.submitted),
                r.outcome
            );
        }
        s.push_str(&self.ordering_lines());
        s
    }
}

/// Runs the simulator once per consensus kind with an identical workload.
pub fn run_bench(tx_count: usize, node_count: usize, seed: u64) -> BenchReport {
    let base = Scenario::generate(ConsensusKind::PoW, node_count, tx_count, seed);
    let config = SimConfig::new(node_count, seed);
    let rows = ConsensusKind::ALL
        .into_iter()
        .map(|kind| {
            let trace = run_simulation(&config, &base.with_kind(kind));
            BenchRow {
                kind,
                tps: trace.tps,
                mean_latency_ms: trace.mean_latency_ms,
                forks: trace.forks,
                submitted: trace.submitted,
                committed: trace.committed,
                outcome: trace.outcome.as_str(),
                duration_ms: trace.duration_ms,
            }
        })
        .collect();
    BenchReport { tx_count, node_count, seed, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_is_deterministic_and_parseable() {
        let a = run_bench(100, 3, 7);
        let b = run_bench(100, 3, 7);
        assert_eq!(a.to_csv(), b.to_csv());
        let text = a.to_csv();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0][0], "PoW");
        assert!(a.to_table().contains("ordering TPS"));
    }
}
