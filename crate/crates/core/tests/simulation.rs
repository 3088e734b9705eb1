use medledger::consensus::ConsensusKind;
use medledger::network::sim::{run_simulation, Outcome, Partition, Scenario, SimConfig};

#[test]
fn lossy_links_still_converge() {
    for kind in ConsensusKind::ALL {
        let mut cfg = SimConfig::new(5, 31);
        cfg.drop_rate = 0.1;
        let t = run_simulation(&cfg, &Scenario::generate(kind, 5, 60, 31));
        assert_eq!(t.outcome, Outcome::Converged, "{kind}: {}", t.summary());
        assert_eq!(t.committed, t.submitted);
        assert!(t.dropped > 0);
    }
}

#[test]
fn healed_partition_converges_to_one_tip() {
    for kind in ConsensusKind::ALL {
        let mut cfg = SimConfig::new(5, 32);
        cfg.partitions.push(Partition { start_ms: 0, end_ms: 5_000, side: [0, 1].into_iter().collect() });
        let t = run_simulation(&cfg, &Scenario::generate(kind, 5, 60, 32));
        assert_eq!(t.outcome, Outcome::Converged, "{kind}: {}", t.summary());
        assert!(t.tips.iter().all(|tip| *tip == t.tips[0]), "{kind}: {:?}", t.tips);
        assert_eq!(t.invalid_blocks, 0);
    }
}

#[test]
fn trace_csv_has_one_line_per_event() {
    let t = run_simulation(&SimConfig::new(3, 33), &Scenario::generate(ConsensusKind::DPoS, 3, 20, 33));
    let csv = t.to_csv();
    assert_eq!(csv.lines().count(), t.events.len() + 2);
    assert!(csv.lines().last().unwrap().contains("summary"));
    assert!(t.summary().contains("DPoS"));
}

#[test]
fn different_seeds_give_different_traces() {
    let a = run_simulation(&SimConfig::new(4, 1), &Scenario::generate(ConsensusKind::PoS, 4, 30, 1));
    let b = run_simulation(&SimConfig::new(4, 2), &Scenario::generate(ConsensusKind::PoS, 4, 30, 2));
    assert_ne!(a.to_csv(), b.to_csv());
}

#[test]
fn partition_sweep_heals() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(34);
    for case in 0..24 {
        let kind = ConsensusKind::ALL[case % 3];
        let seed: u64 = rng.gen();
        let nodes = rng.gen_range(3..=6);
        let mut cfg = SimConfig::new(nodes, seed);
        let start = rng.gen_range(0..3_000);
        let side = (0..nodes).filter(|_| rng.gen_bool(0.5)).collect();
        cfg.partitions.push(Partition { start_ms: start, end_ms: start + rng.gen_range(1_000..10_000), side });
        let t = run_simulation(&cfg, &Scenario::generate(kind, nodes, 80, seed));
        assert_eq!(t.outcome, Outcome::Converged, "case {case} {kind} {:?}: {}", cfg.partitions, t.summary());
        assert_eq!(t.committed, t.submitted);
    }
}
