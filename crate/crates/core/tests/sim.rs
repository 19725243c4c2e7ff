use ostraka_core::analysis::{capacity, Bandwidth, PerfParams};
use ostraka_core::sim::{
    measure_capacity, measure_intra_bw, run_simulation, single_hop, slowdown_under_attack, summary_csv, BlockTxs,
    EngineParams, LatencyModel, SimConfig,
};

fn base() -> EngineParams {
    EngineParams {
        shard_count: 1,
        shard_tps: 1700.0,
        tx_size: 250.0,
        tx_out_size: 112.0,
        inputs_per_tx: 2,
        total_bw: Bandwidth::mbit(40.0),
        intra_bw: Bandwidth::INFINITE,
        latency: LatencyModel::Fixed { seconds: 0.0 },
        header_bytes: 0.0,
        seed: 11,
    }
}

#[test]
fn single_shard_hop_matches_cost_components() {
    let p = base();
    let n = 5_000;
    let hop = single_hop(&p, n, None);
    let btt = n as f64 * 250.0 / Bandwidth::mbit(40.0).as_bytes_per_sec();
    let bpt = n as f64 / 1700.0;
    assert!((hop.btt - btt).abs() < 1e-9, "{} vs {btt}", hop.btt);
    assert!((hop.bpt - bpt).abs() < 1e-9, "{} vs {bpt}", hop.bpt);
    let perf = PerfParams {
        shard_count: 1,
        total_bw: p.total_bw,
        ..PerfParams::default()
    };
    assert!((n as f64 / hop.t_hop() - capacity(&perf)).abs() < 1e-6);
}

#[test]
fn latency_adds_to_transmission_time() {
    let p = EngineParams {
        latency: LatencyModel::Fixed { seconds: 0.25 },
        ..base()
    };
    let hop = single_hop(&p, 1_000, None);
    let expected = 1_000.0 * 250.0 / p.total_bw.as_bytes_per_sec() + 0.25;
    assert!((hop.btt - expected).abs() < 1e-9);
}

#[test]
fn capacity_tracks_model() {
    for bw in [Bandwidth::mbit(40.0), Bandwidth::INFINITE] {
        for l in [1, 4, 32] {
            let c = measure_capacity(&base(), l, bw);
            assert!(c.relative_error() < 0.10, "{c:?}");
        }
    }
}

#[test]
fn single_shard_ignores_intra_bandwidth() {
    let a = measure_intra_bw(&base(), 1, Bandwidth::kbit(256.0), 2_000);
    let b = measure_intra_bw(&base(), 1, Bandwidth::INFINITE, 2_000);
    assert_eq!(a.bpt, b.bpt);
}

#[test]
fn restricted_intra_bandwidth_dip() {
    let one = measure_intra_bw(&base(), 1, Bandwidth::kbit(256.0), 20_000);
    let two = measure_intra_bw(&base(), 2, Bandwidth::kbit(256.0), 20_000);
    assert!(two.throughput < one.throughput);
    assert!(two.relative_error() < 0.15, "{two:?}");
}

#[test]
fn grinding_slows_only_the_target() {
    let r = slowdown_under_attack(&base(), 4, 20_000);
    assert!(r.target_ratio >= 0.9 * 4.0, "{r:?}");
    assert!(r.independent_ratio <= 1.1, "{r:?}");
}

fn ng_config(shards: u32) -> SimConfig {
    SimConfig::from_toml(&format!(
        r#"
seed = 3
node_count = 30
shards_per_node = {shards}
total_bw = "inf"
duration = 1800.0
"#
    ))
    .unwrap()
}

#[test]
fn simulation_is_deterministic() {
    let cfg = ng_config(2);
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(summary_csv(std::slice::from_ref(&a)), summary_csv(&[b]));
    assert!(a.microblocks > 0 && a.keyblocks > 0);
}

#[test]
fn more_shards_raise_throughput() {
    let one = run_simulation(&ng_config(1)).unwrap();
    let four = run_simulation(&ng_config(4)).unwrap();
    assert!(four.throughput_tps > 2.0 * one.throughput_tps, "{} vs {}", four.throughput_tps, one.throughput_tps);
}

#[test]
fn config_rejects_bad_values() {
    assert!(SimConfig::from_toml("node_count = 1\nshards_per_node = 1\ntotal_bw = \"inf\"\nduration = 1.0").is_err());
    assert!(SimConfig::from_toml("node_count = 4\nshards_per_node = 0\ntotal_bw = \"inf\"\nduration = 1.0").is_err());
    let cfg = SimConfig::from_toml(
        "node_count = 4\nshards_per_node = 2\ntotal_bw = \"40M\"\nduration = 1.0\n[workload]\nmicroblock_txs = 7",
    )
    .unwrap();
    assert_eq!(cfg.workload.microblock_txs, BlockTxs::Count(7));
    assert_eq!(cfg.microblock_txs(), 7);
}

#[test]
fn sweep_expands_every_point() {
    let cfg = SimConfig::from_toml(
        "node_count = 4\nshards_per_node = 1\ntotal_bw = \"40M\"\nduration = 1.0\n[sweep]\nshards_per_node = [1, 2, 4]\ntotal_bw = [\"40M\", \"inf\"]",
    )
    .unwrap();
    let points = cfg.expand();
    assert_eq!(points.len(), 6);
    assert!(points.iter().all(|p| p.sweep.is_none()));
}
