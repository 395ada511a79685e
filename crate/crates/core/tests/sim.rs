use tracknet::node::{Activity, TaskConfig};
use tracknet::sim::{self, RunOptions, Scenario};
use tracknet::tdf::{types, HEADER_LEN};

/// A node that never leaves its gateway sees its records ingested within one
/// page fill, plus the beacon cadence, plus the time to ship the page.
#[test]
fn latency_bounded_by_page_fill_and_beacon_cadence() {
    let mut sc = Scenario::bundled("single_node_single_gateway").unwrap();
    sc.duration_days = 1;
    sc.mobility.stationary = true;
    let period = 1u64;
    sc.nodes[0].tasks = Some(vec![TaskConfig {
        task_id: 1,
        type_id: types::GPS,
        sample_period_s: period as u32,
        entry: vec![],
        exit: vec![],
        priority: 0,
        activity: Activity::GpsHigh,
    }]);
    let out = sim::run(&sc, &RunOptions::default()).unwrap();

    let record_len = HEADER_LEN + 8;
    let per_page = (sc.nodes[0].page_size / record_len) as u64;
    let beacon = sc.nodes[0].beacon_period_s;
    // Samples within a step are logged when the step ends, so one more
    // beacon period of slack; a single page takes 1/rate seconds, rounded up.
    let transfer = (1.0 / sc.link.page_rate).ceil() as u64;
    let bound = (per_page * period + 2 * beacon + transfer) as i64;

    let m = &out.metrics;
    assert!(m.latency.records > 80_000, "{:?}", m.latency);
    assert_eq!(m.latency.causality_violations, 0);
    assert!(m.latency.max_s <= bound, "max latency {} > bound {bound}", m.latency.max_s);
    assert_eq!(m.duplicate_transfers, 0);
    assert_eq!(m.audit.unaccounted, 0);
}

#[test]
fn invalid_scenarios_are_rejected_before_running() {
    let mut sc = Scenario::bundled("single_node_single_gateway").unwrap();
    sc.link.chunk_loss = -0.5;
    sc.gateways[0].camp = 9;
    sc.camps = vec![1];
    let err = sim::run(&sc, &RunOptions::default()).err().expect("must fail");
    let fields: Vec<_> = err.errors.iter().map(|e| e.field.clone()).collect();
    assert_eq!(fields, vec!["link.chunk_loss", "gateways[0].camp"]);
}

#[test]
fn journal_replay_rebuilds_the_ledger() {
    let sc = Scenario::bundled("multi_gateway").unwrap();
    let mut short = sc.clone();
    short.duration_days = 6;
    let out = sim::run(&short, &RunOptions::default()).unwrap();
    let text = out.cloud.journal().as_str().to_string();
    let back = tracknet::cloud::CloudService::recover(out.cloud.registry.clone(), &text).unwrap();
    for node in &out.nodes {
        assert_eq!(back.ledger().node(node.node_id), out.cloud.ledger().node(node.node_id));
        assert_eq!(back.desired_config(node.node_id), out.cloud.desired_config(node.node_id));
    }
}

#[test]
fn two_camp_switching_keeps_contact_near_daily() {
    let mut sc = Scenario::bundled("multi_gateway").unwrap();
    sc.duration_days = 20;
    sc.mobility.p_return = 1.0;
    sc.mobility.camp_switch_prob = 0.3;
    let out = sim::run(&sc, &RunOptions::default()).unwrap();
    let days = sim::intercontact_days(&out.metrics);
    assert!(days.values().flatten().all(|d| *d == 1));
    let camps: std::collections::BTreeSet<_> = out.metrics.trace.iter().filter_map(|r| r.camp).collect();
    assert_eq!(camps.len(), 2);
}
