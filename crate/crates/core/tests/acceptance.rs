//! Acceptance suite: one check per criterion, each printing a PASS/FAIL line.
//! Runs without the libtest harness so the lines show up in plain
//! `cargo test` output. Pass `c3 c7` etc. to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tracknet::cloud::{DownloadLedger, PageRange};
use tracknet::node::{TaskConfig, SECONDS_PER_DAY};
use tracknet::sim::scenario::{standard, DaySpan, ConfigEdit};
use tracknet::sim::{self, RunOptions, Scenario, SimOutput};
use tracknet::tdf::{self, FieldSpec, MetadataRegistry, ScalarKind, TdfRecord, TdfTypeDescriptor};

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {id} {}: {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

/// Runs every criterion even if an earlier one fails; exits non-zero on any
/// failure. A panic before `report` is printed as a FAIL line too.
fn main() {
    let criteria: [(u32, fn()); 9] = [
        (1, c1_exactly_once_storage),
        (2, c2_hysteresis_under_drought),
        (3, c3_throughput),
        (4, c4_intercontact_cdf),
        (5, c5_config_propagation),
        (6, c6_offline_gateway_durability),
        (7, c7_backlog_energy_dip),
        (8, c8_codec_and_ledger_oracles),
        (9, c9_determinism),
    ];
    // libtest flags such as --nocapture may be passed through; only `cN` selects.
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.len() == 2 && a.starts_with('c'))
        .collect();
    let mut failed = 0;
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|a| a == &format!("c{id}")) {
            continue;
        }
        if let Err(e) = std::panic::catch_unwind(f) {
            failed += 1;
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            if !msg.starts_with(&format!("criterion {id} failed")) {
                println!("criterion {id} FAIL: panicked: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn run(s: &Scenario) -> SimOutput {
    sim::run(s, &RunOptions::default()).expect("valid scenario")
}

fn stored_pages(out: &SimOutput) -> BTreeMap<(u32, u32), Vec<u8>> {
    out.cloud
        .store()
        .pages()
        .map(|(k, p)| (k, p.data.clone()))
        .collect()
}

fn c1_exactly_once_storage() {
    let base = Scenario::bundled("multi_gateway").unwrap();
    let results: Vec<(u64, Duration, Result<String, String>)> = (0..20u64)
        .map(|seed| {
            let mut sc = base.clone();
            sc.seed = seed;
            let start = Instant::now();
            let out = run(&sc);
            (seed, start.elapsed(), check_exactly_once(&out))
        })
        .collect();
    let mut ok = true;
    let mut worst = Duration::ZERO;
    let mut dup_transfers = 0;
    let mut stored = 0;
    for (seed, took, res) in &results {
        worst = worst.max(*took);
        match res {
            Ok(line) => {
                let parts: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
                stored += parts[0];
                dup_transfers += parts[1];
            }
            Err(e) => {
                ok = false;
                println!("  seed {seed}: {e}");
            }
        }
    }
    ok &= worst < Duration::from_secs(60);
    report(
        1,
        "exactly-once storage",
        ok,
        format!(
            "20 seeds, {stored} pages stored once each, {dup_transfers} duplicate transfers absorbed, slowest seed {:.1}s",
            worst.as_secs_f64()
        ),
    );
}

/// Returns "stored,duplicate_transfers" or a description of the violation.
fn check_exactly_once(out: &SimOutput) -> Result<String, String> {
    let m = &out.metrics;
    let store = out.cloud.store();
    if m.audit.unaccounted != 0 {
        return Err(format!("{} pages unaccounted", m.audit.unaccounted));
    }
    if m.audit.buffered != 0 {
        return Err(format!("{} pages left in gateway buffers after drain", m.audit.buffered));
    }
    if m.mismatches != 0 || m.duplicate_storage != 0 {
        return Err(format!("mismatches {} duplicate records {}", m.mismatches, m.duplicate_storage));
    }
    // The ledger learns of downloads through page reports, the store through
    // page payloads; both must describe the same set.
    for node in &out.nodes {
        let id = node.node_id;
        let ledger = out.cloud.ledger().node(id).cloned().unwrap_or_default();
        let stored: BTreeSet<u32> = store.pages().filter(|((n, _), _)| *n == id).map(|((_, p), _)| p).collect();
        let downloaded: BTreeSet<u32> = ledger.downloaded.ranges().flat_map(|r| r.iter()).collect();
        if stored != downloaded {
            return Err(format!("node {id}: stored set differs from downloaded set"));
        }
        if ledger.downloaded.intersects(&ledger.expired) {
            return Err(format!("node {id}: page both downloaded and expired"));
        }
        // Stored bytes equal the node's page where it still holds it.
        for page in node.log.retained() {
            if let Some(p) = store.page(id, page.page_no) {
                if p.data != page.data {
                    return Err(format!("node {id} page {}: stored copy differs", page.page_no));
                }
            }
        }
        // Every finalized page that is neither expired nor still on the node
        // was stored.
        for p in 0..node.log.head_page_no() {
            if !stored.contains(&p) && !ledger.expired.contains(p) {
                return Err(format!("node {id} page {p} evicted without storage or loss report"));
            }
        }
    }
    let downloads = m.pages_downloaded;
    if downloads < m.pages_stored {
        return Err("more pages stored than downloaded".into());
    }
    Ok(format!("{},{}", m.pages_stored, m.duplicate_transfers))
}

fn c2_hysteresis_under_drought() {
    let sc = Scenario::bundled("drought").unwrap();
    let out = run(&sc);
    let h = out.metrics.hysteresis.clone().unwrap();
    let drought = sc.harvest.droughts[0];

    // Independent reading of the voltage trace: the first sub-3700 reading
    // and the next reading at or above 3900.
    let trace: Vec<_> = out.metrics.trace.iter().filter(|r| r.node_id == 1).collect();
    let low_at = trace.iter().find(|r| r.battery_mv < 3700).map(|r| r.time);
    let recover_at = low_at.and_then(|lo| trace.iter().find(|r| r.time > lo && r.battery_mv >= 3900).map(|r| r.time));
    let high_starts_between = match (low_at, recover_at) {
        (Some(lo), Some(hi)) => out
            .metrics
            .task_starts
            .iter()
            .filter(|s| s.task_id == standard::GPS_HIGH && s.time > lo && s.time < hi)
            .count(),
        _ => usize::MAX,
    };

    let starts_per_day = |from: u64, to: u64| {
        let n = out
            .metrics
            .task_starts
            .iter()
            .filter(|s| s.task_id == standard::GPS_HIGH && (from..to).contains(&(s.time / SECONDS_PER_DAY)))
            .count();
        n as f64 / (to - from) as f64
    };
    let (d0, d1) = (drought.from_day as u64, (drought.from_day + drought.days) as u64);
    let before = starts_per_day(1, d0);
    let during = starts_per_day(d0, d1);
    let after = starts_per_day(d1, sc.duration_days as u64);
    let low_in_drought = low_at.is_some_and(|t| (d0..d1).contains(&(t / SECONDS_PER_DAY)));

    let ok = h.violations == 0
        && low_in_drought
        && recover_at.is_some()
        && high_starts_between == 0
        && during < before
        && after > during;
    report(
        2,
        "hysteresis",
        ok,
        format!(
            "violations {}, {} high-rate samples, first <3700 mV at day {:.1}, back >=3900 mV at day {:.1}, high-rate starts per day before/during/after drought = {before:.2}/{during:.2}/{after:.2}",
            h.violations,
            h.samples,
            low_at.unwrap_or(0) as f64 / SECONDS_PER_DAY as f64,
            recover_at.unwrap_or(0) as f64 / SECONDS_PER_DAY as f64,
        ),
    );
}

fn c3_throughput() {
    let mut sc = Scenario::bundled("single_node_single_gateway").unwrap();
    sc.duration_days = 14;
    let out = run(&sc);
    let contacts: Vec<_> = out
        .metrics
        .sessions
        .iter()
        .filter(|s| s.pages > 0 && s.elapsed_s > 0.0)
        .collect();
    let rates: Vec<f64> = contacts.iter().map(|s| s.pages as f64 / s.elapsed_s).collect();
    let total = contacts.iter().map(|s| s.pages).sum::<u64>() as f64 / contacts.iter().map(|s| s.elapsed_s).sum::<f64>();
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(0.0, f64::max);
    let ok = contacts.len() >= 100 && (total - 5.0).abs() <= 0.5 && lo >= 4.5 && hi <= 5.5;
    report(
        3,
        "throughput",
        ok,
        format!("{} contacts, aggregate {total:.3} pages/s, per-contact range [{lo:.3}, {hi:.3}]", contacts.len()),
    );
}

fn c4_intercontact_cdf() {
    let sc = Scenario::bundled("intercontact").unwrap();
    let out = run(&sc);
    let all: Vec<u64> = sim::intercontact_days(&out.metrics).into_values().flatten().collect();
    let daily = all.iter().filter(|d| **d <= 1).count() as f64 / all.len() as f64;
    let max = all.iter().copied().max().unwrap_or(0);
    let node_months = out.nodes.len() as f64 * sc.duration_days as f64 / 30.0;
    let ok = node_months >= 50.0 && (daily - 0.70).abs() <= 0.05 && max > 28;
    report(
        4,
        "inter-contact CDF",
        ok,
        format!(
            "{node_months:.0} node-months, {} intervals, P(<=1 day) = {daily:.3}, longest {max} days",
            all.len()
        ),
    );
}

fn c5_config_propagation() {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [0u32, 3, 20] {
        let mut sc = Scenario::bundled("single_node_single_gateway").unwrap();
        sc.duration_days = 26;
        sc.mobility.p_return = 1.0;
        let edit_day = 2;
        if n > 0 {
            sc.nodes[0].absences = vec![DaySpan {
                from_day: edit_day,
                days: n,
            }];
        }
        let tasks: Vec<TaskConfig> = standard::tasks(5, 600);
        let edit_at = edit_day as u64 * SECONDS_PER_DAY;
        sc.config_edits = vec![ConfigEdit {
            at_s: edit_at,
            nodes: vec![1],
            tasks: Some(tasks.clone()),
            params: [("beacon_period_s".to_string(), 20)].into(),
        }];
        let out = run(&sc);
        let p = out.metrics.propagation[0];
        let desired = out.cloud.desired_config(1).unwrap();
        let node = &out.nodes[0];
        let mut node_tasks: Vec<TaskConfig> = node.tasks().cloned().collect();
        node_tasks.sort_by_key(|t| t.task_id);
        let first = p.first_contact_after.unwrap_or(u64::MAX);
        // The session opened by the first post-edit contact applies it.
        let first_session = out.metrics.sessions.iter().find(|s| s.time >= first);
        let applied_in_first = first_session.is_some_and(|s| s.time == first && s.config_applied == Some(p.version));
        let expected_contact = (edit_day + n) as u64 * SECONDS_PER_DAY + sc.mobility.forage_end_s as u64;
        let this_ok = applied_in_first
            && first < expected_contact + 60
            && first >= expected_contact
            && node.config_version() == desired.version
            && node_tasks == desired.tasks
            && node.beacon_period_s() == 20;
        ok &= this_ok;
        lines.push(format!(
            "N={n}: contact +{:.2} d after edit, applied {} s later",
            (first.saturating_sub(edit_at)) as f64 / SECONDS_PER_DAY as f64,
            p.applied_at.map_or(-1, |a| (a - first) as i64)
        ));
    }
    report(5, "delay-tolerant config propagation", ok, lines.join("; "));
}

fn c6_offline_gateway_durability() {
    let mut sc = Scenario::bundled("single_node_single_gateway").unwrap();
    sc.duration_days = 15;
    sc.nodes[0].count = 3;
    sc.link.chunk_loss = 0.02;
    let online = run(&sc);
    let mut part = sc.clone();
    part.gateways[0].offline = vec![DaySpan { from_day: 5, days: 5 }];
    let offline = run(&part);
    let a = stored_pages(&online);
    let b = stored_pages(&offline);
    let differing_ts = online
        .cloud
        .store()
        .pages()
        .filter(|(k, p)| offline.cloud.store().page(k.0, k.1).is_some_and(|q| q.ingested_at != p.ingested_at))
        .count();
    let ok = !a.is_empty() && a == b && differing_ts > 0;
    report(
        6,
        "offline gateway durability",
        ok,
        format!(
            "{} pages with partition, {} without, identical: {}, {differing_ts} pages ingested later",
            b.len(),
            a.len(),
            a == b
        ),
    );
}

fn c7_backlog_energy_dip() {
    let sc = Scenario::bundled("long_absence").unwrap();
    let mut control = sc.clone();
    control.nodes[0].absences.clear();
    let absent = run(&sc);
    let ctrl = run(&control);
    let return_day = (sc.nodes[0].absences[0].from_day + sc.nodes[0].absences[0].days) as u64;
    let capacity = sc.nodes[0].battery.capacity_mj;

    let day_sessions: Vec<_> = absent
        .metrics
        .sessions
        .iter()
        .filter(|s| s.time / SECONDS_PER_DAY == return_day && s.pages > 0)
        .collect();
    let bulk_from = day_sessions.first().map_or(0, |s| s.time);
    let bulk_to = day_sessions.last().map_or(0, |s| s.time + s.elapsed_s.ceil() as u64);
    let pages: u64 = day_sessions.iter().map(|s| s.pages).sum();

    let ctrl_at: BTreeMap<u64, f64> = ctrl
        .metrics
        .trace
        .iter()
        .filter(|r| r.time / SECONDS_PER_DAY == return_day)
        .map(|r| (r.time, r.charge_mj))
        .collect();
    let dip = absent
        .metrics
        .trace
        .iter()
        .filter(|r| r.time >= bulk_from && r.time <= bulk_to)
        .filter_map(|r| ctrl_at.get(&r.time).map(|c| (r.time, (c - r.charge_mj) / capacity)))
        .fold((0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best });
    let ok = pages > 0 && dip.1 >= 0.10;
    report(
        7,
        "backlog energy dip",
        ok,
        format!(
            "day {return_day}: {pages} pages downloaded over {:.1} h, charge {:.1}% of capacity below control at {:.2} h",
            (bulk_to - bulk_from) as f64 / 3600.0,
            dip.1 * 100.0,
            (dip.0 % SECONDS_PER_DAY) as f64 / 3600.0,
        ),
    );
}

fn random_descriptor(rng: &mut ChaCha8Rng, type_id: u16) -> TdfTypeDescriptor {
    const KINDS: [ScalarKind; 5] = [ScalarKind::U8, ScalarKind::U16, ScalarKind::U32, ScalarKind::I16, ScalarKind::I32];
    let n = rng.random_range(0..6);
    let fields = (0..n)
        .map(|i| FieldSpec::new(&format!("f{i}"), KINDS[rng.random_range(0..5)], ""))
        .collect();
    TdfTypeDescriptor::new(type_id, &format!("t{type_id}"), fields)
}

fn random_value(rng: &mut ChaCha8Rng, kind: ScalarKind) -> i64 {
    match kind {
        ScalarKind::U8 => rng.random_range(0..=u8::MAX as i64),
        ScalarKind::U16 => rng.random_range(0..=u16::MAX as i64),
        ScalarKind::U32 => rng.random_range(0..=u32::MAX as i64),
        ScalarKind::I16 => rng.random_range(i16::MIN as i64..=i16::MAX as i64),
        ScalarKind::I32 => rng.random_range(i32::MIN as i64..=i32::MAX as i64),
    }
}

/// Explicit missing set below the known maximum, as ranges.
fn ledger_oracle(done: &BTreeSet<u32>, max: Option<u32>) -> (Option<u32>, Vec<PageRange>) {
    let Some(max) = max else { return (None, vec![]) };
    let missing: Vec<u32> = (0..=max).filter(|p| !done.contains(p)).collect();
    let mut ranges: Vec<PageRange> = Vec::new();
    for p in &missing {
        match ranges.last_mut() {
            Some(r) if r.last + 1 == *p => r.last = *p,
            _ => ranges.push(PageRange::new(*p, *p)),
        }
    }
    (missing.first().copied(), ranges)
}

fn c8_codec_and_ledger_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut codec_ok = 0;
    for _ in 0..10_000 {
        let type_id = rng.random_range(0..0xFFFF);
        let desc = random_descriptor(&mut rng, type_id);
        let mut reg = MetadataRegistry::new();
        reg.register(desc.clone()).unwrap();
        let values: Vec<i64> = desc.fields.iter().map(|f| random_value(&mut rng, f.kind)).collect();
        let rec = TdfRecord {
            type_id,
            timestamp: rng.random(),
            payload: desc.encode_fields(&values),
        };
        let bytes = tdf::encode_record(&rec);
        let back = tdf::decode_stream(&bytes, &reg).unwrap();
        let decoded: Vec<i64> = desc.decode_fields(&back[0].payload).into_iter().map(|(_, v)| v).collect();
        if back == vec![rec] && decoded == values {
            codec_ok += 1;
        }
    }

    let mut ledger_ok = 0;
    for _ in 0..10_000 {
        let mut ledger = DownloadLedger::new();
        let mut done = BTreeSet::new();
        let mut max = None;
        let span = rng.random_range(1..200u32);
        for _ in 0..rng.random_range(0..60) {
            let p = rng.random_range(0..span);
            match rng.random_range(0..3) {
                0 => {
                    ledger.observe_max(1, Some(p));
                    max = max.max(Some(p));
                }
                1 => {
                    if ledger.mark_downloaded(1, p).is_ok() {
                        done.insert(p);
                    }
                }
                _ => {
                    if ledger.mark_expired(1, p).is_ok() {
                        done.insert(p);
                    }
                }
            }
        }
        let got = ledger.peek_next_needed(1);
        if (got.lowest, got.pending) == ledger_oracle(&done, max) {
            ledger_ok += 1;
        }
    }
    report(
        8,
        "codec and ledger oracles",
        codec_ok == 10_000 && ledger_ok == 10_000,
        format!("{codec_ok}/10000 TDF round trips, {ledger_ok}/10000 ledgers match the brute-force oracle"),
    );
}

fn c9_determinism() {
    let mut names = Vec::new();
    let mut ok = true;
    for name in ["multi_gateway", "single_node_single_gateway"] {
        let sc = Scenario::bundled(name).unwrap();
        let opts = RunOptions { event_log: true };
        let a = sim::run(&sc, &opts).unwrap();
        let b = sim::run(&sc, &opts).unwrap();
        let same = a.event_log == b.event_log
            && serde_json::to_string(&a.metrics).unwrap() == serde_json::to_string(&b.metrics).unwrap()
            && a.cloud.journal().as_str() == b.cloud.journal().as_str();
        ok &= same && !a.event_log.is_empty();
        names.push(format!("{name} ({} log lines)", a.event_log.len()));
    }
    report(9, "determinism", ok, format!("identical logs, metrics and journals for {}", names.join(", ")));
}
