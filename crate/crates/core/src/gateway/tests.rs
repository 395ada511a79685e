use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::node::{Activity, BatteryModel, Condition, HarvestProfile, LoadTable, TaskConfig};
use crate::pagelog::PageLog;
use crate::tdf::{self, types, TdfRecord};

const AIRTIME: f64 = 0.05;

fn node_with_pages(node_id: NodeId, pages: u32, capacity: u32) -> NodeState {
    let mut battery = BatteryModel::new(1.0e6, 0.8);
    battery.harvest = HarvestProfile::none();
    battery.loads = LoadTable::zero();
    let mut n = NodeState::new(node_id, battery, PageLog::new(256, capacity), types::standard_registry());
    let mut t = 0u32;
    while n.log.max_page().map_or(0, |m| m + 1) < pages {
        let rec = TdfRecord {
            type_id: types::BATTERY,
            timestamp: t,
            payload: (3800u16 + (t % 50) as u16).to_le_bytes().to_vec(),
        };
        n.log.append(&tdf::encode_record(&rec)).unwrap();
        t += 1;
    }
    n
}

fn gateway(id: u32) -> GatewayState {
    GatewayState::new(GatewayConfig {
        gateway_id: id,
        max_session_s: 3600,
        ..Default::default()
    })
}

fn cloud() -> CloudService {
    CloudService::new(types::standard_registry())
}

fn gps_task(id: u16, period: u32) -> TaskConfig {
    TaskConfig {
        task_id: id,
        type_id: types::GPS,
        sample_period_s: period,
        entry: vec![Condition::Motion { moving: true }],
        exit: vec![Condition::Motion { moving: false }],
        priority: 1,
        activity: Activity::GpsLow,
    }
}

/// Emits a beacon, plans, and executes over a loss-free link.
fn contact(gw: &mut GatewayState, node: &mut NodeState, c: Option<&mut CloudService>, window: Option<f64>) -> Option<DownloadResult> {
    let b = node.emit_beacon();
    let plan = gw.on_beacon(&b, c, node.clock)?;
    let mut ch = PerfectChannel::new(AIRTIME, window);
    Some(gw.execute_plan(node, &plan, &mut ch, node.clock))
}

fn pages_of(set: &RangeSet) -> Vec<u32> {
    set.ranges().flat_map(|r| r.iter()).collect()
}

#[test]
fn plan_covers_only_missing_pages() {
    let mut c = cloud();
    for p in 0..=39 {
        c.mark_downloaded(7, p).unwrap();
    }
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 42, 8192);
    let b = node.emit_beacon();
    assert_eq!(b.max_page, Some(41));
    let plan = gw.on_beacon(&b, Some(&mut c), 0).unwrap();
    // Set difference {0..41} \ {0..39}.
    let expected: Vec<u32> = (0..=41).filter(|p| !(0..=39).contains(p)).collect();
    assert_eq!(plan.page_numbers().collect::<Vec<_>>(), expected);
    assert!(plan.config_update.is_none() && plan.fw_update.is_none());
}

#[test]
fn nothing_to_do_means_no_plan() {
    let mut c = cloud();
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 0, 8192);
    let b = node.emit_beacon();
    assert_eq!(b.max_page, None);
    assert_eq!(gw.on_beacon(&b, Some(&mut c), 0), None);
}

#[test]
fn version_mismatch_plans_config_only() {
    let mut c = cloud();
    for v in 1..=7 {
        c.set_desired_config(7, vec![gps_task(1, 300 + v)], BTreeMap::new()).unwrap();
    }
    let mut gw = gateway(1);
    let b = Beacon {
        node_id: 7,
        max_page: None,
        battery_mv: 3900,
        config_version: 5,
        fw_version: 0,
    };
    let plan = gw.on_beacon(&b, Some(&mut c), 0).unwrap();
    assert_eq!(plan.config_update.as_ref().unwrap().version, 7);
    assert_eq!(plan.page_count(), 0);
}

#[test]
fn window_limits_transfer() {
    let mut c = cloud();
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 100, 8192);
    let res = contact(&mut gw, &mut node, Some(&mut c), Some(10.0)).unwrap();
    // 5 pages/s for 10 s.
    assert_eq!(res.pages.len(), 50);
    assert!(res.contact_lost);
    assert_eq!(res.pages, (0..50).collect::<Vec<_>>());
    gw.upload(&mut c, 20);
    let n = c.ledger().peek_next_needed(7);
    assert_eq!(n.lowest, Some(50));
    assert_eq!(n.pending_pages(), 50);
}

#[test]
fn complete_plan_buffers_pages_and_reports() {
    let mut c = cloud();
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 2, 8192);
    let res = contact(&mut gw, &mut node, Some(&mut c), None).unwrap();
    assert_eq!(res.pages, vec![0, 1]);
    assert!(!res.contact_lost);
    let reports = gw
        .upload_buffer()
        .filter(|m| matches!(m, CloudMessage::PageReport(_)))
        .count();
    let ingests: Vec<_> = gw
        .upload_buffer()
        .filter_map(|m| match m {
            CloudMessage::PageIngest(p) => Some(p.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(reports, 2);
    // No invention: every buffered page matches the node's bytes.
    for p in ingests {
        assert_eq!(p.data().unwrap(), node.log.read_page(p.page_no).unwrap().data);
    }
}

#[test]
fn expired_pages_become_loss_reports() {
    let mut c = cloud();
    let mut gw = gateway(1);
    // Capacity 4 with pages 0..=5 finalized: 0 and 1 are gone.
    let mut node = node_with_pages(7, 6, 4);
    assert_eq!(node.log.head_page_no(), 2);
    let res = contact(&mut gw, &mut node, Some(&mut c), None).unwrap();
    assert_eq!(res.expired, vec![0, 1]);
    assert_eq!(res.pages, vec![2, 3, 4, 5]);
    gw.upload(&mut c, 10);
    let l = c.ledger().node(7).unwrap();
    assert_eq!(pages_of(&l.expired), vec![0, 1]);
    assert_eq!(pages_of(&l.downloaded), vec![2, 3, 4, 5]);
    assert_eq!(c.ledger().peek_next_needed(7).lowest, None);
}

#[test]
fn offline_buffer_matches_online_run() {
    let run = |offline: bool| {
        let mut c = cloud();
        let mut gw = gateway(1);
        gw.online = !offline;
        let mut node = node_with_pages(7, 1, 8192);
        let mut total = 0;
        // Two days of contacts, 15 new pages each.
        for day in 1..=2u64 {
            let target = day as u32 * 15;
            let extra = node_with_pages(7, target, 8192);
            node.log = extra.log;
            node.clock = day * SECONDS_PER_DAY;
            let online = gw.online;
            let res = contact(&mut gw, &mut node, online.then_some(&mut c), None).unwrap();
            total += res.pages.len();
            gw.upload(&mut c, node.clock);
        }
        gw.online = true;
        let rep = gw.sync(&mut c, 3 * SECONDS_PER_DAY).unwrap();
        assert_eq!(gw.upload_buffer().count(), 0);
        (c, total, rep)
    };
    let (online, n_on, _) = run(false);
    let (offline, n_off, rep) = run(true);
    assert_eq!(n_on, 30);
    assert_eq!(n_off, 30);
    assert_eq!(rep.stored, 30);
    assert_eq!(online.ledger(), offline.ledger());
    let pages = |c: &CloudService| -> Vec<(NodeId, u32, Vec<u8>)> {
        c.store().pages().map(|((n, p), s)| (n, p, s.data.clone())).collect()
    };
    assert_eq!(pages(&online), pages(&offline));
}

#[test]
fn stale_caches_duplicate_transfer_not_storage() {
    let mut c = cloud();
    let mut a = gateway(1);
    let mut b = gateway(2);
    a.online = false;
    b.online = false;
    let mut node = node_with_pages(7, 3, 8192);
    let ra = contact(&mut a, &mut node, None, None).unwrap();
    let rb = contact(&mut b, &mut node, None, None).unwrap();
    assert_eq!(ra.pages, rb.pages);
    a.online = true;
    b.online = true;
    let sa = a.sync(&mut c, 100).unwrap();
    let sb = b.sync(&mut c, 101).unwrap();
    assert_eq!((sa.stored, sa.duplicates), (3, 0));
    assert_eq!((sb.stored, sb.duplicates), (0, 3));
    assert_eq!(c.store().page_count(), 3);
    assert_eq!(c.ledger_conflicts(), 0);
    // Health reports arrived from both.
    assert_eq!(c.health().all().count(), 2);
}

#[test]
fn no_duplicate_plan_within_one_snapshot() {
    let mut gw = gateway(1);
    gw.online = false;
    let mut node = node_with_pages(7, 5, 8192);
    contact(&mut gw, &mut node, None, None).unwrap();
    // Same snapshot, same pages: nothing left to plan.
    let b = node.emit_beacon();
    assert_eq!(gw.on_beacon(&b, None, 1), None);
}

#[test]
fn session_budget_splits_backlog() {
    let mut c = cloud();
    let mut gw = GatewayState::new(GatewayConfig {
        gateway_id: 1,
        max_session_s: 10,
        ..Default::default()
    });
    let mut node = node_with_pages(7, 120, 8192);
    let r1 = contact(&mut gw, &mut node, Some(&mut c), None).unwrap();
    assert_eq!(r1.pages.len(), 50);
    gw.upload(&mut c, 5);
    let r2 = contact(&mut gw, &mut node, Some(&mut c), None).unwrap();
    assert_eq!(r2.pages, (50..100).collect::<Vec<_>>());
}

#[test]
fn config_converges_after_reconcile() {
    let mut c = cloud();
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 0, 8192).with_tasks([gps_task(1, 60), gps_task(2, 60)]);
    let desired = vec![gps_task(2, 120), gps_task(3, 30)];
    let v = c
        .set_desired_config(7, desired.clone(), BTreeMap::from([("beacon_period_s".to_string(), 20)]))
        .unwrap();
    let res = contact(&mut gw, &mut node, Some(&mut c), None).unwrap();
    assert_eq!(res.config_applied, Some(v));
    assert_eq!(node.config_version(), v);
    assert_eq!(node.tasks().cloned().collect::<Vec<_>>(), desired);
    assert_eq!(node.beacon_period_s(), 20);
    gw.upload(&mut c, 5);
    assert_eq!(c.applied_config(7).unwrap().version, v);
    // Converged: the next beacon needs nothing.
    let b = node.emit_beacon();
    assert_eq!(gw.on_beacon(&b, Some(&mut c), 6), None);
}

#[test]
fn firmware_push() {
    let mut c = cloud();
    let image: Vec<u8> = (0..1000u32).map(|i| (i * 7) as u8).collect();
    c.register_firmware(FirmwareImage::new(3, image, 64)).unwrap();
    c.set_desired_firmware(7, 3).unwrap();
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 0, 8192);
    let res = contact(&mut gw, &mut node, Some(&mut c), None).unwrap();
    assert_eq!(res.fw_applied, Some(3));
    assert_eq!(node.fw_version(), 3);
    // 16 chunks of airtime.
    assert!((res.elapsed_s - 16.0 * AIRTIME).abs() < 1e-9);
}

#[test]
fn total_loss_is_contact_lost() {
    let mut c = cloud();
    let mut gw = gateway(1);
    let mut node = node_with_pages(7, 10, 8192);
    let b = node.emit_beacon();
    let plan = gw.on_beacon(&b, Some(&mut c), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ch = LossyChannel::new(&mut rng, 1.0, AIRTIME, None);
    let res = gw.execute_plan(&mut node, &plan, &mut ch, 0);
    assert!(res.contact_lost);
    assert!(res.pages.is_empty());
    assert_eq!(res.retries, 2);
}

#[test]
fn duty_cycle_rules() {
    let mut gw = GatewayState::new(GatewayConfig {
        gateway_id: 1,
        duty: DutySchedule::windows([(5 * 3600, 7 * 3600)]),
        ..Default::default()
    });
    let start = 5 * 3600;
    let end = 7 * 3600;
    assert!(!gw.duty_tick(start - 10, false));
    assert!(gw.duty_tick(start, false));
    // No beacon for 60 s: sleep early, stay asleep for the rest of the window.
    assert!(gw.duty_tick(start + 59, false));
    assert!(!gw.duty_tick(start + 60, false));
    assert!(!gw.duty_tick(start + 600, false));

    // Next day: a node is mid-download at the scheduled end.
    let day = SECONDS_PER_DAY;
    assert!(gw.duty_tick(day + start, false));
    let node = Beacon {
        node_id: 1,
        max_page: None,
        battery_mv: 3900,
        config_version: 0,
        fw_version: 0,
    };
    gw.on_beacon(&node, None, day + end - 1);
    assert!(gw.duty_tick(day + end, true));
    assert!(gw.duty_tick(day + end + 300, true));
    assert!(!gw.duty_tick(day + end + 310, false));

    // Backlog cleared exactly at the boundary.
    assert!(gw.duty_tick(2 * day + start, false));
    gw.on_beacon(&node, None, 2 * day + end - 1);
    assert!(!gw.duty_tick(2 * day + end, false));
}
