use std::collections::HashSet;

use aioarch::ring::{ApiInstance, IoRequest, IoResult, PushOutcome, RingConfig};
use aioarch::sim::{DeviceModel, FaultSpec, PollState, SimDevice};
use aioarch::ClockSource;

const US: u64 = 1_000;
const MS: u64 = 1_000_000;

fn setup(model: DeviceModel, seed: u64, ring: &RingConfig) -> (SimDevice, ApiInstance, ClockSource) {
    let clock = ClockSource::virtual_clock();
    let mut dev = SimDevice::new(model.clone(), seed).unwrap();
    let (inst, ep) = ApiInstance::new(ring, model.geometry(), clock.clone()).unwrap();
    dev.attach(ep);
    (dev, inst, clock)
}

/// Submits one Nop at each of `times` and runs to completion.
fn submit_at(times: &[u64]) -> SimDevice {
    let (mut dev, mut inst, clock) = setup(DeviceModel::desk_nvme().without_jitter(), 0, &RingConfig::default());
    for &t in times {
        dev.advance_to(t);
        clock.set(t);
        inst.sq_push(IoRequest::nop()).unwrap();
        dev.kick(0, t);
        inst.cq_reap(usize::MAX);
    }
    dev.run_until_idle();
    dev.advance_to(times.last().copied().unwrap_or(0) + 3 * MS);
    dev
}

#[test]
fn million_nops_complete_exactly_once() {
    let (mut dev, mut inst, clock) = setup(DeviceModel::desk_nvme(), 11, &RingConfig::default());
    let total = 1_000_000u64;
    let mut sent = 0u64;
    let mut seen = vec![false; total as usize];
    let mut done = 0u64;
    while done < total {
        while sent < total {
            match inst.sq_push(IoRequest::nop().with_user_data(sent)).unwrap() {
                PushOutcome::Accepted(_) => sent += 1,
                PushOutcome::QueueFull => break,
            }
        }
        dev.kick(0, clock.now_ns());
        if dev.step() > 0 {
            clock.set(dev.now());
        }
        for c in inst.cq_reap(usize::MAX) {
            assert_eq!(c.result, IoResult::Ok(0));
            let slot = &mut seen[c.user_data as usize];
            assert!(!*slot, "duplicate {}", c.user_data);
            *slot = true;
            done += 1;
        }
    }
    assert!(seen.iter().all(|&s| s));
    assert_eq!(dev.stats(0).consumed, total);
    assert_eq!(dev.stats(0).completed, total);
}

#[test]
fn frequent_submissions_keep_the_poll_thread_busy() {
    let times: Vec<u64> = (0..200).map(|k| k * 500 * US).collect();
    let dev = submit_at(&times);
    let p = dev.poll_thread(0).unwrap();
    let asleep: Vec<_> = p.transitions().iter().filter(|t| t.state == PollState::Asleep).collect();
    assert_eq!(asleep.len(), 1, "{asleep:?}");
    let last = *times.last().unwrap();
    assert_eq!(asleep[0].time_ns, last + MS);
    // Busy from the start until the timeout after the last submission.
    assert_eq!(dev.poll_busy_ns(0), last + MS);
}

#[test]
fn sparse_submissions_sleep_after_exactly_the_timeout() {
    let times: Vec<u64> = (1..=50).map(|k| k * 2 * MS).collect();
    let dev = submit_at(&times);
    let p = dev.poll_thread(0).unwrap();
    let asleep: Vec<_> = p.transitions().iter().filter(|t| t.state == PollState::Asleep).collect();
    assert_eq!(asleep.len(), times.len() + 1);
    for t in &asleep {
        assert_eq!(t.time_ns - t.last_seen_ns, MS);
    }
    let bound = (times.len() as u64 + 1) * (MS + dev.model().wakeup_cost_ns);
    assert!(dev.poll_busy_ns(0) <= bound);
}

#[test]
fn faults_reconcile_with_the_plan() {
    let model = DeviceModel {
        fault_plan: vec![FaultSpec { request_id: 3, code: 5 }, FaultSpec { request_id: 40, code: 5 }],
        ..DeviceModel::desk_nvme()
    };
    let (mut dev, mut inst, _) = setup(model, 2, &RingConfig::default());
    for i in 0..64 {
        inst.sq_push(IoRequest::read(i * 4096, 4096)).unwrap();
    }
    dev.run_until_idle();
    let cs = inst.cq_reap(usize::MAX);
    assert_eq!(cs.len(), 64);
    let failed: HashSet<_> = cs.iter().filter(|c| !c.result.is_ok()).map(|c| c.request_id).collect();
    assert_eq!(failed, HashSet::from([3, 40]));
}

#[test]
fn jittered_runs_are_reproducible() {
    let run = |seed| {
        let (mut dev, mut inst, _) = setup(DeviceModel::desk_nvme(), seed, &RingConfig::default());
        let mut dev_t = Vec::new();
        for i in 0..128 {
            inst.sq_push(IoRequest::read(i * 4096, 4096)).unwrap();
        }
        dev.run_until_idle();
        for c in inst.cq_reap(usize::MAX) {
            dev_t.push((c.request_id, c.complete_time));
        }
        dev_t
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}
