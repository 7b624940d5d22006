use std::collections::VecDeque;
use std::thread;

use aioarch::ring::spsc::ring;
use aioarch::ring::{ApiInstance, IoRequest, PushOutcome, RingConfig};
use aioarch::sim::{DeviceModel, SimDevice};
use aioarch::ClockSource;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stress(items: u64, capacity: usize, seed: u64) {
    let (mut tx, mut rx) = ring::<u64>(capacity);
    let producer = thread::spawn(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        while next < items {
            let burst = rng.gen_range(1..64);
            for _ in 0..burst {
                if next == items {
                    break;
                }
                if tx.push(next).is_err() {
                    thread::yield_now();
                    break;
                }
                next += 1;
            }
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
    let mut want = 0;
    while want < items {
        let burst = rng.gen_range(1..64);
        for _ in 0..burst {
            match rx.pop() {
                Some(v) => {
                    assert_eq!(v, want, "seed {seed}");
                    want += 1;
                }
                None => {
                    thread::yield_now();
                    break;
                }
            }
        }
    }
    producer.join().unwrap();
    assert!(rx.pop().is_none());
    assert_eq!(rx.popped(), items);
}

#[test]
fn threaded_stress_preserves_fifo() {
    for seed in 0..3 {
        stress(200_000, 64, seed);
    }
}

#[derive(Clone, Debug)]
enum Op {
    Push(u32),
    Pop,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(prop_oneof![any::<u32>().prop_map(Op::Push), Just(Op::Pop)], 0..400)
}

proptest! {
    #[test]
    fn ring_behaves_like_a_bounded_queue(cap_pow in 0u32..6, ops in ops()) {
        let cap = 1usize << cap_pow;
        let (mut tx, mut rx) = ring::<u32>(cap);
        let mut model = VecDeque::new();
        for op in ops {
            match op {
                Op::Push(v) => {
                    let r = tx.push(v);
                    if model.len() < cap {
                        prop_assert!(r.is_ok());
                        model.push_back(v);
                    } else {
                        prop_assert_eq!(r, Err(v));
                    }
                }
                Op::Pop => prop_assert_eq!(rx.pop(), model.pop_front()),
            }
            prop_assert_eq!(rx.len(), model.len());
        }
    }

    #[test]
    fn instance_conserves_requests(seed in any::<u64>(), batches in proptest::collection::vec(1usize..40, 1..20)) {
        let model = DeviceModel::desk_nvme();
        let clock = ClockSource::virtual_clock();
        let mut dev = SimDevice::new(model.clone(), seed).unwrap();
        let cfg = RingConfig { sq_entries: 16, cq_entries: 32, ..RingConfig::default() };
        let (mut inst, ep) = ApiInstance::new(&cfg, model.geometry(), clock.clone()).unwrap();
        dev.attach(ep);
        let (mut accepted, mut reaped) = (0u64, 0u64);
        for b in batches {
            for _ in 0..b {
                match inst.sq_push(IoRequest::nop()).unwrap() {
                    PushOutcome::Accepted(_) => accepted += 1,
                    PushOutcome::QueueFull => break,
                }
            }
            let d = inst.instance_depth();
            prop_assert!(d.inflight <= 32);
            dev.step();
            clock.set(dev.now());
            dev.kick(0, dev.now());
            reaped += inst.cq_reap(usize::MAX).len() as u64;
        }
        dev.run_until_idle();
        reaped += inst.cq_reap(usize::MAX).len() as u64;
        prop_assert_eq!(accepted, reaped);
        prop_assert_eq!(inst.instance_depth().inflight, 0);
    }
}
