use std::sync::Arc;
use std::thread;
use std::time::Duration;

use aioarch::exec::{ExecError, HandlePoll, InlineWork, IoPool, PoolConfig, Threading};
use aioarch::ring::{IoRequest, IoResult};
use aioarch::sim::DeviceModel;

fn model() -> DeviceModel {
    DeviceModel {
        service_time_ns: 20_000,
        ..DeviceModel::desk_nvme()
    }
}

fn pool(cfg: PoolConfig) -> IoPool {
    IoPool::start(cfg, model()).unwrap()
}

#[test]
fn concurrent_submitters_see_every_handle_once() {
    for threading in [Threading::SingleThread, Threading::SubmitReapPair] {
        let p = Arc::new(pool(PoolConfig {
            instances: 2,
            threading,
            ..PoolConfig::default()
        }));
        let threads: Vec<_> = (0..8u64)
            .map(|t| {
                let p = p.clone();
                thread::spawn(move || {
                    let hs: Vec<_> = (0..500)
                        .map(|i| p.submit(IoRequest::nop().with_user_data(t << 32 | i)).unwrap())
                        .collect();
                    for (i, h) in hs.iter().enumerate() {
                        let c = h.await_spin();
                        assert_eq!(c.user_data, t << 32 | i as u64);
                        assert_eq!(c.result, IoResult::Ok(0));
                        assert_eq!(h.deliveries(), 1);
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        let p = Arc::into_inner(p).unwrap();
        let report = p.drain_and_shutdown(Duration::from_secs(30)).unwrap();
        assert_eq!(report.completed, 4_000);
        assert!(report.is_conserved());
        assert_eq!(report.duplicate_completions, 0);
        assert_eq!(report.spsc_owner_changes, 0);
    }
}

#[test]
fn overflow_is_drained_in_order() {
    let p = pool(PoolConfig {
        instances: 1,
        inbox_capacity: 2,
        ..PoolConfig::default()
    });
    let hs: Vec<_> = (0..300).map(|i| p.submit(IoRequest::nop().with_user_data(i)).unwrap()).collect();
    assert!(p.layer().overflow_peak() > 0);
    for (i, h) in hs.iter().enumerate() {
        assert_eq!(h.await_spin().user_data, i as u64);
    }
    let report = p.drain_and_shutdown(Duration::from_secs(30)).unwrap();
    assert_eq!(report.completed, 300);
}

#[test]
fn zero_deadline_abandons_unfinished_work() {
    let p = pool(PoolConfig {
        instances: 1,
        cooperative: true,
        ..PoolConfig::default()
    });
    for _ in 0..10 {
        p.submit(IoRequest::nop()).unwrap();
    }
    let err = p.drain_and_shutdown(Duration::ZERO).unwrap_err();
    assert_eq!(err, ExecError::TimeoutExceeded { abandoned: 10 });
}

#[test]
fn cooperative_ticks_drive_requests() {
    let p = pool(PoolConfig {
        instances: 1,
        cooperative: true,
        ..PoolConfig::default()
    });
    let h = p.submit(IoRequest::read(0, 4096)).unwrap();
    assert_eq!(h.poll(), HandlePoll::Queued);
    while !matches!(h.poll(), HandlePoll::Done(_)) {
        p.tick(0);
        thread::yield_now();
    }
    assert_eq!(h.await_spin().result, IoResult::Ok(4096));
    p.drain_and_shutdown(Duration::from_secs(5)).unwrap();
}

#[test]
fn inline_work_output_reaches_the_poller() {
    let p = pool(PoolConfig::default());
    let h = p
        .submit_with(
            IoRequest::nop().with_user_data(41),
            Some(InlineWork::new(|c, _| Box::new(c.user_data + 1))),
        )
        .unwrap();
    h.await_spin();
    let out = h.take_output().unwrap().downcast::<u64>().unwrap();
    assert_eq!(*out, 42);
    p.drain_and_shutdown(Duration::from_secs(5)).unwrap();
}

#[test]
fn submissions_after_shutdown_are_refused() {
    let p = pool(PoolConfig::default());
    p.layer().shut_down();
    assert_eq!(p.submit(IoRequest::nop()).unwrap_err(), ExecError::PoolShutdown);
    p.drain_and_shutdown(Duration::from_secs(5)).unwrap();
}

#[test]
fn invalid_request_completes_with_an_error() {
    let p = pool(PoolConfig::default());
    let h = p.submit(IoRequest::read(3, 4096)).unwrap();
    assert!(matches!(h.await_spin().result, IoResult::Error(_)));
    let report = p.drain_and_shutdown(Duration::from_secs(5)).unwrap();
    assert!(report.is_conserved());
}
