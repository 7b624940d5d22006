use aioarch::exec::{
    run, run_shared_nothing, Architecture, ArchConfig, ClockMode, ControllerConfig, CostModel, ExecError, ExecMode,
    FioPattern, LoadProfile, Threading, Workload,
};
use aioarch::partition::{generate_corpus, run_sequential, CorpusConfig, Scheme};
use aioarch::sim::DeviceModel;

fn nvme() -> DeviceModel {
    DeviceModel::desk_nvme().without_jitter()
}

fn fio(ops: u64, qd: usize, cost: u64) -> Workload {
    Workload::fio(FioPattern::RandRead, ops, 1, qd, cost, 7)
}

fn cfg(arch: Architecture, workers: usize, instances: usize) -> ArchConfig {
    ArchConfig::new(arch, workers, instances)
}

#[test]
fn single_thread_qd1_matches_service_time() {
    let out = run_shared_nothing(fio(2_000, 1, 0), 1, Scheme::Full, &nvme()).unwrap();
    let r = &out.report;
    assert!(r.is_conserved());
    assert_eq!(r.completed, 2_000);
    let want = 10_000.0;
    assert!((r.iops() - want).abs() / want < 0.01, "iops {}", r.iops());
    assert_eq!(r.cross_thread_msgs, 0);
}

#[test]
fn shared_nothing_saturates_at_parallelism() {
    let mut c = cfg(Architecture::SharedNothing, 1, 1);
    c.cost = CostModel::zero();
    for qd in [32usize, 64, 128] {
        let out = run(fio(20_000, qd, 0), &c, &nvme()).unwrap();
        let want = qd.min(64) as f64 * 10_000.0;
        let got = out.report.iops();
        assert!((got - want).abs() / want < 0.01, "qd {qd}: {got} vs {want}");
    }
}

#[test]
fn every_architecture_and_scheme_agrees_with_the_oracle() {
    let g = nvme().geometry();
    let specs = generate_corpus(3, 60, &CorpusConfig::default());
    let want: Vec<_> = specs.iter().map(|s| (s.task_id, run_sequential(s, &g))).collect();
    for arch in Architecture::ALL {
        for scheme in Scheme::ALL {
            let mut c = cfg(arch, 3, 2);
            c.scheme = scheme;
            let out = run(Workload::corpus(specs.clone(), 4).collecting_states(), &c, &nvme())
                .unwrap_or_else(|e| panic!("{arch:?}/{scheme:?}: {e}"));
            let got: Vec<_> = out.final_states.into_iter().collect();
            assert_eq!(got, want, "{arch:?}/{scheme:?}");
            assert!(out.report.is_conserved());
            assert_eq!(out.handles_created, out.handles_completed);
        }
    }
}

#[test]
fn inline_callbacks_and_pair_threading_agree_with_the_oracle() {
    let g = nvme().geometry();
    let specs = generate_corpus(5, 40, &CorpusConfig::default());
    let want: Vec<_> = specs.iter().map(|s| (s.task_id, run_sequential(s, &g))).collect();
    for scheme in Scheme::ALL {
        for threading in [Threading::SingleThread, Threading::SubmitReapPair] {
            let mut c = cfg(Architecture::StaticPool, 2, 2);
            c.scheme = scheme;
            c.exec_mode = ExecMode::InlineCallbacks;
            c.threading = threading;
            let out = run(Workload::corpus(specs.clone(), 3).collecting_states(), &c, &nvme()).unwrap();
            let got: Vec<_> = out.final_states.into_iter().collect();
            assert_eq!(got, want, "{scheme:?}/{threading:?}");
        }
    }
}

#[test]
fn cross_shard_dependency_is_refused_by_shared_nothing() {
    let specs = generate_corpus(1, 8, &CorpusConfig::default());
    let w = Workload::corpus(specs.clone(), 2).with_deps(vec![(0, 1)]);
    let err = run(w, &cfg(Architecture::SharedNothing, 2, 2), &nvme()).unwrap_err();
    assert_eq!(err, ExecError::WorkloadNotPartitionable { before: 0, after: 1 });
    let w = Workload::corpus(specs, 2).with_deps(vec![(0, 1), (2, 5)]);
    let out = run(w, &cfg(Architecture::StaticPool, 2, 1), &nvme()).unwrap();
    assert_eq!(out.report.tasks_completed, 8);
    assert!(out.report.cross_thread_msgs >= 2);
}

#[test]
fn direct_access_counts_contention() {
    let one = run(fio(4_000, 4, 0), &cfg(Architecture::DirectAccess, 1, 1), &nvme()).unwrap();
    assert_eq!(one.report.contention_events, 0);
    let many = run(fio(20_000, 4, 0), &cfg(Architecture::DirectAccess, 8, 1), &nvme()).unwrap();
    assert!(many.report.contention_events > 0);
    let pool = run(fio(20_000, 4, 0), &cfg(Architecture::StaticPool, 8, 1), &nvme()).unwrap();
    assert!(many.report.iops() <= pool.report.iops() * 1.001, "{} vs {}", many.report.iops(), pool.report.iops());
}

#[test]
fn static_pool_qd32_matches_littles_law() {
    let out = run(fio(40_000, 4, 0), &cfg(Architecture::StaticPool, 8, 1), &nvme()).unwrap();
    let want = 320_000.0;
    let got = out.report.iops();
    assert!((got - want).abs() / want < 0.05, "{got}");
    assert_eq!(out.report.spsc_owner_changes, 0);
}

#[test]
fn inline_callbacks_collapse_with_callback_cost() {
    let mut c = cfg(Architecture::StaticPool, 8, 1);
    c.exec_mode = ExecMode::InlineCallbacks;
    let out = run(fio(3_000, 4, 100_000), &c, &nvme()).unwrap();
    let got = out.report.iops();
    assert!(got <= 10_000.0 * 1.02 && got > 9_000.0, "{got}");
    c.exec_mode = ExecMode::IoThreads;
    let out = run(fio(20_000, 4, 10_000), &c, &nvme()).unwrap();
    let got = out.report.iops();
    assert!((got - 320_000.0).abs() / 320_000.0 < 0.05, "{got}");
}

#[test]
fn dynamic_pool_shrinks_in_troughs() {
    let profile = LoadProfile::square_wave(1.0, 0.05, 50_000_000, 2, 640_000.0);
    let mk = || Workload::fio(FioPattern::RandRead, u64::MAX, 1, 16, 0, 1).with_profile(profile.clone());
    let mut dynamic = cfg(Architecture::DynamicPool, 8, 4);
    dynamic.controller = ControllerConfig {
        target_inflight_per_instance: Some(8.0),
        ..ControllerConfig::default()
    };
    let d = run(mk(), &dynamic, &nvme()).unwrap();
    let s = run(mk(), &cfg(Architecture::StaticPool, 8, 4), &nvme()).unwrap();
    let tl = &d.report.active_instance_timeline;
    assert!(tl.iter().any(|&(_, a)| a == 1), "{tl:?}");
    for w in tl.windows(2) {
        assert!(w[0].1.abs_diff(w[1].1) <= 1);
    }
    assert_eq!(d.report.inactive_deliveries, 0);
    assert!(d.report.poll_busy_ns() < s.report.poll_busy_ns(), "{} vs {}", d.report.poll_busy_ns(), s.report.poll_busy_ns());
}

#[test]
fn wall_clock_mode_runs_every_architecture() {
    for arch in Architecture::ALL {
        let mut c = cfg(arch, 2, 2);
        c.clock = ClockMode::Wall;
        c.wall_deadline_ms = 30_000;
        let mut model = nvme();
        model.service_time_ns = 20_000;
        let out = run(fio(500, 4, 0), &c, &model).unwrap_or_else(|e| panic!("{arch:?}: {e}"));
        assert_eq!(out.report.completed, 500, "{arch:?}");
        assert!(out.report.is_conserved());
    }
}
