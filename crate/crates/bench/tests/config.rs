use aioarch::exec::{Architecture, FioPattern};
use aioarch_bench::ExperimentConfig;
use proptest::prelude::*;

proptest! {
    #[test]
    fn toml_round_trips(
        seed in 0u64..=i64::MAX as u64,
        runs in 1usize..50,
        qd in 1usize..512,
        ops in 1u64..10_000_000,
        cost in 0u64..1_000_000,
        workers in 1usize..16,
        arch in prop::sample::select(Architecture::ALL.to_vec()),
        pattern in prop::sample::select(vec![FioPattern::SeqRead, FioPattern::RandRead, FioPattern::SeqWrite, FioPattern::RandWrite]),
        jitter in 0.0f64..1.0,
        qd_list in prop::collection::vec(1usize..1024, 1..10),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.runs = runs;
        cfg.workload.queue_depth = qd;
        cfg.workload.op_count = ops;
        cfg.workload.callback_cost_ns = cost;
        cfg.workload.op_kind = pattern;
        cfg.architecture.workers = workers;
        cfg.architecture.architecture = arch;
        cfg.backend.device.jitter = jitter;
        cfg.sweep.qd_list = qd_list;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn seeds_beyond_63_bits_are_rejected() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = u64::MAX;
    assert!(cfg.validate().is_err());
}
