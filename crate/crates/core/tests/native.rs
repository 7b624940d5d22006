#![cfg(all(feature = "native", target_os = "linux"))]

use std::collections::HashSet;
use std::io::Write;
use std::os::unix::fs::FileExt;

use aioarch::native::{NativeBackend, NativeConfig, NativeError};
use aioarch::ring::{ApiInstance, Backend, IoRequest, IoResult, PushOutcome, RingConfig};
use aioarch::ClockSource;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILE_BLOCKS: u64 = 256;

fn scratch() -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = vec![0u8; (FILE_BLOCKS * 4096) as usize];
    rng.fill(&mut data[..]);
    f.write_all(&data).unwrap();
    f.flush().unwrap();
    f
}

/// Opens with direct I/O when the filesystem allows it. None when the
/// kernel or sandbox refuses io_uring.
fn open(path: &std::path::Path) -> Option<NativeBackend> {
    for direct_io in [true, false] {
        let cfg = NativeConfig {
            path: path.to_path_buf(),
            direct_io,
            ..NativeConfig::default()
        };
        match NativeBackend::open(&cfg) {
            Ok(b) => return Some(b),
            Err(NativeError::Io(_)) if direct_io => continue,
            Err(e) => {
                eprintln!("skipping native test: {e}");
                return None;
            }
        }
    }
    None
}

fn drive(dev: &mut NativeBackend, inst: &mut ApiInstance, want: usize) -> Vec<aioarch::Completion> {
    let mut out = Vec::new();
    let clock = ClockSource::wall();
    while out.len() < want {
        dev.service(clock.now_ns());
        out.extend(inst.cq_reap(usize::MAX));
    }
    out
}

#[test]
fn read_matches_a_blocking_read() {
    let f = scratch();
    let Some(mut dev) = open(f.path()) else { return };
    let (mut inst, ep) = ApiInstance::new(&RingConfig::default(), dev.geometry(), ClockSource::wall()).unwrap();
    dev.attach(ep);
    let r = inst.sq_push(IoRequest::read(8 * 4096, 4096).with_buffer(5)).unwrap();
    assert!(matches!(r, PushOutcome::Accepted(_)));
    inst.enter();
    let c = drive(&mut dev, &mut inst, 1);
    assert_eq!(c[0].result, IoResult::Ok(4096));
    let mut want = vec![0u8; 4096];
    f.as_file().read_exact_at(&mut want, 8 * 4096).unwrap();
    assert_eq!(&dev.buffer(5)[..4096], &want[..]);
}

#[test]
fn random_reads_complete_exactly_once() {
    let f = scratch();
    let Some(mut dev) = open(f.path()) else { return };
    let (mut inst, ep) = ApiInstance::new(&RingConfig::default(), dev.geometry(), ClockSource::wall()).unwrap();
    dev.attach(ep);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sent = HashSet::new();
    let mut got = HashSet::new();
    let mut next = 0u64;
    while got.len() < 1000 {
        while next < 1000 {
            let req = IoRequest::read(rng.gen_range(0..FILE_BLOCKS) * 4096, 4096)
                .with_user_data(next)
                .with_buffer(next as u32);
            match inst.sq_push(req).unwrap() {
                PushOutcome::Accepted(_) => {
                    sent.insert(next);
                    next += 1;
                }
                PushOutcome::QueueFull => break,
            }
        }
        inst.enter();
        dev.service(0);
        for c in inst.cq_reap(usize::MAX) {
            assert_eq!(c.result, IoResult::Ok(4096));
            assert!(got.insert(c.user_data), "duplicate {}", c.user_data);
        }
    }
    assert_eq!(sent, got);
    assert!(dev.is_idle());
}

#[test]
fn linked_chain_completes_in_order() {
    let f = scratch();
    let Some(mut dev) = open(f.path()) else { return };
    let (mut inst, ep) = ApiInstance::new(&RingConfig::default(), dev.geometry(), ClockSource::wall()).unwrap();
    dev.attach(ep);
    let chain = vec![
        IoRequest::write(0, 4096).with_user_data(1).with_buffer(1).linked(),
        IoRequest::fsync().with_user_data(2).linked(),
        IoRequest::read(0, 4096).with_user_data(3).with_buffer(2),
    ];
    dev.buffer_mut(1)[..4096].fill(0xab);
    inst.submit_linked(chain).unwrap();
    inst.enter();
    let got: Vec<_> = drive(&mut dev, &mut inst, 3).iter().map(|c| c.user_data).collect();
    assert_eq!(got, vec![1, 2, 3]);
    assert!(dev.buffer(2)[..4096].iter().all(|&b| b == 0xab));
}
