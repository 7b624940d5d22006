use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::histogram::LatencyHistogram;
use crate::ring::{Completion, IoResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance: usize,
    /// Fraction of the run window with at least one of this instance's
    /// requests in service on the device.
    pub utilization: f64,
    /// CPU time burnt by the instance's SQ poll thread.
    pub poll_busy_ns: u64,
    pub inbox_peak: usize,
    pub submitted: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStats {
    pub resumes: u64,
    pub max_frame_bytes: usize,
}

/// Accounting for one run (or one shard of it).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: u64,
    pub window_start_ns: u64,
    pub window_end_ns: u64,
    pub submitted: u64,
    /// Completions with an `Ok` result.
    pub completed: u64,
    pub canceled: u64,
    pub errored: u64,
    pub latency: LatencyHistogram,
    pub per_instance: Vec<InstanceMetrics>,
    pub contention_events: u64,
    pub active_instance_timeline: Vec<(u64, usize)>,
    pub cross_thread_msgs: u64,
    /// Submissions bounced by a full SQ and retried.
    pub retries: u64,
    pub poll_misses: u64,
    /// Times a ring side was touched by a different logical thread than
    /// the previous one; zero means SPSC ownership was never shared.
    pub spsc_owner_changes: u64,
    /// Requests routed to an instance outside the active prefix.
    pub inactive_deliveries: u64,
    /// Handles completed more than once (must stay zero).
    pub duplicate_completions: u64,
    pub frames: FrameStats,
    pub tasks_completed: u64,
    /// Completions per load-profile phase, by completion time. Empty for
    /// runs without a profile.
    pub phase_completions: Vec<u64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot merge reports of different runs ({0} vs {1})")]
    IncompatibleWindows(u64, u64),
    #[error("nothing to merge")]
    Empty,
}

impl MetricsReport {
    pub fn new(run_id: u64) -> Self {
        MetricsReport {
            run_id,
            window_start_ns: u64::MAX,
            ..Default::default()
        }
    }

    /// Builds a report from a completion trace; the window spans the first
    /// submission to the last completion.
    pub fn from_trace(run_id: u64, trace: &[Completion]) -> Self {
        let mut r = MetricsReport::new(run_id);
        for c in trace {
            r.record_submit(c.submit_time);
            r.record_completion(c);
        }
        r
    }

    pub fn record_submit(&mut self, at_ns: u64) {
        self.submitted += 1;
        self.window_start_ns = self.window_start_ns.min(at_ns);
    }

    pub fn record_completion(&mut self, c: &Completion) {
        match c.result {
            IoResult::Ok(_) => self.completed += 1,
            IoResult::Error(_) => self.errored += 1,
            IoResult::Canceled => self.canceled += 1,
        }
        self.latency.record(c.latency_ns());
        self.window_start_ns = self.window_start_ns.min(c.submit_time);
        self.window_end_ns = self.window_end_ns.max(c.complete_time);
    }

    pub fn record_phase(&mut self, phase: usize) {
        if self.phase_completions.len() <= phase {
            self.phase_completions.resize(phase + 1, 0);
        }
        self.phase_completions[phase] += 1;
    }

    /// Completion rate inside the given phases, whose durations are given.
    pub fn phase_iops(&self, phases: &[(usize, u64)]) -> f64 {
        let (n, ns) = phases.iter().fold((0u64, 0u64), |(n, ns), &(p, d)| {
            (n + self.phase_completions.get(p).copied().unwrap_or(0), ns + d)
        });
        if ns == 0 {
            return 0.0;
        }
        n as f64 * 1e9 / ns as f64
    }

    pub fn delivered(&self) -> u64 {
        self.completed + self.canceled + self.errored
    }

    pub fn elapsed_ns(&self) -> u64 {
        if self.window_start_ns == u64::MAX {
            return 0;
        }
        self.window_end_ns.saturating_sub(self.window_start_ns)
    }

    /// Delivered completions per second of the run window.
    pub fn iops(&self) -> f64 {
        let el = self.elapsed_ns();
        if el == 0 {
            return 0.0;
        }
        self.delivered() as f64 * 1e9 / el as f64
    }

    /// `submitted = completed + canceled + errored`.
    pub fn is_conserved(&self) -> bool {
        self.submitted == self.delivered()
    }

    pub fn poll_busy_ns(&self) -> u64 {
        self.per_instance.iter().map(|i| i.poll_busy_ns).sum()
    }

    pub fn p50_ns(&self) -> u64 {
        self.latency.quantile(0.5).unwrap_or(0)
    }

    pub fn p99_ns(&self) -> u64 {
        self.latency.quantile(0.99).unwrap_or(0)
    }

    pub fn max_ns(&self) -> u64 {
        self.latency.max().unwrap_or(0)
    }

    pub fn mean_utilization(&self) -> f64 {
        if self.per_instance.is_empty() {
            return 0.0;
        }
        self.per_instance.iter().map(|i| i.utilization).sum::<f64>() / self.per_instance.len() as f64
    }

    /// Accumulates `other` into `self` without the run-id check; used for
    /// per-thread collectors of the same run.
    pub fn absorb(&mut self, other: &MetricsReport) {
        self.window_start_ns = self.window_start_ns.min(other.window_start_ns);
        self.window_end_ns = self.window_end_ns.max(other.window_end_ns);
        self.submitted += other.submitted;
        self.completed += other.completed;
        self.canceled += other.canceled;
        self.errored += other.errored;
        self.latency.merge(&other.latency);
        self.per_instance.extend(other.per_instance.iter().cloned());
        self.contention_events += other.contention_events;
        self.active_instance_timeline
            .extend(other.active_instance_timeline.iter().copied());
        self.active_instance_timeline.sort_by_key(|&(t, _)| t);
        self.cross_thread_msgs += other.cross_thread_msgs;
        self.retries += other.retries;
        self.poll_misses += other.poll_misses;
        self.spsc_owner_changes += other.spsc_owner_changes;
        self.inactive_deliveries += other.inactive_deliveries;
        self.duplicate_completions += other.duplicate_completions;
        self.frames.resumes += other.frames.resumes;
        self.frames.max_frame_bytes = self.frames.max_frame_bytes.max(other.frames.max_frame_bytes);
        self.tasks_completed += other.tasks_completed;
        for (p, &n) in other.phase_completions.iter().enumerate() {
            if n > 0 {
                if self.phase_completions.len() <= p {
                    self.phase_completions.resize(p + 1, 0);
                }
                self.phase_completions[p] += n;
            }
        }
    }

    pub const CSV_HEADER: &'static str = "run_id,elapsed_ns,iops,p50_ns,p99_ns,max_ns,submitted,completed,canceled,errored,contention_events,cross_thread_msgs,retries,poll_misses,spsc_owner_changes,mean_utilization,poll_busy_ns,inbox_peak,final_active";

    /// One CSV row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let inbox_peak = self.per_instance.iter().map(|i| i.inbox_peak).max().unwrap_or(0);
        let final_active = self
            .active_instance_timeline
            .last()
            .map(|&(_, a)| a)
            .unwrap_or(self.per_instance.len());
        write!(
            s,
            "{},{},{:.3},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{},{}",
            self.run_id,
            self.elapsed_ns(),
            self.iops(),
            self.p50_ns(),
            self.p99_ns(),
            self.max_ns(),
            self.submitted,
            self.completed,
            self.canceled,
            self.errored,
            self.contention_events,
            self.cross_thread_msgs,
            self.retries,
            self.poll_misses,
            self.spsc_owner_changes,
            self.mean_utilization(),
            self.poll_busy_ns(),
            inbox_peak,
            final_active
        )
        .unwrap();
        s
    }

    /// Human-readable structured summary (JSON).
    pub fn summary(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            run_id: u64,
            elapsed_ns: u64,
            iops: f64,
            p50_ns: u64,
            p99_ns: u64,
            max_ns: u64,
            submitted: u64,
            completed: u64,
            canceled: u64,
            errored: u64,
            conserved: bool,
            contention_events: u64,
            cross_thread_msgs: u64,
            retries: u64,
            poll_busy_ns: u64,
            per_instance: &'a [InstanceMetrics],
            active_instance_timeline: &'a [(u64, usize)],
        }
        serde_json::to_string_pretty(&Summary {
            run_id: self.run_id,
            elapsed_ns: self.elapsed_ns(),
            iops: self.iops(),
            p50_ns: self.p50_ns(),
            p99_ns: self.p99_ns(),
            max_ns: self.max_ns(),
            submitted: self.submitted,
            completed: self.completed,
            canceled: self.canceled,
            errored: self.errored,
            conserved: self.is_conserved(),
            contention_events: self.contention_events,
            cross_thread_msgs: self.cross_thread_msgs,
            retries: self.retries,
            poll_busy_ns: self.poll_busy_ns(),
            per_instance: &self.per_instance,
            active_instance_timeline: &self.active_instance_timeline,
        })
        .expect("summary serializes")
    }
}

/// Merges shard reports of the same run.
pub fn merge(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    let mut out = MetricsReport::new(first.run_id);
    for r in reports {
        if r.run_id != first.run_id {
            return Err(MetricsError::IncompatibleWindows(first.run_id, r.run_id));
        }
        out.absorb(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(n: u64, seed: u64) -> Vec<Completion> {
        (0..n)
            .map(|i| {
                let submit = i * 1_000 + seed;
                Completion {
                    request_id: i,
                    user_data: 0,
                    result: match i % 17 {
                        3 => IoResult::Error(5),
                        7 => IoResult::Canceled,
                        _ => IoResult::Ok(4096),
                    },
                    submit_time: submit,
                    complete_time: submit + 50_000 + (i * 7919 % 200_000),
                }
            })
            .collect()
    }

    #[test]
    fn merge_of_one_is_identity() {
        let r = MetricsReport::from_trace(1, &trace(100, 0));
        assert_eq!(merge(std::slice::from_ref(&r)).unwrap(), r);
    }

    #[test]
    fn merge_of_shards_equals_whole_trace() {
        let t = trace(1000, 0);
        let (a, b) = t.split_at(400);
        let merged = merge(&[MetricsReport::from_trace(9, a), MetricsReport::from_trace(9, b)]).unwrap();
        let whole = MetricsReport::from_trace(9, &t);
        assert_eq!(merged, whole);
        assert!(merged.is_conserved());
        assert_eq!(merged.csv_row(), whole.csv_row());
    }

    #[test]
    fn mismatched_run_ids_refuse_to_merge() {
        let a = MetricsReport::from_trace(1, &trace(10, 0));
        let b = MetricsReport::from_trace(2, &trace(10, 0));
        assert_eq!(merge(&[a, b]), Err(MetricsError::IncompatibleWindows(1, 2)));
        assert_eq!(merge(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let r = MetricsReport::from_trace(1, &trace(10, 0));
        assert_eq!(
            r.csv_row().split(',').count(),
            MetricsReport::CSV_HEADER.split(',').count()
        );
    }
}
