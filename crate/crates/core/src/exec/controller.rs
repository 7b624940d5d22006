use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::actor::{Actor, Cx, Step};
use super::dispatch::DispatchLayer;
use super::ExecError;
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub window_ns: u64,
    pub samples_per_window: u32,
    /// Setpoint for queued plus in-flight requests per active instance.
    /// Unset means 75% of the SQ capacity.
    pub target_inflight_per_instance: Option<f64>,
    pub min_active: usize,
    /// Unset means every instance of the pool.
    pub max_active: Option<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            window_ns: 10_000_000,
            samples_per_window: 10,
            target_inflight_per_instance: None,
            min_active: 1,
            max_active: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.window_ns == 0 || self.samples_per_window == 0 {
            return Err(ExecError::Config("controller window and samples must be > 0".into()));
        }
        if self.min_active == 0 {
            return Err(ExecError::Config("controller.min_active must be >= 1".into()));
        }
        if let Some(t) = self.target_inflight_per_instance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ExecError::Config("controller target must be positive".into()));
            }
        }
        if self.max_active.is_some_and(|m| m < self.min_active) {
            return Err(ExecError::Config("controller.max_active < min_active".into()));
        }
        Ok(())
    }

    pub fn target_for(&self, sq_entries: u32) -> f64 {
        self.target_inflight_per_instance
            .unwrap_or(sq_entries as f64 * 0.75)
    }
}

/// Adjusts the dispatch layer's active prefix once per window.
///
/// The load signal is the window mean of queued plus in-flight requests
/// per active instance. Above the setpoint one instance is added; one is
/// removed when the remaining instances would still stay at or below it.
pub struct ScalingController {
    layer: Arc<DispatchLayer>,
    window: u64,
    interval: u64,
    target: f64,
    min_active: usize,
    max_active: usize,
    window_end: Option<u64>,
    next_sample: u64,
    sum: f64,
    samples: u32,
    timeline: Vec<(u64, usize)>,
}

impl ScalingController {
    pub fn new(cfg: &ControllerConfig, target: f64, layer: Arc<DispatchLayer>) -> Self {
        let max_active = cfg.max_active.unwrap_or(layer.instances()).min(layer.instances());
        let min_active = cfg.min_active.min(max_active);
        ScalingController {
            layer,
            window: cfg.window_ns,
            interval: (cfg.window_ns / cfg.samples_per_window as u64).max(1),
            target,
            min_active,
            max_active,
            window_end: None,
            next_sample: 0,
            sum: 0.0,
            samples: 0,
            timeline: Vec::new(),
        }
    }

    pub fn timeline(&self) -> &[(u64, usize)] {
        &self.timeline
    }

    fn sample(&mut self) {
        let active = self.layer.active_count();
        let total: u64 = (0..active).map(|i| self.layer.load_of(i)).sum();
        self.sum += total as f64 / active as f64;
        self.samples += 1;
    }

    fn decide(&mut self, now: u64) {
        let mean = if self.samples == 0 {
            0.0
        } else {
            self.sum / self.samples as f64
        };
        self.sum = 0.0;
        self.samples = 0;
        let a = self.layer.active_count();
        let next = if mean > self.target && a < self.max_active {
            a + 1
        } else if a > self.min_active && mean * a as f64 / (a - 1) as f64 <= self.target {
            a - 1
        } else {
            a
        };
        if next != a {
            self.layer.set_active_count(next);
            self.timeline.push((now, next));
        }
    }
}

impl Actor for ScalingController {
    fn step(&mut self, cx: &mut Cx<'_>) -> Step {
        let now = cx.now();
        let window_end = match self.window_end {
            Some(w) => w,
            None => {
                self.timeline.push((now, self.layer.active_count()));
                self.next_sample = now;
                let w = now + self.window;
                self.window_end = Some(w);
                w
            }
        };
        if now >= self.next_sample {
            self.sample();
            self.next_sample = now + self.interval;
        }
        if now >= window_end {
            self.decide(now);
            self.window_end = Some(window_end + self.window);
        }
        Step::WaitUntil(self.next_sample.min(self.window_end.unwrap_or(u64::MAX)))
    }

    fn report(&self, out: &mut MetricsReport) {
        out.active_instance_timeline.extend_from_slice(&self.timeline);
        out.active_instance_timeline.sort_by_key(|&(t, _)| t);
    }

    fn name(&self) -> &'static str {
        "scaling-controller"
    }
}
