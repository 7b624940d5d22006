use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PollState {
    Active,
    /// Asleep, wake-up requested; becomes `Active` once the wake-up cost
    /// has elapsed.
    Waking,
    Asleep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollTransition {
    pub time_ns: u64,
    pub state: PollState,
    /// `last_submission_seen` at the moment of the transition.
    pub last_seen_ns: u64,
}

/// SQ-poll kernel thread of one instance: spins while submissions keep
/// arriving within `idle_timeout_ns`, sleeps otherwise. CPU time is
/// charged only while `Active`.
#[derive(Clone, Debug)]
pub struct PollThreadModel {
    state: PollState,
    last_submission_seen: u64,
    idle_timeout_ns: u64,
    wakeup_cost_ns: u64,
    busy_ns: u64,
    active_since: u64,
    transitions: Vec<PollTransition>,
}

impl PollThreadModel {
    /// A poll thread that starts `Active` at `now`.
    pub fn new(now: u64, idle_timeout_ns: u64, wakeup_cost_ns: u64) -> Self {
        PollThreadModel {
            state: PollState::Active,
            last_submission_seen: now,
            idle_timeout_ns,
            wakeup_cost_ns,
            busy_ns: 0,
            active_since: now,
            transitions: vec![PollTransition {
                time_ns: now,
                state: PollState::Active,
                last_seen_ns: now,
            }],
        }
    }

    pub fn state(&self) -> PollState {
        self.state
    }

    pub fn last_submission_seen(&self) -> u64 {
        self.last_submission_seen
    }

    pub fn idle_timeout_ns(&self) -> u64 {
        self.idle_timeout_ns
    }

    pub fn wakeup_cost_ns(&self) -> u64 {
        self.wakeup_cost_ns
    }

    /// Instant at which an `Active` thread will go to sleep if nothing new
    /// shows up.
    pub fn sleep_deadline(&self) -> u64 {
        self.last_submission_seen + self.idle_timeout_ns
    }

    /// Accumulated busy time up to `now`.
    pub fn busy_ns_at(&self, now: u64) -> u64 {
        match self.state {
            PollState::Active => self.busy_ns + now.saturating_sub(self.active_since),
            _ => self.busy_ns,
        }
    }

    pub fn transitions(&self) -> &[PollTransition] {
        &self.transitions
    }

    fn enter(&mut self, now: u64, state: PollState) {
        self.state = state;
        self.transitions.push(PollTransition {
            time_ns: now,
            state,
            last_seen_ns: self.last_submission_seen,
        });
    }

    /// Advances the model to `now`, having observed `submissions_seen` new
    /// SQ entries at that instant. Returns the resulting state; a `Waking`
    /// result means the caller must call [`Self::finish_wakeup`] after
    /// [`Self::wakeup_cost_ns`].
    pub fn tick(&mut self, now: u64, submissions_seen: usize) -> PollState {
        if self.state == PollState::Active && now > self.sleep_deadline() {
            self.fall_asleep();
        }
        if submissions_seen > 0 {
            match self.state {
                PollState::Active => self.last_submission_seen = now,
                PollState::Asleep => self.enter(now, PollState::Waking),
                PollState::Waking => {}
            }
        }
        self.state
    }

    /// Puts an `Active` thread to sleep at exactly its deadline.
    pub fn fall_asleep(&mut self) {
        debug_assert_eq!(self.state, PollState::Active);
        let at = self.sleep_deadline();
        self.busy_ns += at.saturating_sub(self.active_since);
        self.enter(at, PollState::Asleep);
    }

    /// Completes a wake-up started by [`Self::tick`].
    pub fn finish_wakeup(&mut self, now: u64) {
        debug_assert_eq!(self.state, PollState::Waking);
        self.active_since = now;
        self.last_submission_seen = now;
        self.enter(now, PollState::Active);
    }

    /// Marks work observed at `now` without a state change (e.g. a backlog
    /// the thread is still feeding to the device).
    pub fn note_activity(&mut self, now: u64) {
        if self.state == PollState::Active {
            self.last_submission_seen = self.last_submission_seen.max(now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000_000;

    #[test]
    fn sleeps_after_exactly_the_timeout() {
        let mut p = PollThreadModel::new(0, MS, 5_000);
        assert_eq!(p.tick(MS, 0), PollState::Active);
        assert_eq!(p.tick(2 * MS, 0), PollState::Asleep);
        let sleep = p.transitions().last().unwrap();
        assert_eq!(sleep.time_ns - sleep.last_seen_ns, MS);
        assert_eq!(p.busy_ns_at(2 * MS), MS);
    }

    #[test]
    fn submission_wakes_after_cost() {
        let mut p = PollThreadModel::new(0, MS, 5_000);
        p.tick(3 * MS, 0);
        assert_eq!(p.state(), PollState::Asleep);
        assert_eq!(p.tick(3 * MS, 1), PollState::Waking);
        p.finish_wakeup(3 * MS + p.wakeup_cost_ns());
        assert_eq!(p.state(), PollState::Active);
        assert_eq!(p.last_submission_seen(), 3 * MS + 5_000);
    }

    #[test]
    fn frequent_submissions_keep_it_busy() {
        let mut p = PollThreadModel::new(0, MS, 5_000);
        for i in 1..=100 {
            assert_eq!(p.tick(i * MS / 2, 1), PollState::Active);
        }
        assert_eq!(p.busy_ns_at(50 * MS), 50 * MS);
    }
}
