//! Discrete-event kernel: the virtual clock and the ordered event queue.
//!
//! Events fire in `(due, seq)` order where `seq` is the insertion counter,
//! so two events due at the same instant fire in the order they were
//! scheduled. Cancellation is lazy: the payload is removed from the live
//! table and its heap entry is skipped when it surfaces.

use std::cmp::Reverse;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BinaryHeap, HashMap};
use std::hash::{Hash, Hasher};

use crate::error::SimError;
use crate::time::SimTime;

/// Handle returned by [`Scheduler::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// An event popped from the queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fired<E> {
    pub due: SimTime,
    pub seq: u64,
    pub payload: E,
}

/// Queue bookkeeping, used to check that no event is lost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueCounters {
    pub scheduled: u64,
    pub fired: u64,
    pub cancelled: u64,
}

#[derive(Debug)]
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    live: HashMap<u64, E>,
    counters: QueueCounters,
    trace: DefaultHasher,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashMap::new(),
            counters: QueueCounters::default(),
            trace: DefaultHasher::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Queue `payload` to fire at `due`. Scheduling in the past is a logic
    /// error and aborts the run.
    pub fn schedule(&mut self, due: SimTime, payload: E) -> Result<EventHandle, SimError> {
        if due < self.now {
            return Err(SimError::Invariant(format!(
                "event scheduled in the past: due {due}, clock {}",
                self.now
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((due, seq)));
        self.live.insert(seq, payload);
        self.counters.scheduled += 1;
        Ok(EventHandle(seq))
    }

    /// Remove a pending event. Returns `false` if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.live.remove(&handle.0).is_some() {
            self.counters.cancelled += 1;
            true
        } else {
            false
        }
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.live.contains_key(&handle.0)
    }

    /// Number of live (not fired, not cancelled) events.
    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn counters(&self) -> QueueCounters {
        self.counters
    }

    fn discard_cancelled(&mut self) {
        while let Some(Reverse((_, seq))) = self.heap.peek() {
            if self.live.contains_key(seq) {
                break;
            }
            self.heap.pop();
        }
    }

    /// Due time of the earliest live event.
    pub fn peek_due(&mut self) -> Option<SimTime> {
        self.discard_cancelled();
        self.heap.peek().map(|Reverse((due, _))| *due)
    }

    /// Pop the next event due at or before `t_end`, advancing the clock to
    /// its due time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Fired<E>>
    where
        E: Hash,
    {
        self.discard_cancelled();
        let Reverse((due, seq)) = *self.heap.peek()?;
        if due > t_end {
            return None;
        }
        self.heap.pop();
        let payload = self.live.remove(&seq).expect("heap entry without payload");
        self.now = due;
        self.counters.fired += 1;
        due.hash(&mut self.trace);
        seq.hash(&mut self.trace);
        payload.hash(&mut self.trace);
        Some(Fired { due, seq, payload })
    }

    /// Set the clock forward without firing anything. `t` must not be
    /// earlier than the current clock or any pending event.
    pub fn advance_to(&mut self, t: SimTime) {
        debug_assert!(t >= self.now);
        self.now = self.now.max(t);
    }

    /// Fire every event due at or before `t_end` in `(due, seq)` order, then
    /// park the clock at `t_end`. The handler may schedule further events.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<usize, SimError>
    where
        E: Hash,
        F: FnMut(&mut Self, Fired<E>) -> Result<(), SimError>,
    {
        if t_end < self.now {
            return Err(SimError::Invariant(format!(
                "run_until({t_end}) is earlier than the clock {}",
                self.now
            )));
        }
        let mut fired = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
            fired += 1;
        }
        self.now = t_end;
        Ok(fired)
    }

    /// Hash over every fired `(due, seq, payload)` so far.
    pub fn trace_hash(&self) -> u64 {
        self.trace.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(us: u64) -> SimTime {
        SimTime::from_us(us)
    }

    fn drain(s: &mut Scheduler<&'static str>, until: u64) -> Vec<(u64, &'static str)> {
        let mut out = Vec::new();
        s.run_until(t(until), |_, ev| {
            out.push((ev.due.as_us(), ev.payload));
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn pops_in_due_order() {
        let mut s = Scheduler::new();
        s.schedule(t(5), "five").unwrap();
        s.schedule(t(3), "three").unwrap();
        assert_eq!(drain(&mut s, 10), vec![(3, "three"), (5, "five")]);
    }

    #[test]
    fn equal_due_is_fifo() {
        let mut s = Scheduler::new();
        s.schedule(t(7), "a").unwrap();
        s.schedule(t(7), "b").unwrap();
        s.schedule(t(7), "c").unwrap();
        assert_eq!(drain(&mut s, 7), vec![(7, "a"), (7, "b"), (7, "c")]);
    }

    #[test]
    fn schedule_at_now_fires_before_clock_moves() {
        let mut s = Scheduler::new();
        s.schedule(t(4), "first").unwrap();
        let mut seen = Vec::new();
        s.run_until(t(10), |s, ev| {
            seen.push((ev.due.as_us(), ev.payload));
            if ev.payload == "first" {
                s.schedule(s.now(), "same-instant").unwrap();
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(4, "first"), (4, "same-instant")]);
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut s: Scheduler<&str> = Scheduler::new();
        s.run_until(t(10), |_, _| Ok(())).unwrap();
        assert!(s.schedule(t(9), "late").is_err());
    }

    #[test]
    fn cancel_semantics() {
        let mut s = Scheduler::new();
        let h = s.schedule(t(5), "x").unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        let h2 = s.schedule(t(6), "y").unwrap();
        assert_eq!(drain(&mut s, 10), vec![(6, "y")]);
        assert!(!s.cancel(h2));
    }

    #[test]
    fn run_until_leaves_later_events_queued() {
        let mut s = Scheduler::new();
        s.schedule(t(12), "later").unwrap();
        let n = s.run_until(t(10), |_, _| Ok(())).unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.now(), t(10));
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn run_until_fires_inclusive_bound() {
        let mut s = Scheduler::new();
        s.schedule(t(3), "a").unwrap();
        s.schedule(t(5), "b").unwrap();
        assert_eq!(s.run_until(t(5), |_, _| Ok(())).unwrap(), 2);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<&str> = Scheduler::new();
        assert_eq!(s.run_until(t(100), |_, _| Ok(())).unwrap(), 0);
        assert_eq!(s.now(), t(100));
    }

    #[test]
    fn counters_balance() {
        let mut s = Scheduler::new();
        let hs: Vec<_> = (0..10).map(|i| s.schedule(t(i * 2), "e").unwrap()).collect();
        s.cancel(hs[3]);
        s.cancel(hs[8]);
        s.run_until(t(9), |_, _| Ok(())).unwrap();
        let c = s.counters();
        assert_eq!(c.fired + c.cancelled + s.pending() as u64, c.scheduled);
    }
}
