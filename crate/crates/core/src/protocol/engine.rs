use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::protocol::ProtocolError;
use crate::time::Micros;

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: Micros,
    pub seq: u64,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.time, self.0.seq) == (other.0.time, other.0.seq)
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.time, self.0.seq).cmp(&(other.0.time, other.0.seq))
    }
}

/// Single-threaded event queue executed in `(time, seq)` order.
pub struct Engine<P> {
    now: Micros,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    trace: Option<Vec<Event<P>>>,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine { now: Micros::ZERO, next_seq: 0, queue: BinaryHeap::new(), trace: None }
    }

    /// Keeps a copy of every executed event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: Micros, payload: P) -> Result<u64, ProtocolError> {
        if time < self.now {
            return Err(ProtocolError::SchedulingInPast { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(Event { time, seq, payload })));
        Ok(seq)
    }

    /// Executes every event with `time <= t_end`, then leaves the clock at
    /// `t_end`. The handler may schedule further events.
    pub fn run_until<E, F>(&mut self, t_end: Micros, mut handler: F) -> Result<(), E>
    where
        P: Clone,
        F: FnMut(&mut Self, Event<P>) -> Result<(), E>,
    {
        while self.queue.peek().is_some_and(|Reverse(Queued(e))| e.time <= t_end) {
            let Reverse(Queued(event)) = self.queue.pop().unwrap();
            self.now = event.time;
            if let Some(trace) = &mut self.trace {
                trace.push(event.clone());
            }
            handler(self, event)?;
        }
        self.now = self.now.max(t_end);
        Ok(())
    }

    pub fn trace(&self) -> &[Event<P>] {
        self.trace.as_deref().unwrap_or(&[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Res = Result<(), ProtocolError>;

    #[test]
    fn equal_times_run_in_insertion_order() {
        let mut e = Engine::new().with_trace();
        let t = Micros::from_ms_int(5);
        e.schedule(t, "a").unwrap();
        e.schedule(t, "b").unwrap();
        e.schedule(Micros::from_ms_int(1), "c").unwrap();
        e.run_until(t, |_, _| Res::Ok(())).unwrap();
        let order: Vec<_> = e.trace().iter().map(|ev| ev.payload).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn empty_queue_returns_at_end() {
        let mut e: Engine<()> = Engine::new();
        e.run_until(Micros::from_ms_int(100), |_, _| Res::Ok(())).unwrap();
        assert_eq!(e.now(), Micros::from_ms_int(100));
    }

    #[test]
    fn past_events_are_rejected() {
        let mut e: Engine<u8> = Engine::new();
        e.run_until(Micros::from_ms_int(10), |_, _| Res::Ok(())).unwrap();
        assert!(matches!(e.schedule(Micros::from_ms_int(9), 0), Err(ProtocolError::SchedulingInPast { .. })));
    }

    fn random_trace(seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Engine::new().with_trace();
        for i in 0..1000u32 {
            e.schedule(Micros(rng.gen_range(0..50_000)), i).unwrap();
        }
        // handlers spawn follow-ups so the queue is mutated mid-run
        e.run_until(Micros(100_000), |eng, ev| {
            if ev.payload % 7 == 0 {
                eng.schedule(ev.time + Micros(ev.payload as u64), ev.payload + 10_000)?;
            }
            Res::Ok(())
        })
        .unwrap();
        e.trace().iter().map(|ev| format!("{},{},{}\n", ev.time.0, ev.seq, ev.payload)).collect()
    }

    #[test]
    fn replay_is_identical() {
        let a = random_trace(42);
        assert_eq!(a, random_trace(42));
        assert_ne!(a, random_trace(43));
        let times: Vec<u64> = a.lines().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }
}
