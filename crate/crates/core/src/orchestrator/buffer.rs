//! Bounded trajectory buffer shared by all actors and learners.
//!
//! Every slice is delivered to every learner `reuse` times. An entry leaves
//! the buffer once all learners have used up their budget for it. Producers
//! block while the buffer is full, consumers block while nothing is available
//! to them, and `close` wakes both sides.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};


use crate::config::ReplayOrder;
use crate::error::{LbcError, Result};
use crate::offpolicy::TrajectorySlice;

#[derive(Debug)]
struct Entry {
    slice: Arc<TrajectorySlice>,
    remaining: Vec<u32>,
}

#[derive(Debug, Default)]
struct State {
    entries: VecDeque<Entry>,
    closed: bool,
    produced: u64,
    consumed: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub produced: u64,
    /// Slices handed out, per learner.
    pub consumed: Vec<u64>,
    /// Outstanding deliveries still owed to learners.
    pub pending: u64,
    pub occupancy: usize,
}

#[derive(Debug)]
pub struct TrajectoryBuffer {
    state: Mutex<State>,
    not_full: Condvar,
    not_empty: Condvar,
    capacity: usize,
    learners: usize,
    reuse: u32,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize, learners: usize, reuse: u32) -> Self {
        assert!(capacity >= 1 && learners >= 1 && reuse >= 1);
        TrajectoryBuffer {
            state: Mutex::new(State { consumed: vec![0; learners], ..Default::default() }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
            capacity,
            learners,
            reuse,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("buffer lock poisoned")
    }

    /// Blocks while full. Fails once the buffer is closed.
    pub fn push(&self, slice: TrajectorySlice) -> Result<()> {
        let mut st = self.lock();
        while st.entries.len() >= self.capacity && !st.closed {
            st = self.not_full.wait(st).expect("buffer lock poisoned");
        }
        if st.closed {
            return Err(LbcError::Closed);
        }
        self.insert(&mut st, slice);
        Ok(())
    }

    /// Non-blocking push; returns the slice back when full.
    pub fn try_push(&self, slice: TrajectorySlice) -> Result<Option<TrajectorySlice>> {
        let mut st = self.lock();
        if st.closed {
            return Err(LbcError::Closed);
        }
        if st.entries.len() >= self.capacity {
            return Ok(Some(slice));
        }
        self.insert(&mut st, slice);
        Ok(None)
    }

    fn insert(&self, st: &mut State, slice: TrajectorySlice) {
        st.entries.push_back(Entry { slice: Arc::new(slice), remaining: vec![self.reuse; self.learners] });
        st.produced += 1;
        self.not_empty.notify_all();
    }

    pub fn is_full(&self) -> bool {
        self.lock().entries.len() >= self.capacity
    }

    pub fn available(&self, learner: usize) -> usize {
        self.lock().entries.iter().filter(|e| e.remaining[learner] > 0).count()
    }

    /// Waits until `max` slices are available to `learner`, the buffer is full
    /// or it is closed, then takes up to `max` distinct slices. Returns `None`
    /// once closed with nothing left for this learner.
    pub fn take_batch<R: rand::Rng + ?Sized>(
        &self,
        learner: usize,
        max: usize,
        order: ReplayOrder,
        rng: &mut R,
    ) -> Option<Vec<Arc<TrajectorySlice>>> {
        let mut st = self.lock();
        loop {
            let avail = st.entries.iter().filter(|e| e.remaining[learner] > 0).count();
            let full = st.entries.len() >= self.capacity;
            if avail >= max || (avail > 0 && (full || st.closed)) {
                break;
            }
            if st.closed {
                return None;
            }
            st = self.not_empty.wait(st).expect("buffer lock poisoned");
        }
        Some(self.take_locked(&mut st, learner, max, order, rng))
    }

    /// Takes whatever is available without waiting.
    pub fn try_take_batch<R: rand::Rng + ?Sized>(
        &self,
        learner: usize,
        max: usize,
        order: ReplayOrder,
        rng: &mut R,
    ) -> Vec<Arc<TrajectorySlice>> {
        let mut st = self.lock();
        self.take_locked(&mut st, learner, max, order, rng)
    }

    fn take_locked<R: rand::Rng + ?Sized>(
        &self,
        st: &mut State,
        learner: usize,
        max: usize,
        order: ReplayOrder,
        rng: &mut R,
    ) -> Vec<Arc<TrajectorySlice>> {
        let mut candidates: Vec<usize> = (0..st.entries.len())
            .filter(|&i| st.entries[i].remaining[learner] > 0)
            .collect();
        if order == ReplayOrder::Random {
            // partial Fisher-Yates for a uniform subset, then restore FIFO order
            let take = max.min(candidates.len());
            for i in 0..take {
                let j = rng.random_range(i..candidates.len());
                candidates.swap(i, j);
            }
            candidates.truncate(take);
            candidates.sort_unstable();
        } else {
            candidates.truncate(max);
        }
        let mut out = Vec::with_capacity(candidates.len());
        for &i in &candidates {
            let e = &mut st.entries[i];
            e.remaining[learner] -= 1;
            out.push(Arc::clone(&e.slice));
        }
        st.consumed[learner] += out.len() as u64;
        let before = st.entries.len();
        st.entries.retain(|e| e.remaining.iter().any(|&r| r > 0));
        if st.entries.len() < before {
            self.not_full.notify_all();
        }
        out
    }

    pub fn close(&self) {
        let mut st = self.lock();
        st.closed = true;
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn stats(&self) -> BufferStats {
        let st = self.lock();
        BufferStats {
            produced: st.produced,
            consumed: st.consumed.clone(),
            pending: st.entries.iter().flat_map(|e| &e.remaining).map(|&r| r as u64).sum(),
            occupancy: st.entries.len(),
        }
    }
}
