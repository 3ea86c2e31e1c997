use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Duration;

use crate::model::Task;
use crate::storage::StorageError;

/// Something the dispatch loop must act on.
#[derive(Debug)]
pub enum Dispatch {
    Task(Task),
    /// A workload line that could not be parsed; later lines still run.
    BadLine(StorageError),
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Ordered {
    key: (u64, u64),
    // Tasks are compared by key only; `index` keeps the heap entries distinct.
    index: u64,
}

/// Streams a workload, releasing each task once the session clock reaches
/// `timestamp - read_ahead`. The source is read lazily and only as far as
/// the current read-ahead horizon.
pub struct DispatchQueue<I> {
    source: I,
    read_ahead: Duration,
    heap: BinaryHeap<Reverse<Ordered>>,
    held: Vec<Option<Task>>,
    lookahead: Option<Task>,
    exhausted: bool,
    peak: usize,
    released: u64,
    latest_end: u64,
}

impl<I> DispatchQueue<I>
where
    I: Iterator<Item = Result<Task, StorageError>>,
{
    pub fn new(source: I, read_ahead: Duration) -> Self {
        DispatchQueue {
            source,
            read_ahead,
            heap: BinaryHeap::new(),
            held: Vec::new(),
            lookahead: None,
            exhausted: false,
            peak: 0,
            released: 0,
            latest_end: 0,
        }
    }

    fn due(&self, task: &Task, elapsed: Duration) -> bool {
        Duration::from_secs(task.timestamp) <= elapsed + self.read_ahead
    }

    fn buffered(&self) -> usize {
        self.heap.len() + usize::from(self.lookahead.is_some())
    }

    fn hold(&mut self, task: Task) {
        let index = self.held.len() as u64;
        self.heap.push(Reverse(Ordered {
            key: task.dispatch_key(),
            index,
        }));
        self.held.push(Some(task));
    }

    /// Everything due at session time `elapsed`, in dispatch order.
    pub fn poll(&mut self, elapsed: Duration) -> Vec<Dispatch> {
        let mut out = Vec::new();
        if let Some(task) = self.lookahead.take() {
            if self.due(&task, elapsed) {
                self.hold(task);
            } else {
                self.lookahead = Some(task);
            }
        }
        while self.lookahead.is_none() && !self.exhausted {
            match self.source.next() {
                None => self.exhausted = true,
                Some(Err(e)) => out.push(Dispatch::BadLine(e)),
                Some(Ok(task)) => {
                    if self.due(&task, elapsed) {
                        self.hold(task);
                    } else {
                        self.lookahead = Some(task);
                    }
                }
            }
            self.peak = self.peak.max(self.buffered());
        }
        self.peak = self.peak.max(self.buffered());
        while let Some(Reverse(entry)) = self.heap.pop() {
            let task = self.held[entry.index as usize]
                .take()
                .expect("each entry is released once");
            self.released += 1;
            self.latest_end = self.latest_end.max(task.timestamp + task.duration);
            out.push(Dispatch::Task(task));
        }
        self.held.clear();
        out
    }

    /// True once every task has been read and released.
    pub fn finished(&self) -> bool {
        self.exhausted && self.lookahead.is_none() && self.heap.is_empty()
    }

    /// Largest number of tasks held in memory at once.
    pub fn peak_buffered(&self) -> usize {
        self.peak
    }

    pub fn released(&self) -> u64 {
        self.released
    }

    /// Latest `timestamp + duration` among released tasks.
    pub fn latest_end(&self) -> u64 {
        self.latest_end
    }
}
