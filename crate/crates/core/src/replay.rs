//! Fixed-capacity FIFO replay memory with uniform sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    /// Slot the next push overwrites once the buffer is full.
    head: usize,
    pushed: u64,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(RingBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
            pushed: 0,
        })
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes since construction, including evicted items.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    pub fn newest(&self) -> Option<&T> {
        if self.items.is_empty() {
            None
        } else if self.items.len() < self.capacity {
            self.items.last()
        } else {
            Some(&self.items[(self.head + self.capacity - 1) % self.capacity])
        }
    }

    /// `n` independent uniform draws (with replacement) over filled slots.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&T>> {
        if self.items.is_empty() {
            return Err(Error::config("cannot sample from an empty buffer"));
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}
