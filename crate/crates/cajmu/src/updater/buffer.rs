use std::rc::Rc;

use crate::tensor::TensorData;
use crate::tracker::BBox;

#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub feature: Rc<TensorData>,
    pub bbox: BBox,
    pub confidence: f64,
}

/// FIFO online sample buffer: bounded capacity, oldest-first eviction,
/// inserts gated by a confidence threshold.
#[derive(Debug, Clone)]
pub struct SampleBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        SampleBuffer {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Insert if the confidence clears the threshold, evicting the oldest
    /// entry at capacity. Returns whether the sample was accepted.
    pub fn insert(
        &mut self,
        feature: Rc<TensorData>,
        bbox: BBox,
        confidence: f64,
        threshold: f64,
    ) -> bool {
        if !confidence.is_finite() || confidence < threshold {
            return false;
        }
        if self.entries.len() == self.capacity {
            self.entries.remove(0);
        }
        self.entries.push(BufferEntry {
            feature,
            bbox,
            confidence,
        });
        true
    }
}
