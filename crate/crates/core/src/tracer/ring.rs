use super::TraceEvent;

/// Fixed-capacity overwrite-oldest buffer.
pub(super) struct Ring {
    slots: Vec<TraceEvent>,
    capacity: usize,
    head: usize,
    overflow: u64,
}

impl Ring {
    pub(super) fn new(capacity: usize) -> Ring {
        Ring {
            slots: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            head: 0,
            overflow: 0,
        }
    }

    #[inline]
    pub(super) fn push(&mut self, event: TraceEvent) {
        if self.slots.len() < self.capacity {
            self.slots.push(event);
        } else {
            self.slots[self.head] = event;
            self.head = (self.head + 1) % self.capacity;
            self.overflow += 1;
        }
    }

    pub(super) fn overflow(&self) -> u64 {
        self.overflow
    }

    /// Events oldest first.
    pub(super) fn drain(&mut self) -> Vec<TraceEvent> {
        let mut out = Vec::with_capacity(self.slots.len());
        out.extend_from_slice(&self.slots[self.head..]);
        out.extend_from_slice(&self.slots[..self.head]);
        self.slots.clear();
        self.head = 0;
        out
    }
}
