use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::forwarding::message::{Message, MessageId};
use crate::DeviceId;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("message {0:?} is not in the queue")]
    NotQueued(MessageId),
}

/// FIFO data buffer of one device, bounded by `q_max` messages.
#[derive(Clone, Debug)]
pub struct DeviceQueue {
    entries: VecDeque<Message>,
    q_max: usize,
    dropped: u64,
}

/// Result of one queue update.
#[derive(Debug, Default, PartialEq)]
pub struct QueueUpdate {
    pub removed: Vec<Message>,
    /// Relayed messages that did not fit; they stay with the sender.
    pub refused: Vec<Message>,
    pub dropped_generated: usize,
}

impl DeviceQueue {
    pub fn new(q_max: usize) -> Self {
        DeviceQueue {
            entries: VecDeque::new(),
            q_max,
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.q_max
    }

    pub fn free(&self) -> usize {
        self.q_max - self.entries.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn iter(&self) -> impl Iterator<Item = &Message> {
        self.entries.iter()
    }

    /// Append a locally generated message; a full queue drops it.
    pub fn push_generated(&mut self, msg: Message) -> bool {
        if self.entries.len() >= self.q_max {
            self.dropped += 1;
            false
        } else {
            self.entries.push_back(msg);
            true
        }
    }

    /// Append relayed messages up to the free space. When not all fit, the
    /// oldest of the batch are refused and handed back.
    pub fn accept_relayed(&mut self, mut batch: Vec<Message>) -> Vec<Message> {
        let free = self.free();
        let refused = if batch.len() > free {
            let keep = batch.split_off(batch.len() - free);
            std::mem::replace(&mut batch, keep)
        } else {
            Vec::new()
        };
        self.entries.extend(batch);
        refused
    }

    /// Ids of the oldest `n` messages that may be handed to `next_hop`
    /// (all messages when `next_hop` is `None`).
    pub fn oldest(&self, n: usize, next_hop: Option<DeviceId>) -> Vec<MessageId> {
        self.entries
            .iter()
            .filter(|m| next_hop.is_none_or(|h| m.may_visit(h)))
            .take(n)
            .map(|m| m.id)
            .collect()
    }

    pub fn eligible_count(&self, next_hop: DeviceId) -> usize {
        self.entries.iter().filter(|m| m.may_visit(next_hop)).count()
    }

    pub fn get(&self, id: MessageId) -> Option<&Message> {
        self.entries.iter().find(|m| m.id == id)
    }

    /// Remove the given messages, preserving their queue order. Ids not
    /// present are skipped.
    pub fn remove_present(&mut self, ids: &[MessageId]) -> Vec<Message> {
        let wanted: HashSet<MessageId> = ids.iter().copied().collect();
        let mut out = Vec::with_capacity(ids.len());
        let mut keep = VecDeque::with_capacity(self.entries.len());
        for m in self.entries.drain(..) {
            if wanted.contains(&m.id) {
                out.push(m);
            } else {
                keep.push_back(m);
            }
        }
        self.entries = keep;
        out
    }

    /// Apply one interval's flows: outgoing messages leave, generated
    /// messages join, then relayed-in messages join as space allows.
    pub fn update(
        &mut self,
        generated: Vec<Message>,
        incoming: Vec<Message>,
        outgoing: &[MessageId],
    ) -> Result<QueueUpdate, QueueError> {
        if let Some(missing) = outgoing.iter().find(|id| self.get(**id).is_none()) {
            return Err(QueueError::NotQueued(*missing));
        }
        let removed = self.remove_present(outgoing);
        let before = self.dropped;
        for m in generated {
            self.push_generated(m);
        }
        let refused = self.accept_relayed(incoming);
        Ok(QueueUpdate {
            removed,
            refused,
            dropped_generated: (self.dropped - before) as usize,
        })
    }
}
