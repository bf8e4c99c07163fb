use crate::engine::SimTime;
use crate::forwarding::Scheme;
use crate::DeviceId;

/// Most messages a single data packet may carry.
pub const BUNDLE_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(pub u64);

/// One application datum as it travels towards the server.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub id: MessageId,
    pub origin: DeviceId,
    pub created_at: SimTime,
    pub size_bytes: u16,
    /// Devices that have held the message, starting with the origin.
    pub hop_trail: Vec<DeviceId>,
    pub previous_hop: Option<DeviceId>,
}

impl Message {
    pub fn new(id: MessageId, origin: DeviceId, created_at: SimTime, size_bytes: u16) -> Self {
        Message {
            id,
            origin,
            created_at,
            size_bytes,
            hop_trail: vec![origin],
            previous_hop: None,
        }
    }

    /// Record the hand-over from `from` to `to`.
    pub fn relay(&mut self, from: DeviceId, to: DeviceId) {
        debug_assert_eq!(self.hop_trail.last(), Some(&from));
        debug_assert_ne!(from, to);
        self.hop_trail.push(to);
        self.previous_hop = Some(from);
    }

    /// Whether this message may be handed to `next_hop` without looping.
    pub fn may_visit(&self, next_hop: DeviceId) -> bool {
        self.previous_hop != Some(next_hop) && !self.hop_trail.contains(&next_hop)
    }
}

/// Over-the-air frame: header plus a bundle of messages.
///
/// Header layout for size accounting: sender id (4), scheme tag (1),
/// RCA-ETX in milliseconds as u32 (4), queue length as u16 (2, backpressure
/// only), message count (1).
#[derive(Clone, Debug, PartialEq)]
pub struct DataPacket {
    pub sender: DeviceId,
    /// Relay frames name their receiver; uplinks are addressed to any gateway.
    pub addressee: Option<DeviceId>,
    pub scheme: Scheme,
    pub messages: Vec<Message>,
    pub header_rca_etx_ms: u32,
    pub header_queue_len: Option<u16>,
    pub sent_at: SimTime,
}

impl DataPacket {
    pub fn header_bytes(scheme: Scheme) -> usize {
        4 + 1 + 4 + if scheme == Scheme::Robc { 2 } else { 0 } + 1
    }

    pub fn size_for(scheme: Scheme, message_count: usize, message_bytes: usize) -> usize {
        Self::header_bytes(scheme) + message_count * message_bytes
    }

    pub fn serialized_size(&self) -> usize {
        Self::header_bytes(self.scheme) + self.messages.iter().map(|m| m.size_bytes as usize).sum::<usize>()
    }

    pub fn size_bits(&self) -> f64 {
        (self.serialized_size() * 8) as f64
    }

    pub fn encode_metric(seconds: f64) -> u32 {
        let ms = (seconds * 1000.0).round();
        if ms >= u32::MAX as f64 {
            u32::MAX
        } else if ms > 0.0 {
            ms as u32
        } else {
            0
        }
    }

    pub fn header_rca_etx_s(&self) -> f64 {
        self.header_rca_etx_ms as f64 / 1000.0
    }

    pub fn encode_queue_len(len: usize) -> u16 {
        len.min(u16::MAX as usize) as u16
    }
}
