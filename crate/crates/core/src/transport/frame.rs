//! Wire framing for parallel-stream messages.
//!
//! Every stream of a message starts with a 22-byte little-endian header
//! followed by that stream's share of the payload. The payload is cut into
//! `send_chunk`-sized chunks dealt round-robin over the streams, so chunk
//! `c` travels on stream `c % streams`.

use super::TransportError;

pub const MAGIC: [u8; 4] = *b"SUWP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub version: u16,
    pub channel_id: u32,
    pub message_len: u64,
    pub stream_index: u16,
    /// Zero marks a rejection; the payload then carries the reason.
    pub stream_count: u16,
}

impl FrameHeader {
    pub fn new(channel_id: u32, message_len: u64, stream_index: u16, stream_count: u16) -> Self {
        Self {
            version: VERSION,
            channel_id,
            message_len,
            stream_index,
            stream_count,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..10].copy_from_slice(&self.channel_id.to_le_bytes());
        b[10..18].copy_from_slice(&self.message_len.to_le_bytes());
        b[18..20].copy_from_slice(&self.stream_index.to_le_bytes());
        b[20..22].copy_from_slice(&self.stream_count.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; HEADER_LEN]) -> Result<Self, TransportError> {
        if b[0..4] != MAGIC {
            return Err(TransportError::Protocol(format!("bad frame magic {:?}", &b[0..4])));
        }
        let h = Self {
            version: u16::from_le_bytes([b[4], b[5]]),
            channel_id: u32::from_le_bytes([b[6], b[7], b[8], b[9]]),
            message_len: u64::from_le_bytes(b[10..18].try_into().unwrap()),
            stream_index: u16::from_le_bytes([b[18], b[19]]),
            stream_count: u16::from_le_bytes([b[20], b[21]]),
        };
        if h.version != VERSION {
            return Err(TransportError::Protocol(format!("unsupported frame version {}", h.version)));
        }
        Ok(h)
    }

    pub fn is_rejection(&self) -> bool {
        self.stream_count == 0
    }
}

/// Bytes carried by stream `index` for a message of `len` bytes.
pub fn stream_share(len: u64, streams: u16, chunk: u64, index: u16) -> u64 {
    let s = streams as u64;
    let i = index as u64;
    let n_chunks = len.div_ceil(chunk);
    if i >= n_chunks {
        return 0;
    }
    let count = (n_chunks - i).div_ceil(s);
    let last = n_chunks - 1;
    let mut bytes = count * chunk;
    if last % s == i {
        bytes -= n_chunks * chunk - len;
    }
    bytes
}

/// Chunk ranges `(offset, length)` of the payload carried by stream `index`, in order.
pub fn stream_chunks(len: u64, streams: u16, chunk: u64, index: u16) -> impl Iterator<Item = (usize, usize)> {
    let n_chunks = len.div_ceil(chunk);
    (index as u64..n_chunks).step_by(streams as usize).map(move |c| {
        let off = c * chunk;
        (off as usize, (chunk.min(len - off)) as usize)
    })
}
