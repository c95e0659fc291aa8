//! Latency and throughput measurement over any channel.
//!
//! The measuring side sends a message and waits for an empty reply from the
//! peer, which runs [`echo_peer`]. Round-trip time comes from empty pings;
//! throughput for a size is `size / (T - rtt)` with `T` the mean
//! send-to-reply time.

use super::{Channel, TransportError};

#[derive(Debug, Clone, PartialEq)]
pub struct NetbenchRow {
    pub size: u64,
    pub seconds: f64,
    pub bytes_per_second: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetbenchReport {
    pub rtt: f64,
    pub rows: Vec<NetbenchRow>,
}

pub const NETBENCH_CSV_HEADER: &str = "size,seconds,bytes_per_second";

impl NetbenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(NETBENCH_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.size, r.seconds, r.bytes_per_second));
        }
        s
    }
}

fn round_trip(channel: &dyn Channel, payload: &[u8]) -> Result<f64, TransportError> {
    let t0 = channel.now();
    channel.send_message(payload)?;
    let reply = channel.recv_message()?;
    if !reply.is_empty() {
        return Err(TransportError::Protocol("netbench peer replied with data".into()));
    }
    Ok(channel.now() - t0)
}

pub fn netbench(channel: &dyn Channel, sizes: &[u64], repetitions: usize) -> Result<NetbenchReport, TransportError> {
    let reps = repetitions.max(1);
    let mut rtt = f64::INFINITY;
    for _ in 0..reps {
        rtt = rtt.min(round_trip(channel, &[])?);
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let payload: Vec<u8> = (0..size).map(|i| (i % 251) as u8).collect();
        let mut total = 0.0;
        for _ in 0..reps {
            total += round_trip(channel, &payload)?;
        }
        let seconds = (total / reps as f64 - rtt).max(0.0);
        let bytes_per_second = if seconds > 0.0 { size as f64 / seconds } else { f64::INFINITY };
        rows.push(NetbenchRow { size, seconds, bytes_per_second });
    }
    Ok(NetbenchReport { rtt, rows })
}

/// Reply to every message with an empty one until the channel closes;
/// returns the number of messages answered.
pub fn echo_peer(channel: &dyn Channel) -> Result<u64, TransportError> {
    let mut n = 0;
    loop {
        match channel.recv_message() {
            Ok(_) => {
                channel.send_message(&[])?;
                n += 1;
            }
            Err(TransportError::Closed) => return Ok(n),
            Err(e) => return Err(e),
        }
    }
}
