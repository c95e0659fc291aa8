//! Message channels between sites: a simulated wide-area link with virtual
//! time, and TCP with parallel streams, chunked I/O, pacing and relays.

pub mod frame;
pub mod netbench;
pub mod relay;
pub mod sim;
pub mod tcp;

pub use frame::{FrameHeader, HEADER_LEN};
pub use netbench::{echo_peer, netbench, NetbenchReport, NetbenchRow, NETBENCH_CSV_HEADER};
pub use relay::{relay, RelayHandle};
pub use sim::{sim_pair, sim_relay, SimChannel};
pub use tcp::{ChannelListener, TcpChannel};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid channel config: {0}")]
    Config(String),
    #[error("stream {stream}: connect failed: {source}")]
    Connect { stream: u16, source: std::io::Error },
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("connection refused by peer: {0}")]
    Rejected(String),
    #[error("stream {stream} dropped mid-message: {source}")]
    StreamDropped { stream: u16, source: std::io::Error },
    #[error("channel closed")]
    Closed,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Simulated,
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub backend: Backend,
    pub streams: u16,
    pub send_chunk: usize,
    pub recv_chunk: usize,
    /// Aggregate injection limit over all streams, bytes per second.
    pub pacing_rate: Option<f64>,
    /// Socket send and receive buffer size.
    pub buffer_size: Option<usize>,
    /// Round-trip latency of the simulated link, seconds.
    pub latency: f64,
    /// Bandwidth of the simulated link, bytes per second.
    pub bandwidth: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Tcp,
            streams: 1,
            send_chunk: 256 * 1024,
            recv_chunk: 256 * 1024,
            pacing_rate: None,
            buffer_size: None,
            latency: 0.0,
            bandwidth: f64::INFINITY,
        }
    }
}

impl ChannelConfig {
    pub fn simulated(latency: f64, bandwidth: f64) -> Self {
        Self {
            backend: Backend::Simulated,
            latency,
            bandwidth,
            ..Default::default()
        }
    }

    pub fn tcp(streams: u16, chunk: usize) -> Self {
        Self {
            streams,
            send_chunk: chunk,
            recv_chunk: chunk,
            ..Default::default()
        }
    }

    /// 64 streams, 8 kB chunks, 100 MB/s per stream.
    pub fn lightpath() -> Self {
        Self {
            pacing_rate: Some(64.0 * 100e6),
            ..Self::tcp(64, 8 * 1024)
        }
    }

    /// 16 streams, 256 kB chunks, unpaced.
    pub fn shared_wan() -> Self {
        Self::tcp(16, 256 * 1024)
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "lightpath" => Some(Self::lightpath()),
            "shared-wan" => Some(Self::shared_wan()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.streams == 0 {
            return Err(TransportError::Config("streams must be >= 1".into()));
        }
        if self.send_chunk == 0 || self.recv_chunk == 0 {
            return Err(TransportError::Config("chunk sizes must be >= 1 byte".into()));
        }
        if let Some(r) = self.pacing_rate {
            if !(r > 0.0) {
                return Err(TransportError::Config("pacing rate must be > 0".into()));
            }
        }
        if self.backend == Backend::Simulated {
            if !(self.latency >= 0.0) {
                return Err(TransportError::Config("latency must be >= 0".into()));
            }
            if !(self.bandwidth > 0.0) {
                return Err(TransportError::Config("bandwidth must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A bidirectional message channel. One sender and one receiver may use it
/// concurrently.
pub trait Channel: Send + Sync {
    fn send_message(&self, payload: &[u8]) -> Result<(), TransportError>;
    /// Send with an explicit aggregate pacing rate; `None` sends unpaced.
    fn send_paced(&self, payload: &[u8], rate: Option<f64>) -> Result<(), TransportError>;
    fn recv_message(&self) -> Result<Vec<u8>, TransportError>;
    /// Seconds on this endpoint's clock: virtual for simulated links, wall
    /// time since opening for TCP.
    fn now(&self) -> f64;
}

/// One-way delivery time of `bytes` on a simulated link: `λ/2 + bytes/σ`.
pub fn simulated_delivery_time(config: &ChannelConfig, bytes: u64) -> f64 {
    0.5 * config.latency + bytes as f64 / config.bandwidth
}

/// Open a channel. TCP connects to `endpoint` (`host:port`); the simulated
/// backend pairs the two callers that open the same endpoint name.
pub fn open_channel(config: &ChannelConfig, endpoint: &str) -> Result<Box<dyn Channel>, TransportError> {
    config.validate()?;
    match config.backend {
        Backend::Simulated => Ok(Box::new(sim::open_named(config, endpoint)?)),
        Backend::Tcp => Ok(Box::new(TcpChannel::connect(endpoint, config)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delivery_time_examples() {
        assert!((simulated_delivery_time(&ChannelConfig::simulated(0.3, 1e8), 0) - 0.15).abs() < 1e-15);
        assert!((simulated_delivery_time(&ChannelConfig::simulated(0.0, 5e7), 50_000_000) - 1.0).abs() < 1e-15);
        let t = simulated_delivery_time(&ChannelConfig::simulated(0.0, 5e7), 28_860_000);
        assert!((t - 0.5772).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = ChannelConfig::tcp(0, 1024);
        assert!(matches!(open_channel(&c, "127.0.0.1:1"), Err(TransportError::Config(_))));
        c.streams = 2;
        c.send_chunk = 0;
        assert!(c.validate().is_err());
        assert!(ChannelConfig::simulated(-1.0, 1.0).validate().is_err());
        assert!(ChannelConfig::simulated(0.1, 0.0).validate().is_err());
        ChannelConfig::simulated(0.1, 1e8).validate().unwrap();
    }

    #[test]
    fn profiles() {
        let l = ChannelConfig::profile("lightpath").unwrap();
        assert_eq!((l.streams, l.send_chunk), (64, 8192));
        assert_eq!(l.pacing_rate, Some(6.4e9));
        let s = ChannelConfig::profile("shared-wan").unwrap();
        assert_eq!((s.streams, s.send_chunk), (16, 262_144));
        assert!(ChannelConfig::profile("nope").is_none());
    }

    #[test]
    fn simulated_open_gives_deterministic_channel() {
        let cfg = ChannelConfig::simulated(0.1, 1e8);
        let a = open_channel(&cfg, "mod-test").unwrap();
        let b = open_channel(&cfg, "mod-test").unwrap();
        a.send_message(&[0u8; 100]).unwrap();
        b.recv_message().unwrap();
        assert!((b.now() - (0.05 + 1e-6)).abs() < 1e-15);
    }
}
