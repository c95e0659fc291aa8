//! Parallel-stream TCP channels.
//!
//! Opening a channel connects `streams` sockets. Each sends a hello frame
//! whose payload is the sender's chunk size; the listener answers every
//! stream with an ack carrying its own chunk size, or with a rejection frame
//! (stream count 0) whose payload is the reason.

use super::frame::{stream_chunks, stream_share, FrameHeader, HEADER_LEN};
use super::{Channel, ChannelConfig, TransportError};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::{Duration, Instant};

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

pub struct TcpChannel {
    channel_id: u32,
    send_chunk: u64,
    recv_chunk: usize,
    /// Chunk size the peer sends with; needed to locate our share of each message.
    peer_chunk: u64,
    pacing: Option<f64>,
    writers: Mutex<Vec<TcpStream>>,
    readers: Mutex<Vec<TcpStream>>,
    opened: Instant,
}

fn tune(stream: &TcpStream, config: &ChannelConfig) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    if let Some(size) = config.buffer_size {
        let s = socket2::SockRef::from(stream);
        s.set_send_buffer_size(size)?;
        s.set_recv_buffer_size(size)?;
    }
    Ok(())
}

fn read_header(s: &mut TcpStream) -> std::io::Result<[u8; HEADER_LEN]> {
    let mut b = [0u8; HEADER_LEN];
    s.read_exact(&mut b)?;
    Ok(b)
}

/// Send a rejection frame with `reason` and close.
pub fn reject(mut s: TcpStream, channel_id: u32, reason: &str) {
    let h = FrameHeader::new(channel_id, reason.len() as u64, 0, 0);
    let _ = s.write_all(&h.encode());
    let _ = s.write_all(reason.as_bytes());
    let _ = s.shutdown(std::net::Shutdown::Both);
}

fn read_rejection(s: &mut TcpStream, h: &FrameHeader) -> String {
    let mut reason = vec![0u8; h.message_len.min(4096) as usize];
    let _ = s.read_exact(&mut reason);
    String::from_utf8_lossy(&reason).into_owned()
}

impl TcpChannel {
    /// Connect all streams to `addr` and complete the handshake.
    pub fn connect(addr: impl ToSocketAddrs, config: &ChannelConfig) -> Result<Self, TransportError> {
        config.validate()?;
        let addr: SocketAddr = addr
            .to_socket_addrs()
            .map_err(|e| TransportError::Config(format!("bad address: {e}")))?
            .next()
            .ok_or_else(|| TransportError::Config("address resolves to nothing".into()))?;
        let channel_id: u32 = rand::random::<u32>() | 1;
        let n = config.streams;
        let mut streams = Vec::with_capacity(n as usize);
        for i in 0..n {
            let connect_err = |source| TransportError::Connect { stream: i, source };
            let mut s = TcpStream::connect_timeout(&addr, HANDSHAKE_TIMEOUT).map_err(connect_err)?;
            tune(&s, config).map_err(connect_err)?;
            let hello = FrameHeader::new(channel_id, 8, i, n);
            s.write_all(&hello.encode()).map_err(connect_err)?;
            s.write_all(&(config.send_chunk as u64).to_le_bytes()).map_err(connect_err)?;
            streams.push(s);
        }
        let mut peer_chunk = None;
        for (i, s) in streams.iter_mut().enumerate() {
            s.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).ok();
            let h = read_header(s)
                .map_err(|e| TransportError::Handshake(format!("stream {i}: no ack: {e}")))
                .and_then(|b| FrameHeader::decode(&b))?;
            if h.is_rejection() {
                return Err(TransportError::Rejected(read_rejection(s, &h)));
            }
            if h.channel_id != channel_id || h.stream_index as usize != i || h.stream_count != n || h.message_len != 8 {
                return Err(TransportError::Handshake(format!("stream {i}: mismatched ack {h:?}")));
            }
            let mut c = [0u8; 8];
            s.read_exact(&mut c)
                .map_err(|e| TransportError::Handshake(format!("stream {i}: {e}")))?;
            peer_chunk = Some(u64::from_le_bytes(c));
            s.set_read_timeout(None).ok();
        }
        Self::from_streams(channel_id, streams, config, peer_chunk.unwrap_or(1))
    }

    fn from_streams(channel_id: u32, streams: Vec<TcpStream>, config: &ChannelConfig, peer_chunk: u64) -> Result<Self, TransportError> {
        if peer_chunk == 0 {
            return Err(TransportError::Handshake("peer announced zero chunk size".into()));
        }
        let readers = streams
            .iter()
            .map(|s| s.try_clone())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            channel_id,
            send_chunk: config.send_chunk as u64,
            recv_chunk: config.recv_chunk,
            peer_chunk,
            pacing: config.pacing_rate,
            writers: Mutex::new(streams),
            readers: Mutex::new(readers),
            opened: Instant::now(),
        })
    }

    pub fn stream_count(&self) -> usize {
        self.writers.lock().unwrap().len()
    }

    pub fn channel_id(&self) -> u32 {
        self.channel_id
    }
}

/// Releases bytes no faster than `rate` bytes per second, shared by all
/// streams of one message.
struct Pacer {
    rate: f64,
    state: Mutex<(Instant, u64)>,
}

impl Pacer {
    fn new(rate: f64) -> Self {
        Self {
            rate,
            state: Mutex::new((Instant::now(), 0)),
        }
    }

    fn acquire(&self, bytes: usize) {
        let due = {
            let mut g = self.state.lock().unwrap();
            g.1 += bytes as u64;
            g.0 + Duration::from_secs_f64(g.1 as f64 / self.rate)
        };
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

impl Channel for TcpChannel {
    fn send_message(&self, payload: &[u8]) -> Result<(), TransportError> {
        self.send_paced(payload, self.pacing)
    }

    fn send_paced(&self, payload: &[u8], rate: Option<f64>) -> Result<(), TransportError> {
        let mut writers = self.writers.lock().unwrap();
        let n = writers.len() as u16;
        let len = payload.len() as u64;
        let chunk = self.send_chunk;
        let pacer = rate.map(Pacer::new);
        let pacer = pacer.as_ref();
        let id = self.channel_id;
        let results: Vec<Result<(), TransportError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = writers
                .iter_mut()
                .enumerate()
                .map(|(i, s)| {
                    scope.spawn(move || -> Result<(), TransportError> {
                        let err = |source| TransportError::StreamDropped { stream: i as u16, source };
                        s.write_all(&FrameHeader::new(id, len, i as u16, n).encode()).map_err(err)?;
                        for (off, size) in stream_chunks(len, n, chunk, i as u16) {
                            if let Some(p) = pacer {
                                p.acquire(size);
                            }
                            s.write_all(&payload[off..off + size]).map_err(err)?;
                        }
                        s.flush().map_err(err)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("stream writer panicked")).collect()
        });
        results.into_iter().collect()
    }

    fn recv_message(&self) -> Result<Vec<u8>, TransportError> {
        let mut readers = self.readers.lock().unwrap();
        let n = readers.len() as u16;
        let recv_chunk = self.recv_chunk;
        let peer_chunk = self.peer_chunk;
        let id = self.channel_id;
        let parts: Vec<Result<(FrameHeader, Vec<u8>), TransportError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = readers
                .iter_mut()
                .enumerate()
                .map(|(i, s)| {
                    scope.spawn(move || {
                        let b = match read_header(s) {
                            Ok(b) => b,
                            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(TransportError::Closed),
                            Err(source) => return Err(TransportError::StreamDropped { stream: i as u16, source }),
                        };
                        let h = FrameHeader::decode(&b)?;
                        if h.channel_id != id || h.stream_index as usize != i || h.stream_count != n {
                            return Err(TransportError::Protocol(format!("stream {i}: unexpected header {h:?}")));
                        }
                        let share = stream_share(h.message_len, n, peer_chunk, i as u16) as usize;
                        let mut data = vec![0u8; share];
                        let mut got = 0;
                        while got < share {
                            let end = (got + recv_chunk).min(share);
                            s.read_exact(&mut data[got..end])
                                .map_err(|source| TransportError::StreamDropped { stream: i as u16, source })?;
                            got = end;
                        }
                        Ok((h, data))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("stream reader panicked")).collect()
        });
        let mut slices = Vec::with_capacity(parts.len());
        let mut len = None;
        for p in parts {
            let (h, data) = p?;
            if *len.get_or_insert(h.message_len) != h.message_len {
                return Err(TransportError::Protocol("streams disagree on message length".into()));
            }
            slices.push(data);
        }
        let len = len.unwrap_or(0);
        let mut out = vec![0u8; len as usize];
        for (i, data) in slices.iter().enumerate() {
            let mut at = 0;
            for (off, size) in stream_chunks(len, n, peer_chunk, i as u16) {
                out[off..off + size].copy_from_slice(&data[at..at + size]);
                at += size;
            }
        }
        Ok(out)
    }

    fn now(&self) -> f64 {
        self.opened.elapsed().as_secs_f64()
    }
}

/// Accepts parallel-stream channels.
pub struct ChannelListener {
    listener: TcpListener,
    config: ChannelConfig,
    pending: Mutex<HashMap<u32, (u64, Vec<Option<TcpStream>>)>>,
}

impl ChannelListener {
    pub fn bind(addr: impl ToSocketAddrs, config: &ChannelConfig) -> Result<Self, TransportError> {
        config.validate()?;
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            config: config.clone(),
            pending: Mutex::new(HashMap::new()),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    /// Block until every stream of one channel has connected.
    pub fn accept(&self) -> Result<TcpChannel, TransportError> {
        loop {
            let (mut s, _) = self.listener.accept()?;
            s.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).ok();
            let hello = match read_header(&mut s).map_err(TransportError::from).and_then(|b| FrameHeader::decode(&b)) {
                Ok(h) => h,
                Err(e) => {
                    reject(s, 0, &format!("bad hello: {e}"));
                    continue;
                }
            };
            if hello.is_rejection() || hello.message_len != 8 || hello.stream_index >= hello.stream_count {
                reject(s, hello.channel_id, "malformed hello");
                continue;
            }
            let mut c = [0u8; 8];
            if s.read_exact(&mut c).is_err() {
                continue;
            }
            let chunk = u64::from_le_bytes(c);
            if chunk == 0 {
                reject(s, hello.channel_id, "zero chunk size");
                continue;
            }
            s.set_read_timeout(None).ok();
            tune(&s, &self.config)?;
            let mut pending = self.pending.lock().unwrap();
            let entry = pending
                .entry(hello.channel_id)
                .or_insert_with(|| (chunk, (0..hello.stream_count).map(|_| None).collect()));
            if entry.1.len() != hello.stream_count as usize || entry.1[hello.stream_index as usize].is_some() {
                reject(s, hello.channel_id, "inconsistent stream numbering");
                continue;
            }
            entry.1[hello.stream_index as usize] = Some(s);
            if entry.1.iter().all(Option::is_some) {
                let (peer_chunk, slots) = pending.remove(&hello.channel_id).unwrap();
                let n = slots.len() as u16;
                let mut streams: Vec<TcpStream> = slots.into_iter().map(Option::unwrap).collect();
                for (i, s) in streams.iter_mut().enumerate() {
                    s.write_all(&FrameHeader::new(hello.channel_id, 8, i as u16, n).encode())?;
                    s.write_all(&(self.config.send_chunk as u64).to_le_bytes())?;
                }
                // the connecting side chooses the stream count
                return TcpChannel::from_streams(hello.channel_id, streams, &self.config, peer_chunk);
            }
        }
    }
}
