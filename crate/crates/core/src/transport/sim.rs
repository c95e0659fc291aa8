//! Simulated wide-area link with virtual time.
//!
//! A message sent at virtual time `t` occupies the sender for `bytes / σ`
//! and arrives at `t + λ/2 + bytes/σ`. The receiver's clock jumps to the
//! arrival time if it is behind.

use super::{Channel, ChannelConfig, TransportError};
use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, OnceLock};

#[derive(Default)]
struct Queue {
    state: Mutex<(VecDeque<(f64, Vec<u8>)>, bool)>,
    ready: Condvar,
}

impl Queue {
    fn push(&self, arrival: f64, payload: Vec<u8>) -> Result<(), TransportError> {
        let mut g = self.state.lock().unwrap();
        if g.1 {
            return Err(TransportError::Closed);
        }
        g.0.push_back((arrival, payload));
        self.ready.notify_all();
        Ok(())
    }

    fn pop(&self) -> Result<(f64, Vec<u8>), TransportError> {
        let mut g = self.state.lock().unwrap();
        loop {
            if let Some(m) = g.0.pop_front() {
                return Ok(m);
            }
            if g.1 {
                return Err(TransportError::Closed);
            }
            g = self.ready.wait(g).unwrap();
        }
    }

    fn close(&self) {
        self.state.lock().unwrap().1 = true;
        self.ready.notify_all();
    }
}

pub struct SimChannel {
    latency: f64,
    bandwidth: f64,
    pacing: Option<f64>,
    clock: Mutex<f64>,
    tx: Arc<Queue>,
    rx: Arc<Queue>,
}

/// Two connected endpoints sharing one link description.
pub fn sim_pair(config: &ChannelConfig) -> Result<(SimChannel, SimChannel), TransportError> {
    config.validate()?;
    let a = Arc::new(Queue::default());
    let b = Arc::new(Queue::default());
    let make = |tx: &Arc<Queue>, rx: &Arc<Queue>| SimChannel {
        latency: config.latency,
        bandwidth: config.bandwidth,
        pacing: config.pacing_rate,
        clock: Mutex::new(0.0),
        tx: tx.clone(),
        rx: rx.clone(),
    };
    Ok((make(&a, &b), make(&b, &a)))
}

fn rendezvous() -> &'static Mutex<HashMap<String, SimChannel>> {
    static HUB: OnceLock<Mutex<HashMap<String, SimChannel>>> = OnceLock::new();
    HUB.get_or_init(Default::default)
}

/// Open one end of a named in-process link. The first caller creates the
/// link and the second caller with the same name receives the other end.
pub fn open_named(config: &ChannelConfig, name: &str) -> Result<SimChannel, TransportError> {
    let mut hub = rendezvous().lock().unwrap();
    if let Some(peer_end) = hub.remove(name) {
        return Ok(peer_end);
    }
    let (a, b) = sim_pair(config)?;
    hub.insert(name.to_string(), b);
    Ok(a)
}

impl SimChannel {
    fn inject_time(&self, bytes: usize, rate: Option<f64>) -> f64 {
        let sigma = match rate {
            Some(r) => r.min(self.bandwidth),
            None => self.bandwidth,
        };
        bytes as f64 / sigma
    }

    pub fn set_clock(&self, t: f64) {
        *self.clock.lock().unwrap() = t;
    }

    /// Advance the clock by local work of `dt` seconds.
    pub fn advance(&self, dt: f64) {
        *self.clock.lock().unwrap() += dt;
    }

    pub fn close(&self) {
        self.tx.close();
    }
}

impl Channel for SimChannel {
    fn send_message(&self, payload: &[u8]) -> Result<(), TransportError> {
        self.send_paced(payload, self.pacing)
    }

    fn send_paced(&self, payload: &[u8], rate: Option<f64>) -> Result<(), TransportError> {
        let busy = self.inject_time(payload.len(), rate);
        let arrival = {
            let mut c = self.clock.lock().unwrap();
            let start = *c;
            *c += busy;
            start + 0.5 * self.latency + busy
        };
        self.tx.push(arrival, payload.to_vec())
    }

    fn recv_message(&self) -> Result<Vec<u8>, TransportError> {
        let (arrival, payload) = self.rx.pop()?;
        let mut c = self.clock.lock().unwrap();
        if arrival > *c {
            *c = arrival;
        }
        Ok(payload)
    }

    fn now(&self) -> f64 {
        *self.clock.lock().unwrap()
    }
}

impl Drop for SimChannel {
    fn drop(&mut self) {
        self.tx.close();
    }
}

/// Forward messages between two simulated links in both directions, one
/// thread per direction. Each hop adds its own link's delay.
pub fn sim_relay(upstream: SimChannel, downstream: SimChannel) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let up = &upstream;
        let down = &downstream;
        std::thread::scope(|s| {
            s.spawn(move || forward(up, down));
            s.spawn(move || forward(down, up));
        });
    })
}

fn forward(from: &SimChannel, to: &SimChannel) {
    while let Ok(msg) = from.recv_message() {
        to.set_clock(to.now().max(from.now()));
        if to.send_message(&msg).is_err() {
            break;
        }
    }
    to.close();
}
