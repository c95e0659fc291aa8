//! Byte-transparent TCP forwarder for hosts between two sites.

use super::tcp::reject;
use super::TransportError;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

pub struct RelayHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl RelayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting new connections. Connections already open keep running
    /// until either side closes.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Serve until the process exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RelayHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Listen on `listen` and forward every accepted connection to `forward`.
/// When the downstream host is unreachable the upstream side receives a
/// rejection frame naming the cause.
pub fn relay(listen: impl ToSocketAddrs, forward: impl ToSocketAddrs) -> Result<RelayHandle, TransportError> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let forward: Vec<SocketAddr> = forward.to_socket_addrs()?.collect();
    if forward.is_empty() {
        return Err(TransportError::Config("forward address resolves to nothing".into()));
    }
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(up) = conn else { continue };
            let forward = forward.clone();
            std::thread::spawn(move || {
                let down = match TcpStream::connect(&forward[..]) {
                    Ok(d) => d,
                    Err(e) => {
                        reject(up, 0, &format!("relay cannot reach {}: {e}", forward[0]));
                        return;
                    }
                };
                let _ = up.set_nodelay(true);
                let _ = down.set_nodelay(true);
                pipe(up, down);
            });
        }
    });
    Ok(RelayHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn pipe(a: TcpStream, b: TcpStream) {
    let (Ok(a2), Ok(b2)) = (a.try_clone(), b.try_clone()) else { return };
    let t = std::thread::spawn(move || copy_then_close(a2, b2));
    copy_then_close(b, a);
    let _ = t.join();
}

fn copy_then_close(mut from: TcpStream, mut to: TcpStream) {
    let _ = std::io::copy(&mut from, &mut to);
    let _ = to.shutdown(Shutdown::Write);
}
