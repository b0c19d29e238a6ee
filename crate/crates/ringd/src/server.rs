//! TCP front end of a [`Bus`].
//!
//! One reader thread per connection handles requests in order; a writer
//! thread drains the connection's event queue. Responses and events share
//! the socket through a mutex, and a `MON` reply is written while holding
//! it so the `OK` always precedes the initial event.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crossbeam_channel::{unbounded, Receiver};
use log::{debug, info, warn};
use ringd_core::TimedValue;

use crate::bus::{Bus, Event, MonitorGuard, Overflow};
use crate::error::BusError;
use crate::wire::{Frame, Request};

/// Events queued for one client beyond which it is disconnected.
pub const MAX_QUEUED_EVENTS: usize = 10_000;
const MAX_LINE: usize = 1 << 20;

/// A running listener; stops accepting when dropped or shut down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_listener();
    }

    /// Blocks until the listener exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_listener(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_listener();
        }
    }
}

pub fn serve(bus: Bus, addr: &str) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::Builder::new().name("bus-listener".into()).spawn(move || {
        info!("bus listening on {local}");
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let bus = bus.clone();
                    let _ = thread::Builder::new().name("bus-conn".into()).spawn(move || {
                        let peer = stream.peer_addr().ok();
                        if let Err(e) = handle_connection(bus, stream) {
                            debug!("connection {peer:?} ended: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    })?;
    Ok(ServerHandle { addr: local, stop, thread: Some(thread) })
}

type Writer = Arc<Mutex<BufWriter<TcpStream>>>;

fn write_line(w: &mut BufWriter<TcpStream>, line: &str) -> io::Result<()> {
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")
}

fn respond(w: &Writer, lines: &[String]) -> io::Result<()> {
    let mut w = w.lock().unwrap_or_else(|e| e.into_inner());
    for l in lines {
        write_line(&mut w, l)?;
    }
    w.flush()
}

fn handle_connection(bus: Bus, stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let writer: Writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    let (tx, rx) = unbounded::<Event>();
    let events = spawn_event_writer(writer.clone(), rx)?;

    let killer = stream.try_clone()?;
    let overflow = Overflow {
        limit: MAX_QUEUED_EVENTS,
        on_overflow: Arc::new(move || {
            warn!("client too slow, disconnecting");
            let _ = killer.shutdown(Shutdown::Both);
        }),
    };

    let mut monitors: HashMap<String, MonitorGuard> = HashMap::new();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut buf = Vec::new();
    let result = loop {
        buf.clear();
        let n = match (&mut reader).take(MAX_LINE as u64).read_until(b'\n', &mut buf) {
            Ok(n) => n,
            Err(e) => break Err(e),
        };
        if n == 0 {
            break Ok(());
        }
        if buf.last() != Some(&b'\n') && n == MAX_LINE {
            // drain the rest of an oversized line before answering
            let mut rest = Vec::new();
            if reader.read_until(b'\n', &mut rest).is_err() {
                break Ok(());
            }
            respond(&writer, &[err_frame(None, "line-too-long")])?;
            continue;
        }
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s.trim_end_matches(['\r', '\n']),
            Err(_) => {
                respond(&writer, &[err_frame(None, "bad-encoding")])?;
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let req = match Request::parse(line) {
            Ok(r) => r,
            Err(e) => {
                respond(&writer, &[err_frame(None, e.reason())])?;
                continue;
            }
        };
        match req {
            Request::Mon(name) => {
                let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
                let reply = if monitors.contains_key(&name) {
                    Err(BusError::AlreadyMonitored(name.clone()))
                } else {
                    bus.monitor_into(&[&name], tx.clone(), Some(overflow.clone()))
                };
                let line = match reply {
                    Ok(guard) => {
                        monitors.insert(name, guard);
                        Frame::Ok.encode()
                    }
                    Err(e) => err_frame(Some(&name), e.reason()),
                };
                write_line(&mut w, &line)?;
                w.flush()?;
            }
            Request::Unmon(name) => {
                let line = match monitors.remove(&name) {
                    Some(_) => Frame::Ok.encode(),
                    None => err_frame(Some(&name), "not-monitored"),
                };
                respond(&writer, &[line])?;
            }
            other => respond(&writer, &execute(&bus, other))?,
        }
    };
    drop(monitors);
    drop(tx);
    let _ = stream.shutdown(Shutdown::Both);
    let _ = events.join();
    result
}

fn spawn_event_writer(writer: Writer, rx: Receiver<Event>) -> io::Result<JoinHandle<()>> {
    thread::Builder::new().name("bus-events".into()).spawn(move || {
        while let Ok(ev) = rx.recv() {
            let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
            let mut ok = write_event(&mut w, ev).is_ok();
            // batch whatever is already queued into one flush
            while ok {
                match rx.try_recv() {
                    Ok(ev) => ok = write_event(&mut w, ev).is_ok(),
                    Err(_) => break,
                }
            }
            if !ok || w.flush().is_err() {
                break;
            }
        }
    })
}

fn write_event(w: &mut BufWriter<TcpStream>, ev: Event) -> io::Result<()> {
    write_line(w, &Frame::Ev { name: ev.name.as_str().to_owned(), value: ev.value }.encode())
}

fn err_frame(name: Option<&str>, reason: &str) -> String {
    Frame::Err { name: name.map(str::to_owned), reason: reason.to_owned() }.encode()
}

/// Runs a request that does not touch the connection's monitors.
fn execute(bus: &Bus, req: Request) -> Vec<String> {
    let fail = |name: &str, e: BusError| vec![err_frame(Some(name), e.reason())];
    match req {
        Request::Get(name) => match bus.get(&name) {
            Ok(value) => vec![Frame::Val { name, value }.encode()],
            Err(e) => fail(&name, e),
        },
        Request::Put { name, raw } => match bus.put_text(&name, &raw) {
            Ok(()) => vec![Frame::Ok.encode()],
            Err(e) => fail(&name, e),
        },
        Request::Pub { name, stamp, raw } => {
            let r = bus.meta(&name).and_then(|meta| {
                let value = meta.kind.parse(&raw).map_err(|e| BusError::shape(&name, e))?;
                let (timestamp, status) = stamp.unwrap_or((bus.now(), Default::default()));
                bus.publish(&name, TimedValue { value, timestamp, status })
            });
            match r {
                Ok(()) => vec![Frame::Ok.encode()],
                Err(e) => fail(&name, e),
            }
        }
        Request::List(pattern) => match bus.list(pattern.as_deref()) {
            Ok(names) => {
                let mut out = Vec::with_capacity(names.len() + 1);
                out.push(Frame::Channels(names.len()).encode());
                out.extend(names);
                out
            }
            Err(e) => vec![err_frame(None, e.reason())],
        },
        Request::Mon(_) | Request::Unmon(_) => unreachable!("handled by the connection"),
    }
}
