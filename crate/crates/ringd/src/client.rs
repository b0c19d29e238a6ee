//! Bus client over TCP.
//!
//! The protocol has no request ids, so requests on one connection are
//! serialized: a caller holds the request lock until its answer arrives.
//! A reader thread routes `EV` frames to subscriptions and everything else
//! to the waiting caller.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use ringd_core::{ChannelName, TimedValue, Value};

use crate::bus::{BusAccess, BusResult, Event, MonitorGuard, Subscription};
use crate::error::BusError;
use crate::wire::{Frame, Request};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

enum Reply {
    Val(TimedValue),
    Ok,
    Err(Option<String>, String),
    Channels(Vec<String>),
}

type Routes = Arc<Mutex<HashMap<String, Sender<Event>>>>;

struct Conn {
    stream: TcpStream,
    requests: Mutex<(TcpStream, Receiver<Reply>)>,
    routes: Routes,
    alive: Arc<AtomicBool>,
    timeout: Duration,
}

impl Drop for Conn {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// A connection to a remote bus. Clones share the connection.
#[derive(Clone)]
pub struct RemoteBus {
    conn: Arc<Conn>,
}

impl RemoteBus {
    pub fn connect(addr: impl ToSocketAddrs) -> BusResult<Self> {
        Self::connect_with_timeout(addr, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(addr: impl ToSocketAddrs, timeout: Duration) -> BusResult<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let (reply_tx, reply_rx) = bounded(16);
        let routes: Routes = Arc::default();
        let alive = Arc::new(AtomicBool::new(true));
        {
            let reader = BufReader::new(stream.try_clone()?);
            let (routes, alive) = (routes.clone(), alive.clone());
            thread::Builder::new()
                .name("bus-client".into())
                .spawn(move || read_loop(reader, reply_tx, &routes, &alive))?;
        }
        let conn = Conn {
            requests: Mutex::new((stream.try_clone()?, reply_rx)),
            stream,
            routes,
            alive,
            timeout,
        };
        Ok(Self { conn: Arc::new(conn) })
    }

    pub fn is_alive(&self) -> bool {
        self.conn.alive.load(Ordering::SeqCst)
    }

    fn request(&self, req: &Request) -> BusResult<Reply> {
        request_on(&self.conn, req)
    }

    fn expect_ok(&self, req: &Request) -> BusResult<()> {
        match self.request(req)? {
            Reply::Ok => Ok(()),
            Reply::Err(name, reason) => Err(BusError::from_reason(name.as_deref(), &reason)),
            _ => Err(BusError::BadRequest("unexpected reply".into())),
        }
    }
}

fn request_on(conn: &Conn, req: &Request) -> BusResult<Reply> {
    if !conn.alive.load(Ordering::SeqCst) {
        return Err(BusError::Disconnected);
    }
    let mut guard = conn.requests.lock().unwrap_or_else(|e| e.into_inner());
    let (stream, replies) = &mut *guard;
    let mut line = req.encode();
    line.push('\n');
    if stream.write_all(line.as_bytes()).is_err() {
        return Err(BusError::Disconnected);
    }
    match replies.recv_timeout(conn.timeout) {
        Ok(r) => Ok(r),
        Err(RecvTimeoutError::Disconnected) => Err(BusError::Disconnected),
        Err(RecvTimeoutError::Timeout) => {
            // the stream is out of step now; give up on it
            conn.alive.store(false, Ordering::SeqCst);
            let _ = conn.stream.shutdown(Shutdown::Both);
            Err(BusError::Timeout)
        }
    }
}

fn read_loop(mut reader: BufReader<TcpStream>, replies: Sender<Reply>, routes: &Routes, alive: &AtomicBool) {
    let mut line = String::new();
    let mut next = |line: &mut String| -> io::Result<bool> {
        line.clear();
        Ok(reader.read_line(line)? > 0)
    };
    while let Ok(true) = next(&mut line) {
        let frame = match Frame::parse(&line) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("ignoring frame: {e}");
                continue;
            }
        };
        let reply = match frame {
            Frame::Ev { name, value } => {
                let routes = routes.lock().unwrap_or_else(|e| e.into_inner());
                if let (Some(tx), Ok(name)) = (routes.get(&name), ChannelName::new(&name)) {
                    let _ = tx.send(Event { name, value });
                }
                continue;
            }
            Frame::Val { value, .. } => Reply::Val(value),
            Frame::Ok => Reply::Ok,
            Frame::Err { name, reason } => Reply::Err(name, reason),
            Frame::Channels(n) => {
                let mut names = Vec::with_capacity(n);
                for _ in 0..n {
                    match next(&mut line) {
                        Ok(true) => names.push(line.trim_end().to_owned()),
                        _ => break,
                    }
                }
                Reply::Channels(names)
            }
        };
        if replies.send(reply).is_err() {
            break;
        }
    }
    alive.store(false, Ordering::SeqCst);
    // closing the queues tells every subscriber the connection is gone
    routes.lock().unwrap_or_else(|e| e.into_inner()).clear();
}

impl BusAccess for RemoteBus {
    fn get(&self, name: &str) -> BusResult<TimedValue> {
        match self.request(&Request::Get(name.to_owned()))? {
            Reply::Val(v) => Ok(v),
            Reply::Err(n, reason) => Err(BusError::from_reason(n.as_deref(), &reason)),
            _ => Err(BusError::BadRequest("unexpected reply".into())),
        }
    }

    fn put(&self, name: &str, value: Value) -> BusResult<()> {
        value.validate().map_err(|e| BusError::shape(name, e))?;
        self.put_text(name, &value.encode())
    }

    fn put_text(&self, name: &str, raw: &str) -> BusResult<()> {
        check_line(name, raw)?;
        self.expect_ok(&Request::Put { name: name.to_owned(), raw: raw.to_owned() })
    }

    fn publish(&self, name: &str, value: TimedValue) -> BusResult<()> {
        value.value.validate().map_err(|e| BusError::shape(name, e))?;
        let raw = value.value.encode();
        check_line(name, &raw)?;
        self.expect_ok(&Request::Pub { name: name.to_owned(), stamp: Some((value.timestamp, value.status)), raw })
    }

    fn monitor_many(&self, names: &[&str]) -> BusResult<Subscription> {
        let (tx, rx) = unbounded();
        {
            let mut routes = self.conn.routes.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(dup) = names.iter().find(|n| routes.contains_key(**n)) {
                return Err(BusError::AlreadyMonitored((*dup).to_owned()));
            }
            for n in names {
                routes.insert((*n).to_owned(), tx.clone());
            }
        }
        drop(tx);
        let mut started: Vec<String> = Vec::new();
        let unroute = |conn: &Conn, names: &[&str]| {
            let mut routes = conn.routes.lock().unwrap_or_else(|e| e.into_inner());
            for n in names {
                routes.remove(*n);
            }
        };
        for n in names {
            if let Err(e) = self.expect_ok(&Request::Mon((*n).to_owned())) {
                for s in &started {
                    let _ = request_on(&self.conn, &Request::Unmon(s.clone()));
                }
                unroute(&self.conn, names);
                return Err(e);
            }
            started.push((*n).to_owned());
        }
        let conn = self.conn.clone();
        let guard = MonitorGuard::new(move || {
            let names: Vec<&str> = started.iter().map(String::as_str).collect();
            unroute(&conn, &names);
            for n in &started {
                let _ = request_on(&conn, &Request::Unmon(n.clone()));
            }
        });
        Ok(Subscription::new(rx, guard))
    }

    fn list(&self, pattern: Option<&str>) -> BusResult<Vec<String>> {
        match self.request(&Request::List(pattern.map(str::to_owned)))? {
            Reply::Channels(names) => Ok(names),
            Reply::Err(n, reason) => Err(BusError::from_reason(n.as_deref(), &reason)),
            _ => Err(BusError::BadRequest("unexpected reply".into())),
        }
    }
}

fn check_line(name: &str, raw: &str) -> BusResult<()> {
    if name.contains([' ', '\n', '\r']) {
        return Err(BusError::BadName(name.to_owned()));
    }
    if raw.contains(['\n', '\r']) {
        return Err(BusError::ShapeMismatch { name: name.to_owned(), detail: "line break in value".into() });
    }
    Ok(())
}
