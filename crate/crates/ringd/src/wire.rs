//! Line protocol spoken between bus clients and the bus server.
//!
//! ```text
//! client: GET <name> | PUT <name> <value...> | MON <name> | UNMON <name>
//!         LIST [<glob>] | PUB <name> <ts|-> <value...>
//! server: VAL <name> <ts> <value...> | OK | ERR <name|-> <reason>
//!         EV <name> <ts> <value...> | CHANNELS <n> followed by n names
//! ```
//!
//! `PUB` is the owner write used by services that run in their own process:
//! it bypasses the read-only flag and carries the timestamp (with an
//! optional `:INVALID` status suffix, `-` for the server clock).

use ringd_core::channel::{format_timestamp, parse_timestamp};
use ringd_core::{Status, TimedValue, Value};

use crate::error::BusError;

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Get(String),
    Put { name: String, raw: String },
    Pub { name: String, stamp: Option<(f64, Status)>, raw: String },
    Mon(String),
    Unmon(String),
    List(Option<String>),
}

impl Request {
    pub fn parse(line: &str) -> Result<Request, BusError> {
        let line = line.trim_end_matches(['\r', '\n']);
        let (cmd, rest) = split_word(line);
        let bad = |what: &str| BusError::BadRequest(what.to_owned());
        let one_name = |rest: &str| {
            let (name, extra) = split_word(rest);
            if name.is_empty() || !extra.trim().is_empty() {
                Err(bad("expected exactly one channel name"))
            } else {
                Ok(name.to_owned())
            }
        };
        match cmd {
            "GET" => Ok(Request::Get(one_name(rest)?)),
            "MON" => Ok(Request::Mon(one_name(rest)?)),
            "UNMON" => Ok(Request::Unmon(one_name(rest)?)),
            "LIST" => {
                let (pat, extra) = split_word(rest);
                if !extra.trim().is_empty() {
                    return Err(bad("LIST takes at most one pattern"));
                }
                Ok(Request::List((!pat.is_empty()).then(|| pat.to_owned())))
            }
            "PUT" => {
                let (name, raw) = split_word(rest);
                if name.is_empty() || raw.trim().is_empty() {
                    return Err(bad("PUT needs a name and a value"));
                }
                Ok(Request::Put { name: name.to_owned(), raw: raw.to_owned() })
            }
            "PUB" => {
                let (name, rest) = split_word(rest);
                let (ts, raw) = split_word(rest);
                if name.is_empty() || ts.is_empty() || raw.trim().is_empty() {
                    return Err(bad("PUB needs a name, a timestamp and a value"));
                }
                let stamp = if ts == "-" { None } else { Some(parse_timestamp(ts).map_err(|_| bad("bad timestamp"))?) };
                Ok(Request::Pub { name: name.to_owned(), stamp, raw: raw.to_owned() })
            }
            "" => Err(bad("empty line")),
            _ => Err(bad("unknown command")),
        }
    }

    pub fn encode(&self) -> String {
        match self {
            Request::Get(n) => format!("GET {n}"),
            Request::Put { name, raw } => format!("PUT {name} {raw}"),
            Request::Pub { name, stamp, raw } => {
                let ts = stamp.map_or_else(|| "-".to_owned(), |(t, s)| format_timestamp(t, s));
                format!("PUB {name} {ts} {raw}")
            }
            Request::Mon(n) => format!("MON {n}"),
            Request::Unmon(n) => format!("UNMON {n}"),
            Request::List(None) => "LIST".to_owned(),
            Request::List(Some(p)) => format!("LIST {p}"),
        }
    }
}

/// A server line. The names following `CHANNELS` are separate lines and
/// not frames of their own.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Val { name: String, value: TimedValue },
    Ev { name: String, value: TimedValue },
    Ok,
    Err { name: Option<String>, reason: String },
    Channels(usize),
}

impl Frame {
    pub fn encode(&self) -> String {
        match self {
            Frame::Val { name, value } => value_line("VAL", name, value),
            Frame::Ev { name, value } => value_line("EV", name, value),
            Frame::Ok => "OK".to_owned(),
            Frame::Err { name, reason } => format!("ERR {} {reason}", name.as_deref().unwrap_or("-")),
            Frame::Channels(n) => format!("CHANNELS {n}"),
        }
    }

    pub fn parse(line: &str) -> Result<Frame, BusError> {
        let line = line.trim_end_matches(['\r', '\n']);
        let (tag, rest) = split_word(line);
        let bad = |what: &str| BusError::BadRequest(format!("{what}: {line:?}"));
        match tag {
            "OK" => Ok(Frame::Ok),
            "ERR" => {
                let (name, reason) = split_word(rest);
                let name = (name != "-").then(|| name.to_owned());
                Ok(Frame::Err { name, reason: reason.trim().to_owned() })
            }
            "CHANNELS" => rest.trim().parse().map(Frame::Channels).map_err(|_| bad("bad channel count")),
            "VAL" | "EV" => {
                let (name, rest) = split_word(rest);
                let (ts, raw) = split_word(rest);
                let (timestamp, status) = parse_timestamp(ts).map_err(|_| bad("bad timestamp"))?;
                let value = Value::parse_untyped(raw).map_err(|_| bad("bad value"))?;
                let value = TimedValue { value, timestamp, status };
                let name = name.to_owned();
                Ok(if tag == "VAL" { Frame::Val { name, value } } else { Frame::Ev { name, value } })
            }
            _ => Err(bad("unknown frame")),
        }
    }
}

fn value_line(tag: &str, name: &str, v: &TimedValue) -> String {
    let mut s = format!("{tag} {name} {} ", format_timestamp(v.timestamp, v.status));
    v.value.encode_into(&mut s);
    s
}

/// Splits off the first space separated word.
fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start_matches(' ');
    match s.find(' ') {
        Some(i) => (&s[..i], &s[i + 1..]),
        None => (s, ""),
    }
}
