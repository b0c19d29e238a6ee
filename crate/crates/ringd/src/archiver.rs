//! Append-only channel archive.
//!
//! A store is a text file of lines `A <t>[:INVALID] <name> <value>`. A torn
//! last line (no newline, left by a crash) is ignored by queries; any other
//! unreadable line is reported with its byte offset and skipped.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;
use log::warn;
use ringd_core::channel::{format_timestamp, parse_timestamp};
use ringd_core::{ChannelName, Status, TimedValue, Value};

use crate::bus::{BusAccess, Clock, SystemClock};
use crate::error::{BusError, Error, ParseError, Result};

/// Upper bound on the time between two flushes of the store.
pub const FLUSH_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    OnChange,
    /// Sample every `dt` seconds.
    Periodic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRule {
    pub pattern: String,
    pub sampling: Sampling,
}

/// Which channels to record and how. A channel matched by several rules
/// uses the first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Policy {
    pub rules: Vec<PolicyRule>,
}

impl Policy {
    pub fn on_change(pattern: &str) -> Self {
        Self { rules: vec![PolicyRule { pattern: pattern.into(), sampling: Sampling::OnChange }] }
    }

    /// Parses lines of `<glob> on-change` or `<glob> periodic <dt>`; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> std::result::Result<Self, ParseError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let sampling = match words.as_slice() {
                [_, "on-change"] => Sampling::OnChange,
                [_, "periodic", dt] => match dt.parse::<f64>() {
                    Ok(dt) if dt > 0.0 && dt.is_finite() => Sampling::Periodic(dt),
                    _ => return Err(ParseError::new(n, format!("bad period {dt:?}, need a positive number of seconds"))),
                },
                _ => return Err(ParseError::new(n, "expected `<glob> on-change` or `<glob> periodic <dt>`")),
            };
            glob::Pattern::new(words[0]).map_err(|e| ParseError::new(n, format!("bad glob: {e}")))?;
            rules.push(PolicyRule { pattern: words[0].into(), sampling });
        }
        Ok(Self { rules })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text)?)
    }
}

pub fn format_record(name: &str, tv: &TimedValue) -> String {
    format!("A {} {} {}", format_timestamp(tv.timestamp, tv.status), name, tv.value.encode())
}

/// Parses one store line (without the newline).
pub fn parse_record(line: &str) -> std::result::Result<(String, TimedValue), String> {
    let rest = line.strip_prefix("A ").ok_or("record does not start with `A `")?;
    let (ts, rest) = rest.split_once(' ').ok_or("missing channel name")?;
    let (name, raw) = rest.split_once(' ').ok_or("missing value")?;
    let (timestamp, status) = parse_timestamp(ts).map_err(|e| format!("timestamp: {e}"))?;
    ChannelName::new(name).map_err(|e| format!("channel name: {e}"))?;
    let value = Value::parse_untyped(raw).map_err(|e| format!("value: {e}"))?;
    Ok((name.to_owned(), TimedValue { value, timestamp, status }))
}

/// Counters of a finished recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordStats {
    pub channels: usize,
    pub records: u64,
}

struct Periodic {
    name: String,
    dt: f64,
    next: Instant,
}

struct Store {
    out: BufWriter<File>,
    path: std::path::PathBuf,
    /// Last recorded timestamp per channel, to keep each series ordered.
    last_t: HashMap<String, f64>,
    last_flush: Instant,
    records: u64,
}

impl Store {
    fn append(&mut self, name: &str, mut tv: TimedValue) -> Result<()> {
        let last = self.last_t.entry(name.to_owned()).or_insert(f64::NEG_INFINITY);
        tv.timestamp = tv.timestamp.max(*last);
        *last = tv.timestamp;
        let mut line = format_record(name, &tv);
        line.push('\n');
        self.out.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.records += 1;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.last_flush = Instant::now();
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Records the channels selected by `policy` into `path` (appending) until
/// `stop` is set. Globs are resolved once, at start.
pub fn record(bus: &(impl BusAccess + ?Sized), policy: &Policy, path: impl AsRef<Path>, stop: &AtomicBool) -> Result<RecordStats> {
    let path = path.as_ref();
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut store =
        Store { out: BufWriter::new(file), path: path.to_owned(), last_t: HashMap::new(), last_flush: Instant::now(), records: 0 };

    let mut claimed = HashSet::new();
    let mut on_change = Vec::new();
    let mut periodic = Vec::new();
    for rule in &policy.rules {
        let names = bus.list(Some(&rule.pattern))?;
        if names.is_empty() {
            warn!("archive pattern {} matches no channel", rule.pattern);
        }
        for name in names {
            if !claimed.insert(name.clone()) {
                continue;
            }
            match rule.sampling {
                Sampling::OnChange => on_change.push(name),
                Sampling::Periodic(dt) => periodic.push(Periodic { name, dt, next: Instant::now() }),
            }
        }
    }
    let stats_channels = claimed.len();
    let names: Vec<&str> = on_change.iter().map(String::as_str).collect();
    let sub = if names.is_empty() { None } else { Some(bus.monitor_many(&names)?) };
    let clock = SystemClock;

    let result = (|| -> Result<()> {
        while !stop.load(Ordering::SeqCst) {
            let now = Instant::now();
            for p in periodic.iter_mut().filter(|p| p.next <= now) {
                let tv = bus.get(&p.name)?;
                let t = clock.now().max(tv.timestamp);
                store.append(&p.name, TimedValue { timestamp: t, ..tv })?;
                p.next += Duration::from_secs_f64(p.dt);
                if p.next < now {
                    p.next = now + Duration::from_secs_f64(p.dt);
                }
            }
            let flush_at = store.last_flush + FLUSH_INTERVAL;
            let wake = periodic.iter().map(|p| p.next).chain([flush_at]).min().unwrap_or(flush_at);
            let wait = wake.saturating_duration_since(Instant::now()).min(Duration::from_millis(100));
            match &sub {
                Some(sub) => match sub.recv_timeout(wait) {
                    Ok(ev) => {
                        store.append(ev.name.as_str(), ev.value)?;
                        while let Ok(ev) = sub.try_recv() {
                            store.append(ev.name.as_str(), ev.value)?;
                        }
                        // quiet bus: make records visible early
                        if store.last_flush.elapsed() >= Duration::from_millis(200) {
                            store.flush()?;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return Err(BusError::Disconnected.into()),
                },
                None => std::thread::sleep(wait),
            }
            if store.last_flush.elapsed() >= FLUSH_INTERVAL {
                store.flush()?;
            }
        }
        Ok(())
    })();
    let flushed = store.flush();
    result.and(flushed)?;
    Ok(RecordStats { channels: stats_channels, records: store.records })
}

/// A corrupt line found by a query.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptLine {
    /// Byte offset of the line in the store.
    pub offset: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub name: String,
    pub records: Vec<TimedValue>,
    pub corrupt: Vec<CorruptLine>,
}

/// All records of `name` with `t0 <= t <= t1`, ordered by time.
pub fn query(path: impl AsRef<Path>, name: &str, t0: f64, t1: f64) -> Result<Series> {
    let path = path.as_ref();
    if !(t0 <= t1) {
        return Err(ringd_core::Error::BadValue("query window needs t0 <= t1").into());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut series = Series { name: name.to_owned(), ..Series::default() };
    let mut seen = false;
    let mut offset = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let at = offset;
        offset += n as u64;
        if buf.last() != Some(&b'\n') {
            // torn final line
            break;
        }
        let parsed = std::str::from_utf8(&buf)
            .map_err(|_| "not UTF-8".to_owned())
            .and_then(|line| {
                let line = line.trim_end_matches(['\n', '\r']);
                // cheap prefilter before parsing the value
                match line.splitn(4, ' ').nth(2) {
                    Some(n) if n != name => Ok(None),
                    _ => parse_record(line).map(Some),
                }
            });
        match parsed {
            Ok(Some((_, tv))) => {
                seen = true;
                if tv.timestamp >= t0 && tv.timestamp <= t1 {
                    series.records.push(tv);
                }
            }
            Ok(None) => {}
            Err(message) => {
                warn!("{}: corrupt record at byte {at}: {message}", path.display());
                series.corrupt.push(CorruptLine { offset: at, message });
            }
        }
    }
    if !seen {
        return Err(BusError::UnknownChannel(name.to_owned()).into());
    }
    series.records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(series)
}

/// Writes `series` as CSV: `t,<name>` for scalars and text, `t,v0,..,vk`
/// for vectors. Floats use the shortest representation that reads back
/// exactly.
pub fn export_csv(series: &Series, path: impl AsRef<Path>, allow_empty: bool) -> Result<()> {
    let path = path.as_ref();
    if series.records.is_empty() && !allow_empty {
        return Err(ringd_core::Error::BadValue("empty series").into());
    }
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Config(format!("csv: {other:?}")),
    };
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(csv_err)?;
    let mut header = vec!["t".to_owned()];
    match series.records.first().map(|r| &r.value) {
        Some(Value::Vector(v)) => header.extend((0..v.len()).map(|i| format!("v{i}"))),
        _ => header.push(series.name.clone()),
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in &series.records {
        let mut row = vec![format!("{:?}", r.timestamp)];
        match &r.value {
            Value::Scalar(x) => row.push(format!("{x:?}")),
            Value::Vector(v) => row.extend(v.iter().map(|x| format!("{x:?}"))),
            Value::Text(s) => row.push(s.clone()),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Status-aware convenience for tests and tools: values only.
pub fn scalars(series: &Series) -> Vec<f64> {
    series.records.iter().filter(|r| r.status == Status::Ok).filter_map(|r| r.value.as_scalar()).collect()
}
