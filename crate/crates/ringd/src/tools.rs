//! Generic channel tools. They talk to the bus only through [`BusAccess`],
//! which the binaries back with a [`RemoteBus`](crate::RemoteBus).
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | any other failure (connection, IO, bad arguments) |
//! | 2 | unknown channel |
//! | 3 | value shape or type mismatch |
//! | 4 | channel is read-only |
//! | 5 | file parse error |

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use ringd_core::channel::format_timestamp;
use ringd_core::TimedValue;

use crate::bus::BusAccess;
use crate::error::{BusError, Error};
use crate::snapshot::{restore_snapshot, save_snapshot, Snapshot};
use crate::wire::Frame;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_SHAPE: i32 = 3;
pub const EXIT_READ_ONLY: i32 = 4;
pub const EXIT_PARSE: i32 = 5;

pub fn bus_exit_code(e: &BusError) -> i32 {
    match e {
        BusError::UnknownChannel(_) => EXIT_UNKNOWN,
        BusError::ShapeMismatch { .. } => EXIT_SHAPE,
        BusError::ReadOnly(_) => EXIT_READ_ONLY,
        _ => EXIT_OTHER,
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Bus(b) => bus_exit_code(b),
        Error::Parse(_) => EXIT_PARSE,
        Error::Core(ringd_core::Error::ShapeMismatch { .. }) => EXIT_SHAPE,
        _ => EXIT_OTHER,
    }
}

fn fail(err: &mut dyn Write, e: impl Into<Error>) -> i32 {
    let e = e.into();
    let _ = writeln!(err, "error: {e}");
    exit_code(&e)
}

/// `<name> <ts> <value...>`, the format `cmd_get` prints.
pub fn format_value_line(name: &str, tv: &TimedValue) -> String {
    format!("{name} {} {}", format_timestamp(tv.timestamp, tv.status), tv.value.encode())
}

pub fn cmd_get(bus: &(impl BusAccess + ?Sized), names: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut code = EXIT_OK;
    for name in names {
        match bus.get(name) {
            Ok(tv) => {
                let _ = writeln!(out, "{}", format_value_line(name, &tv));
            }
            Err(e) => code = code.max(fail(err, e)),
        }
    }
    code
}

/// Puts the words of `value` (joined by spaces) to `name`; a single
/// quoted word is a text value.
pub fn cmd_put(bus: &(impl BusAccess + ?Sized), name: &str, value: &[String], err: &mut dyn Write) -> i32 {
    if value.is_empty() {
        let _ = writeln!(err, "error: no value given for {name}");
        return EXIT_OTHER;
    }
    match bus.put_text(name, &value.join(" ")) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(err, e),
    }
}

/// Prints `EV` lines, starting with the current value, until `count`
/// events were printed or `stop` is set.
pub fn cmd_monitor(
    bus: &(impl BusAccess + ?Sized),
    names: &[String],
    count: Option<usize>,
    stop: &AtomicBool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let sub = match bus.monitor_many(&refs) {
        Ok(s) => s,
        Err(e) => return fail(err, e),
    };
    let mut seen = 0;
    while count.is_none_or(|n| seen < n) && !stop.load(Ordering::SeqCst) {
        match sub.recv_timeout(Duration::from_millis(200)) {
            Ok(ev) => {
                seen += 1;
                let line = Frame::Ev { name: ev.name.as_str().to_owned(), value: ev.value }.encode();
                if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
                    return EXIT_OTHER;
                }
            }
            Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
            Err(crossbeam_channel::RecvTimeoutError::Disconnected) => return fail(err, BusError::Disconnected),
        }
    }
    EXIT_OK
}

pub fn cmd_list(bus: &(impl BusAccess + ?Sized), pattern: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match bus.list(pattern) {
        Ok(names) => {
            for n in names {
                let _ = writeln!(out, "{n}");
            }
            EXIT_OK
        }
        Err(e) => fail(err, e),
    }
}

/// Saves every channel matching `patterns` to `path`. Patterns that match
/// nothing are reported but do not fail the save.
pub fn cmd_save(bus: &(impl BusAccess + ?Sized), patterns: &[String], optics: Option<&str>, path: &Path, err: &mut dyn Write) -> i32 {
    let refs: Vec<&str> = patterns.iter().map(String::as_str).collect();
    let report = match save_snapshot(bus, &refs, optics) {
        Ok(r) => r,
        Err(e) => return fail(err, e),
    };
    if report.warnings > 0 {
        let _ = writeln!(err, "warning: {} pattern(s) or channel(s) could not be saved", report.warnings);
    }
    match report.snapshot.write(path) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(err, e),
    }
}

/// Restores a snapshot. Every entry is attempted; the exit code is that
/// of the first failure.
pub fn cmd_restore(bus: &(impl BusAccess + ?Sized), path: &Path, err: &mut dyn Write) -> i32 {
    let snap = match Snapshot::read(path) {
        Ok(s) => s,
        Err(e) => return fail(err, e),
    };
    match restore_snapshot(bus, &snap) {
        Ok(report) => {
            for (name, e) in &report.failed {
                let _ = writeln!(err, "error: {name}: {e}");
            }
            report.failed.first().map_or(EXIT_OK, |(_, e)| bus_exit_code(e))
        }
        Err(e) => fail(err, e),
    }
}
