//! Channel names, values and their text encoding.
//!
//! The same encoding is used on the wire, in snapshot files and in the
//! archive: floats are written as the shortest decimal that parses back to
//! the identical `f64`, vectors are space separated, and text is wrapped in
//! double quotes with `\"` and `\\` escapes. A timestamp carries the status
//! as a suffix, `1700000000.5` for OK and `1700000000.5:INVALID` otherwise.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NAME_LEN: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelName(Arc<str>);

impl ChannelName {
    pub fn new(name: &str) -> Result<Self> {
        let ok = !name.is_empty()
            && name.len() <= MAX_NAME_LEN
            && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b':' | b'_' | b'-'));
        if ok {
            Ok(Self(Arc::from(name)))
        } else {
            Err(Error::InvalidName(name.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChannelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ChannelName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Status {
    #[default]
    Ok,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
    Text(String),
}

/// Shape of the values a channel accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    Scalar,
    Vector(usize),
    Text,
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Scalar(_) => ValueKind::Scalar,
            Value::Vector(v) => ValueKind::Vector(v.len()),
            Value::Text(_) => ValueKind::Text,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(x) => Some(*x),
            Value::Vector(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            Value::Scalar(x) => Some(core::slice::from_ref(x)),
            Value::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Rejects values that cannot be carried bit-exactly by the text
    /// encoding: NaN, infinities, and text with line breaks.
    pub fn validate(&self) -> Result<()> {
        match self {
            Value::Scalar(x) if !x.is_finite() => Err(Error::BadValue("non-finite float")),
            Value::Vector(v) if v.iter().any(|x| !x.is_finite()) => Err(Error::BadValue("non-finite float")),
            Value::Vector(v) if v.is_empty() => Err(Error::BadValue("empty vector")),
            Value::Text(s) if s.contains(['\n', '\r']) => Err(Error::BadValue("line break in text")),
            _ => Ok(()),
        }
    }

    /// Bitwise equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => a.to_bits() == b.to_bits(),
            (Value::Vector(a), Value::Vector(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Value::Text(a), Value::Text(b)) => a == b,
            _ => false,
        }
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut String) {
        match self {
            Value::Scalar(x) => push_float(out, *x),
            Value::Vector(v) => {
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    push_float(out, *x);
                }
            }
            Value::Text(s) => {
                out.push('"');
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out.push('"');
            }
        }
    }

    /// Parses an encoded value without knowing the channel's shape.
    ///
    /// Quoted input is text; a single number is a scalar and several are a
    /// vector. Unquoted input that is not numeric is taken as text verbatim.
    /// A length-one vector therefore decodes as a scalar; use
    /// [`ValueKind::parse`] when the shape is known.
    pub fn parse_untyped(raw: &str) -> Result<Value> {
        let raw = raw.trim();
        if raw.starts_with('"') {
            return unquote(raw).map(Value::Text);
        }
        if raw.is_empty() {
            return Err(Error::BadValue("empty value"));
        }
        match parse_floats(raw) {
            Ok(v) if v.len() == 1 => Ok(Value::Scalar(v[0])),
            Ok(v) => Ok(Value::Vector(v)),
            Err(NumError::NonFinite) => Err(Error::BadValue("non-finite float")),
            Err(NumError::NotNumeric) => Ok(Value::Text(raw.to_owned())),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Scalar(x)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Vector(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl ValueKind {
    /// Number of elements, `0` for scalars and text.
    pub fn vector_length(self) -> usize {
        match self {
            ValueKind::Vector(n) => n,
            _ => 0,
        }
    }

    /// Checks `value` against this shape, widening a scalar into a
    /// length-one vector where needed.
    pub fn coerce(self, value: Value) -> Result<Value> {
        value.validate()?;
        match (self, value) {
            (ValueKind::Scalar, v @ Value::Scalar(_)) => Ok(v),
            (ValueKind::Scalar, Value::Vector(v)) => Err(Error::ShapeMismatch { expected: 1, got: v.len() }),
            (ValueKind::Vector(1), Value::Scalar(x)) => Ok(Value::Vector(alloc::vec![x])),
            (ValueKind::Vector(n), Value::Scalar(_)) => Err(Error::ShapeMismatch { expected: n, got: 1 }),
            (ValueKind::Vector(n), Value::Vector(v)) => {
                if v.len() == n {
                    Ok(Value::Vector(v))
                } else {
                    Err(Error::ShapeMismatch { expected: n, got: v.len() })
                }
            }
            (ValueKind::Text, v @ Value::Text(_)) => Ok(v),
            (ValueKind::Text, v) => Ok(Value::Text(v.encode())),
            (_, Value::Text(_)) => Err(Error::BadValue("text on a numeric channel")),
        }
    }

    /// Parses an encoded value for a channel of this shape. Text channels
    /// accept both quoted and bare text.
    pub fn parse(self, raw: &str) -> Result<Value> {
        let raw = raw.trim();
        match self {
            ValueKind::Text => {
                if raw.starts_with('"') {
                    unquote(raw).map(Value::Text)
                } else {
                    Ok(Value::Text(raw.to_owned()))
                }
            }
            ValueKind::Scalar | ValueKind::Vector(_) => {
                let v = parse_floats(raw).map_err(|e| match e {
                    NumError::NonFinite => Error::BadValue("non-finite float"),
                    NumError::NotNumeric => Error::BadValue("not a number"),
                })?;
                let value = if self == ValueKind::Scalar && v.len() == 1 { Value::Scalar(v[0]) } else { Value::Vector(v) };
                self.coerce(value)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedValue {
    pub value: Value,
    /// Seconds since the Unix epoch (or since simulation start).
    pub timestamp: f64,
    pub status: Status,
}

impl TimedValue {
    pub fn new(value: impl Into<Value>, timestamp: f64) -> Self {
        Self { value: value.into(), timestamp, status: Status::Ok }
    }

    pub fn invalid(value: impl Into<Value>, timestamp: f64) -> Self {
        Self { value: value.into(), timestamp, status: Status::Invalid }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

pub fn format_float(x: f64) -> String {
    let mut s = String::new();
    push_float(&mut s, x);
    s
}

fn push_float(out: &mut String, x: f64) {
    // `Debug` for f64 prints the shortest round-tripping representation and
    // switches to exponent notation for very large or small magnitudes.
    let _ = write!(out, "{x:?}");
}

pub fn format_timestamp(ts: f64, status: Status) -> String {
    match status {
        Status::Ok => format_float(ts),
        Status::Invalid => format!("{}:INVALID", format_float(ts)),
    }
}

pub fn parse_timestamp(token: &str) -> Result<(f64, Status)> {
    let (num, status) = match token.strip_suffix(":INVALID") {
        Some(n) => (n, Status::Invalid),
        None => (token, Status::Ok),
    };
    let ts: f64 = num.parse().map_err(|_| Error::BadValue("malformed timestamp"))?;
    if !ts.is_finite() {
        return Err(Error::BadValue("malformed timestamp"));
    }
    Ok((ts, status))
}

enum NumError {
    NonFinite,
    NotNumeric,
}

fn parse_floats(raw: &str) -> core::result::Result<Vec<f64>, NumError> {
    let mut out = Vec::new();
    for tok in raw.split_whitespace() {
        let x: f64 = tok.parse().map_err(|_| NumError::NotNumeric)?;
        if !x.is_finite() {
            return Err(NumError::NonFinite);
        }
        out.push(x);
    }
    if out.is_empty() {
        return Err(NumError::NotNumeric);
    }
    Ok(out)
}

fn unquote(raw: &str) -> Result<String> {
    let inner = raw
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or(Error::BadValue("unterminated text"))?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.push(chars.next().ok_or(Error::BadValue("dangling escape"))?),
            '"' => return Err(Error::BadValue("unescaped quote in text")),
            c => out.push(c),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn names() {
        assert!(ChannelName::new("ARIDI-BEAM:CURRENT").is_ok());
        assert!(ChannelName::new("OFB-DF").is_ok());
        assert!(ChannelName::new("A.B").is_err());
        assert!(ChannelName::new("").is_err());
        assert!(ChannelName::new("has space").is_err());
        assert!(ChannelName::new(&"X".repeat(61)).is_err());
        assert!(ChannelName::new(&"X".repeat(60)).is_ok());
    }

    #[test]
    fn encodes_like_the_protocol_examples() {
        assert_eq!(Value::Scalar(150.0).encode(), "150.0");
        assert_eq!(Value::Vector(vec![0.0, -1.5]).encode(), "0.0 -1.5");
        assert_eq!(Value::from("say \"hi\"").encode(), r#""say \"hi\"""#);
        assert_eq!(format_timestamp(12.5, Status::Invalid), "12.5:INVALID");
        assert_eq!(parse_timestamp("12.5:INVALID").unwrap(), (12.5, Status::Invalid));
    }

    #[test]
    fn untyped_parse() {
        assert_eq!(Value::parse_untyped("20").unwrap(), Value::Scalar(20.0));
        assert_eq!(Value::parse_untyped(" 1 2 ").unwrap(), Value::Vector(vec![1.0, 2.0]));
        assert_eq!(Value::parse_untyped("ACTIVE").unwrap(), Value::from("ACTIVE"));
        assert_eq!(Value::parse_untyped("\"1.0\"").unwrap(), Value::from("1.0"));
        assert!(Value::parse_untyped("nan").is_err());
        assert!(Value::parse_untyped("1 inf").is_err());
    }

    #[test]
    fn typed_parse_checks_shape() {
        assert_eq!(ValueKind::Vector(3).parse("1 2").unwrap_err(), Error::ShapeMismatch { expected: 3, got: 2 });
        assert_eq!(ValueKind::Vector(1).parse("4").unwrap(), Value::Vector(vec![4.0]));
        assert_eq!(ValueKind::Text.parse("ACTIVE").unwrap(), Value::from("ACTIVE"));
        assert_eq!(ValueKind::Text.parse("\"a b\"").unwrap(), Value::from("a b"));
        assert!(ValueKind::Scalar.parse("ACTIVE").is_err());
        assert!(ValueKind::Scalar.coerce(Value::Scalar(f64::INFINITY)).is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back = Value::parse_untyped(&Value::Scalar(x).encode()).unwrap();
            prop_assert!(back.bit_eq(&Value::Scalar(x)));
        }

        #[test]
        fn text_round_trips(s in "[^\r\n]{0,40}") {
            let v = Value::Text(s);
            let back = ValueKind::Text.parse(&v.encode()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
