//! In-process channel registry.
//!
//! Every channel has its own mutex, which is the ordering point for puts
//! and monitor registration: a put stores the value and enqueues one event
//! per subscriber before releasing it, so every subscriber sees the puts of
//! a channel in the order they happened. Queues are unbounded and sending
//! never blocks, so a slow consumer cannot stall a put.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, Weak};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender, TryRecvError};
use ringd_core::{ChannelName, TimedValue, Value, ValueKind};

use crate::error::BusError;

pub type BusResult<T> = std::result::Result<T, BusError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMeta {
    pub units: String,
    pub description: String,
    pub writable: bool,
    pub kind: ValueKind,
}

impl ChannelMeta {
    pub fn scalar(units: &str, description: &str) -> Self {
        Self { units: units.into(), description: description.into(), writable: false, kind: ValueKind::Scalar }
    }

    pub fn vector(len: usize, units: &str, description: &str) -> Self {
        Self { kind: ValueKind::Vector(len), ..Self::scalar(units, description) }
    }

    pub fn text(description: &str) -> Self {
        Self { kind: ValueKind::Text, ..Self::scalar("", description) }
    }

    pub fn writable(mut self) -> Self {
        self.writable = true;
        self
    }

    /// `0` for scalar and text channels.
    pub fn vector_length(&self) -> usize {
        self.kind.vector_length()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub name: ChannelName,
    pub value: TimedValue,
}

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch, or whatever epoch the clock defines.
    fn now(&self) -> f64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(t: f64) -> Self {
        Self(AtomicU64::new(t.to_bits()))
    }

    pub fn set(&self, t: f64) {
        self.0.store(t.to_bits(), Ordering::SeqCst);
    }

    pub fn advance(&self, dt: f64) {
        self.set(self.now() + dt);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::SeqCst))
    }
}

/// Queue bound for a subscriber and what to do when it is exceeded.
#[derive(Clone)]
pub struct Overflow {
    pub limit: usize,
    pub on_overflow: Arc<dyn Fn() + Send + Sync>,
}

struct Subscriber {
    id: u64,
    tx: Sender<Event>,
    overflow: Option<Overflow>,
}

struct ChannelState {
    value: TimedValue,
    subscribers: Vec<Subscriber>,
    puts: u64,
}

struct Channel {
    name: ChannelName,
    meta: ChannelMeta,
    state: Mutex<ChannelState>,
}

impl Channel {
    fn lock(&self) -> MutexGuard<'_, ChannelState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Inner {
    channels: RwLock<BTreeMap<String, Arc<Channel>>>,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
}

/// Cheaply clonable handle to one bus instance.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(SystemClock))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Arc::new(Inner {
                channels: RwLock::new(BTreeMap::new()),
                clock,
                next_id: AtomicU64::new(1),
            }),
        }
    }

    pub fn now(&self) -> f64 {
        self.inner.clock.now()
    }

    pub fn create_channel(&self, name: &str, meta: ChannelMeta, initial: TimedValue) -> BusResult<ChannelHandle> {
        let cname = ChannelName::new(name).map_err(|_| BusError::BadName(name.to_owned()))?;
        let value = meta.kind.coerce(initial.value).map_err(|e| BusError::shape(name, e))?;
        let initial = TimedValue { value, ..initial };
        let mut map = self.inner.channels.write().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(name) {
            return Err(BusError::DuplicateName(name.to_owned()));
        }
        let ch = Arc::new(Channel {
            name: cname,
            meta,
            state: Mutex::new(ChannelState { value: initial, subscribers: Vec::new(), puts: 0 }),
        });
        map.insert(name.to_owned(), ch.clone());
        Ok(ChannelHandle { bus: self.clone(), channel: ch })
    }

    /// Privileged handle to an existing channel, for the service that owns it.
    pub fn handle(&self, name: &str) -> BusResult<ChannelHandle> {
        Ok(ChannelHandle { bus: self.clone(), channel: self.channel(name)? })
    }

    fn channel(&self, name: &str) -> BusResult<Arc<Channel>> {
        let map = self.inner.channels.read().unwrap_or_else(|e| e.into_inner());
        map.get(name).cloned().ok_or_else(|| BusError::UnknownChannel(name.to_owned()))
    }

    pub fn meta(&self, name: &str) -> BusResult<ChannelMeta> {
        Ok(self.channel(name)?.meta.clone())
    }

    pub fn get(&self, name: &str) -> BusResult<TimedValue> {
        Ok(self.channel(name)?.lock().value.clone())
    }

    /// Number of client puts the channel has accepted since creation;
    /// owner publishes are not counted.
    pub fn put_count(&self, name: &str) -> BusResult<u64> {
        Ok(self.channel(name)?.lock().puts)
    }

    /// Client put, stamped with the bus clock.
    pub fn put(&self, name: &str, value: Value) -> BusResult<()> {
        let ts = self.now();
        self.write(&*self.channel(name)?, TimedValue::new(value, ts), false)
    }

    /// Client put with a caller supplied timestamp and status.
    pub fn put_timed(&self, name: &str, value: TimedValue) -> BusResult<()> {
        self.write(&*self.channel(name)?, value, false)
    }

    /// Client put of an encoded value, parsed against the channel's shape.
    pub fn put_text(&self, name: &str, raw: &str) -> BusResult<()> {
        let ch = self.channel(name)?;
        if !ch.meta.writable {
            return Err(BusError::ReadOnly(name.to_owned()));
        }
        let value = ch.meta.kind.parse(raw).map_err(|e| BusError::shape(name, e))?;
        let ts = self.now();
        self.write(&ch, TimedValue::new(value, ts), false)
    }

    /// Owner put: ignores the writable flag.
    pub fn publish(&self, name: &str, value: TimedValue) -> BusResult<()> {
        self.write(&*self.channel(name)?, value, true)
    }

    fn write(&self, ch: &Channel, mut tv: TimedValue, privileged: bool) -> BusResult<()> {
        let name = ch.name.as_str();
        if !privileged && !ch.meta.writable {
            return Err(BusError::ReadOnly(name.to_owned()));
        }
        if !tv.timestamp.is_finite() {
            return Err(BusError::ShapeMismatch { name: name.to_owned(), detail: "non-finite timestamp".into() });
        }
        tv.value = ch.meta.kind.coerce(tv.value).map_err(|e| BusError::shape(name, e))?;

        let mut st = ch.lock();
        // per-channel timestamps never go backwards
        if tv.timestamp < st.value.timestamp {
            tv.timestamp = st.value.timestamp;
        }
        if !privileged {
            st.puts += 1;
        }
        st.value = tv;
        let ev = Event { name: ch.name.clone(), value: st.value.clone() };
        st.subscribers.retain(|s| deliver(s, &ev));
        Ok(())
    }

    pub fn monitor(&self, name: &str) -> BusResult<Subscription> {
        self.monitor_many(&[name])
    }

    /// One queue fed by several channels; events of each channel stay in
    /// put order.
    pub fn monitor_many(&self, names: &[&str]) -> BusResult<Subscription> {
        let (tx, rx) = unbounded();
        let guard = self.monitor_into(names, tx, None)?;
        Ok(Subscription::new(rx, guard))
    }

    /// Attaches `tx` to every channel in `names`. Each channel immediately
    /// queues its current value. Dropping the guard detaches again.
    pub fn monitor_into(&self, names: &[&str], tx: Sender<Event>, overflow: Option<Overflow>) -> BusResult<MonitorGuard> {
        let channels = names.iter().map(|n| self.channel(n)).collect::<BusResult<Vec<_>>>()?;
        let mut attached = Vec::with_capacity(channels.len());
        for ch in channels {
            let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
            let sub = Subscriber { id, tx: tx.clone(), overflow: overflow.clone() };
            let mut st = ch.lock();
            let ev = Event { name: ch.name.clone(), value: st.value.clone() };
            if deliver(&sub, &ev) {
                st.subscribers.push(sub);
            }
            drop(st);
            attached.push((Arc::downgrade(&ch), id));
        }
        Ok(MonitorGuard::new(move || detach(&attached)))
    }

    /// Channel names in sorted order, optionally filtered by a shell glob.
    pub fn list(&self, pattern: Option<&str>) -> BusResult<Vec<String>> {
        let pat = match pattern {
            Some(p) => Some(glob::Pattern::new(p).map_err(|e| BusError::BadRequest(format!("bad glob {p:?}: {e}")))?),
            None => None,
        };
        let map = self.inner.channels.read().unwrap_or_else(|e| e.into_inner());
        Ok(map.keys().filter(|k| pat.as_ref().is_none_or(|p| p.matches(k))).cloned().collect())
    }
}

fn deliver(sub: &Subscriber, ev: &Event) -> bool {
    if let Some(o) = &sub.overflow {
        if sub.tx.len() >= o.limit {
            (o.on_overflow)();
            return false;
        }
    }
    sub.tx.send(ev.clone()).is_ok()
}

fn detach(attached: &[(Weak<Channel>, u64)]) {
    for (weak, id) in attached {
        if let Some(ch) = weak.upgrade() {
            ch.lock().subscribers.retain(|s| s.id != *id);
        }
    }
}

/// Owner handle returned by [`Bus::create_channel`].
#[derive(Clone)]
pub struct ChannelHandle {
    bus: Bus,
    channel: Arc<Channel>,
}

impl ChannelHandle {
    pub fn name(&self) -> &str {
        self.channel.name.as_str()
    }

    pub fn meta(&self) -> &ChannelMeta {
        &self.channel.meta
    }

    pub fn get(&self) -> TimedValue {
        self.channel.lock().value.clone()
    }

    pub fn publish(&self, value: TimedValue) -> BusResult<()> {
        self.bus.write(&self.channel, value, true)
    }

    /// Publishes `value` stamped with the bus clock.
    pub fn publish_now(&self, value: impl Into<Value>) -> BusResult<()> {
        let ts = self.bus.now();
        self.publish(TimedValue::new(value, ts))
    }
}

/// Detaches a monitor when dropped.
pub struct MonitorGuard {
    cancel: Option<Box<dyn FnOnce() + Send>>,
}

impl MonitorGuard {
    pub fn new(cancel: impl FnOnce() + Send + 'static) -> Self {
        Self { cancel: Some(Box::new(cancel)) }
    }
}

impl Drop for MonitorGuard {
    fn drop(&mut self) {
        if let Some(f) = self.cancel.take() {
            f();
        }
    }
}

/// Event queue of a monitor. Delivery stops when it is dropped.
pub struct Subscription {
    rx: Receiver<Event>,
    _guard: MonitorGuard,
}

impl Subscription {
    pub fn new(rx: Receiver<Event>, guard: MonitorGuard) -> Self {
        Self { rx, _guard: guard }
    }

    /// Blocks for the next event; `None` once the source is gone.
    pub fn recv(&self) -> Option<Event> {
        self.rx.recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Event, RecvTimeoutError> {
        self.rx.recv_timeout(timeout)
    }

    pub fn try_recv(&self) -> Result<Event, TryRecvError> {
        self.rx.try_recv()
    }

    pub fn receiver(&self) -> &Receiver<Event> {
        &self.rx
    }

    pub fn pending(&self) -> usize {
        self.rx.len()
    }
}

/// Operations shared by the in-process bus and a network connection to
/// one, so services run unchanged against either.
pub trait BusAccess: Send + Sync {
    fn get(&self, name: &str) -> BusResult<TimedValue>;
    fn put(&self, name: &str, value: Value) -> BusResult<()>;
    /// Put of an encoded value, parsed with the channel's own shape.
    fn put_text(&self, name: &str, raw: &str) -> BusResult<()>;
    /// Owner write with explicit timestamp and status.
    fn publish(&self, name: &str, value: TimedValue) -> BusResult<()>;
    fn monitor_many(&self, names: &[&str]) -> BusResult<Subscription>;
    fn list(&self, pattern: Option<&str>) -> BusResult<Vec<String>>;

    fn monitor(&self, name: &str) -> BusResult<Subscription> {
        self.monitor_many(&[name])
    }
}

impl BusAccess for Bus {
    fn get(&self, name: &str) -> BusResult<TimedValue> {
        Bus::get(self, name)
    }

    fn put(&self, name: &str, value: Value) -> BusResult<()> {
        Bus::put(self, name, value)
    }

    fn put_text(&self, name: &str, raw: &str) -> BusResult<()> {
        Bus::put_text(self, name, raw)
    }

    fn publish(&self, name: &str, value: TimedValue) -> BusResult<()> {
        Bus::publish(self, name, value)
    }

    fn monitor_many(&self, names: &[&str]) -> BusResult<Subscription> {
        Bus::monitor_many(self, names)
    }

    fn list(&self, pattern: Option<&str>) -> BusResult<Vec<String>> {
        Bus::list(self, pattern)
    }
}

impl<B: BusAccess + ?Sized> BusAccess for Arc<B> {
    fn get(&self, name: &str) -> BusResult<TimedValue> {
        (**self).get(name)
    }

    fn put(&self, name: &str, value: Value) -> BusResult<()> {
        (**self).put(name, value)
    }

    fn put_text(&self, name: &str, raw: &str) -> BusResult<()> {
        (**self).put_text(name, raw)
    }

    fn publish(&self, name: &str, value: TimedValue) -> BusResult<()> {
        (**self).publish(name, value)
    }

    fn monitor_many(&self, names: &[&str]) -> BusResult<Subscription> {
        (**self).monitor_many(names)
    }

    fn list(&self, pattern: Option<&str>) -> BusResult<Vec<String>> {
        (**self).list(pattern)
    }
}

/// Scalar value of a channel, or `default` if it is missing or not numeric.
pub fn get_scalar_or(bus: &(impl BusAccess + ?Sized), name: &str, default: f64) -> f64 {
    bus.get(name).ok().and_then(|tv| tv.value.as_scalar()).unwrap_or(default)
}

/// Vector value of a channel.
pub fn get_vector(bus: &(impl BusAccess + ?Sized), name: &str) -> BusResult<Vec<f64>> {
    let tv = bus.get(name)?;
    tv.value
        .as_vector()
        .map(<[f64]>::to_vec)
        .ok_or_else(|| BusError::ShapeMismatch { name: name.to_owned(), detail: "not a numeric channel".into() })
}
