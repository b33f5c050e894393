//! In-process topic bus with per-robot namespaces.
//!
//! Publishing only *offers* a message. Delivery happens in [`Bus::flush`],
//! which walks topics in path order, so the delivery sequence is a pure
//! function of the offers and flush times. Rate-limited topics keep only the
//! latest offer between deliveries; unthrottled topics deliver every offer.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

pub const DEFAULT_QUEUE_DEPTH: usize = 10;

/// Slack on the rate gate so that accumulated periods like `0.1 * k` still
/// open on the tick they were meant for.
const RATE_SLACK_S: f64 = 1e-9;

pub mod channel {
    pub const ODOM: &str = "odom";
    pub const CMD_VEL: &str = "cmd_vel";
    pub const POSITION_CMD: &str = "position_cmd";
    pub const BATTERY: &str = "battery";
    pub const SOUND: &str = "sensors/sound";
    pub const IMU: &str = "sensors/imu";
    pub const COLOR: &str = "sensors/color";
    pub const ENV: &str = "sensors/env";
    pub const GLOBAL_POSITION: &str = "global_position";
    pub const CHARGING_REQUEST: &str = "charging/request";

    /// Advertised for every robot but never populated.
    pub const RESERVED: [&str; 3] = [IMU, COLOR, ENV];
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("invalid topic path `{0}`: {1}")]
    InvalidPath(String, &'static str),
    #[error("topic `{0}` already has a publisher")]
    Ownership(String),
    #[error("service `{0}` already has a responder")]
    DuplicateResponder(String),
    #[error("request to `{service}` timed out after {timeout_s} s (at t = {at_s} s)")]
    Timeout {
        service: String,
        timeout_s: f64,
        at_s: f64,
    },
    #[error("responder for `{service}` failed: {message}")]
    Remote { service: String, message: String },
    #[error("topic `{topic}` carries {got} fields, expected {expected}")]
    Shape {
        topic: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid rate {0} Hz")]
    InvalidRate(f64),
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// `/<namespace>/<channel>` or `/<channel>` when global.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicPath {
    namespace: Option<String>,
    channel: String,
}

impl TopicPath {
    pub fn new(namespace: &str, channel: &str) -> Result<Self, BusError> {
        if !valid_segment(namespace) {
            return Err(BusError::InvalidPath(
                format!("/{namespace}/{channel}"),
                "namespace must be non-empty [a-z0-9_]",
            ));
        }
        let mut path = Self::global(channel)?;
        path.namespace = Some(namespace.to_owned());
        Ok(path)
    }

    pub fn global(channel: &str) -> Result<Self, BusError> {
        if !channel.split('/').all(valid_segment) {
            return Err(BusError::InvalidPath(
                format!("/{channel}"),
                "channel segments must be non-empty [a-z0-9_]",
            ));
        }
        Ok(Self {
            namespace: None,
            channel: channel.to_owned(),
        })
    }

    /// Parses a rendered path. The standard global channels stay global;
    /// otherwise the first of several segments is the namespace.
    pub fn parse(path: &str) -> Result<Self, BusError> {
        let rest = path
            .strip_prefix('/')
            .ok_or_else(|| BusError::InvalidPath(path.to_owned(), "must start with `/`"))?;
        if GLOBAL_CHANNELS.contains(&rest) {
            return Self::global(rest);
        }
        match rest.split_once('/') {
            Some((ns, ch)) => Self::new(ns, ch),
            None => Self::global(rest),
        }
    }

    pub fn namespace(&self) -> Option<&str> {
        self.namespace.as_deref()
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn odom(robot: &str) -> Result<Self, BusError> {
        Self::new(robot, channel::ODOM)
    }

    pub fn cmd_vel(robot: &str) -> Result<Self, BusError> {
        Self::new(robot, channel::CMD_VEL)
    }

    pub fn global_position() -> Self {
        Self::global(channel::GLOBAL_POSITION).expect("static path")
    }

    pub fn charging_request() -> Self {
        Self::global(channel::CHARGING_REQUEST).expect("static path")
    }
}

const GLOBAL_CHANNELS: [&str; 2] = [channel::GLOBAL_POSITION, channel::CHARGING_REQUEST];

impl fmt::Display for TopicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.namespace {
            Some(ns) => write!(f, "/{ns}/{}", self.channel),
            None => write!(f, "/{}", self.channel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub robot_id: String,
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
    pub stamp_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationGrant {
    pub station_id: String,
    pub x_m: f64,
    pub y_m: f64,
}

/// Typed message bodies. Field order here is the declared wire order.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Odom {
        x_m: f64,
        y_m: f64,
        theta_rad: f64,
        v_mps: f64,
        w_radps: f64,
        stamp_s: f64,
    },
    CmdVel {
        v_mps: f64,
        w_radps: f64,
    },
    PositionCmd {
        x_m: f64,
        y_m: f64,
    },
    Battery {
        level_wh: f64,
        fraction: f64,
        charging: bool,
    },
    Sound {
        intensity: f64,
    },
    GlobalPositions(Vec<PoseEntry>),
    ChargingRequest {
        robot_id: String,
        x_m: f64,
        y_m: f64,
    },
    ChargingRelease {
        robot_id: String,
    },
    ChargingReply(Option<StationGrant>),
    Scalars(Vec<f64>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Odom { .. } => "odom",
            Payload::CmdVel { .. } => "cmd_vel",
            Payload::PositionCmd { .. } => "position_cmd",
            Payload::Battery { .. } => "battery",
            Payload::Sound { .. } => "sound",
            Payload::GlobalPositions(_) => "global_positions",
            Payload::ChargingRequest { .. } => "charging_request",
            Payload::ChargingRelease { .. } => "charging_release",
            Payload::ChargingReply(_) => "charging_reply",
            Payload::Scalars(_) => "scalars",
        }
    }

    /// Flat scalar view used by [`Bus::aggregate_matrix`]; `None` for
    /// payloads that are not a fixed tuple of numbers.
    pub fn scalar_fields(&self) -> Option<Vec<f64>> {
        match self {
            Payload::Odom {
                x_m,
                y_m,
                theta_rad,
                v_mps,
                w_radps,
                stamp_s,
            } => Some(vec![*x_m, *y_m, *theta_rad, *v_mps, *w_radps, *stamp_s]),
            Payload::CmdVel { v_mps, w_radps } => Some(vec![*v_mps, *w_radps]),
            Payload::PositionCmd { x_m, y_m } => Some(vec![*x_m, *y_m]),
            Payload::Battery {
                level_wh,
                fraction,
                charging,
            } => Some(vec![*level_wh, *fraction, f64::from(u8::from(*charging))]),
            Payload::Sound { intensity } => Some(vec![*intensity]),
            Payload::Scalars(v) => Some(v.clone()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicEnvelope {
    pub topic: TopicPath,
    pub seq: u64,
    pub stamp_s: f64,
    pub payload: Payload,
}

/// Per-topic counters. Every delivered envelope ends up either received
/// by, dropped at, or still queued in each subscription that existed when
/// it was delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TopicStats {
    pub offered: u64,
    pub coalesced: u64,
    pub published: u64,
    pub received: u64,
    pub dropped: u64,
    pub queued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubscriptionStats {
    pub delivered: u64,
    pub received: u64,
    pub dropped: u64,
}

type Handler = Box<dyn FnMut(&Payload) -> Result<Payload, String> + Send>;

#[derive(Default)]
struct TopicState {
    path: Option<TopicPath>,
    publisher: Option<u64>,
    period_s: Option<f64>,
    next_due_s: f64,
    pending: VecDeque<Payload>,
    next_seq: u64,
    last: Option<TopicEnvelope>,
    subscribers: BTreeSet<u64>,
    stats: TopicStats,
}

struct SubQueue {
    topic: String,
    depth: usize,
    queue: VecDeque<TopicEnvelope>,
    stats: SubscriptionStats,
}

#[derive(Default)]
struct Inner {
    clock_s: f64,
    next_handle: u64,
    topics: BTreeMap<String, TopicState>,
    subs: BTreeMap<u64, SubQueue>,
    services: BTreeMap<String, (u64, Arc<Mutex<Handler>>)>,
    next_correlation: u64,
}

impl Inner {
    fn topic(&mut self, path: &TopicPath) -> &mut TopicState {
        let state = self.topics.entry(path.to_string()).or_default();
        state.path.get_or_insert_with(|| path.clone());
        state
    }

    fn handle(&mut self) -> u64 {
        self.next_handle += 1;
        self.next_handle
    }
}

/// Shared handle to one bus. Cloning is cheap; all clones see one bus.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<Inner>>,
}

impl fmt::Debug for Bus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.lock();
        f.debug_struct("Bus")
            .field("clock_s", &inner.clock_s)
            .field("topics", &inner.topics.len())
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panicking holder cannot leave the maps half-updated in a way
        // that matters to other users, so poisoning is ignored.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn now(&self) -> f64 {
        self.lock().clock_s
    }

    /// Claims `topic`. `rate_hz = None` means unthrottled.
    pub fn advertise(
        &self,
        topic: &TopicPath,
        rate_hz: Option<f64>,
    ) -> Result<Publisher, BusError> {
        if let Some(r) = rate_hz {
            if !(r > 0.0 && r.is_finite()) {
                return Err(BusError::InvalidRate(r));
            }
        }
        let mut inner = self.lock();
        let id = inner.handle();
        let state = inner.topic(topic);
        if state.publisher.is_some() {
            return Err(BusError::Ownership(topic.to_string()));
        }
        state.publisher = Some(id);
        state.period_s = rate_hz.map(|r| 1.0 / r);
        state.next_due_s = f64::NEG_INFINITY;
        Ok(Publisher {
            bus: self.clone(),
            topic: topic.clone(),
            id,
        })
    }

    pub fn subscribe(&self, topic: &TopicPath) -> Subscription {
        self.subscribe_with_depth(topic, DEFAULT_QUEUE_DEPTH)
    }

    pub fn subscribe_with_depth(&self, topic: &TopicPath, depth: usize) -> Subscription {
        let mut inner = self.lock();
        let id = inner.handle();
        inner.topic(topic).subscribers.insert(id);
        inner.subs.insert(
            id,
            SubQueue {
                topic: topic.to_string(),
                depth: depth.max(1),
                queue: VecDeque::new(),
                stats: SubscriptionStats::default(),
            },
        );
        Subscription {
            bus: self.clone(),
            topic: topic.clone(),
            id,
        }
    }

    /// Moves the clock to `now_s` and delivers every due offer, topic by
    /// topic in path order. Returns the number of envelopes delivered.
    pub fn flush(&self, now_s: f64) -> usize {
        let mut inner = self.lock();
        if now_s > inner.clock_s {
            inner.clock_s = now_s;
        }
        let now = inner.clock_s;
        let Inner { topics, subs, .. } = &mut *inner;
        let mut delivered = 0;
        for state in topics.values_mut() {
            if state.pending.is_empty() {
                continue;
            }
            let batch: Vec<Payload> = match state.period_s {
                None => state.pending.drain(..).collect(),
                Some(period) => {
                    if now + RATE_SLACK_S < state.next_due_s {
                        continue;
                    }
                    let next = state.next_due_s + period;
                    state.next_due_s = if next > now + RATE_SLACK_S {
                        next
                    } else {
                        now + period
                    };
                    let latest = state.pending.pop_back().expect("non-empty");
                    state.stats.coalesced += state.pending.len() as u64;
                    state.pending.clear();
                    vec![latest]
                }
            };
            let topic = state.path.clone().expect("set on creation");
            for payload in batch {
                state.next_seq += 1;
                let env = TopicEnvelope {
                    topic: topic.clone(),
                    seq: state.next_seq,
                    stamp_s: now,
                    payload,
                };
                for sid in &state.subscribers {
                    let sub = subs.get_mut(sid).expect("registered subscriber");
                    if sub.queue.len() == sub.depth {
                        sub.queue.pop_front();
                        sub.stats.dropped += 1;
                    }
                    sub.queue.push_back(env.clone());
                    sub.stats.delivered += 1;
                }
                state.stats.published += 1;
                state.last = Some(env);
                delivered += 1;
            }
        }
        delivered
    }

    /// Latest delivered envelope on `topic`, if any.
    pub fn latest(&self, topic: &TopicPath) -> Option<TopicEnvelope> {
        self.lock()
            .topics
            .get(&topic.to_string())
            .and_then(|s| s.last.clone())
    }

    /// Counters for `topic`, summed over its current subscriptions.
    pub fn stats(&self, topic: &TopicPath) -> TopicStats {
        let inner = self.lock();
        let Some(state) = inner.topics.get(&topic.to_string()) else {
            return TopicStats::default();
        };
        let mut stats = state.stats;
        for sid in &state.subscribers {
            let sub = &inner.subs[sid];
            stats.received += sub.stats.received;
            stats.dropped += sub.stats.dropped;
            stats.queued += sub.queue.len() as u64;
        }
        stats
    }

    /// Registers the single responder for `service`.
    pub fn serve<F>(&self, service: &TopicPath, handler: F) -> Result<Responder, BusError>
    where
        F: FnMut(&Payload) -> Result<Payload, String> + Send + 'static,
    {
        let mut inner = self.lock();
        let key = service.to_string();
        if inner.services.contains_key(&key) {
            return Err(BusError::DuplicateResponder(key));
        }
        let id = inner.handle();
        inner.services.insert(
            key,
            (id, Arc::new(Mutex::new(Box::new(handler) as Handler))),
        );
        Ok(Responder {
            bus: self.clone(),
            service: service.clone(),
            id,
        })
    }

    /// Sends `body` to the responder of `service` and returns its reply.
    /// Requests are serialized per service. Without a responder the call
    /// fails with a timeout stamped `timeout_s` after the current clock.
    pub fn request(
        &self,
        service: &TopicPath,
        body: Payload,
        timeout_s: f64,
    ) -> Result<Payload, BusError> {
        Ok(self.request_correlated(service, body, timeout_s)?.1)
    }

    /// Like [`Bus::request`] but also returns the correlation id assigned to
    /// the exchange.
    pub fn request_correlated(
        &self,
        service: &TopicPath,
        body: Payload,
        timeout_s: f64,
    ) -> Result<(u64, Payload), BusError> {
        let key = service.to_string();
        let (correlation, handler, now) = {
            let mut inner = self.lock();
            inner.next_correlation += 1;
            let handler = inner.services.get(&key).map(|(_, h)| Arc::clone(h));
            (inner.next_correlation, handler, inner.clock_s)
        };
        let Some(handler) = handler else {
            return Err(BusError::Timeout {
                service: key,
                timeout_s,
                at_s: now + timeout_s,
            });
        };
        // The bus lock is released here so handlers may use the bus.
        let mut handler = handler.lock().unwrap_or_else(|e| e.into_inner());
        match handler(&body) {
            Ok(reply) => Ok((correlation, reply)),
            Err(message) => Err(BusError::Remote {
                service: key,
                message,
            }),
        }
    }

    /// Latest values of `topics` as an `M × N` matrix with columns in
    /// namespace order.
    pub fn aggregate_matrix(
        &self,
        topics: &[TopicPath],
        field_count: usize,
    ) -> Result<Matrix, BusError> {
        let mut sorted: Vec<&TopicPath> = topics.iter().collect();
        sorted.sort();
        let inner = self.lock();
        let mut columns = Vec::with_capacity(sorted.len());
        for topic in sorted {
            let key = topic.to_string();
            let values = match inner.topics.get(&key).and_then(|s| s.last.as_ref()) {
                None => None,
                Some(env) => {
                    let fields = env.payload.scalar_fields().unwrap_or_default();
                    if fields.len() != field_count {
                        return Err(BusError::Shape {
                            topic: key,
                            expected: field_count,
                            got: fields.len(),
                        });
                    }
                    Some(fields)
                }
            };
            columns.push(MatrixColumn {
                namespace: topic.namespace().unwrap_or_default().to_owned(),
                values,
            });
        }
        Ok(Matrix {
            rows: field_count,
            columns,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixColumn {
    pub namespace: String,
    /// `None` while the robot has not published yet.
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub columns: Vec<MatrixColumn>,
}

impl Matrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.columns.len())
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.columns.get(col)?.values.as_ref()?.get(row).copied()
    }
}

/// Exclusive right to publish on one topic. Dropping it frees the topic.
pub struct Publisher {
    bus: Bus,
    topic: TopicPath,
    id: u64,
}

impl fmt::Debug for Publisher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Publisher({})", self.topic)
    }
}

impl Publisher {
    pub fn topic(&self) -> &TopicPath {
        &self.topic
    }

    /// Offers `payload` for delivery at the next due flush.
    pub fn publish(&self, payload: Payload) {
        let mut inner = self.bus.lock();
        let state = inner.topic(&self.topic);
        state.stats.offered += 1;
        state.pending.push_back(payload);
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        // Offers already made are still delivered at the next flush.
        let mut inner = self.bus.lock();
        let state = inner.topic(&self.topic);
        if state.publisher == Some(self.id) {
            state.publisher = None;
        }
    }
}

pub struct Subscription {
    bus: Bus,
    topic: TopicPath,
    id: u64,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Subscription({})", self.topic)
    }
}

impl Subscription {
    pub fn topic(&self) -> &TopicPath {
        &self.topic
    }

    pub fn try_recv(&self) -> Option<TopicEnvelope> {
        let mut inner = self.bus.lock();
        let sub = inner.subs.get_mut(&self.id).expect("live subscription");
        let env = sub.queue.pop_front()?;
        sub.stats.received += 1;
        Some(env)
    }

    pub fn drain(&self) -> Vec<TopicEnvelope> {
        let mut inner = self.bus.lock();
        let sub = inner.subs.get_mut(&self.id).expect("live subscription");
        let out: Vec<_> = sub.queue.drain(..).collect();
        sub.stats.received += out.len() as u64;
        out
    }

    /// Drains the queue and keeps only the newest envelope.
    pub fn latest(&self) -> Option<TopicEnvelope> {
        self.drain().pop()
    }

    pub fn stats(&self) -> SubscriptionStats {
        self.bus.lock().subs[&self.id].stats
    }

    pub fn pending(&self) -> usize {
        self.bus.lock().subs[&self.id].queue.len()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        let mut inner = self.bus.lock();
        if let Some(sub) = inner.subs.remove(&self.id) {
            if let Some(state) = inner.topics.get_mut(&sub.topic) {
                state.subscribers.remove(&self.id);
                // Keep the topic totals whole after the subscriber leaves.
                state.stats.received += sub.stats.received;
                state.stats.dropped += sub.stats.dropped;
            }
        }
    }
}

/// Registration of a service responder. Dropping it unregisters.
pub struct Responder {
    bus: Bus,
    service: TopicPath,
    id: u64,
}

impl fmt::Debug for Responder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Responder({})", self.service)
    }
}

impl Drop for Responder {
    fn drop(&mut self) {
        let mut inner = self.bus.lock();
        let key = self.service.to_string();
        if inner
            .services
            .get(&key)
            .is_some_and(|(id, _)| *id == self.id)
        {
            inner.services.remove(&key);
        }
    }
}
