//! Deterministic discrete-event engine with store-and-forward underlay links.
//!
//! Events run in `(at, seq)` order where `seq` is a global insertion counter.
//! Link occupancy is tracked in fractional milliseconds; event times are the
//! ceiling of the exact arrival so the integer clock never runs ahead of a
//! transfer.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainId, SimTime};
use crate::overlay::UnderlaySpec;
use crate::rtps::{Guid, Phase, RtpsMessage, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct UnderlayLink {
    pub id: usize,
    pub bandwidth_bytes_per_ms: f64,
    pub prop_delay_ms: f64,
    /// Exact time the transmitter frees up; transfers queue FIFO behind it.
    pub busy_until: f64,
}

impl UnderlayLink {
    pub fn new(id: usize, bandwidth_bytes_per_ms: f64, prop_delay_ms: f64) -> Self {
        assert!(bandwidth_bytes_per_ms > 0.0, "bandwidth must be positive");
        UnderlayLink {
            id,
            bandwidth_bytes_per_ms,
            prop_delay_ms,
            busy_until: 0.0,
        }
    }

    pub fn from_spec(spec: &UnderlaySpec) -> Self {
        Self::new(spec.id, spec.bandwidth_bytes_per_ms, spec.prop_delay_ms)
    }

    pub fn residual(&self, now: f64) -> f64 {
        (self.busy_until - now).max(0.0)
    }

    pub fn serialization_ms(&self, payload_bytes: u64) -> f64 {
        payload_bytes as f64 / self.bandwidth_bytes_per_ms
    }
}

/// Time for `payload_bytes` offered to `link` at `now` to reach the far end.
pub fn transfer_time(link: &UnderlayLink, payload_bytes: u64, now: f64) -> f64 {
    link.serialization_ms(payload_bytes) + link.prop_delay_ms + link.residual(now)
}

/// A message in transit along an underlay path.
#[derive(Debug, Clone, PartialEq)]
pub struct Flight {
    pub msg: RtpsMessage,
    pub path: Vec<usize>,
    /// Index of the next link to traverse; equals `path.len()` on arrival.
    pub hop: usize,
    /// Exact time the flight reached its current position.
    pub arrived_at: f64,
    /// Device that originated the flow, when it is a sensor reading.
    pub device: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Deliver(Box<Flight>),
    DeviceWake(usize),
    HeartbeatTick(Guid),
    EpisodeEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (at, seq)
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    /// Originating device for sensor readings, otherwise the source participant id.
    pub flow: u64,
    pub device: Option<usize>,
    pub domain: DomainId,
    pub d_ms: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Dropped,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Stats {
    pub samples: Vec<LatencySample>,
    pub counters: Counters,
    pub bytes_by_domain: BTreeMap<DomainId, u64>,
}

impl Stats {
    pub fn phase_latencies(&self, phase: Phase) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.phase == phase)
            .map(|s| s.d_ms)
            .collect()
    }

    /// Structured text summary: per-phase and per-domain count, mean, p50, p95.
    pub fn export(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, label: String, xs: &[f64], bytes: Option<u64>| {
            let _ = write!(out, "{label} count={}", xs.len());
            if !xs.is_empty() {
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let _ = write!(
                    out,
                    " mean_ms={:.6} p50_ms={:.6} p95_ms={:.6}",
                    mean,
                    percentile(xs, 50.0).unwrap_or(0.0),
                    percentile(xs, 95.0).unwrap_or(0.0)
                );
            }
            if let Some(b) = bytes {
                let _ = write!(out, " bytes_sent={b}");
            }
            out.push('\n');
        };
        for phase in [Phase::Discovery, Phase::DataExchange] {
            line(
                &mut out,
                format!("phase={phase:?}"),
                &self.phase_latencies(phase),
                None,
            );
        }
        let c = &self.counters;
        let _ = writeln!(
            out,
            "totals sent={} delivered={} dropped={} in_flight={} bytes_sent={} bytes_delivered={}",
            c.sent, c.delivered, c.dropped, c.in_flight, c.bytes_sent, c.bytes_delivered
        );
        let domains: Vec<DomainId> = self.bytes_by_domain.keys().copied().collect();
        for d in domains {
            for phase in [Phase::Discovery, Phase::DataExchange] {
                let xs: Vec<f64> = self
                    .samples
                    .iter()
                    .filter(|s| s.domain == d && s.phase == phase)
                    .map(|s| s.d_ms)
                    .collect();
                line(
                    &mut out,
                    format!("domain={} phase={phase:?}", d.0),
                    &xs,
                    (phase == Phase::Discovery).then(|| self.bytes_by_domain[&d]),
                );
            }
        }
        out
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest sample (1-based).
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Validation(format!("percentile {p} outside (0,100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Callbacks the engine makes into the simulated system.
pub trait World {
    fn on_deliver(&mut self, engine: &mut Engine, flight: &Flight) -> Verdict;

    fn on_wake(&mut self, _engine: &mut Engine, _device: usize) -> Result<()> {
        Ok(())
    }

    fn on_heartbeat(&mut self, _engine: &mut Engine, _guid: Guid) -> Result<()> {
        Ok(())
    }

    fn on_episode_end(&mut self, _engine: &mut Engine) -> Result<()> {
        Ok(())
    }
}

/// Accepts every delivery and ignores all other events.
pub struct NullWorld;

impl World for NullWorld {
    fn on_deliver(&mut self, _engine: &mut Engine, _flight: &Flight) -> Verdict {
        Verdict::Accepted
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    clock: SimTime,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    links: Vec<UnderlayLink>,
    stats: Stats,
    trace: Option<String>,
}

impl Engine {
    pub fn new(links: Vec<UnderlayLink>) -> Self {
        Engine {
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            links,
            stats: Stats::default(),
            trace: None,
        }
    }

    pub fn from_specs(specs: &[UnderlaySpec]) -> Self {
        Self::new(specs.iter().map(UnderlayLink::from_spec).collect())
    }

    /// Adds links that appeared in the overlay since construction.
    pub fn sync_links(&mut self, specs: &[UnderlaySpec]) {
        for spec in specs.iter().skip(self.links.len()) {
            self.links.push(UnderlayLink::from_spec(spec));
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(String::new);
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.as_mut().map(std::mem::take)
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn links(&self) -> &[UnderlayLink] {
        &self.links
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    pub fn take_samples(&mut self) -> Vec<LatencySample> {
        std::mem::take(&mut self.stats.samples)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.at)
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<u64> {
        if at < self.clock {
            return Err(Error::PastEvent {
                at: at.0,
                clock: self.clock.0,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { at, seq, kind });
        Ok(seq)
    }

    /// Injects a message at the current clock and walks it over `path`.
    pub fn send_over_path(
        &mut self,
        msg: RtpsMessage,
        path: Vec<usize>,
        device: Option<usize>,
    ) -> Result<()> {
        if path.is_empty() {
            return Err(Error::Validation("underlay path must be non-empty".into()));
        }
        if let Some(bad) = path.iter().find(|l| **l >= self.links.len()) {
            return Err(Error::Validation(format!("unknown underlay link {bad}")));
        }
        self.stats.counters.sent += 1;
        self.stats.counters.in_flight += 1;
        self.stats.counters.bytes_sent += msg.payload_bytes;
        *self.stats.bytes_by_domain.entry(msg.domain).or_default() += msg.payload_bytes;
        let flight = Flight {
            msg,
            path,
            hop: 0,
            arrived_at: self.clock.0 as f64,
            device,
        };
        self.forward(flight)
    }

    /// Occupies the next link and schedules arrival at the following hop.
    fn forward(&mut self, mut flight: Flight) -> Result<()> {
        let link = &mut self.links[flight.path[flight.hop]];
        let start = flight.arrived_at.max(link.busy_until);
        let done = start + link.serialization_ms(flight.msg.payload_bytes);
        link.busy_until = done;
        flight.arrived_at = done + link.prop_delay_ms;
        flight.hop += 1;
        let at = SimTime(flight.arrived_at.ceil() as u64);
        self.schedule(at, EventKind::Deliver(Box::new(flight)))?;
        Ok(())
    }

    /// Executes every event with `at <= t_end`; the clock finishes at `t_end`.
    pub fn run_until(&mut self, t_end: SimTime, world: &mut dyn World) -> Result<()> {
        if t_end < self.clock {
            return Err(Error::PastEvent {
                at: t_end.0,
                clock: self.clock.0,
            });
        }
        while let Some(ev) = self.queue.peek() {
            if ev.at > t_end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.clock = ev.at;
            self.dispatch(ev, world)?;
        }
        self.clock = t_end;
        Ok(())
    }

    /// Runs until the queue is empty or the next event lies beyond `limit`.
    pub fn run_to_quiescence(&mut self, limit: SimTime, world: &mut dyn World) -> Result<()> {
        while let Some(at) = self.next_event_time() {
            if at > limit {
                break;
            }
            self.run_until(at, world)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, ev: Event, world: &mut dyn World) -> Result<()> {
        match ev.kind {
            EventKind::Deliver(flight) => {
                if flight.hop < flight.path.len() {
                    return self.forward(*flight);
                }
                self.stats.counters.in_flight -= 1;
                match world.on_deliver(self, &flight) {
                    Verdict::Accepted => {
                        let c = &mut self.stats.counters;
                        c.delivered += 1;
                        c.bytes_delivered += flight.msg.payload_bytes;
                        let d_ms = (flight.arrived_at - flight.msg.sent_at.0 as f64).max(0.0);
                        self.stats.samples.push(LatencySample {
                            flow: flight
                                .device
                                .map_or(flight.msg.src.participant as u64, |d| d as u64),
                            device: flight.device,
                            domain: flight.msg.domain,
                            d_ms,
                            phase: flight.msg.primitive.phase(),
                        });
                        if let Some(t) = self.trace.as_mut() {
                            let _ = writeln!(t, "{}", TraceRecord::delivered(&flight.msg, ev.at));
                        }
                    }
                    Verdict::Dropped => self.stats.counters.dropped += 1,
                }
                Ok(())
            }
            EventKind::DeviceWake(d) => world.on_wake(self, d),
            EventKind::HeartbeatTick(g) => world.on_heartbeat(self, g),
            EventKind::EpisodeEnd => world.on_episode_end(self),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtps::Primitive;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn msg(payload: u64, primitive: Primitive) -> RtpsMessage {
        RtpsMessage {
            seq: 1,
            src: Guid::participant(1),
            dst: Some(Guid::participant(2)),
            domain: DomainId::AIR_Q,
            primitive,
            topic: None,
            payload_bytes: payload,
            sent_at: SimTime(0),
        }
    }

    struct Recorder(Vec<(SimTime, usize)>);

    impl World for Recorder {
        fn on_deliver(&mut self, _: &mut Engine, _: &Flight) -> Verdict {
            Verdict::Accepted
        }
        fn on_wake(&mut self, e: &mut Engine, d: usize) -> Result<()> {
            self.0.push((e.clock(), d));
            Ok(())
        }
    }

    #[test]
    fn transfer_time_cases() {
        let mut l = UnderlayLink::new(0, 12_500.0, 2.0);
        assert_eq!(transfer_time(&l, 125_000, 0.0), 12.0);
        assert_eq!(transfer_time(&l, 0, 0.0), 2.0);
        l.busy_until = 10.0;
        assert_eq!(transfer_time(&l, 0, 0.0), 12.0);
    }

    #[test]
    fn same_time_events_run_in_insertion_order() {
        let mut e = Engine::new(vec![]);
        e.schedule(SimTime(5), EventKind::DeviceWake(2)).unwrap();
        e.schedule(SimTime(5), EventKind::DeviceWake(1)).unwrap();
        e.schedule(SimTime(0), EventKind::DeviceWake(9)).unwrap();
        let mut w = Recorder(vec![]);
        e.run_until(SimTime(10), &mut w).unwrap();
        assert_eq!(w.0, vec![(SimTime(0), 9), (SimTime(5), 2), (SimTime(5), 1)]);
        assert_eq!(e.clock(), SimTime(10));
    }

    #[test]
    fn past_event_rejected() {
        let mut e = Engine::new(vec![]);
        e.run_until(SimTime(100), &mut NullWorld).unwrap();
        assert!(matches!(
            e.schedule(SimTime(99), EventKind::EpisodeEnd),
            Err(Error::PastEvent { .. })
        ));
        assert!(e.schedule(SimTime(100), EventKind::EpisodeEnd).is_ok());
    }

    #[test]
    fn single_hop_latency() {
        let mut e = Engine::new(vec![UnderlayLink::new(0, 12_500.0, 2.0)]);
        e.send_over_path(msg(125_000, Primitive::Publish), vec![0], Some(0))
            .unwrap();
        e.run_until(SimTime(100), &mut NullWorld).unwrap();
        assert_eq!(e.stats().samples.len(), 1);
        assert_eq!(e.stats().samples[0].d_ms, 12.0);
        assert_eq!(e.stats().samples[0].phase, Phase::DataExchange);
    }

    #[test]
    fn two_hop_latency() {
        let mut e = Engine::new(vec![
            UnderlayLink::new(0, 12_500.0, 2.0),
            UnderlayLink::new(1, 12_500.0, 2.0),
        ]);
        e.send_over_path(msg(125_000, Primitive::Publish), vec![0, 1], None)
            .unwrap();
        e.run_until(SimTime(100), &mut NullWorld).unwrap();
        assert_eq!(e.stats().samples[0].d_ms, 24.0);
    }

    #[test]
    fn zero_payload_prop_only() {
        let mut e = Engine::new(vec![
            UnderlayLink::new(0, 12_500.0, 2.0),
            UnderlayLink::new(1, 12_500.0, 3.0),
        ]);
        e.send_over_path(msg(0, Primitive::Heartbeat), vec![0, 1], None)
            .unwrap();
        e.run_until(SimTime(100), &mut NullWorld).unwrap();
        assert_eq!(e.stats().samples[0].d_ms, 5.0);
        assert_eq!(e.stats().samples[0].phase, Phase::Discovery);
    }

    #[test]
    fn fifo_queueing_adds_residual() {
        let mut e = Engine::new(vec![UnderlayLink::new(0, 12_500.0, 0.0)]);
        e.send_over_path(msg(125_000, Primitive::Publish), vec![0], None)
            .unwrap();
        e.send_over_path(msg(125_000, Primitive::Publish), vec![0], None)
            .unwrap();
        e.run_until(SimTime(100), &mut NullWorld).unwrap();
        let d: Vec<f64> = e.stats().samples.iter().map(|s| s.d_ms).collect();
        assert_eq!(d, vec![10.0, 20.0]);
    }

    #[test]
    fn transfer_spanning_run_segments_completes_later() {
        let mut e = Engine::new(vec![UnderlayLink::new(0, 12_500.0, 2.0)]);
        e.send_over_path(msg(125_000, Primitive::Publish), vec![0], None)
            .unwrap();
        e.run_until(SimTime(5), &mut NullWorld).unwrap();
        assert_eq!(e.stats().counters.in_flight, 1);
        assert!(e.stats().samples.is_empty());
        e.run_until(SimTime(50), &mut NullWorld).unwrap();
        assert_eq!(e.stats().counters.delivered, 1);
        assert_eq!(e.stats().samples[0].d_ms, 12.0);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut e = Engine::new(vec![]);
        e.run_until(SimTime(1234), &mut NullWorld).unwrap();
        assert_eq!(e.clock(), SimTime(1234));
        assert!(e.stats().samples.is_empty());
    }

    #[test]
    fn percentile_cases() {
        assert_eq!(percentile(&[7.0], 95.0).unwrap(), 7.0);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&hundred, 95.0).unwrap(), 95.0);
        let twenty: Vec<f64> = (1..=20).rev().map(f64::from).collect();
        assert_eq!(percentile(&twenty, 95.0).unwrap(), 19.0);
        assert!(matches!(percentile(&[], 95.0), Err(Error::EmptySamples)));
        assert!(percentile(&[1.0], 0.0).is_err());
    }

    /// Sort-based oracle with integer rank arithmetic.
    fn oracle(xs: &[f64], p: u32) -> f64 {
        let mut s = xs.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len() as u32;
        let rank = (p * n).div_ceil(100).max(1);
        s[(rank - 1) as usize]
    }

    #[test]
    fn percentile_matches_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..300);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1000.0)).collect();
            let p = rng.gen_range(1..=100u32);
            assert_eq!(percentile(&xs, p as f64).unwrap(), oracle(&xs, p));
        }
    }

    proptest! {
        #[test]
        fn latency_never_below_propagation(payloads in proptest::collection::vec(0u64..200_000, 1..20)) {
            let mut e = Engine::new(vec![UnderlayLink::new(0, 12_500.0, 2.0), UnderlayLink::new(1, 5_000.0, 3.5)]);
            for p in &payloads {
                e.send_over_path(msg(*p, Primitive::Publish), vec![0, 1], None).unwrap();
                let c = &e.stats().counters;
                prop_assert_eq!(c.sent, c.delivered + c.in_flight + c.dropped);
            }
            e.run_until(SimTime(1_000_000), &mut NullWorld).unwrap();
            let c = &e.stats().counters;
            prop_assert_eq!(c.sent, c.delivered);
            for s in &e.stats().samples {
                prop_assert!(s.d_ms >= 5.5);
            }
        }
    }
}
