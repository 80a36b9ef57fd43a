//! RTPS-lite protocol: the eight-primitive operation set, participant and
//! endpoint discovery, heartbeat liveliness, data exchange and clock alignment.
//!
//! A [`ParticipantView`] is a pure state machine: messages go in, replies and
//! local deliveries come out. Transport is the caller's business (see
//! `crate::sim`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{DomainId, SimTime, Topic};

/// Nominal size of every discovery/control message.
pub const DISCOVERY_PAYLOAD_BYTES: u64 = 256;
pub const DEFAULT_HEARTBEAT_PERIOD_MS: u64 = 1000;
pub const DEFAULT_LEASE_MS: u64 = 3 * DEFAULT_HEARTBEAT_PERIOD_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Primitive {
    DataAvailable,
    Info,
    DataW,
    DataR,
    Heartbeat,
    Publish,
    Subscribe,
    StateSync,
}

/// Which part of the protocol a message belongs to; latency is reported per phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Discovery,
    DataExchange,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::DataAvailable,
        Primitive::Info,
        Primitive::DataW,
        Primitive::DataR,
        Primitive::Heartbeat,
        Primitive::Publish,
        Primitive::Subscribe,
        Primitive::StateSync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::DataAvailable => "DATA_AVAILABLE",
            Primitive::Info => "INFO",
            Primitive::DataW => "DATA_W",
            Primitive::DataR => "DATA_R",
            Primitive::Heartbeat => "HEARTBEAT",
            Primitive::Publish => "PUBLISH",
            Primitive::Subscribe => "SUBSCRIBE",
            Primitive::StateSync => "STATE_SYNC",
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            Primitive::DataAvailable
            | Primitive::Info
            | Primitive::DataW
            | Primitive::DataR
            | Primitive::Heartbeat => Phase::Discovery,
            Primitive::Publish | Primitive::Subscribe | Primitive::StateSync => Phase::DataExchange,
        }
    }

    pub fn requires_topic(self) -> bool {
        matches!(
            self,
            Primitive::Publish | Primitive::Subscribe | Primitive::DataW | Primitive::DataR
        )
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entity 0 is the participant itself; endpoints use entity ids > 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Guid {
    pub participant: u32,
    pub entity: u32,
}

impl Guid {
    pub fn participant(participant: u32) -> Guid {
        Guid {
            participant,
            entity: 0,
        }
    }

    pub fn endpoint(participant: u32, entity: u32) -> Guid {
        Guid {
            participant,
            entity,
        }
    }

    /// The participant owning this endpoint.
    pub fn owner(self) -> Guid {
        Guid::participant(self.participant)
    }
}

impl fmt::Display for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.participant, self.entity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtpsMessage {
    pub seq: u64,
    pub src: Guid,
    /// `None` is broadcast to the domain.
    pub dst: Option<Guid>,
    pub domain: DomainId,
    pub primitive: Primitive,
    pub topic: Option<Topic>,
    pub payload_bytes: u64,
    pub sent_at: SimTime,
}

impl RtpsMessage {
    pub fn dst_label(&self) -> String {
        match self.dst {
            Some(g) => g.to_string(),
            None => "*".to_string(),
        }
    }
}

/// One line of the delivered-message trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub t_ms: u64,
    pub seq: u64,
    pub src: Guid,
    pub dst: String,
    pub domain_id: u16,
    pub primitive: Primitive,
    pub topic: String,
    pub payload_bytes: u64,
}

impl TraceRecord {
    pub fn delivered(msg: &RtpsMessage, at: SimTime) -> Self {
        TraceRecord {
            t_ms: at.ms(),
            seq: msg.seq,
            src: msg.src,
            dst: msg.dst_label(),
            domain_id: msg.domain.0,
            primitive: msg.primitive,
            topic: msg
                .topic
                .as_ref()
                .map_or_else(|| "-".to_string(), |t| t.name.clone()),
            payload_bytes: msg.payload_bytes,
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t_ms={} seq={} src={} dst={} domain_id={} primitive={} topic={} payload_bytes={}",
            self.t_ms,
            self.seq,
            self.src,
            self.dst,
            self.domain_id,
            self.primitive,
            self.topic,
            self.payload_bytes
        )
    }
}

/// A PUBLISH handed to a local reader.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub reader: Guid,
    pub writer: Guid,
    pub topic: Topic,
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HandleOutcome {
    pub replies: Vec<RtpsMessage>,
    pub deliveries: Vec<Delivery>,
    pub dropped: bool,
}

/// One participant's knowledge of its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub guid: Guid,
    pub domain: DomainId,
    pub known_participants: BTreeSet<Guid>,
    pub writers: BTreeSet<(Guid, Topic)>,
    pub readers: BTreeSet<(Guid, Topic)>,
    pub last_heartbeat: BTreeMap<Guid, SimTime>,
    pub clock_offset_ms: i64,
    next_seq: u64,
    next_entity: u32,
    pub dropped_cross_domain: u64,
}

impl ParticipantView {
    pub fn new(participant: u32, domain: DomainId) -> Self {
        let guid = Guid::participant(participant);
        ParticipantView {
            guid,
            domain,
            known_participants: BTreeSet::from([guid]),
            writers: BTreeSet::new(),
            readers: BTreeSet::new(),
            last_heartbeat: BTreeMap::new(),
            clock_offset_ms: 0,
            next_seq: 1,
            next_entity: 1,
            dropped_cross_domain: 0,
        }
    }

    /// Creates a local writer endpoint. Topics from other domains are refused.
    pub fn add_writer(&mut self, topic: Topic) -> Option<Guid> {
        if topic.domain != self.domain {
            return None;
        }
        let g = Guid::endpoint(self.guid.participant, self.next_entity);
        self.next_entity += 1;
        self.writers.insert((g, topic));
        Some(g)
    }

    pub fn add_reader(&mut self, topic: Topic) -> Option<Guid> {
        if topic.domain != self.domain {
            return None;
        }
        let g = Guid::endpoint(self.guid.participant, self.next_entity);
        self.next_entity += 1;
        self.readers.insert((g, topic));
        Some(g)
    }

    fn is_local(&self, g: Guid) -> bool {
        g.participant == self.guid.participant
    }

    pub fn local_writers(&self) -> impl Iterator<Item = &(Guid, Topic)> {
        self.writers.iter().filter(|(g, _)| self.is_local(*g))
    }

    pub fn local_readers(&self) -> impl Iterator<Item = &(Guid, Topic)> {
        self.readers.iter().filter(|(g, _)| self.is_local(*g))
    }

    /// Local wall-clock reading after clock alignment.
    pub fn stamp(&self, now: SimTime) -> SimTime {
        SimTime((now.0 as i64 + self.clock_offset_ms).max(0) as u64)
    }

    pub fn next_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Builds an outgoing message with a fresh sequence number and corrected timestamp.
    pub fn message(
        &mut self,
        src: Guid,
        dst: Option<Guid>,
        primitive: Primitive,
        topic: Option<Topic>,
        payload_bytes: u64,
        now: SimTime,
    ) -> RtpsMessage {
        RtpsMessage {
            seq: self.next_seq(),
            src,
            dst,
            domain: self.domain,
            primitive,
            topic,
            payload_bytes,
            sent_at: self.stamp(now),
        }
    }

    /// Full announce set: DATA_AVAILABLE, INFO, then one DATA_W per local
    /// writer and one DATA_R per local reader.
    pub fn announce(&mut self, now: SimTime) -> Vec<RtpsMessage> {
        self.announce_to(None, now)
    }

    fn announce_to(&mut self, dst: Option<Guid>, now: SimTime) -> Vec<RtpsMessage> {
        let me = self.guid;
        let mut out = vec![
            self.message(
                me,
                dst,
                Primitive::DataAvailable,
                None,
                DISCOVERY_PAYLOAD_BYTES,
                now,
            ),
            self.message(me, dst, Primitive::Info, None, DISCOVERY_PAYLOAD_BYTES, now),
        ];
        let writers: Vec<_> = self.local_writers().cloned().collect();
        let readers: Vec<_> = self.local_readers().cloned().collect();
        for (g, t) in writers {
            out.push(self.message(
                g,
                dst,
                Primitive::DataW,
                Some(t),
                DISCOVERY_PAYLOAD_BYTES,
                now,
            ));
        }
        for (g, t) in readers {
            out.push(self.message(
                g,
                dst,
                Primitive::DataR,
                Some(t),
                DISCOVERY_PAYLOAD_BYTES,
                now,
            ));
        }
        out
    }

    pub fn heartbeat(&mut self, now: SimTime) -> RtpsMessage {
        let me = self.guid;
        self.message(
            me,
            None,
            Primitive::Heartbeat,
            None,
            DISCOVERY_PAYLOAD_BYTES,
            now,
        )
    }

    fn learn_participant(&mut self, p: Guid, now: SimTime) -> bool {
        let fresh = self.known_participants.insert(p);
        if fresh {
            self.last_heartbeat.entry(p).or_insert(now);
        }
        fresh
    }

    /// Processes one inbound message.
    pub fn handle(&mut self, msg: &RtpsMessage, now: SimTime) -> HandleOutcome {
        let mut out = HandleOutcome::default();
        if msg.domain != self.domain {
            self.dropped_cross_domain += 1;
            out.dropped = true;
            return out;
        }
        if let Some(dst) = msg.dst {
            if dst.participant != self.guid.participant {
                return out;
            }
        }
        let sender = msg.src.owner();
        if sender == self.guid {
            return out;
        }
        match msg.primitive {
            Primitive::DataAvailable | Primitive::Info => {
                if self.learn_participant(sender, now) {
                    out.replies = self.announce_to(Some(sender), now);
                }
            }
            Primitive::DataW | Primitive::DataR => {
                self.learn_participant(sender, now);
                if let Some(t) = msg.topic.clone().filter(|t| t.domain == self.domain) {
                    if msg.primitive == Primitive::DataW {
                        self.writers.insert((msg.src, t));
                    } else {
                        self.readers.insert((msg.src, t));
                    }
                }
            }
            Primitive::Heartbeat => {
                self.known_participants.insert(sender);
                self.last_heartbeat.insert(sender, now);
            }
            Primitive::Publish => {
                if let Some(t) = &msg.topic {
                    for (reader, rt) in self.local_readers() {
                        let addressed = msg.dst.is_none_or(|d| d.entity == 0 || d == *reader);
                        if rt == t && addressed {
                            out.deliveries.push(Delivery {
                                reader: *reader,
                                writer: msg.src,
                                topic: t.clone(),
                                seq: msg.seq,
                            });
                        }
                    }
                }
            }
            Primitive::Subscribe => {
                if let Some(t) = msg.topic.clone().filter(|t| t.domain == self.domain) {
                    self.readers.insert((msg.src, t));
                }
            }
            Primitive::StateSync => {
                self.state_sync(msg.sent_at, now);
            }
        }
        out
    }

    /// Drops every known participant whose lease has lapsed, together with its endpoints.
    pub fn check_liveliness(&mut self, now: SimTime, lease_ms: u64) -> Vec<Guid> {
        assert!(lease_ms > 0, "lease must be positive");
        let expired: Vec<Guid> = self
            .known_participants
            .iter()
            .copied()
            .filter(|g| *g != self.guid)
            .filter(|g| {
                let last = self.last_heartbeat.get(g).copied().unwrap_or(SimTime::ZERO);
                now.saturating_sub(last) > lease_ms
            })
            .collect();
        for g in &expired {
            self.forget(*g);
        }
        expired
    }

    pub fn forget(&mut self, participant: Guid) {
        self.known_participants.remove(&participant);
        self.last_heartbeat.remove(&participant);
        self.writers
            .retain(|(g, _)| g.participant != participant.participant);
        self.readers
            .retain(|(g, _)| g.participant != participant.participant);
    }

    pub fn state_sync(&mut self, peer_timestamp: SimTime, local_timestamp: SimTime) {
        self.clock_offset_ms = peer_timestamp.0 as i64 - local_timestamp.0 as i64;
    }

    pub fn matches(&self) -> Vec<(Guid, Guid)> {
        let w: Vec<_> = self.writers.iter().cloned().collect();
        let r: Vec<_> = self.readers.iter().cloned().collect();
        match_endpoints(&w, &r)
    }
}

/// All (writer, reader) pairs sharing a topic (and therefore a domain), sorted.
pub fn match_endpoints(writers: &[(Guid, Topic)], readers: &[(Guid, Topic)]) -> Vec<(Guid, Guid)> {
    let mut pairs: Vec<(Guid, Guid)> = writers
        .iter()
        .flat_map(|(w, wt)| {
            readers
                .iter()
                .filter(move |(_, rt)| rt == wt)
                .map(move |(r, _)| (*w, *r))
        })
        .collect();
    pairs.sort();
    pairs.dedup();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic(d: DomainId) -> Topic {
        Topic::new("T", d)
    }

    fn kinds(msgs: &[RtpsMessage]) -> Vec<Primitive> {
        msgs.iter().map(|m| m.primitive).collect()
    }

    #[test]
    fn announce_sets() {
        let mut v = ParticipantView::new(1, DomainId::AIR_Q);
        assert_eq!(
            kinds(&v.announce(SimTime(0))),
            vec![Primitive::DataAvailable, Primitive::Info]
        );

        v.add_writer(topic(DomainId::AIR_Q)).unwrap();
        assert_eq!(
            kinds(&v.announce(SimTime(0))),
            vec![Primitive::DataAvailable, Primitive::Info, Primitive::DataW]
        );

        let mut r = ParticipantView::new(2, DomainId::AIR_Q);
        r.add_reader(topic(DomainId::AIR_Q)).unwrap();
        r.add_reader(Topic::new("U", DomainId::AIR_Q)).unwrap();
        assert_eq!(
            kinds(&r.announce(SimTime(0))),
            vec![
                Primitive::DataAvailable,
                Primitive::Info,
                Primitive::DataR,
                Primitive::DataR
            ]
        );
    }

    #[test]
    fn seq_strictly_increases() {
        let mut v = ParticipantView::new(1, DomainId::AIR_Q);
        v.add_writer(topic(DomainId::AIR_Q));
        let msgs: Vec<_> = (0..3).flat_map(|_| v.announce(SimTime(0))).collect();
        assert!(msgs.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn unknown_sender_triggers_reply() {
        let mut a = ParticipantView::new(1, DomainId::AIR_Q);
        let mut b = ParticipantView::new(2, DomainId::AIR_Q);
        b.add_writer(topic(DomainId::AIR_Q));
        let ann = a.announce(SimTime(0));
        let out = b.handle(&ann[0], SimTime(3));
        assert!(b.known_participants.contains(&a.guid));
        assert_eq!(
            kinds(&out.replies),
            vec![Primitive::DataAvailable, Primitive::Info, Primitive::DataW]
        );
        assert!(out.replies.iter().all(|m| m.dst == Some(a.guid)));
        // second contact from a known sender: no reply
        let out = b.handle(&ann[1], SimTime(4));
        assert!(out.replies.is_empty());
    }

    #[test]
    fn heartbeat_refreshes_lease() {
        let mut a = ParticipantView::new(1, DomainId::AIR_Q);
        let mut b = ParticipantView::new(2, DomainId::AIR_Q);
        let hb = a.heartbeat(SimTime(5000));
        let out = b.handle(&hb, SimTime(5000));
        assert!(out.replies.is_empty());
        assert_eq!(b.last_heartbeat[&a.guid], SimTime(5000));
    }

    #[test]
    fn publish_without_reader_delivers_nothing() {
        let mut w = ParticipantView::new(1, DomainId::AIR_Q);
        let wg = w.add_writer(topic(DomainId::AIR_Q)).unwrap();
        let mut r = ParticipantView::new(2, DomainId::AIR_Q);
        let msg = w.message(
            wg,
            None,
            Primitive::Publish,
            Some(topic(DomainId::AIR_Q)),
            10,
            SimTime(0),
        );
        let out = r.handle(&msg, SimTime(1));
        assert!(out.deliveries.is_empty());
        assert!(!out.dropped);
    }

    #[test]
    fn publish_reaches_matched_reader() {
        let mut w = ParticipantView::new(1, DomainId::AIR_Q);
        let wg = w.add_writer(topic(DomainId::AIR_Q)).unwrap();
        let mut r = ParticipantView::new(2, DomainId::AIR_Q);
        let rg = r.add_reader(topic(DomainId::AIR_Q)).unwrap();
        let msg = w.message(
            wg,
            Some(rg),
            Primitive::Publish,
            Some(topic(DomainId::AIR_Q)),
            10,
            SimTime(0),
        );
        let out = r.handle(&msg, SimTime(1));
        assert_eq!(out.deliveries.len(), 1);
        assert_eq!(out.deliveries[0].reader, rg);
    }

    #[test]
    fn cross_domain_is_dropped_and_counted() {
        let mut w = ParticipantView::new(1, DomainId::AIR_Q);
        let wg = w.add_writer(topic(DomainId::AIR_Q)).unwrap();
        let mut r = ParticipantView::new(2, DomainId::TRANSPORT);
        r.add_reader(topic(DomainId::TRANSPORT)).unwrap();
        let msg = w.message(
            wg,
            None,
            Primitive::Publish,
            Some(topic(DomainId::AIR_Q)),
            10,
            SimTime(0),
        );
        let out = r.handle(&msg, SimTime(1));
        assert!(out.dropped);
        assert!(out.deliveries.is_empty());
        assert_eq!(r.dropped_cross_domain, 1);
        assert!(!r.known_participants.contains(&w.guid));
    }

    #[test]
    fn foreign_topic_endpoint_rejected() {
        let mut v = ParticipantView::new(1, DomainId::AIR_Q);
        assert!(v.add_writer(topic(DomainId::TRANSPORT)).is_none());
    }

    #[test]
    fn matching_rules() {
        let d0 = DomainId::AIR_Q;
        let w = |p| (Guid::endpoint(p, 1), topic(d0));
        let r = |p, d| (Guid::endpoint(p, 2), topic(d));
        assert_eq!(match_endpoints(&[w(1)], &[r(2, d0)]).len(), 1);
        assert_eq!(
            match_endpoints(&[w(1)], &[r(2, DomainId::TRANSPORT)]).len(),
            0
        );
        let pairs = match_endpoints(&[w(1), w(2)], &[r(3, d0), r(4, d0), r(5, d0)]);
        assert_eq!(pairs.len(), 6);
        assert!(pairs.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn liveliness_expiry() {
        let mut v = ParticipantView::new(1, DomainId::AIR_Q);
        assert!(v.check_liveliness(SimTime(10_000), 9000).is_empty());

        let a = Guid::participant(2);
        let b = Guid::participant(3);
        v.known_participants.insert(a);
        v.known_participants.insert(b);
        v.last_heartbeat.insert(a, SimTime(0));
        v.last_heartbeat.insert(b, SimTime(2000));
        v.writers
            .insert((Guid::endpoint(2, 1), topic(DomainId::AIR_Q)));
        v.readers
            .insert((Guid::endpoint(3, 1), topic(DomainId::AIR_Q)));
        let expired = v.check_liveliness(SimTime(10_000), 9000);
        assert_eq!(expired, vec![a]);
        assert!(v.known_participants.contains(&b));
        assert!(v
            .matches()
            .iter()
            .all(|(w, r)| w.participant != 2 && r.participant != 2));
        assert!(v.writers.is_empty());
    }

    #[test]
    fn clock_alignment() {
        let mut v = ParticipantView::new(1, DomainId::AIR_Q);
        v.state_sync(SimTime(1000), SimTime(1000));
        assert_eq!(v.clock_offset_ms, 0);
        v.state_sync(SimTime(1500), SimTime(1000));
        assert_eq!(v.clock_offset_ms, 500);
        assert_eq!(v.stamp(SimTime(2000)), SimTime(2500));
        v.state_sync(SimTime(500), SimTime(1000));
        assert_eq!(v.clock_offset_ms, -500);
        assert_eq!(v.stamp(SimTime(2000)), SimTime(1500));
    }

    #[test]
    fn trace_record_format() {
        let mut v = ParticipantView::new(4, DomainId::TRANSPORT);
        let m = v.heartbeat(SimTime(7));
        let rec = TraceRecord::delivered(&m, SimTime(12));
        assert_eq!(
            rec.to_string(),
            "t_ms=12 seq=1 src=4:0 dst=* domain_id=1 primitive=HEARTBEAT topic=- payload_bytes=256"
        );
    }
}
