//! The simulated twin network: overlay, RTPS participant views and devices,
//! wired into the event engine as a [`World`].

use std::collections::BTreeMap;

use crate::energy::{self, BatteryModel, EnergyLedger};
use crate::error::{Error, Result};
use crate::model::{Device, DeviceState, DomainId, SimTime, Topic};
use crate::netsim::{Engine, EventKind, Flight, Verdict, World};
use crate::overlay::{EntityDescriptor, NodeId, NodeKind, OverlayGraph};
use crate::rtps::{Guid, ParticipantView, Primitive, RtpsMessage, DISCOVERY_PAYLOAD_BYTES};

#[derive(Debug, Clone)]
pub struct Network {
    pub overlay: OverlayGraph,
    pub views: BTreeMap<u32, ParticipantView>,
    node_of: BTreeMap<u32, NodeId>,
    pub devices: Vec<Device>,
    /// Twin participant and writer endpoint publishing for each device.
    pub device_writer: Vec<Guid>,
    pub rest_state: Vec<DeviceState>,
    pub model: BatteryModel,
    pub ledger: EnergyLedger,
    energy_clock: Vec<SimTime>,
    pub transmitted: Vec<bool>,
    route_cache: BTreeMap<(NodeId, NodeId), Vec<usize>>,
    pub heartbeat_period_ms: u64,
    pub lease_ms: u64,
    /// Heartbeats are not rescheduled past this time.
    pub heartbeat_until: SimTime,
    pub publish_deliveries: u64,
    pub cross_domain_deliveries: u64,
    pub unroutable: u64,
}

impl Network {
    pub fn new(overlay: OverlayGraph, model: BatteryModel) -> Self {
        Network {
            overlay,
            views: BTreeMap::new(),
            node_of: BTreeMap::new(),
            devices: Vec::new(),
            device_writer: Vec::new(),
            rest_state: Vec::new(),
            model,
            ledger: EnergyLedger::default(),
            energy_clock: Vec::new(),
            transmitted: Vec::new(),
            route_cache: BTreeMap::new(),
            heartbeat_period_ms: crate::rtps::DEFAULT_HEARTBEAT_PERIOD_MS,
            lease_ms: crate::rtps::DEFAULT_LEASE_MS,
            heartbeat_until: SimTime::ZERO,
            publish_deliveries: 0,
            cross_domain_deliveries: 0,
            unroutable: 0,
        }
    }

    /// Adds a domain with its gateway participant.
    pub fn add_domain(&mut self, domain: DomainId, participant: u32) -> Result<NodeId> {
        let node = self
            .overlay
            .add_domain(domain, Guid::participant(participant))?;
        self.views
            .insert(participant, ParticipantView::new(participant, domain));
        self.node_of.insert(participant, node);
        Ok(node)
    }

    /// Joins a participant to the overlay and creates its view.
    pub fn add_participant(
        &mut self,
        participant: u32,
        domain: DomainId,
        kind: NodeKind,
    ) -> Result<NodeId> {
        let node = self.overlay.register_twin(
            EntityDescriptor {
                guid: Guid::participant(participant),
                kind,
            },
            domain,
        )?;
        self.views
            .insert(participant, ParticipantView::new(participant, domain));
        self.node_of.insert(participant, node);
        self.route_cache.clear();
        Ok(node)
    }

    /// Adds a service application reading `topic`.
    pub fn add_service_app(&mut self, participant: u32, topic: &Topic) -> Result<Guid> {
        let node = self.add_participant(participant, topic.domain, NodeKind::ServiceApp)?;
        self.overlay.subscribe(topic, node)?;
        let view = self.views.get_mut(&participant).expect("just inserted");
        view.add_reader(topic.clone())
            .ok_or_else(|| Error::Validation("reader topic outside domain".into()))
    }

    /// Adds a device together with its twin participant writing `topic`.
    pub fn add_device(
        &mut self,
        participant: u32,
        device: Device,
        topic: &Topic,
        rest: DeviceState,
    ) -> Result<()> {
        if device.id != self.devices.len() {
            return Err(Error::Validation(format!(
                "device ids must be dense, got {}",
                device.id
            )));
        }
        if topic.domain != device.domain {
            return Err(Error::Validation("device topic outside its domain".into()));
        }
        self.add_participant(participant, device.domain, NodeKind::TwinModel)?;
        let view = self.views.get_mut(&participant).expect("just inserted");
        let writer = view.add_writer(topic.clone()).expect("same domain");
        self.device_writer.push(writer);
        self.ledger.entries.push(energy::LedgerEntry {
            initial_pct: device.battery_pct,
            consumed_pct: 0.0,
            skipped_tx: 0,
        });
        let mut device = device;
        device.state = rest;
        self.devices.push(device);
        self.rest_state.push(rest);
        self.energy_clock.push(SimTime::ZERO);
        self.transmitted.push(false);
        Ok(())
    }

    /// Takes a participant offline: its overlay node goes (with repair) and its view is discarded.
    pub fn remove_participant(&mut self, participant: u32) -> Result<()> {
        let node = self
            .node_of
            .remove(&participant)
            .ok_or_else(|| Error::Validation(format!("unknown participant {participant}")))?;
        self.overlay.remove_node(node)?;
        self.views.remove(&participant);
        self.route_cache.clear();
        Ok(())
    }

    pub fn node_of(&self, participant: u32) -> Option<NodeId> {
        self.node_of.get(&participant).copied()
    }

    pub fn participants(&self) -> Vec<u32> {
        self.views.keys().copied().collect()
    }

    fn path(&mut self, from: u32, to: u32) -> Option<Vec<usize>> {
        let a = *self.node_of.get(&from)?;
        let b = *self.node_of.get(&to)?;
        if let Some(p) = self.route_cache.get(&(a, b)) {
            return Some(p.clone());
        }
        let nodes = self.overlay.route(a, b).ok()?;
        let p = self.overlay.underlay_path(&nodes);
        self.route_cache.insert((a, b), p.clone());
        Some(p)
    }

    /// Puts a message on the wire. Broadcasts fan out as unicast copies to
    /// every other participant of the sender's domain, each with its own seq.
    pub fn transmit(
        &mut self,
        engine: &mut Engine,
        msg: RtpsMessage,
        device: Option<usize>,
    ) -> Result<()> {
        let from = msg.src.participant;
        engine.sync_links(self.overlay.underlay());
        let targets: Vec<(u32, RtpsMessage)> = match msg.dst {
            Some(dst) => vec![(dst.participant, msg)],
            None => {
                let peers: Vec<u32> = self
                    .views
                    .iter()
                    .filter(|(p, v)| **p != from && v.domain == msg.domain)
                    .map(|(p, _)| *p)
                    .collect();
                let view = self.views.get_mut(&from).ok_or_else(|| {
                    Error::Validation(format!("unknown sender participant {from}"))
                })?;
                peers
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let mut copy = msg.clone();
                        if i > 0 {
                            copy.seq = view.next_seq();
                        }
                        copy.dst = Some(Guid::participant(p));
                        (p, copy)
                    })
                    .collect()
            }
        };
        for (to, m) in targets {
            if to == from {
                continue;
            }
            match self.path(from, to) {
                Some(path) if !path.is_empty() => engine.send_over_path(m, path, device)?,
                _ => self.unroutable += 1,
            }
        }
        Ok(())
    }

    /// Brings a device's battery up to `now` under its current state.
    pub fn settle(&mut self, device: usize, now: SimTime) {
        let dt = now.saturating_sub(self.energy_clock[device]);
        energy::advance(&mut self.devices[device], dt, &self.model, &mut self.ledger);
        self.energy_clock[device] = self.energy_clock[device].max(now);
    }

    pub fn settle_all(&mut self, now: SimTime) {
        for d in 0..self.devices.len() {
            self.settle(d, now);
        }
    }

    /// Resets a device's battery, accounting baseline and last transmission.
    pub fn reset_device(
        &mut self,
        device: usize,
        battery_pct: f64,
        last_tx: Option<SimTime>,
        now: SimTime,
    ) {
        let d = &mut self.devices[device];
        d.battery_pct = battery_pct.clamp(0.0, 100.0);
        d.state = if d.battery_pct <= 0.0 {
            DeviceState::Sleep
        } else {
            self.rest_state[device]
        };
        d.last_tx = last_tx.unwrap_or(SimTime::ZERO);
        self.transmitted[device] = last_tx.is_some();
        self.ledger.entries[device] = energy::LedgerEntry {
            initial_pct: d.battery_pct,
            consumed_pct: 0.0,
            skipped_tx: 0,
        };
        self.energy_clock[device] = now;
    }

    pub fn set_rest_state(&mut self, device: usize, rest: DeviceState, now: SimTime) {
        self.settle(device, now);
        self.rest_state[device] = rest;
        if !self.devices[device].is_dead() {
            self.devices[device].state = rest;
        }
    }

    /// Every participant announces itself to its domain.
    pub fn announce_all(&mut self, engine: &mut Engine) -> Result<()> {
        let now = engine.clock();
        for p in self.participants() {
            let msgs = self.views.get_mut(&p).expect("listed").announce(now);
            for m in msgs {
                self.transmit(engine, m, None)?;
            }
        }
        Ok(())
    }

    /// Every participant broadcasts one heartbeat.
    pub fn heartbeat_all(&mut self, engine: &mut Engine) -> Result<()> {
        let now = engine.clock();
        for p in self.participants() {
            let m = self.views.get_mut(&p).expect("listed").heartbeat(now);
            self.transmit(engine, m, None)?;
        }
        Ok(())
    }

    /// Schedules periodic heartbeats for every participant until `until`.
    pub fn start_heartbeats(&mut self, engine: &mut Engine, until: SimTime) -> Result<()> {
        self.heartbeat_until = until;
        let at = engine.clock() + self.heartbeat_period_ms;
        for p in self.participants() {
            if at <= until {
                engine.schedule(at, EventKind::HeartbeatTick(Guid::participant(p)))?;
            }
        }
        Ok(())
    }

    /// Every service app asks its matched writers for data.
    pub fn subscribe_all(&mut self, engine: &mut Engine) -> Result<()> {
        let now = engine.clock();
        for p in self.participants() {
            let view = self.views.get_mut(&p).expect("listed");
            let readers: Vec<_> = view.local_readers().cloned().collect();
            let mut out = Vec::new();
            for (reader, topic) in readers {
                let writers: Vec<Guid> = view
                    .writers
                    .iter()
                    .filter(|(w, t)| *t == topic && w.participant != p)
                    .map(|(w, _)| *w)
                    .collect();
                for w in writers {
                    out.push(view.message(
                        reader,
                        Some(w.owner()),
                        Primitive::Subscribe,
                        Some(topic.clone()),
                        DISCOVERY_PAYLOAD_BYTES,
                        now,
                    ));
                }
            }
            for m in out {
                self.transmit(engine, m, None)?;
            }
        }
        Ok(())
    }

    /// Gateways send their clock to every participant of their domain.
    pub fn sync_clocks(&mut self, engine: &mut Engine) -> Result<()> {
        let now = engine.clock();
        let gateways: Vec<u32> = self
            .overlay
            .nodes()
            .filter(|n| n.kind == NodeKind::DataGateway)
            .map(|n| n.guid.participant)
            .collect();
        for g in gateways {
            let Some(view) = self.views.get_mut(&g) else {
                continue;
            };
            let me = view.guid;
            let m = view.message(
                me,
                None,
                Primitive::StateSync,
                None,
                DISCOVERY_PAYLOAD_BYTES,
                now,
            );
            self.transmit(engine, m, None)?;
        }
        Ok(())
    }

    /// Removes expired peers from every view; returns how many entries were dropped.
    pub fn expire_leases(&mut self, now: SimTime) -> usize {
        let lease = self.lease_ms;
        self.views
            .values_mut()
            .map(|v| v.check_liveliness(now, lease).len())
            .sum()
    }

    fn publish(&mut self, engine: &mut Engine, device: usize) -> Result<()> {
        let now = engine.clock();
        self.settle(device, now);
        let payload = self.devices[device].payload_bytes;
        let sent = energy::wake_and_transmit(
            &mut self.devices[device],
            &self.model,
            payload,
            now,
            &mut self.ledger,
        );
        if sent.is_none() {
            return Ok(());
        }
        self.transmitted[device] = true;
        if !self.devices[device].is_dead() {
            self.devices[device].state = self.rest_state[device];
        }
        let writer = self.device_writer[device];
        let Some(view) = self.views.get_mut(&writer.participant) else {
            return Ok(());
        };
        let topic = view
            .writers
            .iter()
            .find(|(g, _)| *g == writer)
            .map(|(_, t)| t.clone())
            .expect("writer registered");
        let readers: Vec<Guid> = view
            .readers
            .iter()
            .filter(|(r, t)| *t == topic && r.participant != writer.participant)
            .map(|(r, _)| *r)
            .collect();
        let msgs: Vec<RtpsMessage> = readers
            .into_iter()
            .map(|r| {
                view.message(
                    writer,
                    Some(r),
                    Primitive::Publish,
                    Some(topic.clone()),
                    payload,
                    now,
                )
            })
            .collect();
        for m in msgs {
            self.transmit(engine, m, Some(device))?;
        }
        Ok(())
    }
}

impl World for Network {
    fn on_deliver(&mut self, engine: &mut Engine, flight: &Flight) -> Verdict {
        let Some(dst) = flight.msg.dst else {
            return Verdict::Dropped;
        };
        let now = engine.clock();
        let Some(view) = self.views.get_mut(&dst.participant) else {
            return Verdict::Dropped;
        };
        let out = view.handle(&flight.msg, now);
        if out.dropped {
            return Verdict::Dropped;
        }
        let reader_domain = view.domain;
        for d in &out.deliveries {
            self.publish_deliveries += 1;
            if d.topic.domain != reader_domain {
                self.cross_domain_deliveries += 1;
            }
        }
        for reply in out.replies {
            // replies only fail on unknown links, which sync_links rules out
            let _ = self.transmit(engine, reply, None);
        }
        Verdict::Accepted
    }

    fn on_wake(&mut self, engine: &mut Engine, device: usize) -> Result<()> {
        self.publish(engine, device)
    }

    fn on_heartbeat(&mut self, engine: &mut Engine, guid: Guid) -> Result<()> {
        let now = engine.clock();
        let Some(view) = self.views.get_mut(&guid.participant) else {
            return Ok(());
        };
        view.check_liveliness(now, self.lease_ms);
        let m = view.heartbeat(now);
        self.transmit(engine, m, None)?;
        let next = now + self.heartbeat_period_ms;
        if next <= self.heartbeat_until {
            engine.schedule(next, EventKind::HeartbeatTick(guid))?;
        }
        Ok(())
    }
}
