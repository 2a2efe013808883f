//! The packet workload: NIC queues feeding delivery threads, a payload ring
//! per queue, and processing threads draining it.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nic::{ArrivalProcess, DescriptorRing, PayloadRing, Rate};
use super::templates::{
    delivery_ops_for_packet, delivery_poll, processing_ops_for_packet, processing_poll, AddressMap,
    IntensityPreset,
};
use crate::config::{Cycle, ThreadId};
use crate::error::SimError;
use crate::op::{MicroOp, OpClass, OpHook};
use crate::pipeline::Workload;

pub const DELIVERY_BRANCH_ACCURACY: f64 = 0.99;
pub const PROCESSING_BRANCH_ACCURACY: f64 = 0.97;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Idle,
    Delivery { queue: usize },
    Processing { queue: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub rate: Rate,
    pub pkt_bytes: u32,
    pub ring_slots: u32,
    pub payload_ring_slots: u32,
    pub delivery_ops_per_packet: u32,
    pub intensity: IntensityPreset,
    pub clock_ghz: f64,
    pub seed: u64,
}

impl NetParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if let Rate::Gbps(g) = self.rate {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(SimError::config(format!(
                    "rate_gbps must be a finite value >= 0, got {g}"
                )));
            }
        }
        if self.pkt_bytes == 0 {
            return Err(SimError::config("pkt_bytes must be >= 1"));
        }
        if self.ring_slots == 0 || self.payload_ring_slots == 0 {
            return Err(SimError::config("ring sizes must be >= 1"));
        }
        if self.delivery_ops_per_packet < 9 {
            return Err(SimError::config("delivery_ops_per_packet must be >= 9"));
        }
        if !(self.intensity.cycles_per_byte >= 0.0) {
            return Err(SimError::config("cycles_per_byte must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PacketRecord {
    pub arrival_cycle: Cycle,
    pub delivery_done_cycle: Option<Cycle>,
    pub processing_done_cycle: Option<Cycle>,
    pub size: u32,
    pub slot: u32,
    pub queue: usize,
}

/// Cumulative packet accounting for one queue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueueCounters {
    pub injected: u64,
    /// Packets whose delivery template has retired.
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub processed: u64,
    pub dropped: u64,
}

struct Queue {
    map: AddressMap,
    arrivals: ArrivalProcess,
    ring: DescriptorRing,
    /// Packet id held by each descriptor slot.
    slot_pkt: Vec<u64>,
    payload: PayloadRing,
    has_processing: bool,
    counters: QueueCounters,
    /// Last packet handed to the processing thread.
    last_processed: Option<u64>,
}

struct Agent {
    role: Role,
    pending: VecDeque<MicroOp>,
    next_seq: u64,
    carry: Vec<u64>,
    rng: ChaCha8Rng,
    polling: bool,
    spin_polls: u64,
}

/// Packet workload over any number of cores.
pub struct NetWorkload {
    params: NetParams,
    queues: Vec<Queue>,
    agents: Vec<[Agent; 2]>,
    next_packet: u64,
    in_flight: HashMap<u64, PacketRecord>,
    /// Completed packets since the last measurement reset.
    pub completed: Vec<PacketRecord>,
    keep_records: bool,
    order_violations: u64,
}

impl NetWorkload {
    /// `placement[core] = [sdt role, main role]`. Every queue referenced
    /// must have exactly one delivery thread and at most one processing
    /// thread.
    pub fn new(params: NetParams, placement: &[[Role; 2]]) -> Result<Self, SimError> {
        params.validate()?;
        let n_queues = placement
            .iter()
            .flatten()
            .filter_map(|r| match r {
                Role::Delivery { queue } | Role::Processing { queue } => Some(queue + 1),
                Role::Idle => None,
            })
            .max()
            .unwrap_or(0);
        let mut delivery = vec![0u32; n_queues];
        let mut processing = vec![0u32; n_queues];
        for r in placement.iter().flatten() {
            match *r {
                Role::Delivery { queue } => delivery[queue] += 1,
                Role::Processing { queue } => processing[queue] += 1,
                Role::Idle => {}
            }
        }
        for q in 0..n_queues {
            if delivery[q] != 1 || processing[q] > 1 {
                return Err(SimError::config(format!(
                    "queue {q} needs exactly one delivery thread and at most one processing thread"
                )));
            }
        }
        let queues = (0..n_queues)
            .map(|q| Queue {
                map: AddressMap::for_queue(q),
                arrivals: ArrivalProcess::new(
                    params.rate,
                    params.pkt_bytes,
                    params.clock_ghz,
                    params
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(q as u64),
                ),
                ring: DescriptorRing::new(params.ring_slots),
                slot_pkt: vec![0; params.ring_slots as usize],
                payload: PayloadRing::new(params.payload_ring_slots),
                has_processing: processing[q] == 1,
                counters: QueueCounters::default(),
                last_processed: None,
            })
            .collect();
        let agents = placement
            .iter()
            .enumerate()
            .map(|(c, roles)| {
                [0, 1].map(|t| Agent {
                    role: roles[t],
                    pending: VecDeque::new(),
                    next_seq: 0,
                    carry: Vec::new(),
                    rng: ChaCha8Rng::seed_from_u64(
                        params.seed ^ ((c as u64) << 8 | t as u64 | 0x5D7_0000_0000),
                    ),
                    polling: false,
                    spin_polls: 0,
                })
            })
            .collect();
        Ok(NetWorkload {
            params,
            queues,
            agents,
            next_packet: 0,
            in_flight: HashMap::new(),
            completed: Vec::new(),
            keep_records: true,
            order_violations: 0,
        })
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn n_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn role(&self, core: usize, thread: ThreadId) -> Role {
        self.agents[core][thread.index()].role
    }

    /// Changes the processing intensity for subsequently dequeued packets.
    pub fn set_intensity(&mut self, preset: IntensityPreset) {
        self.params.intensity = preset;
    }

    /// Changes the offered load; the arrival stream restarts at `now`.
    pub fn set_rate(&mut self, rate: Rate, now: Cycle) {
        self.params.rate = rate;
        for (q, queue) in self.queues.iter_mut().enumerate() {
            let seed = self
                .params
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(q as u64)
                ^ now;
            queue.arrivals =
                ArrivalProcess::new(rate, self.params.pkt_bytes, self.params.clock_ghz, seed)
                    .offset(now);
        }
    }

    pub fn counters(&self, queue: usize) -> QueueCounters {
        self.queues[queue].counters
    }

    pub fn totals(&self) -> QueueCounters {
        self.queues
            .iter()
            .fold(QueueCounters::default(), |a, q| QueueCounters {
                injected: a.injected + q.counters.injected,
                delivered: a.delivered + q.counters.delivered,
                delivered_bytes: a.delivered_bytes + q.counters.delivered_bytes,
                processed: a.processed + q.counters.processed,
                dropped: a.dropped + q.counters.dropped,
            })
    }

    /// Packets injected but neither completed nor dropped.
    pub fn in_flight(&self) -> u64 {
        self.queues
            .iter()
            .map(|q| {
                q.ring.occupancy() as u64
                    + q.payload.ready.len() as u64
                    + q.payload.in_processing as u64
            })
            .sum()
    }

    pub fn conservation_holds(&self) -> bool {
        let t = self.totals();
        t.injected == t.processed + t.dropped + self.in_flight()
    }

    pub fn descriptor_ring(&self, queue: usize) -> &DescriptorRing {
        &self.queues[queue].ring
    }

    pub fn payload_ring(&self, queue: usize) -> &PayloadRing {
        &self.queues[queue].payload
    }

    pub fn spin_polls(&self, core: usize, thread: ThreadId) -> u64 {
        self.agents[core][thread.index()].spin_polls
    }

    pub fn order_violations(&self) -> u64 {
        self.order_violations
    }

    /// Stop retaining per-packet records; counters are still maintained.
    pub fn set_keep_records(&mut self, keep: bool) {
        self.keep_records = keep;
    }

    /// Clears completed-packet records and spin-poll counts.
    pub fn reset_measurement(&mut self) {
        self.completed.clear();
        for row in self.agents.iter_mut() {
            for a in row.iter_mut() {
                a.spin_polls = 0;
            }
        }
    }

    fn finish(&mut self, packet: u64, now: Cycle) {
        let Some(mut rec) = self.in_flight.remove(&packet) else {
            return;
        };
        let q = &mut self.queues[rec.queue];
        q.counters.processed += 1;
        if q.has_processing {
            rec.processing_done_cycle = Some(now);
        }
        if self.keep_records {
            self.completed.push(rec);
        }
    }

    fn next_delivery(&mut self, core: usize, t: usize, queue: usize) {
        let q = &mut self.queues[queue];
        let a = &mut self.agents[core][t];
        let room = q.ring.has_unclaimed() && (!q.has_processing || q.payload.try_reserve());
        if !room {
            let ops = delivery_poll(&q.map, q.ring.next_claim_slot(), a.next_seq);
            a.spin_polls += 1;
            a.polling = true;
            a.next_seq += ops.len() as u64;
            a.pending.extend(ops);
            return;
        }
        let ring_index = q.ring.claimed;
        let slot = q.ring.claim().unwrap();
        let packet = q.slot_pkt[slot as usize];
        let e = delivery_ops_for_packet(
            &q.map,
            slot,
            ring_index,
            self.params.payload_ring_slots,
            packet,
            self.params.delivery_ops_per_packet,
            a.next_seq,
            &a.carry,
        );
        let mut first_branch = a.polling;
        a.polling = false;
        a.next_seq += e.ops.len() as u64;
        a.carry = e.carry;
        for mut op in e.ops {
            if op.class == OpClass::Branch {
                op.mispredict = first_branch || !a.rng.gen_bool(DELIVERY_BRANCH_ACCURACY);
                first_branch = false;
            }
            a.pending.push_back(op);
        }
    }

    fn next_processing(&mut self, core: usize, t: usize, queue: usize) {
        let q = &mut self.queues[queue];
        let a = &mut self.agents[core][t];
        let Some((packet, ring_index)) = q.payload.dequeue() else {
            let ops = processing_poll(
                &q.map,
                q.payload.dequeued,
                self.params.payload_ring_slots,
                a.next_seq,
            );
            a.spin_polls += 1;
            a.polling = true;
            a.next_seq += ops.len() as u64;
            a.pending.extend(ops);
            return;
        };
        if let Some(prev) = q.last_processed {
            if packet < prev {
                self.order_violations += 1;
            }
        }
        q.last_processed = Some(packet);
        let rec = self.in_flight[&packet];
        let e = processing_ops_for_packet(
            &q.map,
            rec.slot,
            ring_index,
            self.params.payload_ring_slots,
            packet,
            rec.size,
            &self.params.intensity,
            a.next_seq,
            &a.carry,
        );
        let mut first_branch = a.polling;
        a.polling = false;
        a.next_seq += e.ops.len() as u64;
        a.carry = e.carry;
        for mut op in e.ops {
            if op.class == OpClass::Branch {
                op.mispredict = first_branch || !a.rng.gen_bool(PROCESSING_BRANCH_ACCURACY);
                first_branch = false;
            }
            a.pending.push_back(op);
        }
    }
}

impl Workload for NetWorkload {
    fn next_op(&mut self, core: usize, thread: ThreadId, _now: Cycle) -> Option<MicroOp> {
        let t = thread.index();
        let role = self.agents.get(core)?[t].role;
        if self.agents[core][t].pending.is_empty() {
            match role {
                Role::Idle => return None,
                Role::Delivery { queue } => self.next_delivery(core, t, queue),
                Role::Processing { queue } => self.next_processing(core, t, queue),
            }
        }
        self.agents[core][t].pending.pop_front()
    }

    fn on_commit(&mut self, _core: usize, _thread: ThreadId, op: &MicroOp, now: Cycle) {
        match op.hook {
            OpHook::None => {}
            OpHook::DeliveryDone(p) => {
                let Some(rec) = self.in_flight.get_mut(&p) else {
                    return;
                };
                rec.delivery_done_cycle = Some(now);
                let queue = rec.queue;
                let size = rec.size as u64;
                let q = &mut self.queues[queue];
                q.counters.delivered += 1;
                q.counters.delivered_bytes += size;
                q.ring.release();
                if q.has_processing {
                    q.payload.enqueue(p);
                } else {
                    self.finish(p, now);
                }
            }
            OpHook::ProcessingDone(p) => {
                if let Some(rec) = self.in_flight.get(&p) {
                    self.queues[rec.queue].payload.complete();
                    self.finish(p, now);
                }
            }
        }
    }

    fn tick(&mut self, now: Cycle, dma: &mut Vec<u64>) {
        for (qi, q) in self.queues.iter_mut().enumerate() {
            for _ in 0..q.arrivals.due(now) {
                q.counters.injected += 1;
                match q.ring.produce() {
                    None => {
                        q.counters.dropped += 1;
                    }
                    Some(slot) => {
                        let id = self.next_packet;
                        self.next_packet += 1;
                        q.slot_pkt[slot as usize] = id;
                        self.in_flight.insert(
                            id,
                            PacketRecord {
                                arrival_cycle: now,
                                delivery_done_cycle: None,
                                processing_done_cycle: None,
                                size: self.params.pkt_bytes,
                                slot,
                                queue: qi,
                            },
                        );
                        dma.extend(q.map.dma_lines(slot, self.params.pkt_bytes));
                    }
                }
            }
        }
    }
}
