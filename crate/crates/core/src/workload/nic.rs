//! NIC load generator, RX descriptor ring and the delivery→processing ring.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Cycle;

/// Offered load. `Max` injects one packet every cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Rate {
    Gbps(f64),
    Max,
}

impl Rate {
    pub fn gbps(self) -> f64 {
        match self {
            Rate::Gbps(g) => g,
            Rate::Max => f64::INFINITY,
        }
    }
}

/// Mean cycles between packets of `pkt_bytes` at `rate_gbps`.
pub fn mean_interarrival(rate_gbps: f64, pkt_bytes: u32, clock_ghz: f64) -> f64 {
    let pps = rate_gbps * 1e9 / 8.0 / pkt_bytes as f64;
    clock_ghz * 1e9 / pps
}

/// Fixed-rate arrivals with ±10% uniform jitter per gap, drawn from a
/// seeded stream.
#[derive(Clone, Debug)]
pub struct ArrivalProcess {
    mean_gap: Option<f64>,
    next: f64,
    rng: ChaCha8Rng,
}

impl ArrivalProcess {
    pub fn new(rate: Rate, pkt_bytes: u32, clock_ghz: f64, seed: u64) -> Self {
        let mean_gap = match rate {
            Rate::Max => Some(1.0),
            Rate::Gbps(g) if g > 0.0 => Some(mean_interarrival(g, pkt_bytes, clock_ghz)),
            Rate::Gbps(_) => None,
        };
        let jittered = matches!(rate, Rate::Gbps(_));
        let mut p = ArrivalProcess {
            mean_gap,
            next: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if let (Some(_), true) = (mean_gap, jittered) {
            p.next = p.gap();
        }
        p
    }

    fn gap(&mut self) -> f64 {
        let mean = self.mean_gap.unwrap();
        if mean <= 1.0 {
            mean
        } else {
            mean * self.rng.gen_range(0.9..1.1)
        }
    }

    /// Shifts the schedule to start at `start`.
    pub fn offset(mut self, start: Cycle) -> Self {
        self.next += start as f64;
        self
    }

    /// Number of packets arriving in cycle `now`.
    pub fn due(&mut self, now: Cycle) -> u32 {
        if self.mean_gap.is_none() {
            return 0;
        }
        let mut n = 0;
        while self.next < (now + 1) as f64 {
            n += 1;
            self.next += self.gap();
        }
        n
    }
}

/// Deterministic arrival schedule over `[0, duration)`.
pub fn nic_arrivals(
    rate: Rate,
    pkt_bytes: u32,
    duration: Cycle,
    seed: u64,
    clock_ghz: f64,
) -> Vec<Cycle> {
    let mut p = ArrivalProcess::new(rate, pkt_bytes, clock_ghz, seed);
    let mut out = Vec::new();
    for c in 0..duration {
        for _ in 0..p.due(c) {
            out.push(c);
        }
    }
    out
}

/// RX descriptor ring shared between the NIC and the delivery thread.
/// Counters are monotonic; slot = counter mod `slots`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DescriptorRing {
    pub slots: u32,
    /// Next slot the delivery thread will write back (oldest unconsumed).
    pub head: u64,
    /// Next slot the delivery thread will claim.
    pub claimed: u64,
    /// Next slot the NIC will fill.
    pub tail: u64,
    pub drops: u64,
}

impl DescriptorRing {
    pub fn new(slots: u32) -> Self {
        DescriptorRing {
            slots,
            head: 0,
            claimed: 0,
            tail: 0,
            drops: 0,
        }
    }

    pub fn occupancy(&self) -> u32 {
        (self.tail - self.head) as u32
    }

    /// NIC side: fills the tail slot or counts a drop.
    pub fn produce(&mut self) -> Option<u32> {
        if self.occupancy() >= self.slots {
            self.drops += 1;
            return None;
        }
        let slot = (self.tail % self.slots as u64) as u32;
        self.tail += 1;
        Some(slot)
    }

    pub fn has_unclaimed(&self) -> bool {
        self.claimed < self.tail
    }

    pub fn next_claim_slot(&self) -> u32 {
        (self.claimed % self.slots as u64) as u32
    }

    pub fn claim(&mut self) -> Option<u32> {
        if !self.has_unclaimed() {
            return None;
        }
        let slot = self.next_claim_slot();
        self.claimed += 1;
        Some(slot)
    }

    /// Delivery side: descriptor written back, slot returned to the NIC.
    pub fn release(&mut self) {
        debug_assert!(self.head < self.claimed);
        self.head += 1;
    }
}

/// Single-producer/single-consumer pointer ring from the delivery thread to
/// the processing thread.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PayloadRing {
    pub slots: u32,
    /// Claimed by delivery, not yet enqueued.
    pub reserved: u32,
    /// Enqueued, waiting for the processing thread.
    pub ready: VecDeque<u64>,
    /// Dequeued, processing in progress.
    pub in_processing: u32,
    pub enqueued: u64,
    pub dequeued: u64,
    pub max_occupancy: u32,
}

impl PayloadRing {
    pub fn new(slots: u32) -> Self {
        PayloadRing {
            slots,
            reserved: 0,
            ready: VecDeque::new(),
            in_processing: 0,
            enqueued: 0,
            dequeued: 0,
            max_occupancy: 0,
        }
    }

    pub fn occupancy(&self) -> u32 {
        self.reserved + self.ready.len() as u32 + self.in_processing
    }

    pub fn try_reserve(&mut self) -> bool {
        if self.occupancy() >= self.slots {
            return false;
        }
        self.reserved += 1;
        self.max_occupancy = self.max_occupancy.max(self.occupancy());
        true
    }

    pub fn enqueue(&mut self, packet: u64) {
        debug_assert!(self.reserved > 0);
        self.reserved -= 1;
        self.ready.push_back(packet);
        self.enqueued += 1;
    }

    /// Returns the dequeued packet and the ring index it was read from.
    pub fn dequeue(&mut self) -> Option<(u64, u64)> {
        let p = self.ready.pop_front()?;
        let idx = self.dequeued;
        self.dequeued += 1;
        self.in_processing += 1;
        Some((p, idx))
    }

    pub fn complete(&mut self) {
        debug_assert!(self.in_processing > 0);
        self.in_processing -= 1;
    }
}
