//! Per-packet micro-op templates for the l2fwd-style delivery function and
//! the cycles-per-byte processing function.
//!
//! Templates are built with relative sequence numbers starting at `base`;
//! `carry` names ops of the previous packet that the first ops of this one
//! consume (loop-carried ring index, accumulator state).

use serde::{Deserialize, Serialize};

use crate::config::LINE_BYTES;
use crate::op::{MicroOp, OpClass, OpHook};

pub const DESC_BYTES: u64 = 16;
/// mbuf header, headroom and 2 KB data room, padded to an odd number of
/// lines so consecutive buffers spread across cache sets.
pub const MBUF_BYTES: u64 = 37 * 64;
pub const MBUF_HEADROOM: u64 = 128;
pub const RING_ENTRY_BYTES: u64 = 8;

/// Integer work in the processing template is emitted as dependency chains
/// of this length.
pub const CHAIN_LEN: usize = 4;
/// Chains of processing work in flight at once.
pub const PROCESSING_ILP: usize = 2;
/// Length of the decapsulation / MAC-swap dependency chain.
pub const SWAP_CHAIN: usize = 28;
const FILLER_CHAIN: usize = 4;

/// Per-queue address map. Each NIC queue lives in its own 4 GB window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddressMap {
    pub base: u64,
}

impl AddressMap {
    pub fn for_queue(queue: usize) -> Self {
        AddressMap {
            base: (queue as u64 + 1) << 32,
        }
    }

    pub fn descriptor(&self, slot: u32) -> u64 {
        self.base + 0x1000_0000 + slot as u64 * DESC_BYTES
    }

    pub fn mbuf_meta(&self, slot: u32) -> u64 {
        self.base + 0x2000_0000 + slot as u64 * MBUF_BYTES
    }

    pub fn packet_data(&self, slot: u32) -> u64 {
        self.mbuf_meta(slot) + MBUF_HEADROOM
    }

    pub fn ring_entry(&self, index: u64, ring_slots: u32) -> u64 {
        self.base + 0x3000_0000 + (index % ring_slots as u64) * RING_ENTRY_BYTES
    }

    pub fn delivery_state(&self) -> u64 {
        self.base + 0x4000_0000
    }

    pub fn processing_state(&self) -> u64 {
        self.base + 0x4010_0000
    }

    pub fn delivery_code(&self) -> u64 {
        self.base + 0x0040_0000
    }

    pub fn processing_code(&self) -> u64 {
        self.base + 0x0050_0000
    }

    /// Lines the NIC writes into the LLC for a packet landing in `slot`.
    pub fn dma_lines(&self, slot: u32, pkt_bytes: u32) -> impl Iterator<Item = u64> {
        let desc = self.descriptor(slot) / LINE_BYTES;
        let data = self.packet_data(slot) / LINE_BYTES;
        let n = (pkt_bytes as u64).div_ceil(LINE_BYTES);
        std::iter::once(desc).chain(data..data + n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityLabel {
    Low,
    Medium,
    High,
}

impl IntensityLabel {
    pub const ALL: [IntensityLabel; 3] = [
        IntensityLabel::Low,
        IntensityLabel::Medium,
        IntensityLabel::High,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntensityLabel::Low => "low",
            IntensityLabel::Medium => "medium",
            IntensityLabel::High => "high",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

/// Compute intensity of the processing thread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityPreset {
    pub label: IntensityLabel,
    pub target_load_gbps: f64,
    pub cycles_per_byte: f64,
}

impl IntensityPreset {
    pub fn of(label: IntensityLabel) -> Self {
        let (target_load_gbps, cycles_per_byte) = match label {
            IntensityLabel::Low => (9.0, 2.67),
            IntensityLabel::Medium => (4.0, 6.0),
            IntensityLabel::High => (0.5, 48.0),
        };
        IntensityPreset {
            label,
            target_load_gbps,
            cycles_per_byte,
        }
    }

    /// Cycles of processing work per packet of `size` bytes.
    pub fn work_cycles(&self, size: u32) -> u64 {
        (size as f64 * self.cycles_per_byte).round() as u64
    }
}

/// Result of emitting one template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emitted {
    pub ops: Vec<MicroOp>,
    /// Ops the next packet's template must depend on.
    pub carry: Vec<u64>,
}

struct Builder {
    ops: Vec<MicroOp>,
    next: u64,
    pc_base: u64,
}

impl Builder {
    fn new(base: u64, pc_base: u64, capacity: usize) -> Self {
        Builder {
            ops: Vec::with_capacity(capacity),
            next: base,
            pc_base,
        }
    }

    fn push(&mut self, mut op: MicroOp, pc_slot: u64) -> u64 {
        let seq = self.next;
        op.seq = seq;
        op.pc = self.pc_base + pc_slot * 4;
        self.ops.push(op);
        self.next += 1;
        seq
    }

    fn pos(&self) -> u64 {
        self.ops.len() as u64
    }
}

/// Delivery work for one received packet: descriptor load, DD-bit branch,
/// two header-line loads, a decap/MAC-swap chain, the swapped-header store,
/// the pointer enqueue, bookkeeping int chains (mbuf refill, stats,
/// amortized polling), the ring-index advance and the descriptor
/// write-back. `ops_per_packet` is the total template length (minimum 9).
pub fn delivery_ops_for_packet(
    map: &AddressMap,
    slot: u32,
    ring_index: u64,
    ring_slots: u32,
    packet: u64,
    ops_per_packet: u32,
    base: u64,
    carry: &[u64],
) -> Emitted {
    let n = ops_per_packet.max(9) as usize;
    let swap = SWAP_CHAIN.min(n - 8);
    let mut b = Builder::new(base, map.delivery_code(), n);

    let d = b.push(
        MicroOp::load(0, 0, map.descriptor(slot), DESC_BYTES as u32)
            .with_deps(carry.iter().copied()),
        0,
    );
    b.push(MicroOp::new(0, OpClass::Branch, 0).with_deps([d]), 1);
    let h0 = b.push(
        MicroOp::load(0, 0, map.mbuf_meta(slot), 64).with_deps([d]),
        2,
    );
    // Packet data is addressed through the mbuf's buffer pointer.
    let h1 = b.push(
        MicroOp::load(0, 0, map.packet_data(slot), 64).with_deps([h0]),
        3,
    );
    let mut prev = b.push(MicroOp::int(0, 0).with_deps([h1]), 4);
    for _ in 1..swap {
        let p = b.pos();
        prev = b.push(MicroOp::int(0, 0).with_deps([prev]), p);
    }
    let swap_end = prev;
    let p = b.pos();
    b.push(
        MicroOp::store(0, 0, map.packet_data(slot), 12).with_deps([swap_end]),
        p,
    );
    let p = b.pos();
    b.push(
        MicroOp::store(
            0,
            0,
            map.ring_entry(ring_index, ring_slots),
            RING_ENTRY_BYTES as u32,
        )
        .with_deps([swap_end]),
        p,
    );

    // Bookkeeping: int chains rooted at the descriptor, one loop branch
    // per four chains, one L1-resident state load per eight.
    let filler = n - b.ops.len() - 2;
    let state = map.delivery_state();
    let mut emitted = 0;
    let mut chain = 0usize;
    while emitted < filler {
        let p = b.pos();
        let mut tail = if chain % 8 == 7 {
            b.push(
                MicroOp::load(0, 0, state + (chain as u64 % 4) * 64, 8).with_deps([d]),
                p,
            )
        } else {
            b.push(MicroOp::int(0, 0).with_deps([d]), p)
        };
        emitted += 1;
        for _ in 1..FILLER_CHAIN {
            if emitted >= filler {
                break;
            }
            let p = b.pos();
            tail = b.push(MicroOp::int(0, 0).with_deps([tail]), p);
            emitted += 1;
        }
        chain += 1;
        if chain % 4 == 0 && emitted < filler {
            let p = b.pos();
            b.push(MicroOp::new(0, OpClass::Branch, 0).with_deps([tail]), p);
            emitted += 1;
        }
    }

    let p = b.pos();
    let idx = b.push(MicroOp::int(0, 0).with_deps([swap_end]), p);
    let p = b.pos();
    let mut wb = MicroOp::store(0, 0, map.descriptor(slot), DESC_BYTES as u32).with_deps([d, idx]);
    wb.hook = OpHook::DeliveryDone(packet);
    b.push(wb, p);
    debug_assert_eq!(b.ops.len(), n);
    Emitted {
        ops: b.ops,
        carry: vec![idx],
    }
}

/// Idle poll iteration: re-read the next descriptor and branch on its DD bit.
pub fn delivery_poll(map: &AddressMap, next_slot: u32, base: u64) -> Vec<MicroOp> {
    let mut b = Builder::new(base, map.delivery_code() + 0x800, 2);
    let mut l = MicroOp::load(0, 0, map.descriptor(next_slot), DESC_BYTES as u32);
    l.is_spin_poll = true;
    let ld = b.push(l, 0);
    let mut br = MicroOp::new(0, OpClass::Branch, 0).with_deps([ld]);
    br.is_spin_poll = true;
    b.push(br, 1);
    b.ops
}

/// Processing work for one packet: dequeue the payload pointer, load the
/// payload lines, then `size × cycles_per_byte` cycles of int work as
/// chains of four with `PROCESSING_ILP` chains in flight, a loop branch per
/// eight chains, and a result store.
pub fn processing_ops_for_packet(
    map: &AddressMap,
    slot: u32,
    ring_index: u64,
    ring_slots: u32,
    packet: u64,
    size: u32,
    preset: &IntensityPreset,
    base: u64,
    carry: &[u64],
) -> Emitted {
    let work = preset.work_cycles(size) as usize;
    let n_ops = work * PROCESSING_ILP;
    let n_chains = n_ops.div_ceil(CHAIN_LEN);
    let lines = (size as u64).div_ceil(LINE_BYTES);
    let mut b = Builder::new(
        base,
        map.processing_code(),
        n_ops + n_chains / 8 + lines as usize + 2,
    );

    let q = b.push(
        MicroOp::load(
            0,
            0,
            map.ring_entry(ring_index, ring_slots),
            RING_ENTRY_BYTES as u32,
        ),
        0,
    );
    let mut last_load = q;
    for i in 0..lines {
        last_load = b.push(
            MicroOp::load(
                0,
                0,
                map.packet_data(slot) + i * LINE_BYTES,
                LINE_BYTES as u32,
            )
            .with_deps([q]),
            1 + (i % 8),
        );
    }

    let mut tails: Vec<u64> = Vec::with_capacity(n_chains);
    let mut emitted = 0;
    for c in 0..n_chains {
        let mut deps: smallvec::SmallVec<[u64; 3]> = smallvec::SmallVec::new();
        if c >= PROCESSING_ILP {
            deps.push(tails[c - PROCESSING_ILP]);
        } else {
            if let Some(&t) = carry.get(c) {
                deps.push(t);
            }
            deps.push(last_load);
        }
        let pc = |i: usize| 16 + (i % 256) as u64;
        let mut tail = b.push(MicroOp::int(0, 0).with_deps(deps), pc(emitted));
        emitted += 1;
        for _ in 1..CHAIN_LEN {
            if emitted >= n_ops {
                break;
            }
            tail = b.push(MicroOp::int(0, 0).with_deps([tail]), pc(emitted));
            emitted += 1;
        }
        tails.push(tail);
        if c % 8 == 7 {
            b.push(
                MicroOp::new(0, OpClass::Branch, 0).with_deps([tail]),
                300 + (c as u64 / 8) % 16,
            );
        }
    }

    let live: Vec<u64> = if tails.is_empty() {
        vec![q]
    } else {
        tails[tails.len().saturating_sub(PROCESSING_ILP)..].to_vec()
    };
    let mut st = MicroOp::store(0, 0, map.processing_state(), 8).with_deps(live.iter().copied());
    st.hook = OpHook::ProcessingDone(packet);
    b.push(st, 320);

    let carry = if tails.is_empty() {
        carry.to_vec()
    } else {
        live
    };
    Emitted { ops: b.ops, carry }
}

/// Idle poll on the payload ring.
pub fn processing_poll(
    map: &AddressMap,
    ring_index: u64,
    ring_slots: u32,
    base: u64,
) -> Vec<MicroOp> {
    let mut b = Builder::new(base, map.processing_code() + 0x800, 2);
    let mut l = MicroOp::load(
        0,
        0,
        map.ring_entry(ring_index, ring_slots),
        RING_ENTRY_BYTES as u32,
    );
    l.is_spin_poll = true;
    let ld = b.push(l, 0);
    let mut br = MicroOp::new(0, OpClass::Branch, 0).with_deps([ld]);
    br.is_spin_poll = true;
    b.push(br, 1);
    b.ops
}
