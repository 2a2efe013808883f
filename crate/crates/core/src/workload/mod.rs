//! Packet workload generators.

pub mod net;
pub mod nic;
pub mod templates;

pub use net::{NetParams, NetWorkload, PacketRecord, QueueCounters, Role};
pub use nic::{mean_interarrival, nic_arrivals, ArrivalProcess, DescriptorRing, PayloadRing, Rate};
pub use templates::{
    delivery_ops_for_packet, processing_ops_for_packet, AddressMap, IntensityLabel, IntensityPreset,
};
