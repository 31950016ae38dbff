//! Latency approximation and message delivery semantics.
//!
//! One-way latency between two endpoints is the sum of transmission,
//! propagation, processing and queuing delay. Bandwidth shrinks linearly with
//! the number of clients a node serves, which is what couples load to latency.

use serde::{Deserialize, Serialize};

use crate::ids::EntityId;
use crate::kernel::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyParams {
    /// Minimum bandwidth reserved per client, Gbps.
    pub sla_gbps: f64,
    pub propagation_ms_per_km: f64,
    /// Multiplied by a node's hardware factor.
    pub delay_factor_ms: f64,
    pub network_error_ms: f64,
    pub qos_error_ms: f64,
    pub max_bandwidth_gbps: f64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            sla_gbps: 0.05,
            propagation_ms_per_km: 0.005,
            delay_factor_ms: 2.0,
            network_error_ms: 1.0,
            qos_error_ms: 2.0,
            max_bandwidth_gbps: 1.0,
        }
    }
}

impl LatencyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sla_gbps > 0.0 && self.sla_gbps <= self.max_bandwidth_gbps) {
            return Err(format!(
                "latency.sla_gbps must be in (0, max_bandwidth_gbps], got {}",
                self.sla_gbps
            ));
        }
        for (name, v) in [
            ("propagation_ms_per_km", self.propagation_ms_per_km),
            ("delay_factor_ms", self.delay_factor_ms),
            ("network_error_ms", self.network_error_ms),
            ("qos_error_ms", self.qos_error_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("latency.{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Load-dependent state of one side of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointLoad {
    pub current_clients: u32,
    pub slots: u32,
    pub hardware_factor: f64,
    pub distance_to_tower_m: f64,
    pub is_fog_node: bool,
}

impl EndpointLoad {
    pub fn fog_node(current_clients: u32, slots: u32, hardware_factor: f64) -> Self {
        EndpointLoad {
            current_clients,
            slots,
            hardware_factor,
            // Fog nodes sit at their cell tower.
            distance_to_tower_m: 0.0,
            is_fog_node: true,
        }
    }

    pub fn client(distance_to_tower_m: f64) -> Self {
        EndpointLoad {
            current_clients: 0,
            slots: 1,
            hardware_factor: 0.0,
            distance_to_tower_m,
            is_fog_node: false,
        }
    }
}

/// Available bandwidth in Gbps, clamped to `[sla, max]`.
pub fn bandwidth(load: &EndpointLoad, p: &LatencyParams) -> f64 {
    let slots = load.slots.max(1) as f64;
    let ratio = load.current_clients as f64 / slots;
    let max = p.max_bandwidth_gbps;
    (max - (max - p.sla_gbps) * ratio).max(p.sla_gbps).min(max)
}

pub fn transmission_delay(b_i: f64, b_j: f64) -> f64 {
    -0.008 * b_i.min(b_j) + 0.088
}

/// Distances in meters, speed in ms per km.
pub fn propagation_delay(d_i_m: f64, d_j_m: f64, ms_per_km: f64) -> f64 {
    (d_i_m + d_j_m) / 1000.0 * ms_per_km
}

pub fn processing_delay(hardware_factor: f64, delay_factor_ms: f64, network_error_ms: f64) -> f64 {
    hardware_factor * delay_factor_ms + network_error_ms
}

pub fn queuing_delay(b_i: f64, b_j: f64, qos_error_ms: f64) -> f64 {
    qos_error_ms.min(1.0 / (2.0 * b_i.min(b_j)))
}

/// One-way latency from `sender` to `receiver` in ms.
///
/// Processing happens at the fog node on the link: the receiver when it is a
/// fog node, otherwise the sender.
pub fn end_to_end_latency(sender: &EndpointLoad, receiver: &EndpointLoad, p: &LatencyParams) -> f64 {
    let b_i = bandwidth(sender, p);
    let b_j = bandwidth(receiver, p);
    let proc_h = if receiver.is_fog_node {
        receiver.hardware_factor
    } else if sender.is_fog_node {
        sender.hardware_factor
    } else {
        0.0
    };
    transmission_delay(b_i, b_j)
        + propagation_delay(
            sender.distance_to_tower_m,
            receiver.distance_to_tower_m,
            p.propagation_ms_per_km,
        )
        + processing_delay(proc_h, p.delay_factor_ms, p.network_error_ms)
        + queuing_delay(b_i, b_j, p.qos_error_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Probe,
    Task,
    Discovery,
    Gossip,
    Response,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::Probe,
        MessageKind::Task,
        MessageKind::Discovery,
        MessageKind::Gossip,
        MessageKind::Response,
    ];
}

/// Terminal state of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Delivered,
    Lost,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId(pub u64);

/// Header of a message in flight; the payload lives with the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub id: MessageId,
    pub src: EntityId,
    pub dst: EntityId,
    pub kind: MessageKind,
    pub sent_at: SimTime,
}

/// Outcome of a message arriving at its destination.
///
/// A round trip above the timeout is reported as timed out at the sender;
/// otherwise a task to a node without a free slot is dropped.
pub fn delivery_outcome(kind: MessageKind, free_slots: u32, rtt_ms: f64, timeout_ms: f64) -> Delivery {
    if rtt_ms > timeout_ms {
        Delivery::TimedOut
    } else if kind == MessageKind::Task && free_slots == 0 {
        Delivery::Lost
    } else {
        Delivery::Delivered
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p() -> LatencyParams {
        LatencyParams::default()
    }

    #[test]
    fn bandwidth_examples() {
        assert_relative_eq!(bandwidth(&EndpointLoad::fog_node(0, 7, 1.0), &p()), 1.0);
        assert_relative_eq!(bandwidth(&EndpointLoad::fog_node(7, 7, 1.0), &p()), 0.05);
        assert_relative_eq!(
            bandwidth(&EndpointLoad::fog_node(5, 10, 1.0), &p()),
            0.525,
            max_relative = 1e-9
        );
    }

    #[test]
    fn transmission_examples() {
        assert_relative_eq!(transmission_delay(1.0, 1.0), 0.080, max_relative = 1e-9);
        assert_relative_eq!(transmission_delay(0.05, 1.0), 0.0876, max_relative = 1e-9);
        assert_relative_eq!(transmission_delay(1.0, 0.05), 0.0876, max_relative = 1e-9);
    }

    #[test]
    fn propagation_examples() {
        assert_eq!(propagation_delay(0.0, 0.0, 0.3), 0.0);
        assert_relative_eq!(
            propagation_delay(300.0, 200.0, 0.005),
            0.0025,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            propagation_delay(1000.0, 1000.0, 0.005),
            0.01,
            max_relative = 1e-9
        );
    }

    #[test]
    fn processing_examples() {
        assert_eq!(processing_delay(0.0, 2.0, 0.0), 0.0);
        assert_relative_eq!(processing_delay(1.0, 2.0, 1.0), 3.0);
        assert_relative_eq!(processing_delay(2.0, 2.0, 1.0), 5.0);
    }

    #[test]
    fn queuing_examples() {
        assert_relative_eq!(queuing_delay(1.0, 1.0, 2.0), 0.5);
        assert_relative_eq!(queuing_delay(0.05, 1.0, 2.0), 2.0);
        assert_eq!(queuing_delay(1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn end_to_end_idle_colocated() {
        let params = LatencyParams {
            network_error_ms: 0.0,
            ..p()
        };
        let client = EndpointLoad::client(0.0);
        let node = EndpointLoad::fog_node(0, 10, 0.0);
        assert_relative_eq!(
            end_to_end_latency(&client, &node, &params),
            0.580,
            max_relative = 1e-9
        );
    }

    #[test]
    fn end_to_end_fully_loaded() {
        let client = EndpointLoad::client(0.0);
        let node = EndpointLoad::fog_node(10, 10, 1.0);
        assert_relative_eq!(
            end_to_end_latency(&client, &node, &p()),
            5.0876,
            max_relative = 1e-9
        );
        // Client-facing direction charges the same node's processing delay.
        assert_relative_eq!(
            end_to_end_latency(&node, &client, &p()),
            5.0876,
            max_relative = 1e-9
        );
    }

    #[test]
    fn delivery_examples() {
        assert_eq!(
            delivery_outcome(MessageKind::Task, 1, 8.0, 100.0),
            Delivery::Delivered
        );
        assert_eq!(delivery_outcome(MessageKind::Task, 0, 8.0, 100.0), Delivery::Lost);
        assert_eq!(
            delivery_outcome(MessageKind::Task, 3, 120.0, 100.0),
            Delivery::TimedOut
        );
        assert_eq!(
            delivery_outcome(MessageKind::Probe, 0, 8.0, 100.0),
            Delivery::Delivered
        );
    }

    #[test]
    fn validate_rejects_bad_sla() {
        let bad = LatencyParams { sla_gbps: 0.0, ..p() };
        assert!(bad.validate().is_err());
        assert!(p().validate().is_ok());
    }

    proptest! {
        #[test]
        fn bandwidth_is_clamped(c in 0u32..500, s in 1u32..100, sla in 0.001f64..1.0) {
            let params = LatencyParams { sla_gbps: sla, ..p() };
            let b = bandwidth(&EndpointLoad::fog_node(c, s, 1.0), &params);
            prop_assert!(b >= sla - 1e-12 && b <= 1.0 + 1e-12);
        }

        #[test]
        fn latency_monotone_in_load(c in 0u32..40, s in 1u32..30, h in 0.0f64..3.0, d in 0.0f64..2000.0) {
            let client = EndpointLoad::client(d);
            let lo = end_to_end_latency(&client, &EndpointLoad::fog_node(c, s, h), &p());
            let hi = end_to_end_latency(&client, &EndpointLoad::fog_node(c + 1, s, h), &p());
            prop_assert!(hi >= lo);
            prop_assert!(lo >= 0.080 - 1e-12);
        }

        #[test]
        fn only_processing_is_asymmetric(c1 in 0u32..20, c2 in 0u32..20, h1 in 0.0f64..3.0, h2 in 0.0f64..3.0) {
            let a = EndpointLoad::fog_node(c1, 20, h1);
            let b = EndpointLoad::fog_node(c2, 20, h2);
            let params = p();
            let ab = end_to_end_latency(&a, &b, &params);
            let ba = end_to_end_latency(&b, &a, &params);
            let expected = (h2 - h1) * params.delay_factor_ms;
            prop_assert!((ab - ba - expected).abs() < 1e-9);
        }
    }
}
