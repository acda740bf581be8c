//! Event-triggered plus scheduled state reporting with age-of-information
//! tracking, and the observation vector handed to agents.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::MonitoringConfig;
use crate::failure::HealthKind;

/// Why a VNF transmitted its state this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    None,
    /// The health state changed since the previous slot.
    Event,
    /// The age would have exceeded the current state's threshold.
    Scheduled,
}

/// Outcome of one monitoring tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSet {
    pub triggers: Vec<Trigger>,
    /// Whether each triggered report actually reached the orchestrator.
    pub delivered: Vec<bool>,
}

impl ReportSet {
    pub fn message_count(&self) -> usize {
        self.triggers.iter().filter(|t| **t != Trigger::None).count()
    }
}

/// Per-VNF age of information and last-reported state.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiTracker {
    delta: f64,
    /// Freshness threshold per health state (normal, warning, critical).
    kappa: [f64; 3],
    loss_probability: f64,
    ages: Vec<f64>,
    last_reported: Vec<Option<HealthKind>>,
    previous_true: Vec<HealthKind>,
}

impl AoiTracker {
    pub fn new(vnf_count: usize, cfg: &MonitoringConfig) -> Self {
        Self {
            delta: cfg.slot_duration,
            kappa: [cfg.kappa_normal, cfg.kappa_warning, cfg.kappa_critical],
            loss_probability: cfg.loss_probability,
            ages: vec![f64::INFINITY; vnf_count],
            last_reported: vec![None; vnf_count],
            previous_true: vec![HealthKind::Normal; vnf_count],
        }
    }

    /// Back to the start-of-episode state: nothing known, infinite ages.
    pub fn reset(&mut self) {
        self.ages.fill(f64::INFINITY);
        self.last_reported.fill(None);
        self.previous_true.fill(HealthKind::Normal);
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kappa(&self, kind: HealthKind) -> f64 {
        self.kappa[kind.index()]
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn last_reported(&self) -> &[Option<HealthKind>] {
        &self.last_reported
    }

    /// Runs one slot of monitoring. A VNF transmits when its state changed or
    /// when its age would otherwise exceed the threshold of its current state.
    /// Each transmission is lost with the configured probability. Delivered
    /// reports reset the age to one slot; everything else ages by one slot.
    pub fn tick<R: Rng + ?Sized>(&mut self, true_states: &[HealthKind], rng: &mut R) -> ReportSet {
        assert_eq!(true_states.len(), self.ages.len(), "one state per tracked VNF");
        let mut triggers = Vec::with_capacity(true_states.len());
        let mut delivered = Vec::with_capacity(true_states.len());
        for (v, &state) in true_states.iter().enumerate() {
            let aged = self.ages[v] + self.delta;
            let trigger = if state != self.previous_true[v] {
                Trigger::Event
            } else if aged > self.kappa(state) {
                Trigger::Scheduled
            } else {
                Trigger::None
            };
            let landed = trigger != Trigger::None
                && (self.loss_probability <= 0.0 || rng.random::<f64>() >= self.loss_probability);
            if landed {
                self.ages[v] = self.delta;
                self.last_reported[v] = Some(state);
            } else {
                self.ages[v] = aged;
            }
            self.previous_true[v] = state;
            triggers.push(trigger);
            delivered.push(landed);
        }
        ReportSet { triggers, delivered }
    }

    /// Number of VNFs whose age exceeds the threshold of their true state.
    pub fn freshness_violations(&self, true_states: &[HealthKind]) -> usize {
        self.ages
            .iter()
            .zip(true_states)
            .filter(|(age, s)| **age > self.kappa(**s))
            .count()
    }
}

/// Version of the observation feature layout; bump on any layout change.
pub const OBSERVATION_LAYOUT_VERSION: u32 = 1;
/// Features per VNF: 3 one-hot state, age, backup flag, backlog.
pub const FEATURES_PER_VNF: usize = 6;
/// Finite ages are clipped to this many slots before scaling into (0, 1].
pub const AGE_CLIP_SLOTS: f64 = 16.0;
/// Encoding of an infinite age; strictly above every finite encoding.
pub const SENTINEL_AGE: f64 = 2.0;

/// What the orchestrator knows at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub reported: Vec<Option<HealthKind>>,
    /// Ages in slots; `None` means never reported.
    pub ages: Vec<Option<f64>>,
    pub backup_present: Vec<bool>,
    /// Statelet backlog in units of one slot's generation, clipped to [0, 1].
    pub backlog: Vec<f64>,
    /// W_n^p in node-major order.
    pub node_availability: Vec<f64>,
}

pub fn encode_age(age_slots: Option<f64>) -> f64 {
    match age_slots {
        Some(a) if a.is_finite() => a.clamp(0.0, AGE_CLIP_SLOTS) / AGE_CLIP_SLOTS,
        _ => SENTINEL_AGE,
    }
}

impl ObservationRecord {
    pub fn to_vector(&self) -> Vec<f64> {
        let v = self.reported.len();
        let mut out = Vec::with_capacity(v * FEATURES_PER_VNF + self.node_availability.len());
        for i in 0..v {
            let mut onehot = [0.0; 3];
            if let Some(k) = self.reported[i] {
                onehot[k.index()] = 1.0;
            }
            out.extend(onehot);
            out.push(encode_age(self.ages[i]));
            out.push(if self.backup_present[i] { 1.0 } else { 0.0 });
            out.push(self.backlog[i]);
        }
        out.extend(&self.node_availability);
        out
    }
}

/// Shape of the flat observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub vnf_count: usize,
    pub node_count: usize,
    pub resource_types: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpan {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub description: String,
}

/// Machine-readable description of the observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSchema {
    pub version: u32,
    pub width: usize,
    pub vnf_count: usize,
    pub node_count: usize,
    pub resource_types: usize,
    pub age_clip_slots: f64,
    pub sentinel_age: f64,
    pub features: Vec<FeatureSpan>,
}

impl ObservationLayout {
    pub fn width(&self) -> usize {
        self.vnf_count * FEATURES_PER_VNF + self.node_count * self.resource_types
    }

    pub fn schema(&self) -> ObservationSchema {
        let mut features = Vec::new();
        for v in 0..self.vnf_count {
            let base = v * FEATURES_PER_VNF;
            let mut push = |name: &str, off: usize, width: usize, desc: &str| {
                features.push(FeatureSpan {
                    name: format!("vnf{v}.{name}"),
                    offset: base + off,
                    width,
                    description: desc.to_string(),
                })
            };
            push(
                "reported_state",
                0,
                3,
                "one-hot normal/warning/critical of the last delivered report; all zero if none",
            );
            push(
                "age",
                3,
                1,
                "min(age, clip)/clip in slots; sentinel value when never reported",
            );
            push("backup", 4, 1, "1 if a backup instance is placed");
            push(
                "backlog",
                5,
                1,
                "statelet backlog over one slot's generation, clipped to [0,1]",
            );
        }
        let base = self.vnf_count * FEATURES_PER_VNF;
        for n in 0..self.node_count {
            features.push(FeatureSpan {
                name: format!("node{n}.availability"),
                offset: base + n * self.resource_types,
                width: self.resource_types,
                description: "available fraction of each resource type".into(),
            });
        }
        ObservationSchema {
            version: OBSERVATION_LAYOUT_VERSION,
            width: self.width(),
            vnf_count: self.vnf_count,
            node_count: self.node_count,
            resource_types: self.resource_types,
            age_clip_slots: AGE_CLIP_SLOTS,
            sentinel_age: SENTINEL_AGE,
            features,
        }
    }

    /// SHA-256 of the canonical schema JSON, hex encoded.
    pub fn schema_hash(&self) -> String {
        let text = serde_json::to_string(&self.schema()).expect("schema serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
