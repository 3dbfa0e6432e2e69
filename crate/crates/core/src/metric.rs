//! Shared metric types: the three synthesis cost axes and a vector of
//! optional measurements over them.

use serde::{Deserialize, Serialize};
use std::fmt;

/// One synthesis cost axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Area,
    Delay,
    Power,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Area, MetricKind::Delay, MetricKind::Power];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Area => "area",
            MetricKind::Delay => "delay",
            MetricKind::Power => "power",
        }
    }

    pub fn parse(s: &str) -> Option<MetricKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "area" => Some(MetricKind::Area),
            "delay" => Some(MetricKind::Delay),
            "power" => Some(MetricKind::Power),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Measurements over the three axes. `None` means the value was not
/// produced (backend limitation, degenerate threshold, parse failure);
/// absence is never conflated with 0.0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricVector {
    pub area: Option<f64>,
    pub delay: Option<f64>,
    pub power: Option<f64>,
}

impl MetricVector {
    pub const EMPTY: MetricVector = MetricVector { area: None, delay: None, power: None };

    pub fn complete(area: f64, delay: f64, power: f64) -> MetricVector {
        MetricVector { area: Some(area), delay: Some(delay), power: Some(power) }
    }

    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Area => self.area,
            MetricKind::Delay => self.delay,
            MetricKind::Power => self.power,
        }
    }

    pub fn set(&mut self, kind: MetricKind, value: Option<f64>) {
        match kind {
            MetricKind::Area => self.area = value,
            MetricKind::Delay => self.delay = value,
            MetricKind::Power => self.power = value,
        }
    }

    pub fn with(mut self, kind: MetricKind, value: f64) -> MetricVector {
        self.set(kind, Some(value));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.area.is_none() && self.delay.is_none() && self.power.is_none()
    }

    /// True when every present entry is finite and non-negative.
    pub fn is_sane(&self) -> bool {
        MetricKind::ALL
            .iter()
            .filter_map(|&k| self.get(k))
            .all(|v| v.is_finite() && v >= 0.0)
    }
}

impl fmt::Display for MetricVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        write!(
            f,
            "area={} delay={} power={}",
            cell(self.area),
            cell(self.delay),
            cell(self.power)
        )
    }
}
