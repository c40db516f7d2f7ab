//! Byte-level accounting of cached activations.
//!
//! Every cache or free of per-step training state is reported here with the
//! modeled size (element count times element width). The ledger keeps the
//! running total, its peak and the full event log so that traces can be
//! replayed and plotted over (layer, step).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Which layer an event belongs to. Main-network layers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerTag {
    Main(usize),
    Aux { owner: usize, index: usize },
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTag::Main(l) => write!(f, "{l}"),
            LayerTag::Aux { owner, index } => write!(f, "aux{owner}.{index}"),
        }
    }
}

impl LayerTag {
    pub fn parse(s: &str) -> Option<Self> {
        if let Some(rest) = s.strip_prefix("aux") {
            let (o, i) = rest.split_once('.')?;
            return Some(LayerTag::Aux {
                owner: o.parse().ok()?,
                index: i.parse().ok()?,
            });
        }
        s.parse().ok().map(LayerTag::Main)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Cache,
    Free,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Cache => "cache",
            EventKind::Free => "free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub layer: LayerTag,
    /// 1-based timestep.
    pub step: usize,
    pub bytes: u64,
    pub kind: EventKind,
}

/// An event after it was applied, with the ledger totals at that point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub clock: u64,
    pub event: Event,
    pub running: u64,
    pub peak: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MemoryLedger {
    records: Vec<Record>,
    /// Keep only totals, not the event log (long training runs).
    totals_only: bool,
    clock: u64,
    live: BTreeMap<(LayerTag, usize), Vec<u64>>,
    running: u64,
    peak: u64,
    peak_at: Option<(LayerTag, usize)>,
    /// Weights and optimizer state, reported apart from activations.
    static_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeakReport {
    pub peak_bytes: u64,
    pub peak_at: Option<(LayerTag, usize)>,
    /// Largest running total seen right after a cache event of each layer.
    pub by_layer: Vec<(LayerTag, u64)>,
    /// Largest running total seen right after a cache event at each step.
    pub by_step: Vec<(usize, u64)>,
    pub static_bytes: u64,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger that tracks running and peak bytes without storing events.
    pub fn totals_only() -> Self {
        Self {
            totals_only: true,
            ..Self::default()
        }
    }

    pub fn record(&mut self, event: Event) -> Result<()> {
        match event.kind {
            EventKind::Cache => {
                self.live
                    .entry((event.layer, event.step))
                    .or_default()
                    .push(event.bytes);
                self.running += event.bytes;
                if self.running > self.peak {
                    self.peak = self.running;
                    self.peak_at = Some((event.layer, event.step));
                }
            }
            EventKind::Free => {
                let key = (event.layer, event.step);
                let slot = self.live.get_mut(&key);
                let pos = slot
                    .as_ref()
                    .and_then(|v| v.iter().position(|&b| b == event.bytes));
                match (slot, pos) {
                    (Some(v), Some(p)) => {
                        v.swap_remove(p);
                        if v.is_empty() {
                            self.live.remove(&key);
                        }
                    }
                    _ => {
                        return Err(Error::UnmatchedFree {
                            layer: format!("{}", event.layer),
                            step: event.step,
                            bytes: event.bytes,
                        })
                    }
                }
                self.running -= event.bytes;
            }
        }
        if !self.totals_only {
            self.records.push(Record {
                clock: self.clock,
                event,
                running: self.running,
                peak: self.peak,
            });
        }
        self.clock += 1;
        Ok(())
    }

    pub fn cache(&mut self, layer: LayerTag, step: usize, bytes: u64) -> Result<()> {
        self.record(Event {
            layer,
            step,
            bytes,
            kind: EventKind::Cache,
        })
    }

    pub fn free(&mut self, layer: LayerTag, step: usize, bytes: u64) -> Result<()> {
        self.record(Event {
            layer,
            step,
            bytes,
            kind: EventKind::Free,
        })
    }

    pub fn running_bytes(&self) -> u64 {
        self.running
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak
    }

    pub fn peak_location(&self) -> Option<(LayerTag, usize)> {
        self.peak_at
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn live_entries(&self) -> usize {
        self.live.values().map(Vec::len).sum()
    }

    pub fn set_static_bytes(&mut self, bytes: u64) {
        self.static_bytes = bytes;
    }

    pub fn static_bytes(&self) -> u64 {
        self.static_bytes
    }

    /// Number of events applied so far.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn cache_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.event.kind == EventKind::Cache)
            .count()
    }

    /// Cache events seen before the first free.
    pub fn caches_before_first_free(&self) -> usize {
        self.records
            .iter()
            .take_while(|r| r.event.kind == EventKind::Cache)
            .count()
    }

    pub fn peak_report(&self) -> PeakReport {
        let mut by_layer: BTreeMap<LayerTag, u64> = BTreeMap::new();
        let mut by_step: BTreeMap<usize, u64> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.event.kind == EventKind::Cache) {
            let l = by_layer.entry(r.event.layer).or_default();
            *l = (*l).max(r.running);
            let s = by_step.entry(r.event.step).or_default();
            *s = (*s).max(r.running);
        }
        PeakReport {
            peak_bytes: self.peak,
            peak_at: self.peak_at,
            by_layer: by_layer.into_iter().collect(),
            by_step: by_step.into_iter().collect(),
            static_bytes: self.static_bytes,
        }
    }

    /// Replays the event log from scratch and returns the recomputed peak.
    pub fn replay_peak(&self) -> Result<u64> {
        let mut fresh = MemoryLedger::new();
        for r in &self.records {
            fresh.record(r.event)?;
        }
        Ok(fresh.peak)
    }

    /// Trace lines `clock,layer,step,kind,bytes,running,peak`.
    pub fn trace_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.records.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.clock,
                r.event.layer,
                r.event.step,
                r.event.kind.as_str(),
                r.event.bytes,
                r.running,
                r.peak
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const L1: LayerTag = LayerTag::Main(1);

    #[test]
    fn cache_then_free() {
        let mut l = MemoryLedger::new();
        l.cache(L1, 1, 100).unwrap();
        l.free(L1, 1, 100).unwrap();
        assert_eq!((l.running_bytes(), l.peak_bytes()), (0, 100));
    }

    #[test]
    fn prefix_maximum() {
        let mut l = MemoryLedger::new();
        l.cache(L1, 1, 100).unwrap();
        l.cache(LayerTag::Main(2), 1, 50).unwrap();
        l.free(L1, 1, 100).unwrap();
        assert_eq!((l.running_bytes(), l.peak_bytes()), (50, 150));
        assert_eq!(l.peak_location(), Some((LayerTag::Main(2), 1)));
    }

    #[test]
    fn unmatched_free_is_rejected() {
        let mut l = MemoryLedger::new();
        l.cache(L1, 1, 100).unwrap();
        assert!(matches!(l.free(L1, 1, 99), Err(Error::UnmatchedFree { .. })));
        assert!(matches!(l.free(L1, 2, 100), Err(Error::UnmatchedFree { .. })));
        assert_eq!(l.running_bytes(), 100);
    }

    #[test]
    fn trace_format_and_replay() {
        let mut l = MemoryLedger::new();
        l.cache(LayerTag::Aux { owner: 1, index: 2 }, 3, 8).unwrap();
        l.free(LayerTag::Aux { owner: 1, index: 2 }, 3, 8).unwrap();
        let lines: Vec<String> = l.trace_lines().collect();
        assert_eq!(lines[0], "0,aux1.2,3,cache,8,8,8");
        assert_eq!(lines[1], "1,aux1.2,3,free,8,0,8");
        assert_eq!(l.replay_peak().unwrap(), 8);
        assert_eq!(LayerTag::parse("aux1.2"), Some(LayerTag::Aux { owner: 1, index: 2 }));
        assert_eq!(LayerTag::parse("7"), Some(LayerTag::Main(7)));
    }

    #[test]
    fn marginal_curves() {
        let mut l = MemoryLedger::new();
        for step in 1..=2 {
            for layer in 1..=3 {
                l.cache(LayerTag::Main(layer), step, 10).unwrap();
            }
        }
        let r = l.peak_report();
        assert_eq!(r.peak_bytes, 60);
        assert_eq!(r.peak_at, Some((LayerTag::Main(3), 2)));
        assert_eq!(r.by_step, alloc::vec![(1, 30), (2, 60)]);
        assert_eq!(r.by_layer[2], (LayerTag::Main(3), 60));
    }
}
