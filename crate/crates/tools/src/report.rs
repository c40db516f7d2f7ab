//! CSV outputs: per-epoch metrics, ledger traces and peak curves.

use std::fmt::Write as _;
use std::path::Path;

use snn_core::ledger::{MemoryLedger, PeakReport};
use snn_core::train::Regime;

use crate::error::{io_err, Result};

pub const METRICS_HEADER: &str = "epoch,regime,train_loss,test_acc,peak_bytes,wall_seconds";
pub const TRACE_HEADER: &str = "clock,layer,step,kind,bytes,running,peak";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub regime: Regime,
    pub train_loss: f64,
    pub test_acc: f64,
    pub peak_bytes: u64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch,
            self.regime.as_str(),
            self.train_loss,
            self.test_acc,
            self.peak_bytes,
            self.wall_seconds
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.line());
        s.push('\n');
    }
    s
}

pub fn trace_csv(ledger: &MemoryLedger) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for line in ledger.trace_lines() {
        s.push_str(&line);
        s.push('\n');
    }
    s
}

/// Highest running total reached while caching each layer.
pub fn by_layer_csv(report: &PeakReport) -> String {
    let mut s = String::from("layer,peak_bytes\n");
    for (layer, b) in &report.by_layer {
        writeln!(s, "{layer},{b}").unwrap();
    }
    s
}

/// Highest running total reached while caching at each step.
pub fn by_step_csv(report: &PeakReport) -> String {
    let mut s = String::from("step,peak_bytes\n");
    for (step, b) in &report.by_step {
        writeln!(s, "{step},{b}").unwrap();
    }
    s
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Writes `trace.csv`, `peak_by_layer.csv` and `peak_by_step.csv` into `dir`.
pub fn write_ledger(dir: &Path, ledger: &MemoryLedger) -> Result<PeakReport> {
    let report = ledger.peak_report();
    write(&dir.join("trace.csv"), &trace_csv(ledger))?;
    write(&dir.join("peak_by_layer.csv"), &by_layer_csv(&report))?;
    write(&dir.join("peak_by_step.csv"), &by_step_csv(&report))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use snn_core::ledger::LayerTag;

    #[test]
    fn trace_and_curves() {
        let mut l = MemoryLedger::new();
        l.cache(LayerTag::Main(1), 1, 100).unwrap();
        l.cache(LayerTag::Aux { owner: 1, index: 2 }, 1, 50).unwrap();
        l.free(LayerTag::Main(1), 1, 100).unwrap();
        let t = trace_csv(&l);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[2], "1,aux1.2,1,cache,50,150,150");
        assert_eq!(lines[3], "2,1,1,free,100,50,150");
        let r = l.peak_report();
        assert_eq!(by_layer_csv(&r), "layer,peak_bytes\n1,100\naux1.2,150\n");
        assert_eq!(by_step_csv(&r), "step,peak_bytes\n1,150\n");
    }

    #[test]
    fn metrics_line() {
        let row = MetricsRow {
            epoch: 2,
            regime: Regime::Stdl,
            train_loss: 0.5,
            test_acc: 0.975,
            peak_bytes: 4096,
            wall_seconds: 1.23456,
        };
        assert_eq!(row.line(), "2,stdl,0.5,0.975,4096,1.235");
    }
}
