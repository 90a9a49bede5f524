use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use pathcas::PathCasStats;

use crate::config::{ExperimentConfig, Format};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub contains: u64,
    pub inserts: u64,
    pub deletes: u64,
    pub contains_ok: u64,
    pub inserts_ok: u64,
    pub deletes_ok: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.contains + self.inserts + self.deletes
    }

    pub fn merge(&mut self, o: &OpCounts) {
        self.contains += o.contains;
        self.inserts += o.inserts;
        self.deletes += o.deletes;
        self.contains_ok += o.contains_ok;
        self.inserts_ok += o.inserts_ok;
        self.deletes_ok += o.deletes_ok;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub keys: u64,
    pub max_depth: u64,
    pub avg_key_depth: f64,
    pub violations: u64,
}

/// PathCAS counters summed over the worker threads of a trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub vexec_calls: u64,
    pub exec_calls: u64,
    pub helps: u64,
    pub validation_failures: u64,
    pub spurious_retries: u64,
    pub slow_path_entries: u64,
}

impl From<PathCasStats> for Counters {
    fn from(s: PathCasStats) -> Self {
        Counters {
            vexec_calls: s.vexec_calls,
            exec_calls: s.exec_calls,
            helps: s.helps,
            validation_failures: s.validation_failures,
            spurious_retries: s.spurious_retries,
            slow_path_entries: s.slow_path_entries,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u32,
    pub elapsed_secs: f64,
    /// Operations per second over the measurement window.
    pub throughput: f64,
    pub counts: OpCounts,
    pub valid: bool,
    pub breaches: Vec<String>,
    pub structure: Structure,
    pub stats: Counters,
    /// Retired nodes not yet freed when the worker threads had exited.
    pub reclaim_pending_at_exit: u64,
    /// Retired nodes still unfreed after the epoch was flushed.
    pub reclaim_pending: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Summary {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Summary::default();
        }
        Summary {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialReport>,
    pub throughput: Summary,
    /// True iff every trial passed validation.
    pub ok: bool,
    /// Peak resident set size of the process in KiB, where available.
    pub peak_rss_kib: Option<u64>,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, trials: Vec<TrialReport>) -> Self {
        ExperimentReport {
            throughput: Summary::of(trials.iter().map(|t| t.throughput)),
            ok: trials.iter().all(|t| t.valid),
            config,
            trials,
            peak_rss_kib: peak_rss_kib(),
        }
    }
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_kib() -> Option<u64> {
    let s = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = s.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub const CSV_COLUMNS: [&str; 26] = [
    "ds",
    "threads",
    "keyrange",
    "ins",
    "del",
    "opt",
    "trial",
    "elapsed_secs",
    "throughput",
    "contains",
    "inserts",
    "deletes",
    "contains_ok",
    "inserts_ok",
    "deletes_ok",
    "keys",
    "max_depth",
    "avg_key_depth",
    "violations",
    "vexec_calls",
    "helps",
    "validation_failures",
    "spurious_retries",
    "slow_path_entries",
    "reclaim_pending",
    "valid",
];

pub fn emit(report: &ExperimentReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        Format::Csv => emit_csv(report),
        Format::Pretty => emit_pretty(report),
    }
}

fn ds_name(c: &ExperimentConfig) -> &'static str {
    match c.ds {
        crate::config::DsKind::Bst => "bst",
        crate::config::DsKind::Avl => "avl",
    }
}

fn emit_csv(report: &ExperimentReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    let c = &report.config;
    for t in &report.trials {
        let row = [
            ds_name(c).to_string(),
            c.threads.to_string(),
            c.keyrange.to_string(),
            c.ins.to_string(),
            c.del.to_string(),
            (!c.no_opt).to_string(),
            t.trial.to_string(),
            format!("{:.6}", t.elapsed_secs),
            format!("{:.1}", t.throughput),
            t.counts.contains.to_string(),
            t.counts.inserts.to_string(),
            t.counts.deletes.to_string(),
            t.counts.contains_ok.to_string(),
            t.counts.inserts_ok.to_string(),
            t.counts.deletes_ok.to_string(),
            t.structure.keys.to_string(),
            t.structure.max_depth.to_string(),
            format!("{:.3}", t.structure.avg_key_depth),
            t.structure.violations.to_string(),
            t.stats.vexec_calls.to_string(),
            t.stats.helps.to_string(),
            t.stats.validation_failures.to_string(),
            t.stats.spurious_retries.to_string(),
            t.stats.slow_path_entries.to_string(),
            t.reclaim_pending.to_string(),
            t.valid.to_string(),
        ];
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn emit_pretty(report: &ExperimentReport) -> String {
    let c = &report.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} threads={} keyrange={} ins={}% del={}% opt={}",
        ds_name(c),
        c.threads,
        c.keyrange,
        c.ins,
        c.del,
        if c.no_opt { "off" } else { "on" }
    );
    let _ = writeln!(
        s,
        "{:>5} {:>8} {:>10} {:>10} {:>10} {:>9} {:>6} {:>9} {:>9} {:>9} {:>6} {:>5}",
        "trial",
        "secs",
        "Mops/s",
        "ops",
        "keys",
        "max_dep",
        "avgdep",
        "helps",
        "val_fail",
        "spurious",
        "slow",
        "valid"
    );
    for t in &report.trials {
        let _ = writeln!(
            s,
            "{:>5} {:>8.3} {:>10.3} {:>10} {:>10} {:>9} {:>6.2} {:>9} {:>9} {:>9} {:>6} {:>5}",
            t.trial,
            t.elapsed_secs,
            t.throughput / 1e6,
            t.counts.total(),
            t.structure.keys,
            t.structure.max_depth,
            t.structure.avg_key_depth,
            t.stats.helps,
            t.stats.validation_failures,
            t.stats.spurious_retries,
            t.stats.slow_path_entries,
            if t.valid { "yes" } else { "NO" }
        );
    }
    let _ = writeln!(s, "{:>10} {:>10} {:>10}", "mean", "min", "max");
    let _ = writeln!(
        s,
        "{:>10.3} {:>10.3} {:>10.3}  Mops/s",
        report.throughput.mean / 1e6,
        report.throughput.min / 1e6,
        report.throughput.max / 1e6
    );
    for t in report.trials.iter().filter(|t| !t.valid) {
        for b in &t.breaches {
            let _ = writeln!(s, "trial {}: {b}", t.trial);
        }
    }
    if let Some(kib) = report.peak_rss_kib {
        let _ = writeln!(s, "peak rss {kib} KiB");
    }
    let _ = writeln!(s, "validation {}", if report.ok { "OK" } else { "FAILED" });
    s
}
