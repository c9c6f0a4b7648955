//! Per-loop timing, useful-bytes accounting and report emission.
//!
//! Useful bytes count each referenced element once per call: direct
//! arguments cover the whole iteration set, indirect arguments the distinct
//! targets reached through their map (all indirect arguments of one dat are
//! pooled), globals their own size. READ and WRITE move the data once, RW
//! and INC twice.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::error::Error;
use crate::mesh::Mesh;
use crate::par_loop::{ArgKind, LoopSignature};
use crate::partition::HaloStatsRow;
use crate::plan::PlanStats;
use crate::renumber::RenumberRow;

pub fn useful_bytes(mesh: &Mesh, sig: &LoopSignature) -> u64 {
    let n = mesh.set(sig.set).size as u64;
    let mut total = 0u64;
    let mut indirect: BTreeMap<usize, (u64, Vec<bool>)> = BTreeMap::new();
    for a in &sig.args {
        match a.kind {
            ArgKind::Direct { dat } => {
                let d = mesh.dat(dat);
                total += n * d.dim as u64 * d.kind().bytes() as u64 * a.mode.traffic_factor();
            }
            ArgKind::Indirect { dat, map, index } => {
                let d = mesh.dat(dat);
                let m = mesh.map(map);
                let entry = indirect.entry(dat.0).or_insert_with(|| {
                    (
                        d.dim as u64 * d.kind().bytes() as u64 * a.mode.traffic_factor(),
                        vec![false; mesh.set(m.to).size],
                    )
                });
                for e in 0..mesh.set(sig.set).size {
                    entry.1[m.table[e * m.arity + index]] = true;
                }
            }
            ArgKind::Global { global } => {
                let g = mesh.global(global);
                total += g.dim() as u64 * g.value().kind().bytes() as u64;
            }
        }
    }
    for (per_elem, seen) in indirect.values() {
        total += per_elem * seen.iter().filter(|&&s| s).count() as u64;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfRecord {
    pub name: String,
    pub calls: u64,
    pub time: Duration,
    /// Bytes per call.
    pub useful_bytes: u64,
    pub plan: Option<PlanStats>,
    pub comm: Duration,
    pub comp: Duration,
    pub messages: u64,
}

impl PerfRecord {
    /// Achieved bandwidth in bytes/second.
    pub fn achieved_bw(&self) -> f64 {
        let secs = self.time.as_secs_f64();
        if secs > 0.0 {
            (self.useful_bytes * self.calls) as f64 / secs
        } else {
            0.0
        }
    }
}

/// One loop execution as measured by a backend.
#[derive(Debug, Clone, Default)]
pub struct LoopTiming {
    pub wall: Duration,
    pub comm: Duration,
    pub comp: Duration,
    pub messages: u64,
    pub plan: Option<PlanStats>,
}

/// Per-loop records in first-call order.
#[derive(Debug, Clone, Default)]
pub struct PerfLog {
    records: Vec<PerfRecord>,
    index: HashMap<String, usize>,
}

impl PerfLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_loop(&mut self, name: &str, useful_bytes: u64, timing: LoopTiming) -> &PerfRecord {
        let i = match self.index.get(name) {
            Some(&i) => i,
            None => {
                self.records.push(PerfRecord {
                    name: name.to_owned(),
                    calls: 0,
                    time: Duration::ZERO,
                    useful_bytes,
                    plan: None,
                    comm: Duration::ZERO,
                    comp: Duration::ZERO,
                    messages: 0,
                });
                self.index.insert(name.to_owned(), self.records.len() - 1);
                self.records.len() - 1
            }
        };
        let r = &mut self.records[i];
        r.calls += 1;
        r.time += timing.wall;
        r.comm += timing.comm;
        r.comp += timing.comp;
        r.messages += timing.messages;
        r.useful_bytes = useful_bytes;
        if timing.plan.is_some() {
            r.plan = timing.plan;
        }
        r
    }

    pub fn records(&self) -> &[PerfRecord] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&PerfRecord> {
        self.index.get(name).map(|&i| &self.records[i])
    }

    pub fn total_time(&self) -> Duration {
        self.records.iter().map(|r| r.time).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.records.iter().map(|r| r.messages).sum()
    }

    /// Share of each loop in the summed loop time, in percent.
    pub fn pct_runtime(&self) -> Vec<f64> {
        let total = self.total_time().as_secs_f64();
        self.records
            .iter()
            .map(|r| {
                if total > 0.0 {
                    100.0 * r.time.as_secs_f64() / total
                } else if self.records.len() == 1 {
                    100.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ReportMeta {
    pub app: String,
    pub backend: String,
    pub nthreads: usize,
    pub nranks: usize,
    pub block_size: usize,
    pub partitioner: String,
    pub renumber: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopEntry {
    #[serde(rename = "loop")]
    pub name: String,
    pub calls: u64,
    pub useful_bytes: u64,
    pub nb: Option<usize>,
    pub nc: Option<usize>,
    pub blocks_per_color: Option<Vec<usize>>,
    pub messages: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    #[serde(rename = "loop")]
    pub name: String,
    pub time: f64,
    pub calls: u64,
    pub gb_per_sec: f64,
    pub pct_runtime: f64,
    pub comm: f64,
    pub comp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassTiming {
    pub class: String,
    pub ranks: Vec<usize>,
    pub busy_s: f64,
    pub wait_s: f64,
}

/// Timing-dependent fields, kept apart so the rest of a report is reproducible.
#[derive(Debug, Clone, Serialize, Default)]
pub struct Timing {
    pub total_s: f64,
    pub loops: Vec<TimingRow>,
    pub classes: Vec<ClassTiming>,
    pub sweeps: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Report {
    pub meta: ReportMeta,
    pub loops: Vec<LoopEntry>,
    pub halo_stats: Vec<HaloStatsRow>,
    pub renumber: Vec<RenumberRow>,
    pub tuning: Option<serde_json::Value>,
    pub timing: Timing,
}

pub const USEFUL_BYTES_NOTE: &str =
    "useful_bytes counts distinct owned elements per call; redundant halo execution is excluded";

impl Report {
    pub fn new(meta: ReportMeta, log: &PerfLog, total: Duration) -> Self {
        let pct = log.pct_runtime();
        let loops = log
            .records()
            .iter()
            .map(|r| LoopEntry {
                name: r.name.clone(),
                calls: r.calls,
                useful_bytes: r.useful_bytes,
                nb: r.plan.as_ref().map(|p| p.nb),
                nc: r.plan.as_ref().map(|p| p.nc),
                blocks_per_color: r.plan.as_ref().map(|p| p.blocks_per_color.clone()),
                messages: r.messages,
            })
            .collect();
        let rows = log
            .records()
            .iter()
            .zip(pct)
            .map(|(r, pct)| TimingRow {
                name: r.name.clone(),
                time: r.time.as_secs_f64(),
                calls: r.calls,
                gb_per_sec: r.achieved_bw() / 1e9,
                pct_runtime: pct,
                comm: r.comm.as_secs_f64(),
                comp: r.comp.as_secs_f64(),
            })
            .collect();
        let mut meta = meta;
        if !meta.notes.iter().any(|n| n == USEFUL_BYTES_NOTE) {
            meta.notes.push(USEFUL_BYTES_NOTE.to_owned());
        }
        Report {
            meta,
            loops,
            timing: Timing {
                total_s: total.as_secs_f64(),
                loops: rows,
                ..Timing::default()
            },
            ..Report::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Main table `loop,time,calls,GB/sec,pct_runtime,nb,nc,comm,comp`
    /// followed by `#`-headed sections.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for note in &self.meta.notes {
            let _ = writeln!(out, "# {note}");
        }
        let _ = writeln!(out, "loop,time,calls,GB/sec,pct_runtime,nb,nc,comm,comp");
        for (t, l) in self.timing.loops.iter().zip(&self.loops) {
            let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.6},{},{:.4},{:.2},{},{},{:.6},{:.6}",
                t.name,
                t.time,
                t.calls,
                t.gb_per_sec,
                t.pct_runtime,
                opt(l.nb),
                opt(l.nc),
                t.comm,
                t.comp
            );
        }
        if !self.halo_stats.is_empty() {
            let _ = writeln!(out, "\n# halo_stats");
            out.push_str(&crate::partition::halo_stats_csv(&self.halo_stats));
        }
        if !self.renumber.is_empty() {
            let _ = writeln!(out, "\n# renumber");
            let _ = writeln!(out, "map,max_span_before,mean_span_before,max_span_after,mean_span_after");
            for r in &self.renumber {
                let _ = writeln!(
                    out,
                    "{},{},{:.4},{},{:.4}",
                    r.map, r.before.max_span, r.before.mean_span, r.after.max_span, r.after.mean_span
                );
            }
        }
        out
    }
}

/// Writes a report as JSON or CSV depending on the file extension.
pub fn emit_report(report: &Report, path: &Path) -> Result<(), Error> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => report.to_json(),
        Some("csv") => report.to_csv(),
        _ => {
            return Err(Error::Other(format!(
                "{}: report path must end in .json or .csv",
                path.display()
            )))
        }
    };
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par_loop::{Access, Arg};

    #[test]
    fn direct_read_bytes() {
        let mut m = Mesh::new();
        let s = m.decl_set("s", 1000).unwrap();
        let d = m.decl_dat("d", s, 3, vec![0.0; 3000]).unwrap();
        let sig = LoopSignature {
            name: "l".into(),
            set: s,
            args: vec![Arg::direct(d, Access::Read)],
        };
        assert_eq!(useful_bytes(&m, &sig), 24_000);
        let inc = m.decl_dat("e", s, 1, vec![0.0; 1000]).unwrap();
        let sig = LoopSignature {
            name: "l".into(),
            set: s,
            args: vec![Arg::direct(inc, Access::Inc)],
        };
        assert_eq!(useful_bytes(&m, &sig), 16_000);
    }

    #[test]
    fn pct_runtime_split() {
        let mut log = PerfLog::new();
        log.record_loop(
            "a",
            0,
            LoopTiming {
                wall: Duration::from_secs(1),
                ..Default::default()
            },
        );
        log.record_loop(
            "b",
            0,
            LoopTiming {
                wall: Duration::from_secs(3),
                ..Default::default()
            },
        );
        assert_eq!(log.pct_runtime(), vec![25.0, 75.0]);
        let mut single = PerfLog::new();
        single.record_loop("only", 0, LoopTiming::default());
        assert_eq!(single.pct_runtime(), vec![100.0]);
    }

    #[test]
    fn records_accumulate_calls() {
        let mut log = PerfLog::new();
        for _ in 0..3 {
            log.record_loop(
                "a",
                100,
                LoopTiming {
                    wall: Duration::from_millis(10),
                    ..Default::default()
                },
            );
        }
        let r = log.get("a").unwrap();
        assert_eq!(r.calls, 3);
        assert!((r.achieved_bw() - 300.0 / 0.03).abs() < 1e-6);
    }

    #[test]
    fn unknown_extension_rejected() {
        let r = Report::default();
        assert!(emit_report(&r, Path::new("/tmp/report.txt")).is_err());
    }
}
