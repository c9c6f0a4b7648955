//! Empirical block-size and balance-factor selection with a persistent
//! lookup table.
//!
//! Every candidate is timed three times and the median kept. A candidate
//! whose repeats spread by more than half of its median is not trusted and
//! the default is used instead. Outputs of every measured run are checked
//! against a serial reference run before any timing is accepted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ExecError};
use crate::exec::{launch, Backend, BackendConfig, BackendKind};
use crate::mesh::{DatId, Mesh, Payload};
use crate::par_loop::LoopSignature;
use crate::plan::DEFAULT_BLOCK_SIZE;

pub const REPEATS: usize = 3;
/// Largest accepted `(max - min) / median` over the repeats.
pub const MAX_SPREAD: f64 = 0.5;
pub const DEFAULT_BALANCE: f64 = 1.0;
/// Relative tolerance for float64 outputs, scaled by the largest magnitude
/// of the reference dat.
pub const F64_RTOL: f64 = 1e-12;

/// Block sizes 64, 128, ..., 1024.
pub fn default_block_candidates() -> Vec<usize> {
    (6..=10).map(|p| 1usize << p).collect()
}

pub fn default_balance_candidates() -> Vec<f64> {
    vec![0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0]
}

/// A loop program the tuner can replay on fresh copies of its mesh.
pub trait Program: Sync {
    /// Prepared mesh with every dat the program touches.
    fn mesh(&self) -> &Mesh;
    fn signatures(&self) -> Vec<LoopSignature>;
    fn run(&self, backend: &mut dyn Backend) -> Result<(), ExecError>;
    /// Dats whose final values define the program's result.
    fn outputs(&self) -> Vec<DatId>;
}

/// Checks two payloads for equality: exact for int64, within `rtol` of the
/// largest reference magnitude for float64.
pub fn outputs_agree(reference: &Payload, got: &Payload, rtol: f64) -> Result<(), String> {
    match (reference, got) {
        (Payload::I64(a), Payload::I64(b)) => {
            if a.len() != b.len() {
                return Err(format!("length {} != {}", a.len(), b.len()));
            }
            match a.iter().zip(b).position(|(x, y)| x != y) {
                Some(i) => Err(format!("element {i}: {} != {}", a[i], b[i])),
                None => Ok(()),
            }
        }
        (Payload::F64(a), Payload::F64(b)) => {
            if a.len() != b.len() {
                return Err(format!("length {} != {}", a.len(), b.len()));
            }
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                if !((x - y).abs() <= rtol * scale) && x != y {
                    return Err(format!("element {i}: {x} vs {y} (scale {scale})"));
                }
            }
            Ok(())
        }
        _ => Err("payload kinds differ".into()),
    }
}

struct Measured {
    outputs: Vec<Payload>,
    total: Duration,
    per_loop: BTreeMap<String, Duration>,
}

fn measure(program: &dyn Program, config: &BackendConfig) -> Result<Measured, ExecError> {
    let mut backend = launch(program.mesh().clone(), config, &program.signatures())?;
    let start = Instant::now();
    program.run(backend.as_mut())?;
    let total = start.elapsed();
    let per_loop = backend
        .perf()
        .records()
        .iter()
        .map(|r| (r.name.clone(), r.time))
        .collect();
    let outputs = program
        .outputs()
        .into_iter()
        .map(|d| backend.fetch(d))
        .collect::<Result<_, _>>()?;
    backend.finish()?;
    Ok(Measured {
        outputs,
        total,
        per_loop,
    })
}

fn reference(program: &dyn Program) -> Result<Vec<Payload>, ExecError> {
    Ok(measure(program, &BackendConfig::serial())?.outputs)
}

fn check(program: &dyn Program, reference: &[Payload], got: &[Payload], what: &str) -> Result<(), Error> {
    for ((r, g), dat) in reference.iter().zip(got).zip(program.outputs()) {
        outputs_agree(r, g, F64_RTOL).map_err(|e| {
            Error::Other(format!(
                "tuning run with {what} changed dat `{}`: {e}",
                program.mesh().dat(dat).name
            ))
        })?;
    }
    Ok(())
}

/// Median, minimum and maximum of a sample, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

impl Sample {
    pub fn of(times: &[Duration]) -> Self {
        let mut s: Vec<f64> = times.iter().map(Duration::as_secs_f64).collect();
        s.sort_by(f64::total_cmp);
        Sample {
            median_s: s[s.len() / 2],
            min_s: s[0],
            max_s: s[s.len() - 1],
        }
    }

    pub fn spread(&self) -> f64 {
        if self.median_s > 0.0 {
            (self.max_s - self.min_s) / self.median_s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPoint {
    #[serde(rename = "loop")]
    pub name: String,
    pub block_size: usize,
    #[serde(flatten)]
    pub sample: Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTuning {
    pub chosen: BTreeMap<String, usize>,
    /// Loops whose winning candidate was too noisy; they use the default.
    pub flagged: Vec<String>,
    pub sweep: Vec<BlockPoint>,
}

/// Chooses a block size per loop from `candidates` on `config`'s backend.
pub fn tune_block_size(program: &dyn Program, candidates: &[usize], config: &BackendConfig) -> Result<BlockTuning, Error> {
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(Error::Other("block-size candidates must be non-empty and positive".into()));
    }
    let reference = reference(program)?;
    let mut times: BTreeMap<String, Vec<Vec<Duration>>> = BTreeMap::new();
    for (c, &bs) in candidates.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.plan.block_size = bs;
        cfg.block_overrides.clear();
        for _ in 0..REPEATS {
            let m = measure(program, &cfg)?;
            check(program, &reference, &m.outputs, &format!("block size {bs}"))?;
            for (name, t) in m.per_loop {
                let slot = times.entry(name).or_insert_with(|| vec![Vec::new(); candidates.len()]);
                slot[c].push(t);
            }
        }
    }
    let mut out = BlockTuning {
        chosen: BTreeMap::new(),
        flagged: Vec::new(),
        sweep: Vec::new(),
    };
    for (name, per_candidate) in times {
        let samples: Vec<Sample> = per_candidate.iter().map(|t| Sample::of(t)).collect();
        let best = (0..samples.len())
            .min_by(|&a, &b| samples[a].median_s.total_cmp(&samples[b].median_s))
            .expect("candidates non-empty");
        let size = if candidates.len() > 1 && samples[best].spread() > MAX_SPREAD {
            out.flagged.push(name.clone());
            DEFAULT_BLOCK_SIZE
        } else {
            candidates[best]
        };
        for (s, &bs) in samples.iter().zip(candidates) {
            out.sweep.push(BlockPoint {
                name: name.clone(),
                block_size: bs,
                sample: *s,
            });
        }
        out.chosen.insert(name, size);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePoint {
    pub balance: f64,
    #[serde(flatten)]
    pub sample: Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTuning {
    pub best: f64,
    pub flagged: bool,
    pub sweep: Vec<BalancePoint>,
}

/// Chooses the hybrid balance factor minimizing total wall time.
pub fn tune_balance(program: &dyn Program, candidates: &[f64], config: &BackendConfig) -> Result<BalanceTuning, Error> {
    if config.kind != BackendKind::Hybrid {
        return Err(ExecError::Config("balance tuning needs the hybrid backend".into()).into());
    }
    if candidates.is_empty() {
        return Err(Error::Other("balance candidates must be non-empty".into()));
    }
    if let [only] = candidates {
        return Ok(BalanceTuning {
            best: *only,
            flagged: false,
            sweep: Vec::new(),
        });
    }
    let reference = reference(program)?;
    let mut sweep = Vec::new();
    for &beta in candidates {
        let mut cfg = config.clone();
        cfg.balance = beta;
        let mut t = Vec::with_capacity(REPEATS);
        for _ in 0..REPEATS {
            let m = measure(program, &cfg)?;
            check(program, &reference, &m.outputs, &format!("balance {beta}"))?;
            t.push(m.total);
        }
        sweep.push(BalancePoint {
            balance: beta,
            sample: Sample::of(&t),
        });
    }
    let best = sweep
        .iter()
        .min_by(|a, b| a.sample.median_s.total_cmp(&b.sample.median_s))
        .expect("candidates non-empty");
    let flagged = best.sample.spread() > MAX_SPREAD;
    Ok(BalanceTuning {
        best: if flagged { DEFAULT_BALANCE } else { best.balance },
        flagged,
        sweep,
    })
}

/// Tuned parameters keyed by `loop|backend|nranks` (block sizes) and
/// `backend|nranks` (balance factors).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TuningTable {
    pub block_size: BTreeMap<String, usize>,
    pub balance: BTreeMap<String, f64>,
}

fn block_key(name: &str, backend: BackendKind, nranks: usize) -> String {
    format!("{name}|{}|{nranks}", backend.name())
}

fn balance_key(backend: BackendKind, nranks: usize) -> String {
    format!("{}|{nranks}", backend.name())
}

impl TuningTable {
    pub fn set_block(&mut self, name: &str, backend: BackendKind, nranks: usize, size: usize) {
        self.block_size.insert(block_key(name, backend, nranks), size);
    }

    pub fn block(&self, name: &str, backend: BackendKind, nranks: usize) -> Option<usize> {
        self.block_size.get(&block_key(name, backend, nranks)).copied()
    }

    pub fn set_balance(&mut self, backend: BackendKind, nranks: usize, beta: f64) {
        self.balance.insert(balance_key(backend, nranks), beta);
    }

    pub fn balance(&self, backend: BackendKind, nranks: usize) -> Option<f64> {
        self.balance.get(&balance_key(backend, nranks)).copied()
    }

    /// Records a block tuning result for `config`'s backend and rank count.
    pub fn record_blocks(&mut self, tuning: &BlockTuning, config: &BackendConfig) {
        for (name, &size) in &tuning.chosen {
            self.set_block(name, config.kind, config.nranks, size);
        }
    }

    /// Copies matching entries into `config` as per-loop overrides and balance.
    pub fn apply(&self, config: &mut BackendConfig, loops: &[String]) {
        for name in loops {
            if let Some(size) = self.block(name, config.kind, config.nranks) {
                config.block_overrides.insert(name.clone(), size);
            }
        }
        if let Some(beta) = self.balance(config.kind, config.nranks) {
            config.balance = beta;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Other(format!("{}: {e}", path.display())))
    }
}

/// `<dir>/<stem>.tune.json` for a report at `<dir>/<stem>.<ext>`.
pub fn table_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}.tune.json"))
}
