//! Loop executors.
//!
//! Every backend runs the same [`ParLoop`]s against a [`Mesh`] it owns and
//! produces results equal to [`SerialBackend`]: bit-exact for int64 data,
//! within floating-point reassociation for float64.

mod engine;
mod ranks;
mod serial;
mod threads;

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use engine::WriteEvent;
pub use ranks::{plan_layout, RanksBackend};
pub use serial::SerialBackend;
pub use threads::ThreadsBackend;

use crate::error::ExecError;
use crate::mesh::{DatId, ElemKind, GlobalId, Mesh, Payload};
use crate::par_loop::{Access, LoopSignature, ParLoop};
use crate::partition::{HaloStatsRow, Partitioner};
use crate::perf::{ClassTiming, LoopTiming, PerfLog};
use crate::plan::{PlanConfig, DEFAULT_BLOCK_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Serial,
    Threads,
    Ranks,
    Hybrid,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Serial => "serial",
            BackendKind::Threads => "threads",
            BackendKind::Ranks => "ranks",
            BackendKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "serial" => Ok(BackendKind::Serial),
            "threads" => Ok(BackendKind::Threads),
            "ranks" => Ok(BackendKind::Ranks),
            "hybrid" => Ok(BackendKind::Hybrid),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

/// Fault injection for exercising the rank backend's failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The rank never sends halo data.
    SilentRank(usize),
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Worker threads (threads backend, and per rank on the ranks backend).
    pub nthreads: usize,
    pub nranks: usize,
    pub plan: PlanConfig,
    /// Per-loop block sizes overriding `plan.block_size`.
    pub block_overrides: HashMap<String, usize>,
    pub partitioner: Partitioner,
    /// Hybrid static balance factor: class-A partition size over combined class-B size.
    pub balance: f64,
    pub class_a_ranks: usize,
    pub class_a_threads: usize,
    pub class_b_threads: usize,
    /// Bound on every blocking receive of the rank backend.
    pub timeout: Duration,
    /// Record every write of the threads backend as a [`WriteEvent`].
    pub trace_writes: bool,
    pub fault: Option<Fault>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Serial,
            nthreads: 1,
            nranks: 1,
            plan: PlanConfig::default(),
            block_overrides: HashMap::new(),
            partitioner: Partitioner::Trivial,
            balance: 1.0,
            class_a_ranks: 1,
            class_a_threads: 2,
            class_b_threads: 1,
            timeout: Duration::from_secs(10),
            trace_writes: false,
            fault: None,
        }
    }
}

impl BackendConfig {
    pub fn serial() -> Self {
        Self::default()
    }

    pub fn threads(nthreads: usize, block_size: usize) -> Self {
        BackendConfig {
            kind: BackendKind::Threads,
            nthreads,
            plan: PlanConfig { block_size },
            ..Self::default()
        }
    }

    pub fn ranks(nranks: usize, partitioner: Partitioner) -> Self {
        BackendConfig {
            kind: BackendKind::Ranks,
            nranks,
            partitioner,
            ..Self::default()
        }
    }

    pub fn hybrid(nranks: usize, class_a_ranks: usize, balance: f64) -> Self {
        BackendConfig {
            kind: BackendKind::Hybrid,
            nranks,
            class_a_ranks,
            balance,
            ..Self::default()
        }
    }

    /// Plan configuration for one loop, honoring per-loop overrides.
    pub fn plan_for(&self, name: &str) -> PlanConfig {
        PlanConfig {
            block_size: self
                .block_overrides
                .get(name)
                .copied()
                .unwrap_or(self.plan.block_size),
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        let bad = |m: &str| Err(ExecError::Config(m.to_owned()));
        if self.plan.block_size == 0 || self.block_overrides.values().any(|&b| b == 0) {
            return bad("block size must be at least 1");
        }
        if self.nthreads == 0 {
            return bad("nthreads must be at least 1");
        }
        if self.nranks == 0 {
            return bad("nranks must be at least 1");
        }
        if self.kind == BackendKind::Hybrid {
            if self.nranks < 2 {
                return bad("hybrid execution needs at least 2 ranks");
            }
            if self.class_a_ranks == 0 || self.class_a_ranks >= self.nranks {
                return bad("hybrid execution needs at least one rank of each class");
            }
            if !(self.balance > 0.0) || !self.balance.is_finite() {
                return bad("balance factor must be positive");
            }
            if self.class_a_threads == 0 || self.class_b_threads == 0 {
                return bad("class pool widths must be at least 1");
            }
        }
        Ok(())
    }

    pub fn block_size_label(&self) -> usize {
        if self.kind == BackendKind::Serial {
            DEFAULT_BLOCK_SIZE
        } else {
            self.plan.block_size
        }
    }
}

/// A running executor holding the mesh state.
pub trait Backend: Send {
    fn kind(&self) -> BackendKind;

    /// Executes one loop and records it in the performance log.
    fn par_loop(&mut self, lp: &ParLoop) -> Result<LoopTiming, ExecError>;

    /// Current values of a dat in element-major order.
    fn fetch(&mut self, dat: DatId) -> Result<Payload, ExecError>;

    fn global(&self, id: GlobalId) -> &Payload;

    fn set_global(&mut self, id: GlobalId, value: Payload) -> Result<(), ExecError>;

    fn perf(&self) -> &PerfLog;

    /// Declarations; dat payloads may lag behind on distributed backends.
    fn mesh(&self) -> &Mesh;

    fn halo_stats(&self) -> Option<HaloStatsRow> {
        None
    }

    fn class_timing(&self) -> Vec<ClassTiming> {
        Vec::new()
    }

    /// Total halo messages sent so far.
    fn messages(&self) -> u64 {
        self.perf().total_messages()
    }

    /// Stops workers and returns the mesh with every dat up to date.
    fn finish(self: Box<Self>) -> Result<Mesh, ExecError>;
}

/// Starts a backend over `mesh`. `program` lists the signatures of every
/// loop that will run; the rank backends build their halos from it.
pub fn launch(mesh: Mesh, config: &BackendConfig, program: &[LoopSignature]) -> Result<Box<dyn Backend>, ExecError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Serial => Box::new(SerialBackend::new(mesh)),
        BackendKind::Threads => Box::new(ThreadsBackend::new(mesh, config)?),
        BackendKind::Ranks | BackendKind::Hybrid => Box::new(RanksBackend::new(mesh, config, program)?),
    })
}

/// Combines one partial per rank in ascending rank order.
pub fn reduce_global(partials: &[Payload], mode: Access) -> Result<Payload, ExecError> {
    if !matches!(mode, Access::Inc | Access::Min | Access::Max) {
        return Err(ExecError::Reduction(format!("{mode:?} is not a reduction mode")));
    }
    let Some(first) = partials.first() else {
        return Err(ExecError::Reduction("no partials".into()));
    };
    let mut acc = engine::identity(mode, first.kind(), first.len());
    for p in partials {
        if p.kind() != first.kind() || p.len() != first.len() {
            return Err(ExecError::Reduction("partials differ in kind or length".into()));
        }
        engine::combine_into(&mut acc, p, mode);
    }
    Ok(acc)
}

fn run_program(backend: &mut dyn Backend, loops: &[ParLoop]) -> Result<(), ExecError> {
    for lp in loops {
        backend.par_loop(lp)?;
    }
    Ok(())
}

/// Runs `loops` in order on the serial reference executor.
pub fn run_serial(mesh: &mut Mesh, loops: &[ParLoop]) -> Result<(), ExecError> {
    let mut b = SerialBackend::new(std::mem::take(mesh));
    let r = run_program(&mut b, loops);
    *mesh = b.into_mesh();
    r
}

pub fn run_threads(mesh: &mut Mesh, loops: &[ParLoop], config: &BackendConfig) -> Result<(), ExecError> {
    config.validate()?;
    let mut b = ThreadsBackend::new(std::mem::take(mesh), config)?;
    let r = run_program(&mut b, loops);
    *mesh = b.into_mesh();
    r
}

/// Runs `loops` on the rank backend and gathers the result into `mesh`.
pub fn run_ranks(mesh: &mut Mesh, loops: &[ParLoop], config: &BackendConfig) -> Result<(), ExecError> {
    let mut config = config.clone();
    if config.kind != BackendKind::Hybrid {
        config.kind = BackendKind::Ranks;
    }
    run_distributed(mesh, loops, &config)
}

pub fn run_hybrid(mesh: &mut Mesh, loops: &[ParLoop], config: &BackendConfig) -> Result<(), ExecError> {
    let mut config = config.clone();
    config.kind = BackendKind::Hybrid;
    run_distributed(mesh, loops, &config)
}

fn run_distributed(mesh: &mut Mesh, loops: &[ParLoop], config: &BackendConfig) -> Result<(), ExecError> {
    config.validate()?;
    let program: Vec<LoopSignature> = loops.iter().map(|l| l.signature().clone()).collect();
    let original = mesh.clone();
    let mut b = Box::new(RanksBackend::new(std::mem::take(mesh), config, &program)?);
    let r = run_program(b.as_mut(), loops);
    match b.finish() {
        Ok(m) => *mesh = m,
        Err(e) => {
            *mesh = original;
            return Err(r.err().unwrap_or(e));
        }
    }
    r
}

pub(crate) fn check_global(mesh: &Mesh, id: GlobalId, value: &Payload) -> Result<(), ExecError> {
    let g = mesh.global(id);
    if g.value().kind() != value.kind() || g.dim() != value.len() {
        let name = |k: ElemKind| k.name();
        return Err(ExecError::Mesh(crate::error::MeshError::KindMismatch {
            name: g.name.clone(),
            expected: name(g.value().kind()),
            actual: name(value.kind()),
        }));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_in_rank_order() {
        let p: Vec<Payload> = vec![vec![1i64].into(), vec![2i64].into(), vec![3i64].into()];
        assert_eq!(reduce_global(&p, Access::Inc).unwrap(), Payload::I64(vec![6]));
        let p: Vec<Payload> = vec![vec![3.0].into(), vec![-1.0].into()];
        assert_eq!(reduce_global(&p, Access::Min).unwrap(), Payload::F64(vec![-1.0]));
        assert_eq!(reduce_global(&p, Access::Max).unwrap(), Payload::F64(vec![3.0]));
    }

    #[test]
    fn reduce_rejects_mismatch() {
        let p: Vec<Payload> = vec![vec![1i64].into(), vec![2.0].into()];
        assert!(reduce_global(&p, Access::Inc).is_err());
        assert!(reduce_global(&[], Access::Inc).is_err());
        assert!(reduce_global(&[vec![1.0].into()], Access::Read).is_err());
    }

    #[test]
    fn hybrid_needs_two_ranks() {
        let mut c = BackendConfig::hybrid(1, 1, 1.0);
        assert!(c.validate().is_err());
        c.nranks = 2;
        assert!(c.validate().is_ok());
        c.balance = 0.0;
        assert!(c.validate().is_err());
    }
}
