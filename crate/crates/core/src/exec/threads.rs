use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use rayon::{ThreadPool, ThreadPoolBuilder};

use super::engine::{apply_reductions, BoundLoop, ExecCtx, WriteEvent};
use super::serial::loop_bytes;
use super::{check_global, Backend, BackendConfig, BackendKind};
use crate::error::ExecError;
use crate::mesh::{DatId, GlobalId, Mesh, Payload};
use crate::par_loop::{validate, ParLoop};
use crate::perf::{LoopTiming, PerfLog};
use crate::plan::{ExecPlan, PlanCache};

pub(crate) fn build_pool(nthreads: usize) -> Result<ThreadPool, ExecError> {
    ThreadPoolBuilder::new()
        .num_threads(nthreads)
        .build()
        .map_err(|e| ExecError::Config(format!("thread pool: {e}")))
}

/// Colored execution on a worker pool: one block color at a time, with a
/// barrier between colors.
pub struct ThreadsBackend {
    mesh: Mesh,
    pool: ThreadPool,
    config: BackendConfig,
    plans: PlanCache,
    perf: PerfLog,
    bytes: HashMap<String, u64>,
    trace: Option<Mutex<Vec<WriteEvent>>>,
    last_plan: HashMap<String, std::sync::Arc<ExecPlan>>,
}

impl ThreadsBackend {
    pub fn new(mesh: Mesh, config: &BackendConfig) -> Result<Self, ExecError> {
        config.validate()?;
        Ok(ThreadsBackend {
            mesh,
            pool: build_pool(config.nthreads)?,
            config: config.clone(),
            plans: PlanCache::new(),
            perf: PerfLog::new(),
            bytes: HashMap::new(),
            trace: config.trace_writes.then(|| Mutex::new(Vec::new())),
            last_plan: HashMap::new(),
        })
    }

    pub fn into_mesh(self) -> Mesh {
        self.mesh
    }

    pub fn plan_cache(&self) -> &PlanCache {
        &self.plans
    }

    /// Plan used by the most recent call of a loop.
    pub fn plan(&self, name: &str) -> Option<&ExecPlan> {
        self.last_plan.get(name).map(|p| p.as_ref())
    }

    /// Drains the write trace recorded so far (empty unless tracing is on).
    pub fn take_trace(&mut self) -> Vec<WriteEvent> {
        self.trace
            .as_mut()
            .map(|t| std::mem::take(t.get_mut().expect("trace poisoned")))
            .unwrap_or_default()
    }
}

impl Backend for ThreadsBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Threads
    }

    fn par_loop(&mut self, lp: &ParLoop) -> Result<LoopTiming, ExecError> {
        validate(&self.mesh, lp.signature())?;
        self.mesh.freeze();
        let bytes = loop_bytes(&mut self.bytes, &self.mesh, lp);
        let plan = self
            .plans
            .get_or_build(&self.mesh, lp.signature(), &self.config.plan_for(lp.name()));
        let start = Instant::now();
        let bound = BoundLoop::new(&mut self.mesh, lp);
        let targets = bound.reduction_targets();
        let partials = bound.run_colored(&plan, Some(&self.pool), &ExecCtx::default(), self.trace.as_ref())?;
        apply_reductions(&mut self.mesh, &targets, &partials);
        let wall = start.elapsed();
        let timing = LoopTiming {
            wall,
            comp: wall,
            plan: Some(plan.stats()),
            ..LoopTiming::default()
        };
        self.perf.record_loop(lp.name(), bytes, timing.clone());
        self.last_plan.insert(lp.name().to_owned(), plan);
        Ok(timing)
    }

    fn fetch(&mut self, dat: DatId) -> Result<Payload, ExecError> {
        Ok(self.mesh.fetch(dat))
    }

    fn global(&self, id: GlobalId) -> &Payload {
        self.mesh.global(id).value()
    }

    fn set_global(&mut self, id: GlobalId, value: Payload) -> Result<(), ExecError> {
        check_global(&self.mesh, id, &value)?;
        self.mesh.set_global(id, value)?;
        Ok(())
    }

    fn perf(&self) -> &PerfLog {
        &self.perf
    }

    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn finish(self: Box<Self>) -> Result<Mesh, ExecError> {
        Ok(self.mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par_loop::{Access, Arg};

    fn star(n: usize) -> (Mesh, ParLoop) {
        // n edges all incrementing node 1
        let mut m = Mesh::new();
        let nodes = m.decl_set("nodes", n + 1).unwrap();
        let edges = m.decl_set("edges", n).unwrap();
        let table: Vec<i64> = (0..n as i64).flat_map(|e| [1, e + 2]).collect();
        let en = m.decl_map("en", edges, nodes, 2, &table).unwrap();
        let acc = m.decl_dat("acc", nodes, 1, vec![0i64; n + 1]).unwrap();
        let lp = ParLoop::new(
            "hub",
            edges,
            vec![Arg::indirect(acc, en, 1, Access::Inc), Arg::indirect(acc, en, 2, Access::Inc)],
            |v| {
                let e = v.element() as i64;
                v.i64_mut(0)[0] = e + 1;
                v.i64_mut(1)[0] = 1;
            },
        );
        (m, lp)
    }

    #[test]
    fn matches_serial_on_hub() {
        let (m, lp) = star(50);
        let acc = m.dat_by_name("acc").unwrap();
        let mut serial = super::super::SerialBackend::new(m.clone());
        serial.par_loop(&lp).unwrap();
        for nthreads in [1, 2, 4] {
            for bs in [1, 4, 64] {
                let mut t = ThreadsBackend::new(m.clone(), &BackendConfig::threads(nthreads, bs)).unwrap();
                t.par_loop(&lp).unwrap();
                assert_eq!(t.fetch(acc).unwrap(), serial.fetch(acc).unwrap());
            }
        }
    }

    #[test]
    fn plan_is_cached_across_calls() {
        let (m, lp) = star(10);
        let mut t = ThreadsBackend::new(m, &BackendConfig::threads(2, 4)).unwrap();
        t.par_loop(&lp).unwrap();
        t.par_loop(&lp).unwrap();
        assert_eq!(t.plan_cache().builds(), 1);
        assert_eq!(t.perf().get("hub").unwrap().calls, 2);
    }

    #[test]
    fn trace_phases_are_disjoint() {
        let (m, lp) = star(20);
        let mut cfg = BackendConfig::threads(4, 2);
        cfg.trace_writes = true;
        let mut t = ThreadsBackend::new(m, &cfg).unwrap();
        t.par_loop(&lp).unwrap();
        let trace = t.take_trace();
        assert_eq!(trace.len(), 40);
        for a in &trace {
            for b in &trace {
                if a.color == b.color && a.block != b.block {
                    assert!((a.dat, a.target) != (b.dat, b.target));
                }
            }
        }
    }
}
