use std::collections::HashMap;
use std::time::Instant;

use super::engine::{apply_reductions, BoundLoop, ExecCtx};
use super::{check_global, Backend, BackendKind};
use crate::error::ExecError;
use crate::mesh::{DatId, GlobalId, Mesh, Payload};
use crate::par_loop::{validate, ParLoop};
use crate::perf::{useful_bytes, LoopTiming, PerfLog};

/// Reference executor: elements in ascending order on the calling thread.
pub struct SerialBackend {
    mesh: Mesh,
    perf: PerfLog,
    bytes: HashMap<String, u64>,
}

impl SerialBackend {
    pub fn new(mesh: Mesh) -> Self {
        SerialBackend {
            mesh,
            perf: PerfLog::new(),
            bytes: HashMap::new(),
        }
    }

    pub fn into_mesh(self) -> Mesh {
        self.mesh
    }
}

pub(crate) fn loop_bytes(cache: &mut HashMap<String, u64>, mesh: &Mesh, lp: &ParLoop) -> u64 {
    *cache
        .entry(lp.name().to_owned())
        .or_insert_with(|| useful_bytes(mesh, lp.signature()))
}

impl Backend for SerialBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Serial
    }

    fn par_loop(&mut self, lp: &ParLoop) -> Result<LoopTiming, ExecError> {
        validate(&self.mesh, lp.signature())?;
        self.mesh.freeze();
        let bytes = loop_bytes(&mut self.bytes, &self.mesh, lp);
        let n = self.mesh.set(lp.set()).size;
        let start = Instant::now();
        let bound = BoundLoop::new(&mut self.mesh, lp);
        let targets = bound.reduction_targets();
        let partials = bound.run_sequential(n, &ExecCtx::default())?;
        apply_reductions(&mut self.mesh, &targets, &partials);
        let wall = start.elapsed();
        let timing = LoopTiming {
            wall,
            comp: wall,
            ..LoopTiming::default()
        };
        self.perf.record_loop(lp.name(), bytes, timing.clone());
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

    #[test]
    fn empty_set_runs_nothing() {
        let mut m = Mesh::new();
        let s = m.decl_set("empty", 0).unwrap();
        let d = m.decl_dat("d", s, 1, Vec::<f64>::new()).unwrap();
        let lp = ParLoop::new("never", s, vec![Arg::direct(d, Access::Write)], |_| {
            panic!("called on an empty set")
        });
        let mut b = SerialBackend::new(m);
        b.par_loop(&lp).unwrap();
        assert_eq!(b.fetch(d).unwrap(), Payload::F64(vec![]));
    }

    #[test]
    fn global_sum_counts_nodes() {
        let mut m = Mesh::new();
        let nodes = m.decl_set("nodes", 14).unwrap();
        let one = m.decl_dat("one", nodes, 1, vec![1.0; 14]).unwrap();
        let g = m.decl_global("sum", vec![0.0]).unwrap();
        let lp = ParLoop::new(
            "count",
            nodes,
            vec![Arg::direct(one, Access::Read), Arg::global(g, Access::Inc)],
            |v| v.f64_mut(1)[0] += v.f64(0)[0],
        );
        let mut b = SerialBackend::new(m);
        b.par_loop(&lp).unwrap();
        assert_eq!(b.global(g), &Payload::F64(vec![14.0]));
    }

    #[test]
    fn kernel_fault_names_loop_and_element() {
        let mut m = Mesh::new();
        let s = m.decl_set("s", 5).unwrap();
        let d = m.decl_dat("d", s, 1, vec![0.0; 5]).unwrap();
        let lp = ParLoop::new("boom", s, vec![Arg::direct(d, Access::Read)], |v| {
            assert!(v.element() != 3, "bad element");
        });
        let mut b = SerialBackend::new(m);
        match b.par_loop(&lp) {
            Err(ExecError::KernelFault { lp, element, .. }) => assert_eq!((lp.as_str(), element), ("boom", 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constants_frozen_after_first_loop() {
        let mut m = Mesh::new();
        let s = m.decl_set("s", 1).unwrap();
        let d = m.decl_dat("d", s, 1, vec![0.0]).unwrap();
        m.set_constant("gamma", 1.4).unwrap();
        let lp = ParLoop::new("g", s, vec![Arg::direct(d, Access::Write)], |v| {
            v.f64_mut(0)[0] = v.constants().f64("gamma");
        });
        let mut b = SerialBackend::new(m);
        b.par_loop(&lp).unwrap();
        assert_eq!(b.fetch(d).unwrap(), Payload::F64(vec![1.4]));
        let mut m = b.into_mesh();
        assert!(m.set_constant("gamma", 2.0).is_err());
    }
}
