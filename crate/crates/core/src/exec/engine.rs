//! Gather / kernel / scatter machinery shared by every backend.

use std::marker::PhantomData;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::ExecError;
use crate::mesh::{Constants, ElemKind, Layout, Mesh, Payload};
use crate::par_loop::{Access, ArgKind, ArgViews, Kernel, ParLoop, Slot};
use crate::plan::ExecPlan;

/// One recorded write performed during a colored run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteEvent {
    pub color: u32,
    pub block: usize,
    pub worker: usize,
    pub dat: usize,
    pub target: usize,
}

#[derive(Clone, Copy)]
struct RawDat {
    f: *mut f64,
    i: *mut i64,
    dim: usize,
    size: usize,
    layout: Layout,
}

#[derive(Clone, Copy)]
enum Source {
    Direct,
    Indirect {
        table: *const usize,
        arity: usize,
        index: usize,
    },
}

#[derive(Clone, Copy)]
enum BoundArg {
    Dat {
        dat: usize,
        raw: RawDat,
        source: Source,
        mode: Access,
        slot: usize,
    },
    Global {
        value: usize,
        mode: Access,
        slot: usize,
        reduction: Option<usize>,
    },
}

/// Per-element restrictions used by the rank backend.
#[derive(Clone, Copy, Default)]
pub(crate) struct ExecCtx<'a> {
    /// Ownership flags for the iteration set; reductions skip non-owned elements.
    pub owned: Option<&'a [bool]>,
    /// Local to global element numbering of the iteration set.
    pub global_index: Option<&'a [usize]>,
}

impl ExecCtx<'_> {
    fn owns(&self, e: usize) -> bool {
        self.owned.is_none_or(|o| o[e])
    }

    fn global(&self, e: usize) -> usize {
        self.global_index.map_or(e, |g| g[e])
    }
}

/// A loop bound to the storage of one mesh.
///
/// Holds raw pointers into dat payloads; writes through them are only
/// race-free when elements are scheduled according to an [`ExecPlan`] or
/// sequentially.
pub(crate) struct BoundLoop<'a> {
    name: &'a str,
    kernel: &'a Kernel,
    constants: &'a Constants,
    args: Vec<BoundArg>,
    slots: Vec<Slot>,
    nf: usize,
    ni: usize,
    global_values: Vec<Payload>,
    reductions: Vec<(usize, Access, Payload)>,
    _storage: PhantomData<&'a mut Mesh>,
}

// SAFETY: the raw pointers refer to payloads exclusively borrowed for 'a;
// concurrent use is restricted to disjoint write targets by the plan.
unsafe impl Sync for BoundLoop<'_> {}

pub(crate) fn identity(mode: Access, kind: ElemKind, dim: usize) -> Payload {
    match (kind, mode) {
        (ElemKind::F64, Access::Min) => Payload::F64(vec![f64::INFINITY; dim]),
        (ElemKind::F64, Access::Max) => Payload::F64(vec![f64::NEG_INFINITY; dim]),
        (ElemKind::I64, Access::Min) => Payload::I64(vec![i64::MAX; dim]),
        (ElemKind::I64, Access::Max) => Payload::I64(vec![i64::MIN; dim]),
        (kind, _) => Payload::zeros(kind, dim),
    }
}

/// Folds `other` into `acc` with the reduction `mode`.
pub(crate) fn combine_into(acc: &mut Payload, other: &Payload, mode: Access) {
    match (acc, other) {
        (Payload::F64(a), Payload::F64(b)) => {
            for (x, y) in a.iter_mut().zip(b) {
                *x = match mode {
                    Access::Min => x.min(*y),
                    Access::Max => x.max(*y),
                    _ => *x + *y,
                };
            }
        }
        (Payload::I64(a), Payload::I64(b)) => {
            for (x, y) in a.iter_mut().zip(b) {
                *x = match mode {
                    Access::Min => (*x).min(*y),
                    Access::Max => (*x).max(*y),
                    _ => x.wrapping_add(*y),
                };
            }
        }
        _ => unreachable!("reduction kinds are validated on bind"),
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "kernel panicked".to_owned()
    }
}

impl<'a> BoundLoop<'a> {
    pub(crate) fn new(mesh: &'a mut Mesh, lp: &'a ParLoop) -> Self {
        let Mesh {
            sets,
            maps,
            dats,
            globals,
            constants,
            ..
        } = mesh;
        let mut slots = Vec::new();
        let (mut nf, mut ni) = (0, 0);
        let mut push_slot = |kind: ElemKind, dim: usize| {
            let offset = match kind {
                ElemKind::F64 => {
                    nf += dim;
                    nf - dim
                }
                ElemKind::I64 => {
                    ni += dim;
                    ni - dim
                }
            };
            slots.push(Slot { kind, offset, dim });
            slots.len() - 1
        };
        let raw: Vec<RawDat> = dats
            .iter_mut()
            .map(|d| {
                let size = sets[d.set.0].size;
                let (f, i) = match &mut d.payload {
                    Payload::F64(v) => (v.as_mut_ptr(), std::ptr::null_mut()),
                    Payload::I64(v) => (std::ptr::null_mut(), v.as_mut_ptr()),
                };
                RawDat {
                    f,
                    i,
                    dim: d.dim,
                    size,
                    layout: d.layout,
                }
            })
            .collect();
        let mut args = Vec::new();
        let mut global_values = Vec::new();
        let mut reductions = Vec::new();
        for a in lp.args() {
            match a.kind {
                ArgKind::Direct { dat } | ArgKind::Indirect { dat, .. } => {
                    let d = &dats[dat.0];
                    let source = match a.kind {
                        ArgKind::Indirect { map, index, .. } => Source::Indirect {
                            table: maps[map.0].table.as_ptr(),
                            arity: maps[map.0].arity,
                            index,
                        },
                        _ => Source::Direct,
                    };
                    let slot = push_slot(d.kind(), d.dim);
                    args.push(BoundArg::Dat {
                        dat: dat.0,
                        raw: raw[dat.0],
                        source,
                        mode: a.mode,
                        slot,
                    });
                }
                ArgKind::Global { global } => {
                    let g = &globals[global.0].value;
                    let slot = push_slot(g.kind(), g.len());
                    global_values.push(g.clone());
                    let reduction = if a.mode == Access::Read {
                        None
                    } else {
                        reductions.push((global.0, a.mode, identity(a.mode, g.kind(), g.len())));
                        Some(reductions.len() - 1)
                    };
                    args.push(BoundArg::Global {
                        value: global_values.len() - 1,
                        mode: a.mode,
                        slot,
                        reduction,
                    });
                }
            }
        }
        BoundLoop {
            name: lp.name(),
            kernel: lp.kernel(),
            constants,
            args,
            slots,
            nf,
            ni,
            global_values,
            reductions,
            _storage: PhantomData,
        }
    }

    /// Identity partials, one per reduction argument.
    pub(crate) fn fresh_partials(&self) -> Vec<Payload> {
        self.reductions.iter().map(|(_, _, id)| id.clone()).collect()
    }

    /// (global index, mode) for every reduction argument, in argument order.
    pub(crate) fn reduction_targets(&self) -> Vec<(usize, Access)> {
        self.reductions.iter().map(|&(g, m, _)| (g, m)).collect()
    }

    fn combine_partials(&self, acc: &mut [Payload], other: &[Payload]) {
        for ((a, b), (_, mode, _)) in acc.iter_mut().zip(other).zip(&self.reductions) {
            combine_into(a, b, *mode);
        }
    }

    /// # Safety
    /// No other thread may concurrently write any target this element writes,
    /// nor read a target it writes.
    unsafe fn run_element(
        &self,
        e: usize,
        scratch: &mut (Vec<f64>, Vec<i64>),
        partials: &mut [Payload],
        ctx: &ExecCtx<'_>,
        block_size: Option<usize>,
        trace: Option<(&Mutex<Vec<WriteEvent>>, u32, usize)>,
    ) -> Result<(), ExecError> {
        let (fbuf, ibuf) = scratch;
        for arg in &self.args {
            match *arg {
                BoundArg::Dat {
                    raw,
                    source,
                    mode,
                    slot,
                    ..
                } => {
                    let t = target(source, e);
                    let s = self.slots[slot];
                    for c in 0..s.dim {
                        let pos = raw.layout.position(t, c, raw.size, raw.dim);
                        match s.kind {
                            ElemKind::F64 => {
                                fbuf[s.offset + c] = if mode == Access::Inc { 0.0 } else { *raw.f.add(pos) };
                            }
                            ElemKind::I64 => {
                                ibuf[s.offset + c] = if mode == Access::Inc { 0 } else { *raw.i.add(pos) };
                            }
                        }
                    }
                }
                BoundArg::Global {
                    value,
                    mode,
                    slot,
                    ..
                } => {
                    let s = self.slots[slot];
                    let init = if mode == Access::Read {
                        self.global_values[value].clone()
                    } else {
                        identity(mode, s.kind, s.dim)
                    };
                    match init {
                        Payload::F64(v) => fbuf[s.offset..s.offset + s.dim].copy_from_slice(&v),
                        Payload::I64(v) => ibuf[s.offset..s.offset + s.dim].copy_from_slice(&v),
                    }
                }
            }
        }

        let element = ctx.global(e);
        let mut views = ArgViews {
            f: fbuf,
            i: ibuf,
            slots: &self.slots,
            constants: self.constants,
            element,
            block_size,
        };
        let kernel = self.kernel;
        panic::catch_unwind(AssertUnwindSafe(|| kernel(&mut views))).map_err(|p| {
            ExecError::KernelFault {
                lp: self.name.to_owned(),
                element,
                msg: panic_message(p),
            }
        })?;

        let owned = ctx.owns(e);
        for arg in &self.args {
            match *arg {
                BoundArg::Dat {
                    dat,
                    raw,
                    source,
                    mode,
                    slot,
                } => {
                    if !mode.writes() {
                        continue;
                    }
                    let t = target(source, e);
                    let s = self.slots[slot];
                    for c in 0..s.dim {
                        let pos = raw.layout.position(t, c, raw.size, raw.dim);
                        match s.kind {
                            ElemKind::F64 => {
                                let v = fbuf[s.offset + c];
                                let p = raw.f.add(pos);
                                *p = if mode == Access::Inc { *p + v } else { v };
                            }
                            ElemKind::I64 => {
                                let v = ibuf[s.offset + c];
                                let p = raw.i.add(pos);
                                *p = if mode == Access::Inc { (*p).wrapping_add(v) } else { v };
                            }
                        }
                    }
                    if let Some((log, color, block)) = trace {
                        let worker = rayon::current_thread_index().unwrap_or(0);
                        log.lock().expect("trace poisoned").push(WriteEvent {
                            color,
                            block,
                            worker,
                            dat,
                            target: t,
                        });
                    }
                }
                BoundArg::Global {
                    mode,
                    slot,
                    reduction: Some(r),
                    ..
                } if owned => {
                    let s = self.slots[slot];
                    let staged = match s.kind {
                        ElemKind::F64 => Payload::F64(fbuf[s.offset..s.offset + s.dim].to_vec()),
                        ElemKind::I64 => Payload::I64(ibuf[s.offset..s.offset + s.dim].to_vec()),
                    };
                    combine_into(&mut partials[r], &staged, mode);
                }
                BoundArg::Global { .. } => {}
            }
        }
        Ok(())
    }

    fn scratch(&self) -> (Vec<f64>, Vec<i64>) {
        (vec![0.0; self.nf], vec![0; self.ni])
    }

    /// Runs elements `0..n` in ascending order; returns reduction partials.
    pub(crate) fn run_sequential(&self, n: usize, ctx: &ExecCtx<'_>) -> Result<Vec<Payload>, ExecError> {
        let mut scratch = self.scratch();
        let mut partials = self.fresh_partials();
        for e in 0..n {
            // SAFETY: single-threaded.
            unsafe { self.run_element(e, &mut scratch, &mut partials, ctx, None, None)? };
        }
        Ok(partials)
    }

    fn run_block(
        &self,
        plan: &ExecPlan,
        block: usize,
        ctx: &ExecCtx<'_>,
        trace: Option<&Mutex<Vec<WriteEvent>>>,
    ) -> Result<Vec<Payload>, ExecError> {
        let mut scratch = self.scratch();
        let mut partials = self.fresh_partials();
        let color = plan.block_color[block];
        for &e in plan.block_order(block) {
            // SAFETY: blocks running concurrently share a block color, so their
            // write targets are disjoint; elements inside a block run in order.
            unsafe {
                self.run_element(
                    e,
                    &mut scratch,
                    &mut partials,
                    ctx,
                    Some(plan.block_size),
                    trace.map(|t| (t, color, block)),
                )?
            };
        }
        Ok(partials)
    }

    /// Runs a plan color by color; blocks of one color go to `pool` when given.
    /// Partials are combined in block-index order so results are deterministic.
    pub(crate) fn run_colored(
        &self,
        plan: &ExecPlan,
        pool: Option<&ThreadPool>,
        ctx: &ExecCtx<'_>,
        trace: Option<&Mutex<Vec<WriteEvent>>>,
    ) -> Result<Vec<Payload>, ExecError> {
        let mut per_block: Vec<Option<Vec<Payload>>> = vec![None; plan.nblocks];
        for blocks in &plan.blocks_by_color {
            let results: Vec<(usize, Result<Vec<Payload>, ExecError>)> = match pool {
                Some(pool) if blocks.len() > 1 => pool.install(|| {
                    blocks
                        .par_iter()
                        .map(|&b| (b, self.run_block(plan, b, ctx, trace)))
                        .collect()
                }),
                _ => blocks
                    .iter()
                    .map(|&b| (b, self.run_block(plan, b, ctx, trace)))
                    .collect(),
            };
            for (b, r) in results {
                per_block[b] = Some(r?);
            }
        }
        let mut acc = self.fresh_partials();
        if !acc.is_empty() {
            for p in per_block.into_iter().flatten() {
                self.combine_partials(&mut acc, &p);
            }
        }
        Ok(acc)
    }
}

#[inline]
unsafe fn target(source: Source, e: usize) -> usize {
    match source {
        Source::Direct => e,
        Source::Indirect {
            table,
            arity,
            index,
        } => *table.add(e * arity + index),
    }
}

/// Writes `partials` (loop-level reduction results) into the mesh globals.
pub(crate) fn apply_reductions(mesh: &mut Mesh, targets: &[(usize, Access)], partials: &[Payload]) {
    for (&(g, mode), p) in targets.iter().zip(partials) {
        combine_into(&mut mesh.globals[g].value, p, mode);
    }
}
