//! Execution plans: mini-partition blocking plus block and element coloring.
//!
//! Two elements conflict when they write (WRITE, RW or INC) the same element
//! of the same dat. Blocks are contiguous element ranges colored greedily in
//! block-index order so that no two blocks of one color share a written
//! target; elements inside a block are colored the same way.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::mesh::Mesh;
use crate::par_loop::{ArgKind, LoopSignature};

pub const DEFAULT_BLOCK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PlanConfig {
    pub block_size: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecPlan {
    pub block_size: usize,
    pub nelems: usize,
    pub nblocks: usize,
    pub ncolors: usize,
    pub block_color: Vec<u32>,
    pub blocks_by_color: Vec<Vec<usize>>,
    pub elem_color: Vec<u32>,
    pub elem_ncolors: Vec<u32>,
    /// Elements in execution order: block-major, then element color, then index.
    pub(crate) order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanStats {
    pub nb: usize,
    pub nc: usize,
    pub blocks_per_color: Vec<usize>,
}

impl PlanStats {
    pub fn min_blocks_per_color(&self) -> usize {
        self.blocks_per_color.iter().copied().min().unwrap_or(0)
    }

    pub fn max_blocks_per_color(&self) -> usize {
        self.blocks_per_color.iter().copied().max().unwrap_or(0)
    }
}

impl ExecPlan {
    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        let start = block * self.block_size;
        start..(start + self.block_size).min(self.nelems)
    }

    pub(crate) fn block_order(&self, block: usize) -> &[usize] {
        &self.order[self.block_range(block)]
    }

    pub fn stats(&self) -> PlanStats {
        plan_stats(self)
    }
}

pub fn plan_stats(plan: &ExecPlan) -> PlanStats {
    PlanStats {
        nb: plan.nblocks,
        nc: plan.ncolors,
        blocks_per_color: plan.blocks_by_color.iter().map(Vec::len).collect(),
    }
}

/// Written targets per element in CSR form, keyed densely per (dat, element).
pub(crate) struct ConflictKeys {
    offsets: Vec<usize>,
    keys: Vec<usize>,
    nkeys: usize,
}

impl ConflictKeys {
    pub(crate) fn of(&self, e: usize) -> &[usize] {
        &self.keys[self.offsets[e]..self.offsets[e + 1]]
    }

    pub(crate) fn from_loop(mesh: &Mesh, sig: &LoopSignature, nelems: usize) -> Self {
        let mut base: HashMap<usize, usize> = HashMap::new();
        let mut nkeys = 0;
        let indirect_dats: Vec<_> = sig
            .args
            .iter()
            .filter(|a| a.map().is_some())
            .filter_map(|a| a.dat())
            .collect();
        let mut writers = Vec::new();
        for a in &sig.args {
            if !a.mode.writes() {
                continue;
            }
            let target = match a.kind {
                ArgKind::Indirect { dat, map, index } => Some((dat, Some((map, index)))),
                // direct writes only conflict when the dat is also reached through a map
                ArgKind::Direct { dat } if indirect_dats.contains(&dat) => Some((dat, None)),
                _ => None,
            };
            if let Some((dat, via)) = target {
                let b = *base.entry(dat.0).or_insert_with(|| {
                    let b = nkeys;
                    nkeys += mesh.set(mesh.dat(dat).set).size;
                    b
                });
                writers.push((b, via));
            }
        }
        let mut offsets = Vec::with_capacity(nelems + 1);
        let mut keys = Vec::with_capacity(nelems * writers.len());
        offsets.push(0);
        for e in 0..nelems {
            for &(b, via) in &writers {
                let t = match via {
                    Some((map, index)) => {
                        let m = mesh.map(map);
                        m.table[e * m.arity + index]
                    }
                    None => e,
                };
                let k = b + t;
                if !keys[offsets[e]..].contains(&k) {
                    keys.push(k);
                }
            }
            offsets.push(keys.len());
        }
        ConflictKeys {
            offsets,
            keys,
            nkeys,
        }
    }
}

/// Greedy first-fit coloring of `items` (each a set of keys) in order.
struct Colorer {
    key_colors: Vec<Vec<u32>>,
    forbidden: Vec<usize>,
    stamp: usize,
}

impl Colorer {
    fn new(nkeys: usize) -> Self {
        Colorer {
            key_colors: vec![Vec::new(); nkeys],
            forbidden: Vec::new(),
            stamp: 0,
        }
    }

    fn color(&mut self, keys: impl Iterator<Item = usize> + Clone) -> u32 {
        self.stamp += 1;
        for k in keys.clone() {
            for &c in &self.key_colors[k] {
                let c = c as usize;
                if c >= self.forbidden.len() {
                    self.forbidden.resize(c + 1, 0);
                }
                self.forbidden[c] = self.stamp;
            }
        }
        let color = self
            .forbidden
            .iter()
            .position(|&s| s != self.stamp)
            .unwrap_or(self.forbidden.len()) as u32;
        for k in keys {
            let list = &mut self.key_colors[k];
            if !list.contains(&color) {
                list.push(color);
            }
        }
        color
    }

    fn clear_keys(&mut self, keys: impl Iterator<Item = usize>) {
        for k in keys {
            self.key_colors[k].clear();
        }
    }
}

/// Builds a plan over the first `nelems` elements of the loop's set.
pub(crate) fn build_plan_range(
    mesh: &Mesh,
    sig: &LoopSignature,
    nelems: usize,
    config: &PlanConfig,
) -> ExecPlan {
    let conflicts = ConflictKeys::from_loop(mesh, sig, nelems);
    build_from_keys(&conflicts, nelems, config.block_size.max(1))
}

pub(crate) fn build_from_keys(conflicts: &ConflictKeys, nelems: usize, block_size: usize) -> ExecPlan {
    let nblocks = nelems.div_ceil(block_size);
    let block_keys = |b: usize| {
        let start = b * block_size;
        let end = (start + block_size).min(nelems);
        (start..end).flat_map(|e| conflicts.of(e).iter().copied())
    };

    let mut colorer = Colorer::new(conflicts.nkeys);
    let mut block_color = Vec::with_capacity(nblocks);
    for b in 0..nblocks {
        block_color.push(colorer.color(block_keys(b)));
    }
    let ncolors = block_color.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut blocks_by_color = vec![Vec::new(); ncolors];
    for (b, &c) in block_color.iter().enumerate() {
        blocks_by_color[c as usize].push(b);
    }

    let mut inner = Colorer::new(conflicts.nkeys);
    let mut elem_color = vec![0u32; nelems];
    let mut elem_ncolors = Vec::with_capacity(nblocks);
    let mut order = Vec::with_capacity(nelems);
    for b in 0..nblocks {
        let start = b * block_size;
        let end = (start + block_size).min(nelems);
        let mut nc = 0;
        for e in start..end {
            let c = inner.color(conflicts.of(e).iter().copied());
            elem_color[e] = c;
            nc = nc.max(c + 1);
        }
        inner.clear_keys(block_keys(b));
        elem_ncolors.push(nc);
        let mut elems: Vec<usize> = (start..end).collect();
        elems.sort_by_key(|&e| (elem_color[e], e));
        order.extend(elems);
    }

    ExecPlan {
        block_size,
        nelems,
        nblocks,
        ncolors,
        block_color,
        blocks_by_color,
        elem_color,
        elem_ncolors,
        order,
    }
}

/// Builds the plan for a loop over its whole iteration set.
pub fn build_plan(mesh: &Mesh, sig: &LoopSignature, config: &PlanConfig) -> ExecPlan {
    build_plan_range(mesh, sig, mesh.set(sig.set).size, config)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PlanKey {
    sig: LoopSignature,
    nelems: usize,
    block_size: usize,
    version: u64,
}

/// Per-loop plan cache keyed by loop signature, element range, block size
/// and mesh version.
#[derive(Debug, Default)]
pub struct PlanCache {
    plans: Mutex<HashMap<PlanKey, Arc<ExecPlan>>>,
    builds: AtomicUsize,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(&self, mesh: &Mesh, sig: &LoopSignature, config: &PlanConfig) -> Arc<ExecPlan> {
        self.get_or_build_range(mesh, sig, mesh.set(sig.set).size, config)
    }

    pub(crate) fn get_or_build_range(
        &self,
        mesh: &Mesh,
        sig: &LoopSignature,
        nelems: usize,
        config: &PlanConfig,
    ) -> Arc<ExecPlan> {
        let key = PlanKey {
            sig: sig.clone(),
            nelems,
            block_size: config.block_size,
            version: mesh.version(),
        };
        // the lock is held while building: one builder per key
        let mut plans = self.plans.lock().expect("plan cache poisoned");
        if let Some(p) = plans.get(&key) {
            return Arc::clone(p);
        }
        self.builds.fetch_add(1, Ordering::Relaxed);
        let plan = Arc::new(build_plan_range(mesh, sig, nelems, config));
        plans.insert(key, Arc::clone(&plan));
        plan
    }

    /// Number of plans built so far.
    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::Relaxed)
    }

    pub fn clear(&self) {
        self.plans.lock().expect("plan cache poisoned").clear();
    }
}
