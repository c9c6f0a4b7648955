//! Loop descriptors: iteration set, access-described arguments and kernel.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::MeshError;
use crate::mesh::{Constants, DatId, ElemKind, GlobalId, MapId, Mesh, SetId};

/// How a kernel touches an argument.
///
/// `Inc` arguments start every element at zero and the executor adds the
/// kernel's contribution to the target, so increments may be applied in any
/// order. `Min`/`Max` are only valid on globals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    Read,
    Write,
    ReadWrite,
    Inc,
    Min,
    Max,
}

impl Access {
    pub fn writes(self) -> bool {
        !matches!(self, Access::Read)
    }

    pub fn reads(self) -> bool {
        matches!(self, Access::Read | Access::ReadWrite)
    }

    /// Traffic multiplier used for useful-bytes accounting.
    pub fn traffic_factor(self) -> u64 {
        match self {
            Access::ReadWrite | Access::Inc => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgKind {
    Direct { dat: DatId },
    /// `index` is 0-based here; [`Arg::indirect`] takes the 1-based form.
    Indirect { dat: DatId, map: MapId, index: usize },
    Global { global: GlobalId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arg {
    pub kind: ArgKind,
    pub mode: Access,
}

impl Arg {
    pub fn direct(dat: DatId, mode: Access) -> Self {
        Arg {
            kind: ArgKind::Direct { dat },
            mode,
        }
    }

    /// `index` is the 1-based position within the map row.
    pub fn indirect(dat: DatId, map: MapId, index: usize, mode: Access) -> Self {
        Arg {
            kind: ArgKind::Indirect {
                dat,
                map,
                index: index.wrapping_sub(1),
            },
            mode,
        }
    }

    pub fn global(global: GlobalId, mode: Access) -> Self {
        Arg {
            kind: ArgKind::Global { global },
            mode,
        }
    }

    pub fn dat(&self) -> Option<DatId> {
        match self.kind {
            ArgKind::Direct { dat } | ArgKind::Indirect { dat, .. } => Some(dat),
            ArgKind::Global { .. } => None,
        }
    }

    pub fn map(&self) -> Option<(MapId, usize)> {
        match self.kind {
            ArgKind::Indirect { map, index, .. } => Some((map, index)),
            _ => None,
        }
    }
}

/// Everything about a loop except its kernel; used for plan caching and
/// halo construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LoopSignature {
    pub name: String,
    pub set: SetId,
    pub args: Vec<Arg>,
}

impl LoopSignature {
    /// The map whose first row entry decides ownership of iteration elements.
    pub fn first_indirect_map(&self) -> Option<MapId> {
        self.args.iter().find_map(|a| a.map().map(|(m, _)| m))
    }
}

pub type Kernel = Arc<dyn Fn(&mut ArgViews<'_>) + Send + Sync>;

/// A parallel loop over one set.
#[derive(Clone)]
pub struct ParLoop {
    sig: LoopSignature,
    kernel: Kernel,
}

impl fmt::Debug for ParLoop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParLoop").field("sig", &self.sig).finish_non_exhaustive()
    }
}

impl ParLoop {
    pub fn new<F>(name: &str, set: SetId, args: Vec<Arg>, kernel: F) -> Self
    where
        F: Fn(&mut ArgViews<'_>) + Send + Sync + 'static,
    {
        ParLoop {
            sig: LoopSignature {
                name: name.to_owned(),
                set,
                args,
            },
            kernel: Arc::new(kernel),
        }
    }

    pub fn name(&self) -> &str {
        &self.sig.name
    }

    pub fn set(&self) -> SetId {
        self.sig.set
    }

    pub fn args(&self) -> &[Arg] {
        &self.sig.args
    }

    pub fn signature(&self) -> &LoopSignature {
        &self.sig
    }

    pub(crate) fn kernel(&self) -> &Kernel {
        &self.kernel
    }
}

/// Checks the argument compatibility rules against a mesh.
pub fn validate(mesh: &Mesh, sig: &LoopSignature) -> Result<(), MeshError> {
    let bad = |arg: usize, reason: String| MeshError::InvalidArg {
        lp: sig.name.clone(),
        arg,
        reason,
    };
    for (i, a) in sig.args.iter().enumerate() {
        match a.kind {
            ArgKind::Direct { dat } => {
                if dat.0 >= mesh.dats.len() {
                    return Err(bad(i, "unknown dat".into()));
                }
                if mesh.dat(dat).set != sig.set {
                    return Err(bad(
                        i,
                        format!("direct dat `{}` is not on the iteration set", mesh.dat(dat).name),
                    ));
                }
            }
            ArgKind::Indirect { dat, map, index } => {
                if dat.0 >= mesh.dats.len() || map.0 >= mesh.maps.len() {
                    return Err(bad(i, "unknown dat or map".into()));
                }
                let m = mesh.map(map);
                if m.from != sig.set {
                    return Err(bad(i, format!("map `{}` does not start at the iteration set", m.name)));
                }
                if m.to != mesh.dat(dat).set {
                    return Err(bad(
                        i,
                        format!("map `{}` does not point at the set of `{}`", m.name, mesh.dat(dat).name),
                    ));
                }
                if index >= m.arity {
                    return Err(bad(i, format!("map index out of [1, {}]", m.arity)));
                }
            }
            ArgKind::Global { global } => {
                if global.0 >= mesh.globals.len() {
                    return Err(bad(i, "unknown global".into()));
                }
                if matches!(a.mode, Access::Write | Access::ReadWrite) {
                    return Err(bad(i, "globals accept READ, INC, MIN or MAX only".into()));
                }
            }
        }
        if a.dat().is_some() && matches!(a.mode, Access::Min | Access::Max) {
            return Err(bad(i, "MIN/MAX are reductions on globals only".into()));
        }
    }
    // A dat that is written must be touched with one access mode throughout
    // the loop, otherwise reads could observe concurrent writes.
    for (i, a) in sig.args.iter().enumerate() {
        let Some(dat) = a.dat() else { continue };
        for b in &sig.args[..i] {
            if b.dat() == Some(dat) && b.mode != a.mode && (a.mode.writes() || b.mode.writes()) {
                return Err(bad(
                    i,
                    format!("dat `{}` used with conflicting access modes", mesh.dat(dat).name),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Slot {
    pub kind: ElemKind,
    pub offset: usize,
    pub dim: usize,
}

/// Per-element argument views handed to kernels.
///
/// Values are staged in element-major order regardless of the dat layout.
/// `Inc` views start at zero; the executor adds them to the target.
pub struct ArgViews<'a> {
    pub(crate) f: &'a mut [f64],
    pub(crate) i: &'a mut [i64],
    pub(crate) slots: &'a [Slot],
    pub(crate) constants: &'a Constants,
    pub(crate) element: usize,
    pub(crate) block_size: Option<usize>,
}

impl<'a> ArgViews<'a> {
    fn slot(&self, arg: usize, kind: ElemKind) -> Slot {
        let s = self.slots[arg];
        assert!(
            s.kind == kind,
            "argument {arg} holds {} data, {} requested",
            s.kind.name(),
            kind.name()
        );
        s
    }

    pub fn f64(&self, arg: usize) -> &[f64] {
        let s = self.slot(arg, ElemKind::F64);
        &self.f[s.offset..s.offset + s.dim]
    }

    pub fn f64_mut(&mut self, arg: usize) -> &mut [f64] {
        let s = self.slot(arg, ElemKind::F64);
        &mut self.f[s.offset..s.offset + s.dim]
    }

    pub fn i64(&self, arg: usize) -> &[i64] {
        let s = self.slot(arg, ElemKind::I64);
        &self.i[s.offset..s.offset + s.dim]
    }

    pub fn i64_mut(&mut self, arg: usize) -> &mut [i64] {
        let s = self.slot(arg, ElemKind::I64);
        &mut self.i[s.offset..s.offset + s.dim]
    }

    /// Global (pre-partitioning) index of the element being processed.
    pub fn element(&self) -> usize {
        self.element
    }

    /// Mini-partition size of the running plan; `None` on the serial backend.
    pub fn block_size(&self) -> Option<usize> {
        self.block_size
    }

    pub fn constants(&self) -> &Constants {
        self.constants
    }
}
