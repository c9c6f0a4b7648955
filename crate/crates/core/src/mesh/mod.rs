//! Sets, maps, dats and globals of one problem instance.
//!
//! Map tables are 1-based at the declaration boundary and stored 0-based.
//! Dat payloads are owned by the mesh; results are read back through
//! [`Mesh::fetch`], which always returns logical element-major order.

mod constants;
mod data;
pub mod io;

pub use constants::Constants;
pub use data::{ElemKind, Layout, Payload, Scalar};

use crate::error::MeshError;

/// Default dimension above which [`Mesh::freeze`] switches dats to SoA.
pub const DEFAULT_SOA_THRESHOLD: usize = 4;

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub(crate) usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }
    };
}

id_type!(SetId);
id_type!(MapId);
id_type!(DatId);
id_type!(GlobalId);

#[derive(Debug, Clone, PartialEq)]
pub struct SetDecl {
    pub name: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDecl {
    pub name: String,
    pub from: SetId,
    pub to: SetId,
    pub arity: usize,
    /// 0-based targets, `from.size * arity` entries.
    pub(crate) table: Vec<usize>,
}

impl MapDecl {
    /// 0-based table.
    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn row(&self, elem: usize) -> &[usize] {
        &self.table[elem * self.arity..(elem + 1) * self.arity]
    }

    /// 1-based copy of the table, as it was declared.
    pub fn table_one_based(&self) -> Vec<i64> {
        self.table.iter().map(|&t| t as i64 + 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatDecl {
    pub name: String,
    pub set: SetId,
    pub dim: usize,
    pub(crate) layout: Layout,
    pub(crate) payload: Payload,
}

impl DatDecl {
    pub fn kind(&self) -> ElemKind {
        self.payload.kind()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Physical payload in the current layout.
    pub fn raw(&self) -> &Payload {
        &self.payload
    }

    pub(crate) fn size(&self) -> usize {
        self.payload.len().checked_div(self.dim).unwrap_or(0)
    }

    /// Returns the payload in element-major order.
    pub fn to_aos(&self) -> Payload {
        match self.layout {
            Layout::Aos => self.payload.clone(),
            Layout::Soa => self.payload.transposed(self.dim, self.size()),
        }
    }

    pub(crate) fn relayout(&mut self, target: Layout) {
        if self.layout == target {
            return;
        }
        let (size, dim) = (self.size(), self.dim);
        self.payload = match target {
            Layout::Soa => self.payload.transposed(size, dim),
            Layout::Aos => self.payload.transposed(dim, size),
        };
        self.layout = target;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDecl {
    pub name: String,
    pub(crate) value: Payload,
}

impl GlobalDecl {
    pub fn value(&self) -> &Payload {
        &self.value
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }
}

/// The framework-owned declaration of one problem.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub(crate) sets: Vec<SetDecl>,
    pub(crate) maps: Vec<MapDecl>,
    pub(crate) dats: Vec<DatDecl>,
    pub(crate) globals: Vec<GlobalDecl>,
    pub(crate) constants: Constants,
    pub(crate) version: u64,
    frozen: bool,
    soa_threshold: Option<usize>,
}

impl Default for Mesh {
    fn default() -> Self {
        Self::new()
    }
}

impl Mesh {
    pub fn new() -> Self {
        Mesh {
            sets: Vec::new(),
            maps: Vec::new(),
            dats: Vec::new(),
            globals: Vec::new(),
            constants: Constants::default(),
            version: 0,
            frozen: false,
            soa_threshold: Some(DEFAULT_SOA_THRESHOLD),
        }
    }

    /// Dats with `dim` above the threshold are switched to SoA at freeze.
    /// `None` disables the policy.
    pub fn set_soa_threshold(&mut self, threshold: Option<usize>) {
        self.soa_threshold = threshold;
    }

    fn check_open(&self, action: &str) -> Result<(), MeshError> {
        if self.frozen {
            Err(MeshError::Frozen {
                action: action.to_owned(),
            })
        } else {
            Ok(())
        }
    }

    pub fn decl_set(&mut self, name: &str, size: usize) -> Result<SetId, MeshError> {
        self.check_open("declare a set")?;
        if self.sets.iter().any(|s| s.name == name) {
            return Err(MeshError::DuplicateName {
                kind: "set",
                name: name.to_owned(),
            });
        }
        self.sets.push(SetDecl {
            name: name.to_owned(),
            size,
        });
        Ok(SetId(self.sets.len() - 1))
    }

    /// Declares a map with a 1-based `table` of `from.size * arity` entries.
    pub fn decl_map(
        &mut self,
        name: &str,
        from: SetId,
        to: SetId,
        arity: usize,
        table: &[i64],
    ) -> Result<MapId, MeshError> {
        self.check_open("declare a map")?;
        if self.maps.iter().any(|m| m.name == name) {
            return Err(MeshError::DuplicateName {
                kind: "map",
                name: name.to_owned(),
            });
        }
        if arity == 0 {
            return Err(MeshError::ZeroArity {
                map: name.to_owned(),
            });
        }
        let expected = self.sets[from.0].size * arity;
        if table.len() != expected {
            return Err(MeshError::MapLength {
                map: name.to_owned(),
                expected,
                actual: table.len(),
            });
        }
        let to_size = self.sets[to.0].size;
        let mut internal = Vec::with_capacity(table.len());
        for (position, &value) in table.iter().enumerate() {
            if value < 1 || value as u64 > to_size as u64 {
                return Err(MeshError::MapRange {
                    map: name.to_owned(),
                    position,
                    value,
                    to_size,
                });
            }
            internal.push(value as usize - 1);
        }
        self.maps.push(MapDecl {
            name: name.to_owned(),
            from,
            to,
            arity,
            table: internal,
        });
        Ok(MapId(self.maps.len() - 1))
    }

    /// Declares a dat; the element kind follows the payload type. Initial layout is AoS.
    pub fn decl_dat(
        &mut self,
        name: &str,
        set: SetId,
        dim: usize,
        payload: impl Into<Payload>,
    ) -> Result<DatId, MeshError> {
        self.check_open("declare a dat")?;
        if self.dats.iter().any(|d| d.name == name) {
            return Err(MeshError::DuplicateName {
                kind: "dat",
                name: name.to_owned(),
            });
        }
        if dim == 0 {
            return Err(MeshError::ZeroDim {
                dat: name.to_owned(),
            });
        }
        let payload = payload.into();
        let expected = self.sets[set.0].size * dim;
        if payload.len() != expected {
            return Err(MeshError::DatLength {
                dat: name.to_owned(),
                expected,
                actual: payload.len(),
            });
        }
        self.dats.push(DatDecl {
            name: name.to_owned(),
            set,
            dim,
            layout: Layout::Aos,
            payload,
        });
        Ok(DatId(self.dats.len() - 1))
    }

    /// Declares a reduction/read buffer usable as a global loop argument.
    pub fn decl_global(
        &mut self,
        name: &str,
        value: impl Into<Payload>,
    ) -> Result<GlobalId, MeshError> {
        if self.globals.iter().any(|g| g.name == name) {
            return Err(MeshError::DuplicateName {
                kind: "global",
                name: name.to_owned(),
            });
        }
        self.globals.push(GlobalDecl {
            name: name.to_owned(),
            value: value.into(),
        });
        Ok(GlobalId(self.globals.len() - 1))
    }

    pub fn set_constant(&mut self, name: &str, value: impl Into<Scalar>) -> Result<(), MeshError> {
        self.constants.set(name, value)
    }

    pub fn get_constant(&self, name: &str) -> Result<Scalar, MeshError> {
        self.constants.get(name)
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// Ends the construction phase: applies the layout policy and freezes
    /// topology and constants. Idempotent.
    pub fn freeze(&mut self) {
        if self.frozen {
            return;
        }
        if let Some(threshold) = self.soa_threshold {
            for dat in &mut self.dats {
                if dat.dim > threshold {
                    dat.relayout(Layout::Soa);
                }
            }
        }
        self.constants.freeze();
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Monotone counter bumped by every topology rewrite (renumbering).
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn transform_layout(&mut self, dat: DatId, target: Layout) {
        self.dats[dat.0].relayout(target);
    }

    pub fn set(&self, id: SetId) -> &SetDecl {
        &self.sets[id.0]
    }

    pub fn map(&self, id: MapId) -> &MapDecl {
        &self.maps[id.0]
    }

    pub fn dat(&self, id: DatId) -> &DatDecl {
        &self.dats[id.0]
    }

    pub fn global(&self, id: GlobalId) -> &GlobalDecl {
        &self.globals[id.0]
    }

    pub fn set_global(&mut self, id: GlobalId, value: impl Into<Payload>) -> Result<(), MeshError> {
        let value = value.into();
        let g = &mut self.globals[id.0];
        if value.kind() != g.value.kind() || value.len() != g.value.len() {
            return Err(MeshError::KindMismatch {
                name: g.name.clone(),
                expected: g.value.kind().name(),
                actual: value.kind().name(),
            });
        }
        g.value = value;
        Ok(())
    }

    pub fn sets(&self) -> impl Iterator<Item = (SetId, &SetDecl)> {
        self.sets.iter().enumerate().map(|(i, s)| (SetId(i), s))
    }

    pub fn maps(&self) -> impl Iterator<Item = (MapId, &MapDecl)> {
        self.maps.iter().enumerate().map(|(i, m)| (MapId(i), m))
    }

    pub fn dats(&self) -> impl Iterator<Item = (DatId, &DatDecl)> {
        self.dats.iter().enumerate().map(|(i, d)| (DatId(i), d))
    }

    pub fn globals(&self) -> impl Iterator<Item = (GlobalId, &GlobalDecl)> {
        self.globals.iter().enumerate().map(|(i, g)| (GlobalId(i), g))
    }

    pub fn set_by_name(&self, name: &str) -> Result<SetId, MeshError> {
        self.sets
            .iter()
            .position(|s| s.name == name)
            .map(SetId)
            .ok_or_else(|| unknown("set", name))
    }

    pub fn map_by_name(&self, name: &str) -> Result<MapId, MeshError> {
        self.maps
            .iter()
            .position(|m| m.name == name)
            .map(MapId)
            .ok_or_else(|| unknown("map", name))
    }

    pub fn dat_by_name(&self, name: &str) -> Result<DatId, MeshError> {
        self.dats
            .iter()
            .position(|d| d.name == name)
            .map(DatId)
            .ok_or_else(|| unknown("dat", name))
    }

    pub fn global_by_name(&self, name: &str) -> Result<GlobalId, MeshError> {
        self.globals
            .iter()
            .position(|g| g.name == name)
            .map(GlobalId)
            .ok_or_else(|| unknown("global", name))
    }

    /// Logical accessor, independent of the layout tag.
    pub fn get_f64(&self, dat: DatId, elem: usize, comp: usize) -> Result<f64, MeshError> {
        let d = &self.dats[dat.0];
        let pos = d.layout.position(elem, comp, self.sets[d.set.0].size, d.dim);
        match &d.payload {
            Payload::F64(v) => Ok(v[pos]),
            Payload::I64(_) => Err(kind_mismatch(&d.name, "f64", "i64")),
        }
    }

    pub fn get_i64(&self, dat: DatId, elem: usize, comp: usize) -> Result<i64, MeshError> {
        let d = &self.dats[dat.0];
        let pos = d.layout.position(elem, comp, self.sets[d.set.0].size, d.dim);
        match &d.payload {
            Payload::I64(v) => Ok(v[pos]),
            Payload::F64(_) => Err(kind_mismatch(&d.name, "i64", "f64")),
        }
    }

    /// Copy of the dat's values in element-major order.
    pub fn fetch(&self, dat: DatId) -> Payload {
        self.dats[dat.0].to_aos()
    }

    pub fn fetch_f64(&self, dat: DatId) -> Result<Vec<f64>, MeshError> {
        match self.fetch(dat) {
            Payload::F64(v) => Ok(v),
            Payload::I64(_) => Err(kind_mismatch(&self.dats[dat.0].name, "f64", "i64")),
        }
    }

    pub fn fetch_i64(&self, dat: DatId) -> Result<Vec<i64>, MeshError> {
        match self.fetch(dat) {
            Payload::I64(v) => Ok(v),
            Payload::F64(_) => Err(kind_mismatch(&self.dats[dat.0].name, "i64", "f64")),
        }
    }

    /// Replaces a dat's values from an element-major payload, keeping its layout.
    pub fn store(&mut self, dat: DatId, values: Payload) -> Result<(), MeshError> {
        let size = self.sets[self.dats[dat.0].set.0].size;
        let d = &mut self.dats[dat.0];
        if values.kind() != d.kind() {
            return Err(kind_mismatch(&d.name, d.kind().name(), values.kind().name()));
        }
        if values.len() != size * d.dim {
            return Err(MeshError::DatLength {
                dat: d.name.clone(),
                expected: size * d.dim,
                actual: values.len(),
            });
        }
        d.payload = match d.layout {
            Layout::Aos => values,
            Layout::Soa => values.transposed(size, d.dim),
        };
        Ok(())
    }

    /// Maps whose target set is `set`.
    pub fn maps_into(&self, set: SetId) -> impl Iterator<Item = (MapId, &MapDecl)> {
        self.maps().filter(move |(_, m)| m.to == set)
    }

    /// Maps whose source set is `set`.
    pub fn maps_from(&self, set: SetId) -> impl Iterator<Item = (MapId, &MapDecl)> {
        self.maps().filter(move |(_, m)| m.from == set)
    }

    /// Crate-internal constructor for per-rank local meshes; tables may carry
    /// `usize::MAX` for rows that are never executed.
    pub(crate) fn from_parts(
        sets: Vec<SetDecl>,
        maps: Vec<MapDecl>,
        dats: Vec<DatDecl>,
        globals: Vec<GlobalDecl>,
        constants: Constants,
    ) -> Mesh {
        Mesh {
            sets,
            maps,
            dats,
            globals,
            constants,
            version: 0,
            frozen: true,
            soa_threshold: None,
        }
    }
}

fn unknown(kind: &'static str, name: &str) -> MeshError {
    MeshError::UnknownName {
        kind,
        name: name.to_owned(),
    }
}

fn kind_mismatch(name: &str, expected: &'static str, actual: &'static str) -> MeshError {
    MeshError::KindMismatch {
        name: name.to_owned(),
        expected,
        actual,
    }
}
