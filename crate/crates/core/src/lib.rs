//! Parallel loops over unstructured meshes.
//!
//! A program declares [`mesh::Mesh`] sets, maps between them and dats on
//! them, then runs [`par_loop::ParLoop`]s whose arguments carry access
//! descriptors. The descriptors are all an executor needs to run a loop
//! race-free: serially, colored on a thread pool, distributed over ranks
//! with owner-compute halos, or on two rank classes with a static balance.
//!
//! ```
//! use meshloop::apps::{gen_mesh, CellArea};
//! use meshloop::exec::{Backend, SerialBackend};
//! use meshloop::mesh::ElemKind;
//!
//! let mut mesh = gen_mesh(2).mesh;
//! let app = CellArea::setup(&mut mesh, ElemKind::F64).unwrap();
//! let mut backend = SerialBackend::new(mesh);
//! app.run(&mut backend).unwrap();
//! let total: f64 = backend.fetch(app.arean).unwrap().as_f64().unwrap().iter().sum();
//! assert!((total - 1.0).abs() < 1e-12);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod apps;
pub mod driver;
pub mod error;
pub mod exec;
pub mod mesh;
pub mod par_loop;
pub mod partition;
pub mod perf;
pub mod plan;
pub mod renumber;
pub mod tuner;

pub use error::{Error, Result};
pub use exec::{launch, Backend, BackendConfig, BackendKind};
pub use mesh::{DatId, ElemKind, GlobalId, Layout, MapId, Mesh, Payload, SetId};
pub use par_loop::{Access, Arg, ParLoop};
