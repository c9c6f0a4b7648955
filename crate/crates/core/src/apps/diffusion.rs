//! Explicit graph-Laplacian diffusion with Dirichlet boundaries.
//!
//! One step is a four-stage low-storage Runge-Kutta update
//! `u = u0 + alpha_k dt res(u)` with `alpha = (1/4, 1/3, 1/2, 1)`, where
//! `res_i = sum_j w_ij (u_j - u_i)` over edges, interior nodes only. The
//! last stage also accumulates the squared residual norm. Boundary nodes
//! are pinned by a loop over the boundary edges.
//!
//! The int64 variant holds `u * SCALE` and applies the stage update with
//! truncating integer division, so it is bit-reproducible across backends.

use std::sync::Arc;

use crate::error::{Error, ExecError};
use crate::exec::Backend;
use crate::mesh::{DatId, ElemKind, GlobalId, MapId, Mesh, Payload, SetId};
use crate::par_loop::{Access, Arg, LoopSignature, ParLoop};

/// Fixed-point scale of the int64 variant.
pub const SCALE: i64 = 1 << 16;

/// Stage coefficients as (numerator, denominator).
pub const ALPHA: [(i64, i64); 4] = [(1, 4), (1, 3), (1, 2), (1, 1)];

/// A node field given as a function of the coordinates.
pub type Field = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
pub struct Diffusion {
    pub kind: ElemKind,
    pub nodes: SetId,
    pub edges: SetId,
    pub bedges: SetId,
    pub edge_nodes: MapId,
    pub bedge_nodes: MapId,
    pub u: DatId,
    pub u0: DatId,
    pub res: DatId,
    pub w: DatId,
    pub interior: DatId,
    pub ubc: DatId,
    pub resid: GlobalId,
    pub dt: f64,
    /// Stability limit `1 / max_degree`.
    pub dt_bound: f64,
}

/// Loops of one program, built once and reused every step.
pub struct DiffusionLoops {
    pub save: ParLoop,
    pub zero_res: ParLoop,
    pub edge_flux: ParLoop,
    pub update: [ParLoop; 4],
    pub bc: ParLoop,
}

impl DiffusionLoops {
    pub fn all(&self) -> Vec<&ParLoop> {
        let mut v = vec![&self.save, &self.zero_res, &self.edge_flux];
        v.extend(self.update.iter());
        v.push(&self.bc);
        v
    }
}

fn to_fixed(v: f64) -> i64 {
    (v * SCALE as f64).round() as i64
}

fn need<T>(r: Result<T, crate::error::MeshError>) -> Result<T, Error> {
    r.map_err(|e| Error::Other(format!("diffusion needs the generated mesh layout: {e}")))
}

fn payload(kind: ElemKind, vals: Vec<f64>) -> Payload {
    match kind {
        ElemKind::F64 => Payload::F64(vals),
        ElemKind::I64 => Payload::I64(vals.into_iter().map(to_fixed).collect()),
    }
}

impl Diffusion {
    /// Declares the diffusion dats on a mesh with sets `nodes`, `edges`,
    /// `bedges`, maps `edge_nodes`, `bedge_nodes` and coordinates `x`.
    /// `dt = None` picks the stability bound.
    pub fn setup(
        mesh: &mut Mesh,
        kind: ElemKind,
        initial: Field,
        boundary: Field,
        dt: Option<f64>,
    ) -> Result<Self, Error> {
        let edge_nodes = need(mesh.map_by_name("edge_nodes"))?;
        let bedge_nodes = need(mesh.map_by_name("bedge_nodes"))?;
        let x = need(mesh.dat_by_name("x"))?;
        let (edges, nodes) = (mesh.map(edge_nodes).from, mesh.map(edge_nodes).to);
        let bedges = mesh.map(bedge_nodes).from;
        if mesh.map(edge_nodes).arity != 2 || mesh.map(bedge_nodes).arity != 2 || mesh.map(bedge_nodes).to != nodes {
            return Err(Error::Other("diffusion needs arity-2 edge and boundary-edge maps onto one node set".into()));
        }
        let xs = mesh.fetch_f64(x)?;
        let nn = mesh.set(nodes).size;
        let ne = mesh.set(edges).size;

        let mut boundary_node = vec![false; nn];
        for &t in mesh.map(bedge_nodes).table() {
            boundary_node[t] = true;
        }
        let value = |n: usize, on_boundary: bool| {
            let (px, py) = (xs[2 * n], xs[2 * n + 1]);
            if on_boundary {
                boundary(px, py)
            } else {
                initial(px, py)
            }
        };
        let u: Vec<f64> = (0..nn).map(|n| value(n, boundary_node[n])).collect();
        let ubc: Vec<f64> = mesh
            .map(bedge_nodes)
            .table()
            .iter()
            .map(|&t| value(t, true))
            .collect();
        let interior: Vec<f64> = boundary_node.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let int_flag = |v: Vec<f64>| match kind {
            ElemKind::F64 => Payload::F64(v),
            ElemKind::I64 => Payload::I64(v.into_iter().map(|f| f as i64).collect()),
        };

        let max_degree = super::max_degree(mesh, edge_nodes).max(1);
        let dt_bound = 1.0 / max_degree as f64;
        let dt = dt.unwrap_or(dt_bound);
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Other(format!("dt must be positive, got {dt}")));
        }

        let zeros = |n| Payload::zeros(kind, n);
        let ud = mesh.decl_dat("u", nodes, 1, payload(kind, u))?;
        let u0 = mesh.decl_dat("u0", nodes, 1, zeros(nn))?;
        let res = mesh.decl_dat("res", nodes, 1, zeros(nn))?;
        let w = mesh.decl_dat("w", edges, 1, int_flag(vec![1.0; ne]))?;
        let interior = mesh.decl_dat("interior", nodes, 1, int_flag(interior))?;
        let ubc = mesh.decl_dat("ubc", bedges, 2, payload(kind, ubc))?;
        let resid = mesh.decl_global("resid", zeros(1))?;
        mesh.set_constant("dt", dt)?;
        mesh.set_constant("dt_fixed", to_fixed(dt))?;
        Ok(Diffusion {
            kind,
            nodes,
            edges,
            bedges,
            edge_nodes,
            bedge_nodes,
            u: ud,
            u0,
            res,
            w,
            interior,
            ubc,
            resid,
            dt,
            dt_bound,
        })
    }

    pub fn loops(&self) -> DiffusionLoops {
        let f = self.kind == ElemKind::F64;
        let save = ParLoop::new(
            "save",
            self.nodes,
            vec![Arg::direct(self.u, Access::Read), Arg::direct(self.u0, Access::Write)],
            move |v| {
                if f {
                    v.f64_mut(1)[0] = v.f64(0)[0];
                } else {
                    v.i64_mut(1)[0] = v.i64(0)[0];
                }
            },
        );
        let zero_res = ParLoop::new("zero_res", self.nodes, vec![Arg::direct(self.res, Access::Write)], move |v| {
            if f {
                v.f64_mut(0)[0] = 0.0;
            } else {
                v.i64_mut(0)[0] = 0;
            }
        });
        let edge_flux = ParLoop::new(
            "edge_flux",
            self.edges,
            vec![
                Arg::direct(self.w, Access::Read),
                Arg::indirect(self.u, self.edge_nodes, 1, Access::Read),
                Arg::indirect(self.u, self.edge_nodes, 2, Access::Read),
                Arg::indirect(self.res, self.edge_nodes, 1, Access::Inc),
                Arg::indirect(self.res, self.edge_nodes, 2, Access::Inc),
            ],
            move |v| {
                if f {
                    let flux = v.f64(0)[0] * (v.f64(2)[0] - v.f64(1)[0]);
                    v.f64_mut(3)[0] = flux;
                    v.f64_mut(4)[0] = -flux;
                } else {
                    let flux = v.i64(0)[0] * (v.i64(2)[0] - v.i64(1)[0]);
                    v.i64_mut(3)[0] = flux;
                    v.i64_mut(4)[0] = -flux;
                }
            },
        );
        let update = std::array::from_fn(|k| {
            let last = k == ALPHA.len() - 1;
            let (num, den) = ALPHA[k];
            let mut args = vec![
                Arg::direct(self.u, Access::ReadWrite),
                Arg::direct(self.u0, Access::Read),
                Arg::direct(self.res, Access::Read),
                Arg::direct(self.interior, Access::Read),
            ];
            if last {
                args.push(Arg::global(self.resid, Access::Inc));
            }
            ParLoop::new("update", self.nodes, args, move |v| {
                if f {
                    let dt = v.constants().f64("dt");
                    let r = v.f64(2)[0] * v.f64(3)[0];
                    v.f64_mut(0)[0] = v.f64(1)[0] + (num as f64 / den as f64) * dt * r;
                    if last {
                        v.f64_mut(4)[0] += r * r;
                    }
                } else {
                    let dt = v.constants().i64("dt_fixed") as i128;
                    let r = v.i64(2)[0] * v.i64(3)[0];
                    let delta = (r as i128 * dt * num as i128) / (den as i128 * SCALE as i128);
                    v.i64_mut(0)[0] = v.i64(1)[0] + delta as i64;
                    if last {
                        v.i64_mut(4)[0] += r * r;
                    }
                }
            })
        });
        let bc = ParLoop::new(
            "bc",
            self.bedges,
            vec![
                Arg::direct(self.ubc, Access::Read),
                Arg::indirect(self.u, self.bedge_nodes, 1, Access::Write),
                Arg::indirect(self.u, self.bedge_nodes, 2, Access::Write),
            ],
            move |v| {
                if f {
                    let (a, b) = (v.f64(0)[0], v.f64(0)[1]);
                    v.f64_mut(1)[0] = a;
                    v.f64_mut(2)[0] = b;
                } else {
                    let (a, b) = (v.i64(0)[0], v.i64(0)[1]);
                    v.i64_mut(1)[0] = a;
                    v.i64_mut(2)[0] = b;
                }
            },
        );
        DiffusionLoops {
            save,
            zero_res,
            edge_flux,
            update,
            bc,
        }
    }

    pub fn signatures(&self) -> Vec<LoopSignature> {
        self.loops().all().iter().map(|l| l.signature().clone()).collect()
    }

    /// Residual norm held in the global after a step.
    fn residual(&self, backend: &dyn Backend) -> f64 {
        match backend.global(self.resid) {
            Payload::F64(v) => v[0].sqrt(),
            Payload::I64(v) => (v[0] as f64).sqrt() / SCALE as f64,
        }
    }

    /// Runs `steps` steps and returns the residual norm after each.
    pub fn run(&self, backend: &mut dyn Backend, steps: usize) -> Result<Vec<f64>, ExecError> {
        let loops = self.loops();
        let mut history = Vec::with_capacity(steps);
        let mut min = f64::INFINITY;
        for step in 1..=steps {
            backend.par_loop(&loops.save)?;
            for (k, update) in loops.update.iter().enumerate() {
                backend.par_loop(&loops.zero_res)?;
                backend.par_loop(&loops.edge_flux)?;
                if k == ALPHA.len() - 1 {
                    backend.set_global(self.resid, Payload::zeros(self.kind, 1))?;
                }
                backend.par_loop(update)?;
            }
            backend.par_loop(&loops.bc)?;
            let r = self.residual(backend);
            let first = history.first().copied().unwrap_or(r);
            if !r.is_finite() || (r > 10.0 * min && r > first) {
                return Err(ExecError::Unstable {
                    step,
                    dt: self.dt,
                    bound: self.dt_bound,
                });
            }
            min = min.min(r);
            history.push(r);
        }
        Ok(history)
    }

    /// Node temperatures as float64 (the int variant is unscaled).
    pub fn temperatures(&self, values: &Payload) -> Vec<f64> {
        match values {
            Payload::F64(v) => v.clone(),
            Payload::I64(v) => v.iter().map(|&x| x as f64 / SCALE as f64).collect(),
        }
    }
}

/// `u = x` on the boundary, zero inside: converges to `u = x`.
pub fn harmonic_x() -> (Field, Field) {
    (Arc::new(|_, _| 0.0), Arc::new(|x, _| x))
}
