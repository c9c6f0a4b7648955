//! Cell-area distribution: every cell computes its area and hands a third
//! of it to each of its three nodes.
//!
//! The int64 variant works on integer coordinates and stores three times
//! the doubled area, so the division by three is exact and the node sums
//! are identical on every backend.

use crate::error::{Error, ExecError};
use crate::exec::Backend;
use crate::mesh::{DatId, ElemKind, MapId, Mesh, Payload, SetId};
use crate::par_loop::{Access, Arg, LoopSignature, ParLoop};

#[derive(Debug, Clone)]
pub struct CellArea {
    pub kind: ElemKind,
    pub cells: SetId,
    pub nodes: SetId,
    pub cell_nodes: MapId,
    pub coords: DatId,
    pub areac: DatId,
    pub arean: DatId,
}

fn find_cell_map(mesh: &Mesh) -> Result<MapId, Error> {
    mesh.map_by_name("cell_nodes")
        .or_else(|_| mesh.map_by_name("pcell"))
        .ok()
        .or_else(|| mesh.maps().find(|(_, m)| m.arity == 3).map(|(id, _)| id))
        .ok_or_else(|| Error::Other("cell-area needs an arity-3 cell to node map".into()))
}

fn find_coords(mesh: &Mesh, set: SetId, kind: ElemKind) -> Result<DatId, Error> {
    let preferred = match kind {
        ElemKind::F64 => "x",
        ElemKind::I64 => "xi",
    };
    mesh.dats()
        .filter(|(_, d)| d.set == set && d.dim == 2 && d.kind() == kind)
        .min_by_key(|(_, d)| d.name != preferred)
        .map(|(id, _)| id)
        .ok_or_else(|| {
            Error::Other(format!(
                "cell-area ({}) needs a dim-2 {} coordinate dat on `{}`",
                kind.name(),
                kind.name(),
                mesh.set(set).name
            ))
        })
}

impl CellArea {
    /// Declares `areac` on cells and `arean` (zeros) on nodes.
    pub fn setup(mesh: &mut Mesh, kind: ElemKind) -> Result<Self, Error> {
        let cell_nodes = find_cell_map(mesh)?;
        let (cells, nodes) = (mesh.map(cell_nodes).from, mesh.map(cell_nodes).to);
        let coords = find_coords(mesh, nodes, kind)?;
        let (nc, nn) = (mesh.set(cells).size, mesh.set(nodes).size);
        let areac = mesh.decl_dat("areac", cells, 1, Payload::zeros(kind, nc))?;
        let arean = mesh.decl_dat("arean", nodes, 1, Payload::zeros(kind, nn))?;
        Ok(CellArea {
            kind,
            cells,
            nodes,
            cell_nodes,
            coords,
            areac,
            arean,
        })
    }

    pub fn area_loop(&self) -> ParLoop {
        let args = vec![
            Arg::indirect(self.coords, self.cell_nodes, 1, Access::Read),
            Arg::indirect(self.coords, self.cell_nodes, 2, Access::Read),
            Arg::indirect(self.coords, self.cell_nodes, 3, Access::Read),
            Arg::direct(self.areac, Access::Write),
        ];
        match self.kind {
            ElemKind::F64 => ParLoop::new("cell_area", self.cells, args, |v| {
                let (a, b, c) = (v.f64(0), v.f64(1), v.f64(2));
                let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                v.f64_mut(3)[0] = 0.5 * cross.abs();
            }),
            ElemKind::I64 => ParLoop::new("cell_area", self.cells, args, |v| {
                let (a, b, c) = (v.i64(0), v.i64(1), v.i64(2));
                let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                v.i64_mut(3)[0] = 3 * cross.abs();
            }),
        }
    }

    pub fn distribute_loop(&self) -> ParLoop {
        distribute_loop(self.cells, self.cell_nodes, self.areac, self.arean, self.kind)
    }

    pub fn loops(&self) -> Vec<ParLoop> {
        vec![self.area_loop(), self.distribute_loop()]
    }

    pub fn signatures(&self) -> Vec<LoopSignature> {
        self.loops().iter().map(|l| l.signature().clone()).collect()
    }

    pub fn run(&self, backend: &mut dyn Backend) -> Result<(), ExecError> {
        for lp in self.loops() {
            backend.par_loop(&lp)?;
        }
        Ok(())
    }
}

/// `arean[node] += areac[cell] / 3` for the three nodes of every cell.
pub fn distribute_loop(cells: SetId, map: MapId, areac: DatId, arean: DatId, kind: ElemKind) -> ParLoop {
    let args = vec![
        Arg::direct(areac, Access::Read),
        Arg::indirect(arean, map, 1, Access::Inc),
        Arg::indirect(arean, map, 2, Access::Inc),
        Arg::indirect(arean, map, 3, Access::Inc),
    ];
    match kind {
        ElemKind::F64 => ParLoop::new("distribute", cells, args, |v| {
            let share = v.f64(0)[0] / 3.0;
            for k in 1..4 {
                v.f64_mut(k)[0] = share;
            }
        }),
        ElemKind::I64 => ParLoop::new("distribute", cells, args, |v| {
            let share = v.i64(0)[0] / 3;
            for k in 1..4 {
                v.i64_mut(k)[0] = share;
            }
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{sample_mesh, gen_mesh};
    use crate::exec::SerialBackend;

    #[test]
    fn unit_square_n1() {
        let mut m = gen_mesh(1).mesh;
        let app = CellArea::setup(&mut m, ElemKind::F64).unwrap();
        let mut b = SerialBackend::new(m);
        app.run(&mut b).unwrap();
        let areac = b.fetch(app.areac).unwrap();
        assert_eq!(areac, Payload::F64(vec![0.5, 0.5]));
        let arean = b.fetch(app.arean).unwrap().as_f64().unwrap().to_vec();
        // node 2 = (1, 0) lies on the first triangle only
        assert!((arean[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((arean.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn int_variant_conserves_exactly() {
        let mut m = gen_mesh(5).mesh;
        let app = CellArea::setup(&mut m, ElemKind::I64).unwrap();
        let mut b = SerialBackend::new(m);
        app.run(&mut b).unwrap();
        let c: i64 = b.fetch(app.areac).unwrap().as_i64().unwrap().iter().sum();
        let n: i64 = b.fetch(app.arean).unwrap().as_i64().unwrap().iter().sum();
        assert_eq!(c, n);
        assert_eq!(c, 3 * 2 * 25);
    }

    #[test]
    fn fixture_unit_areas() {
        let mut m = sample_mesh();
        let cells = m.set_by_name("cells").unwrap();
        let nodes = m.set_by_name("nodes").unwrap();
        let pcell = m.map_by_name("pcell").unwrap();
        let areac = m.decl_dat("a3", cells, 1, vec![3i64; 17]).unwrap();
        let arean = m.decl_dat("n3", nodes, 1, vec![0i64; 14]).unwrap();
        let incidence: Vec<i64> = (0..14)
            .map(|n| m.map(pcell).table().iter().filter(|&&t| t == n).count() as i64)
            .collect();
        let mut b = SerialBackend::new(m);
        b.par_loop(&distribute_loop(cells, pcell, areac, arean, ElemKind::I64)).unwrap();
        let got = b.fetch(arean).unwrap().as_i64().unwrap().to_vec();
        assert_eq!(got, incidence);
        assert_eq!(got[2], 6);
        assert_eq!(got.iter().sum::<i64>(), 51);
    }
}
