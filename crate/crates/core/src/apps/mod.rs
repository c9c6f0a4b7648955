//! Example programs and mesh generators.

pub mod cell_area;
pub mod diffusion;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::RenumberError;
use crate::mesh::{io::parse_mesh, DatId, MapId, Mesh, SetId};
use crate::renumber::{apply_permutation, Permutation};

pub use cell_area::CellArea;
pub use diffusion::Diffusion;

/// Environment variable seeding every randomized fixture.
pub const SEED_VAR: &str = "MESHLOOP_SEED";
pub const DEFAULT_SEED: u64 = 20_130_611;

pub fn seed_from_env() -> u64 {
    std::env::var(SEED_VAR)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

const SAMPLE: &str = include_str!("../../fixtures/sample.mesh");

/// The bundled 14-node, 17-cell example mesh (`nodes`, `cells`, map
/// `pcell`, dats `x`, `xi`, `c_area`, `n_area`).
pub fn sample_mesh() -> Mesh {
    parse_mesh(SAMPLE).expect("bundled fixture parses")
}

/// Ids of a generated triangulated unit square.
#[derive(Debug, Clone)]
pub struct GeneratedMesh {
    pub mesh: Mesh,
    pub n: usize,
    pub nodes: SetId,
    pub edges: SetId,
    pub cells: SetId,
    pub bedges: SetId,
    pub edge_nodes: MapId,
    pub cell_nodes: MapId,
    pub bedge_nodes: MapId,
    /// Coordinates in [0, 1]^2.
    pub x: DatId,
    /// Integer grid coordinates (i, j).
    pub xi: DatId,
}

/// Triangulated unit square with `n` x `n` squares, each cut along its
/// (i, j)-(i+1, j+1) diagonal.
///
/// Node (i, j) is number `i + j (n + 1)`. Edges and cells are numbered along
/// a Z-order curve through their centroids, so any contiguous range of
/// either set covers a compact patch of the square. The cells of square
/// (i, j) are (v00, v10, v11) and (v00, v11, v01), both counterclockwise.
/// The 4n boundary edges run counterclockwise from the origin.
///
/// # Panics
/// If `n == 0`.
pub fn gen_mesh(n: usize) -> GeneratedMesh {
    assert!(n >= 1, "gen_mesh needs n >= 1");
    let np = n + 1;
    let id = |i: usize, j: usize| (i + j * np + 1) as i64;
    let mut edges = Vec::with_capacity(2 * (3 * n * n + 2 * n));
    for j in 0..np {
        for i in 0..np {
            if i < n {
                edges.extend([id(i, j), id(i + 1, j)]);
            }
            if j < n {
                edges.extend([id(i, j), id(i, j + 1)]);
            }
            if i < n && j < n {
                edges.extend([id(i, j), id(i + 1, j + 1)]);
            }
        }
    }
    let mut cells = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            cells.extend([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            cells.extend([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let edges = z_ordered(&edges, 2, np);
    let cells = z_ordered(&cells, 3, np);
    let mut bedges = Vec::with_capacity(8 * n);
    for i in 0..n {
        bedges.extend([id(i, 0), id(i + 1, 0)]);
    }
    for j in 0..n {
        bedges.extend([id(n, j), id(n, j + 1)]);
    }
    for i in (0..n).rev() {
        bedges.extend([id(i + 1, n), id(i, n)]);
    }
    for j in (0..n).rev() {
        bedges.extend([id(0, j + 1), id(0, j)]);
    }
    let mut x = Vec::with_capacity(2 * np * np);
    let mut xi = Vec::with_capacity(2 * np * np);
    for j in 0..np {
        for i in 0..np {
            x.extend([i as f64 / n as f64, j as f64 / n as f64]);
            xi.extend([i as i64, j as i64]);
        }
    }

    let mut mesh = Mesh::new();
    let built = (|| {
        let nodes = mesh.decl_set("nodes", np * np)?;
        let edge_set = mesh.decl_set("edges", edges.len() / 2)?;
        let cell_set = mesh.decl_set("cells", cells.len() / 3)?;
        let bedge_set = mesh.decl_set("bedges", bedges.len() / 2)?;
        let edge_nodes = mesh.decl_map("edge_nodes", edge_set, nodes, 2, &edges)?;
        let cell_nodes = mesh.decl_map("cell_nodes", cell_set, nodes, 3, &cells)?;
        let bedge_nodes = mesh.decl_map("bedge_nodes", bedge_set, nodes, 2, &bedges)?;
        let xd = mesh.decl_dat("x", nodes, 2, x)?;
        let xid = mesh.decl_dat("xi", nodes, 2, xi)?;
        Ok::<_, crate::error::MeshError>((nodes, edge_set, cell_set, bedge_set, edge_nodes, cell_nodes, bedge_nodes, xd, xid))
    })();
    let (nodes, edges, cells, bedges, edge_nodes, cell_nodes, bedge_nodes, x, xi) =
        built.expect("generated declarations are consistent");
    GeneratedMesh {
        mesh,
        n,
        nodes,
        edges,
        cells,
        bedges,
        edge_nodes,
        cell_nodes,
        bedge_nodes,
        x,
        xi,
    }
}

fn interleave(x: u64, y: u64) -> u64 {
    (0..32).fold(0, |c, b| c | ((x >> b) & 1) << (2 * b) | ((y >> b) & 1) << (2 * b + 1))
}

/// Reorders the rows of a 1-based table by the Z-order key of the grid
/// square holding them (componentwise minimum node coordinate); ties keep
/// their order, so power-of-two blocks cover aligned sub-squares.
fn z_ordered(table: &[i64], arity: usize, np: usize) -> Vec<i64> {
    let key = |row: &[i64]| {
        let (sx, sy) = row.iter().fold((u64::MAX, u64::MAX), |(sx, sy), &v| {
            let v = (v - 1) as u64;
            (sx.min(v % np as u64), sy.min(v / np as u64))
        });
        interleave(sx, sy)
    };
    let mut rows: Vec<&[i64]> = table.chunks(arity).collect();
    rows.sort_by_key(|r| key(r));
    rows.concat()
}

/// Randomly renumbers every non-empty set. Returns the applied permutations.
pub fn shuffle_mesh(mesh: &mut Mesh, seed: u64) -> Result<Vec<Permutation>, RenumberError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<(SetId, usize)> = mesh.sets().map(|(id, s)| (id, s.size)).collect();
    let mut perms = Vec::new();
    for (set, size) in sets {
        let mut forward: Vec<usize> = (0..size).collect();
        forward.shuffle(&mut rng);
        let p = Permutation::new(set, forward, mesh.version())?;
        apply_permutation(mesh, &p)?;
        perms.push(p);
    }
    Ok(perms)
}

/// Largest number of edges of `map` meeting at one target element.
pub fn max_degree(mesh: &Mesh, map: MapId) -> usize {
    let m = mesh.map(map);
    let mut deg = vec![0usize; mesh.set(m.to).size];
    for &t in m.table() {
        deg[t] += 1;
    }
    deg.into_iter().max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn counts(g: &GeneratedMesh) -> (usize, usize, usize, usize) {
        let m = &g.mesh;
        (
            m.set(g.nodes).size,
            m.set(g.edges).size,
            m.set(g.cells).size,
            m.set(g.bedges).size,
        )
    }

    #[test]
    fn small_meshes() {
        assert_eq!(counts(&gen_mesh(1)), (4, 5, 2, 4));
        assert_eq!(counts(&gen_mesh(2)), (9, 16, 8, 8));
    }

    #[test]
    fn euler_and_incidence_n50() {
        let g = gen_mesh(50);
        let (v, e, f, _) = counts(&g);
        assert_eq!(v as i64 - e as i64 + f as i64, 1);
        // every edge lies in one or two cells; boundary edges in exactly one
        let key = |a: usize, b: usize| (a.min(b), a.max(b));
        let mut in_cells: HashMap<(usize, usize), usize> = HashMap::new();
        let cn = g.mesh.map(g.cell_nodes);
        for c in 0..f {
            let r = cn.row(c);
            for (a, b) in [(r[0], r[1]), (r[1], r[2]), (r[2], r[0])] {
                *in_cells.entry(key(a, b)).or_default() += 1;
            }
        }
        let en = g.mesh.map(g.edge_nodes);
        assert_eq!(in_cells.len(), e);
        for ed in 0..e {
            let c = in_cells[&key(en.row(ed)[0], en.row(ed)[1])];
            assert!((1..=2).contains(&c));
        }
        let bn = g.mesh.map(g.bedge_nodes);
        for b in 0..g.mesh.set(g.bedges).size {
            assert_eq!(in_cells[&key(bn.row(b)[0], bn.row(b)[1])], 1);
        }
    }

    #[test]
    fn cells_are_counterclockwise() {
        let g = gen_mesh(3);
        let x = g.mesh.fetch_f64(g.x).unwrap();
        let cn = g.mesh.map(g.cell_nodes);
        for c in 0..g.mesh.set(g.cells).size {
            let r = cn.row(c);
            let p = |k: usize| (x[2 * r[k]], x[2 * r[k] + 1]);
            let (a, b, d) = (p(0), p(1), p(2));
            assert!((b.0 - a.0) * (d.1 - a.1) - (b.1 - a.1) * (d.0 - a.0) > 0.0);
        }
    }

    #[test]
    fn fixture_shape() {
        let m = sample_mesh();
        let pcell = m.map_by_name("pcell").unwrap();
        assert_eq!(&m.map(pcell).table_one_based()[..12], &[1, 3, 10, 1, 2, 3, 3, 9, 10, 2, 3, 4]);
        assert_eq!(m.set(m.set_by_name("nodes").unwrap()).size, 14);
        assert_eq!(m.set(m.set_by_name("cells").unwrap()).size, 17);
    }

    #[test]
    fn shuffle_is_seeded() {
        let mut a = gen_mesh(4).mesh;
        let mut b = gen_mesh(4).mesh;
        shuffle_mesh(&mut a, 7).unwrap();
        shuffle_mesh(&mut b, 7).unwrap();
        let en = a.map_by_name("edge_nodes").unwrap();
        assert_eq!(a.map(en).table(), b.map(en).table());
        assert_ne!(a.map(en).table(), gen_mesh(4).mesh.map(en).table());
    }
}
