use std::cmp::Ordering;

use super::Assignment;
use crate::error::PartitionError;
use crate::mesh::{DatId, ElemKind, Mesh};

/// Recursive coordinate bisection of the set carrying `coords`.
///
/// Each level splits at the median along x, y(, z) in turn; the lower half
/// receives `ceil(n / 2)` elements. Ties go to the lower coordinate, then the
/// lower element index.
pub fn partition_rcb(mesh: &Mesh, coords: DatId, nranks: usize) -> Result<Assignment, PartitionError> {
    if nranks == 0 {
        return Err(PartitionError::NoRanks);
    }
    if !nranks.is_power_of_two() {
        return Err(PartitionError::NotPowerOfTwo(nranks));
    }
    let dat = mesh.dat(coords);
    if dat.kind() != ElemKind::F64 || !(2..=3).contains(&dat.dim) {
        return Err(PartitionError::BadCoordinates);
    }
    let dim = dat.dim;
    let size = mesh.set(dat.set).size;
    let xs = match dat.to_aos() {
        crate::mesh::Payload::F64(v) => v,
        crate::mesh::Payload::I64(_) => unreachable!(),
    };
    let mut idx: Vec<usize> = (0..size).collect();
    let mut rank_of = vec![0; size];
    bisect(&xs, dim, &mut idx, 0, nranks, 0, &mut rank_of);
    Ok(Assignment {
        set: dat.set,
        nranks,
        rank_of,
    })
}

fn bisect(
    xs: &[f64],
    dim: usize,
    idx: &mut [usize],
    first_rank: usize,
    nranks: usize,
    level: usize,
    out: &mut [usize],
) {
    if nranks == 1 {
        for &e in idx.iter() {
            out[e] = first_rank;
        }
        return;
    }
    let axis = level % dim;
    let k = idx.len().div_ceil(2);
    if k < idx.len() {
        idx.select_nth_unstable_by(k, |&a, &b| {
            xs[a * dim + axis]
                .partial_cmp(&xs[b * dim + axis])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
    }
    let (lower, upper) = idx.split_at_mut(k);
    let half = nranks / 2;
    bisect(xs, dim, lower, first_rank, half, level + 1, out);
    bisect(xs, dim, upper, first_rank + half, half, level + 1, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> (Mesh, DatId) {
        let mut m = Mesh::new();
        let s = m.decl_set("pts", 4).unwrap();
        // (0,0) (1,0) (0,1) (1,1)
        let x = m
            .decl_dat("x", s, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
            .unwrap();
        (m, x)
    }

    #[test]
    fn splits_on_x_first() {
        let (m, x) = square();
        let a = partition_rcb(&m, x, 2).unwrap();
        assert_eq!(a.rank_of, vec![0, 1, 0, 1]);
    }

    #[test]
    fn second_level_on_y() {
        let (m, x) = square();
        let a = partition_rcb(&m, x, 4).unwrap();
        // rank 0: (0,0), rank 1: (0,1), rank 2: (1,0), rank 3: (1,1)
        assert_eq!(a.rank_of, vec![0, 2, 1, 3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, x) = square();
        assert_eq!(partition_rcb(&m, x, 3), Err(PartitionError::NotPowerOfTwo(3)));
        let mut m2 = Mesh::new();
        let s = m2.decl_set("s", 2).unwrap();
        let one_d = m2.decl_dat("x", s, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(partition_rcb(&m2, one_d, 2), Err(PartitionError::BadCoordinates));
    }

    #[test]
    fn more_ranks_than_points() {
        let (m, x) = square();
        let a = partition_rcb(&m, x, 8).unwrap();
        let mut sizes = a.part_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }
}
