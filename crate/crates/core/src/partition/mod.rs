//! Mesh decomposition across ranks and owner-compute halo construction.

mod halo;
mod rcb;

pub use halo::{build_halos, halo_stats, halo_stats_csv, HaloStatsRow, RankLayout, RankPart, SetPart};
pub use rcb::partition_rcb;

use serde::{Deserialize, Serialize};

use crate::error::PartitionError;
use crate::mesh::{Mesh, SetId};
use crate::par_loop::LoopSignature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioner {
    Trivial,
    Rcb,
}

impl std::str::FromStr for Partitioner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trivial" => Ok(Partitioner::Trivial),
            "rcb" => Ok(Partitioner::Rcb),
            other => Err(format!("unknown partitioner `{other}`")),
        }
    }
}

impl Partitioner {
    pub fn name(self) -> &'static str {
        match self {
            Partitioner::Trivial => "trivial",
            Partitioner::Rcb => "rcb",
        }
    }
}

/// Rank of every element of one set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub set: SetId,
    pub nranks: usize,
    pub rank_of: Vec<usize>,
}

impl Assignment {
    pub fn part_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.nranks];
        for &r in &self.rank_of {
            sizes[r] += 1;
        }
        sizes
    }
}

/// Consecutive blocks of elements to consecutive ranks; sizes differ by at most one.
pub fn partition_trivial(mesh: &Mesh, set: SetId, nranks: usize) -> Result<Assignment, PartitionError> {
    if nranks == 0 {
        return Err(PartitionError::NoRanks);
    }
    let size = mesh.set(set).size;
    let (base, extra) = (size / nranks, size % nranks);
    let mut rank_of = Vec::with_capacity(size);
    for r in 0..nranks {
        let n = base + usize::from(r < extra);
        rank_of.extend(std::iter::repeat_n(r, n));
    }
    Ok(Assignment {
        set,
        nranks,
        rank_of,
    })
}

/// Contiguous blocks sized proportionally to `weights`.
pub fn partition_weighted(mesh: &Mesh, set: SetId, weights: &[f64]) -> Result<Assignment, PartitionError> {
    if weights.is_empty() {
        return Err(PartitionError::NoRanks);
    }
    if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0) || !w.is_finite()) {
        return Err(PartitionError::BadBalance(w));
    }
    let size = mesh.set(set).size;
    let total: f64 = weights.iter().sum();
    let mut bounds = Vec::with_capacity(weights.len() + 1);
    let mut acc = 0.0;
    bounds.push(0usize);
    for w in &weights[..weights.len() - 1] {
        acc += w;
        bounds.push(((size as f64) * acc / total).round() as usize);
    }
    bounds.push(size);
    let mut rank_of = Vec::with_capacity(size);
    for r in 0..weights.len() {
        let n = bounds[r + 1].saturating_sub(bounds[r]);
        rank_of.extend(std::iter::repeat_n(r, n));
    }
    Ok(Assignment {
        set,
        nranks: weights.len(),
        rank_of,
    })
}

/// Rank weights for a two-class split: the first `class_a` ranks each get
/// `beta` times the combined weight of the remaining class-B ranks.
pub fn hybrid_weights(nranks: usize, class_a: usize, beta: f64) -> Result<Vec<f64>, PartitionError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(PartitionError::BadBalance(beta));
    }
    if class_a == 0 || class_a >= nranks {
        return Err(PartitionError::NoRanks);
    }
    let class_b = (nranks - class_a) as f64;
    Ok((0..nranks)
        .map(|r| if r < class_a { beta * class_b } else { 1.0 })
        .collect())
}

/// Rank assignments for every set of a mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub nranks: usize,
    rank_of: Vec<Option<Vec<usize>>>,
}

impl Decomposition {
    pub fn new(mesh: &Mesh, nranks: usize) -> Self {
        Decomposition {
            nranks,
            rank_of: vec![None; mesh.sets.len()],
        }
    }

    pub fn assign(&mut self, mesh: &Mesh, a: Assignment) -> Result<(), PartitionError> {
        let size = mesh.set(a.set).size;
        if a.rank_of.len() != size {
            return Err(PartitionError::AssignmentLength {
                set: mesh.set(a.set).name.clone(),
                expected: size,
                actual: a.rank_of.len(),
            });
        }
        if a.nranks != self.nranks || a.rank_of.iter().any(|&r| r >= self.nranks) {
            return Err(PartitionError::NoRanks);
        }
        self.rank_of[a.set.0] = Some(a.rank_of);
        Ok(())
    }

    pub fn rank_of(&self, set: SetId) -> Option<&[usize]> {
        self.rank_of[set.0].as_deref()
    }

    pub(crate) fn require(&self, mesh: &Mesh, set: SetId) -> Result<&[usize], PartitionError> {
        self.rank_of(set)
            .ok_or_else(|| PartitionError::Unassigned(mesh.set(set).name.clone()))
    }

    /// Starts from one partitioned set and derives the others: an element is
    /// owned by the owner of the target at row position 1 of the map used by
    /// the first indirect argument of the first loop over its set (falling
    /// back to the first declared map). Sets unreachable through maps are
    /// partitioned trivially.
    pub fn derive(mesh: &Mesh, primary: Assignment, loops: &[LoopSignature]) -> Result<Self, PartitionError> {
        let mut d = Decomposition::new(mesh, primary.nranks);
        d.assign(mesh, primary)?;
        loop {
            let mut progress = false;
            for (set, decl) in mesh.sets() {
                if d.rank_of[set.0].is_some() {
                    continue;
                }
                let from_loops = loops
                    .iter()
                    .filter(|l| l.set == set)
                    .filter_map(|l| l.first_indirect_map())
                    .find(|&m| d.rank_of[mesh.map(m).to.0].is_some());
                let map = from_loops.or_else(|| {
                    mesh.maps_from(set)
                        .map(|(id, _)| id)
                        .find(|&m| d.rank_of[mesh.map(m).to.0].is_some())
                });
                if let Some(map) = map {
                    let m = mesh.map(map);
                    let target = d.rank_of[m.to.0].as_ref().expect("checked above");
                    let ranks = (0..decl.size).map(|e| target[m.table[e * m.arity]]).collect();
                    d.rank_of[set.0] = Some(ranks);
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        for (set, _) in mesh.sets() {
            if d.rank_of[set.0].is_none() {
                let a = partition_trivial(mesh, set, d.nranks)?;
                d.rank_of[set.0] = Some(a.rank_of);
            }
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_of(size: usize) -> (Mesh, SetId) {
        let mut m = Mesh::new();
        let s = m.decl_set("s", size).unwrap();
        (m, s)
    }

    #[test]
    fn trivial_sizes() {
        let (m, s) = set_of(17);
        assert_eq!(partition_trivial(&m, s, 2).unwrap().part_sizes(), vec![9, 8]);
        let (m, s) = set_of(14);
        assert!(partition_trivial(&m, s, 1).unwrap().rank_of.iter().all(|&r| r == 0));
        let (m, s) = set_of(4);
        assert_eq!(
            partition_trivial(&m, s, 8).unwrap().part_sizes(),
            vec![1, 1, 1, 1, 0, 0, 0, 0]
        );
        assert_eq!(partition_trivial(&m, s, 0), Err(PartitionError::NoRanks));
    }

    #[test]
    fn trivial_is_contiguous() {
        let (m, s) = set_of(23);
        let a = partition_trivial(&m, s, 5).unwrap();
        assert!(a.rank_of.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn worked_balance_split() {
        let (m, s) = set_of(7000);
        let w = hybrid_weights(3, 1, 2.5).unwrap();
        assert_eq!(w, vec![5.0, 1.0, 1.0]);
        let a = partition_weighted(&m, s, &w).unwrap();
        assert_eq!(a.part_sizes(), vec![5000, 1000, 1000]);
    }

    #[test]
    fn symmetric_balance() {
        let (m, s) = set_of(101);
        let w = hybrid_weights(2, 1, 1.0).unwrap();
        let sizes = partition_weighted(&m, s, &w).unwrap().part_sizes();
        assert!(sizes[0].abs_diff(sizes[1]) <= 1);
    }

    #[test]
    fn hybrid_weights_reject_bad_input() {
        assert!(hybrid_weights(1, 1, 1.0).is_err());
        assert!(hybrid_weights(3, 1, 0.0).is_err());
        assert!(hybrid_weights(3, 1, f64::NAN).is_err());
    }

    #[test]
    fn derive_follows_first_row_entry() {
        let mut m = Mesh::new();
        let nodes = m.decl_set("nodes", 4).unwrap();
        let edges = m.decl_set("edges", 3).unwrap();
        let other = m.decl_set("other", 3).unwrap();
        m.decl_map("en", edges, nodes, 2, &[1, 2, 2, 3, 3, 4]).unwrap();
        let primary = Assignment {
            set: nodes,
            nranks: 2,
            rank_of: vec![0, 0, 1, 1],
        };
        let d = Decomposition::derive(&m, primary, &[]).unwrap();
        assert_eq!(d.rank_of(edges).unwrap(), &[0, 0, 1]);
        // no map: trivial
        assert_eq!(d.rank_of(other).unwrap(), &[0, 0, 1]);
    }
}
