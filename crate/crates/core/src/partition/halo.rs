//! Owner-compute halos.
//!
//! An iteration element owned elsewhere enters the exec halo of rank `r`
//! when one of its writing indirect arguments targets an element `r` owns;
//! `r` executes it redundantly. Every other off-rank element that an owned
//! or exec-halo element reaches through a map used by some loop forms the
//! non-exec halo, which is only read.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::Decomposition;
use crate::error::PartitionError;
use crate::mesh::{MapId, Mesh, SetId};
use crate::par_loop::{ArgKind, LoopSignature};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SetPart {
    pub owned: Vec<usize>,
    pub exec_halo: Vec<usize>,
    pub nonexec_halo: Vec<usize>,
    /// (owner rank, elements) for every halo element, sorted by global index.
    pub imports: Vec<(usize, Vec<usize>)>,
    /// (receiving rank, elements); mirrors that rank's imports from us.
    pub exports: Vec<(usize, Vec<usize>)>,
}

impl SetPart {
    pub fn halo_len(&self) -> usize {
        self.exec_halo.len() + self.nonexec_halo.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPart {
    pub rank: usize,
    /// Indexed by set id.
    pub sets: Vec<SetPart>,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankLayout {
    pub nranks: usize,
    pub ranks: Vec<RankPart>,
    pub decomposition: Decomposition,
    pub(crate) read_maps: HashSet<MapId>,
    pub(crate) write_maps: HashSet<(MapId, usize)>,
}

impl RankLayout {
    /// Whether the halos were built for every indirect argument of `sig`.
    pub fn covers(&self, sig: &LoopSignature) -> Result<(), MapId> {
        for a in &sig.args {
            if let ArgKind::Indirect { map, index, .. } = a.kind {
                let ok = if a.mode.writes() {
                    self.write_maps.contains(&(map, index))
                } else {
                    self.read_maps.contains(&map)
                };
                if !ok {
                    return Err(map);
                }
            }
        }
        Ok(())
    }
}

pub fn build_halos(
    mesh: &Mesh,
    decomposition: &Decomposition,
    loops: &[LoopSignature],
) -> Result<RankLayout, PartitionError> {
    let nsets = mesh.sets.len();
    let nranks = decomposition.nranks;
    let mut write_args: Vec<Vec<(MapId, usize)>> = vec![Vec::new(); nsets];
    let mut used_maps: Vec<Vec<MapId>> = vec![Vec::new(); nsets];
    let mut read_maps = HashSet::new();
    let mut write_maps = HashSet::new();
    for l in loops {
        decomposition.require(mesh, l.set)?;
        for a in &l.args {
            if let Some(dat) = a.dat() {
                decomposition.require(mesh, mesh.dat(dat).set)?;
            }
            if let ArgKind::Indirect { map, index, .. } = a.kind {
                if !used_maps[l.set.0].contains(&map) {
                    used_maps[l.set.0].push(map);
                }
                read_maps.insert(map);
                if a.mode.writes() {
                    write_maps.insert((map, index));
                    if !write_args[l.set.0].contains(&(map, index)) {
                        write_args[l.set.0].push((map, index));
                    }
                }
            }
        }
    }

    let owner = |s: usize| decomposition.rank_of[s].as_deref();
    let mut ranks = Vec::with_capacity(nranks);
    for r in 0..nranks {
        let mut parts: Vec<SetPart> = vec![SetPart::default(); nsets];
        // owned and exec halo
        for s in 0..nsets {
            let Some(own) = owner(s) else { continue };
            parts[s].owned = (0..own.len()).filter(|&e| own[e] == r).collect();
            let mut exec = Vec::new();
            if !write_args[s].is_empty() {
                for e in (0..own.len()).filter(|&e| own[e] != r) {
                    let hits = write_args[s].iter().any(|&(m, k)| {
                        let m = mesh.map(m);
                        let t = m.table[e * m.arity + k];
                        owner(m.to.0).is_some_and(|o| o[t] == r)
                    });
                    if hits {
                        exec.push(e);
                    }
                }
            }
            parts[s].exec_halo = exec;
        }
        // non-exec halo: close every map read from locally executed elements
        let mut nonexec: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nsets];
        for s in 0..nsets {
            if used_maps[s].is_empty() {
                continue;
            }
            let executed = parts[s].owned.iter().chain(&parts[s].exec_halo);
            for &e in executed {
                for &m in &used_maps[s] {
                    let m = mesh.map(m);
                    let t_own = owner(m.to.0).expect("required above");
                    for &t in m.row(e) {
                        if t_own[t] != r {
                            nonexec[m.to.0].insert(t);
                        }
                    }
                }
            }
        }
        for s in 0..nsets {
            let exec: HashSet<usize> = parts[s].exec_halo.iter().copied().collect();
            parts[s].nonexec_halo = nonexec[s].iter().copied().filter(|t| !exec.contains(t)).collect();
            let Some(own) = owner(s) else { continue };
            let mut by_owner: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &e in parts[s].exec_halo.iter().chain(&parts[s].nonexec_halo) {
                by_owner.entry(own[e]).or_default().push(e);
            }
            parts[s].imports = by_owner
                .into_iter()
                .map(|(q, mut v)| {
                    v.sort_unstable();
                    (q, v)
                })
                .collect();
        }
        ranks.push(RankPart {
            rank: r,
            sets: parts,
            neighbors: Vec::new(),
        });
    }

    // exports mirror imports
    for r in 0..nranks {
        for s in 0..nsets {
            let imports = ranks[r].sets[s].imports.clone();
            for (q, elems) in imports {
                ranks[q].sets[s].exports.push((r, elems));
            }
        }
    }
    for rank in &mut ranks {
        let mut nb = BTreeSet::new();
        for part in &mut rank.sets {
            part.exports.sort_by_key(|(q, _)| *q);
            nb.extend(part.imports.iter().map(|(q, _)| *q));
            nb.extend(part.exports.iter().map(|(q, _)| *q));
        }
        rank.neighbors = nb.into_iter().collect();
    }

    Ok(RankLayout {
        nranks,
        ranks,
        decomposition: decomposition.clone(),
        read_maps,
        write_maps,
    })
}

/// One row of the halo statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HaloStatsRow {
    pub nranks: usize,
    /// Average number of neighbor ranks per rank.
    pub av_neighbors: f64,
    /// Average elements held per rank (owned plus halo, all sets).
    pub tot: f64,
    /// Average percentage of halo elements among the elements held.
    pub pct_halo: f64,
}

impl RankLayout {
    pub fn total_halo(&self) -> usize {
        self.ranks
            .iter()
            .flat_map(|r| r.sets.iter())
            .map(SetPart::halo_len)
            .sum()
    }

    pub fn halo_stats(&self) -> HaloStatsRow {
        let n = self.nranks as f64;
        let mut nb = 0.0;
        let mut tot = 0.0;
        let mut pct = 0.0;
        for r in &self.ranks {
            let owned: usize = r.sets.iter().map(|p| p.owned.len()).sum();
            let halo: usize = r.sets.iter().map(SetPart::halo_len).sum();
            nb += r.neighbors.len() as f64;
            tot += (owned + halo) as f64;
            if owned + halo > 0 {
                pct += 100.0 * halo as f64 / (owned + halo) as f64;
            }
        }
        HaloStatsRow {
            nranks: self.nranks,
            av_neighbors: nb / n,
            tot: tot / n,
            pct_halo: pct / n,
        }
    }

    pub(crate) fn set_part(&self, rank: usize, set: SetId) -> &SetPart {
        &self.ranks[rank].sets[set.0]
    }
}

pub fn halo_stats(layouts: &[RankLayout]) -> Vec<HaloStatsRow> {
    layouts.iter().map(RankLayout::halo_stats).collect()
}

/// CSV with columns `nranks,av_neighbors,tot,pct_halo`.
pub fn halo_stats_csv(rows: &[HaloStatsRow]) -> String {
    let mut out = String::from("nranks,av_neighbors,tot,pct_halo\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.2},{:.1},{:.2}", r.nranks, r.av_neighbors, r.tot, r.pct_halo);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par_loop::{Access, Arg};
    use crate::partition::{partition_trivial, Assignment};

    fn path() -> (Mesh, SetId, SetId, LoopSignature) {
        let mut m = Mesh::new();
        let nodes = m.decl_set("nodes", 4).unwrap();
        let edges = m.decl_set("edges", 3).unwrap();
        let en = m.decl_map("en", edges, nodes, 2, &[1, 2, 2, 3, 3, 4]).unwrap();
        let r = m.decl_dat("r", nodes, 1, vec![0.0; 4]).unwrap();
        let sig = LoopSignature {
            name: "inc".into(),
            set: edges,
            args: vec![Arg::indirect(r, en, 1, Access::Inc), Arg::indirect(r, en, 2, Access::Inc)],
        };
        (m, nodes, edges, sig)
    }

    #[test]
    fn single_rank_has_no_halo() {
        let (m, nodes, _, sig) = path();
        let a = partition_trivial(&m, nodes, 1).unwrap();
        let d = Decomposition::derive(&m, a, std::slice::from_ref(&sig)).unwrap();
        let l = build_halos(&m, &d, &[sig]).unwrap();
        assert_eq!(l.total_halo(), 0);
        let row = l.halo_stats();
        assert_eq!((row.av_neighbors, row.pct_halo), (0.0, 0.0));
    }

    #[test]
    fn path_split_in_two() {
        let (m, nodes, edges, sig) = path();
        let a = Assignment {
            set: nodes,
            nranks: 2,
            rank_of: vec![0, 0, 1, 1],
        };
        let d = Decomposition::derive(&m, a, std::slice::from_ref(&sig)).unwrap();
        assert_eq!(d.rank_of(edges).unwrap(), &[0, 0, 1]);
        let l = build_halos(&m, &d, &[sig]).unwrap();
        let r1 = &l.ranks[1];
        assert_eq!(r1.sets[edges.0].exec_halo, vec![1]);
        assert_eq!(r1.sets[nodes.0].nonexec_halo, vec![1]);
        let r0 = &l.ranks[0];
        // edge 3 = (3,4) touches nothing rank 0 owns
        assert!(r0.sets[edges.0].exec_halo.is_empty());
        assert_eq!(r0.sets[nodes.0].nonexec_halo, vec![2]);
        assert_eq!(r0.sets[edges.0].exports, vec![(1, vec![1])]);
        assert_eq!(r0.neighbors, vec![1]);
    }

    #[test]
    fn unassigned_set_rejected() {
        let (m, nodes, _, sig) = path();
        let mut d = Decomposition::new(&m, 2);
        d.assign(&m, partition_trivial(&m, nodes, 2).unwrap()).unwrap();
        assert_eq!(
            build_halos(&m, &d, &[sig]),
            Err(PartitionError::Unassigned("edges".into()))
        );
    }

    #[test]
    fn csv_columns() {
        let rows = vec![HaloStatsRow {
            nranks: 2,
            av_neighbors: 1.0,
            tot: 10.0,
            pct_halo: 5.0,
        }];
        let csv = halo_stats_csv(&rows);
        assert!(csv.starts_with("nranks,av_neighbors,tot,pct_halo\n2,1.00,10.0,5.00"));
    }
}
