//! Locality-improving renumbering.
//!
//! Target sets of maps are ordered by reverse Cuthill-McKee over the
//! co-occurrence graph; source-only sets are then sorted by the renumbered
//! targets of their first map.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::RenumberError;
use crate::mesh::{MapId, Mesh, SetId};

/// A bijection on the elements of one set. `forward[old] = new`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub set: SetId,
    forward: Vec<usize>,
    inverse: Vec<usize>,
    version: u64,
}

impl Permutation {
    /// Builds from `forward` (0-based), checking bijectivity.
    pub fn new(set: SetId, forward: Vec<usize>, version: u64) -> Result<Self, RenumberError> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (old, &new) in forward.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return Err(RenumberError::NotBijective(n));
            }
            inverse[new] = old;
        }
        Ok(Permutation {
            set,
            forward,
            inverse,
            version,
        })
    }

    /// From an ordering: `order[new] = old`.
    pub fn from_order(set: SetId, order: Vec<usize>, version: u64) -> Result<Self, RenumberError> {
        let n = order.len();
        let mut forward = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || forward[old] != usize::MAX {
                return Err(RenumberError::NotBijective(n));
            }
            forward[old] = new;
        }
        Ok(Permutation {
            set,
            forward,
            inverse: order,
            version,
        })
    }

    pub fn identity(set: SetId, n: usize, version: u64) -> Self {
        Permutation {
            set,
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
            version,
        }
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &f)| i == f)
    }

    /// Mesh version this permutation was computed against.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Maps element-major values on the renumbered set back to the original numbering.
    pub fn restore<T: Copy>(&self, renumbered: &[T], dim: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(renumbered.len());
        for &new in &self.forward {
            out.extend_from_slice(&renumbered[new * dim..(new + 1) * dim]);
        }
        out
    }

    /// Maps element-major values in the original numbering to the renumbered set.
    pub fn apply_to<T: Copy>(&self, original: &[T], dim: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(original.len());
        for &old in &self.inverse {
            out.extend_from_slice(&original[old * dim..(old + 1) * dim]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthMetric {
    pub max_span: usize,
    pub mean_span: f64,
}

/// Max and mean over rows of (largest index - smallest index).
pub fn bandwidth_metric(mesh: &Mesh, map: MapId) -> BandwidthMetric {
    let m = mesh.map(map);
    let rows = mesh.set(m.from).size;
    if rows == 0 {
        return BandwidthMetric {
            max_span: 0,
            mean_span: 0.0,
        };
    }
    let mut max_span = 0;
    let mut sum = 0u64;
    for e in 0..rows {
        let row = m.row(e);
        let lo = row.iter().min().copied().unwrap_or(0);
        let hi = row.iter().max().copied().unwrap_or(0);
        max_span = max_span.max(hi - lo);
        sum += (hi - lo) as u64;
    }
    BandwidthMetric {
        max_span,
        mean_span: sum as f64 / rows as f64,
    }
}

/// Adjacency lists (sorted, deduplicated) of the co-occurrence graph on `set`.
fn co_occurrence(mesh: &Mesh, set: SetId) -> Vec<Vec<usize>> {
    let n = mesh.set(set).size;
    let mut adj = vec![Vec::new(); n];
    for (_, m) in mesh.maps_into(set) {
        for e in 0..mesh.set(m.from).size {
            let row = m.row(e);
            for (i, &a) in row.iter().enumerate() {
                for &b in &row[i + 1..] {
                    if a != b {
                        adj[a].push(b);
                        adj[b].push(a);
                    }
                }
            }
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

/// Reverse Cuthill-McKee, one component at a time. Components are taken in
/// order of their lowest-index vertex; each starts at a minimum-degree vertex
/// (highest index on ties) and visits neighbors by ascending (degree, index).
/// Each component's Cuthill-McKee sequence is reversed in place.
pub fn rcm_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut comp = vec![usize::MAX; n];
    let mut ncomp = 0;
    let mut members: Vec<Vec<usize>> = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = ncomp;
        let mut list = Vec::new();
        while let Some(v) = stack.pop() {
            list.push(v);
            for &w in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = ncomp;
                    stack.push(w);
                }
            }
        }
        members.push(list);
        ncomp += 1;
    }

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();
    let mut scratch = Vec::new();
    for list in members {
        let start = *list
            .iter()
            .min_by_key(|&&v| (deg[v], std::cmp::Reverse(v)))
            .expect("components are non-empty");
        let first = order.len();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            scratch.clear();
            scratch.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            scratch.sort_unstable_by_key(|&w| (deg[w], w));
            for &w in &scratch {
                visited[w] = true;
                queue.push_back(w);
            }
        }
        order[first..].reverse();
    }
    order
}

/// Orders a source set by the sorted renumbered target tuple of its first
/// map; ties keep the original order.
fn lexicographic_order(mesh: &Mesh, map: MapId) -> Vec<usize> {
    let m = mesh.map(map);
    let n = mesh.set(m.from).size;
    let keys: Vec<Vec<usize>> = (0..n)
        .map(|e| {
            let mut k = m.row(e).to_vec();
            k.sort_unstable();
            k
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    order
}

pub fn compute_ordering(mesh: &Mesh, set: SetId) -> Result<Permutation, RenumberError> {
    let order = if mesh.maps_into(set).next().is_some() {
        rcm_order(&co_occurrence(mesh, set))
    } else if let Some((map, _)) = mesh.maps_from(set).next() {
        lexicographic_order(mesh, map)
    } else {
        return Err(RenumberError::NoIncidentMap(mesh.set(set).name.clone()));
    };
    Permutation::from_order(set, order, mesh.version())
}

/// Reorders the set's dats and rewrites every incident map.
pub fn apply_permutation(mesh: &mut Mesh, perm: &Permutation) -> Result<(), RenumberError> {
    if perm.version != mesh.version() {
        return Err(RenumberError::Stale {
            computed: perm.version,
            current: mesh.version(),
        });
    }
    let set = perm.set;
    let n = mesh.set(set).size;
    if perm.len() != n {
        return Err(RenumberError::NotBijective(n));
    }
    for d in mesh.dats.iter_mut().filter(|d| d.set == set) {
        let layout = d.layout;
        d.relayout(crate::mesh::Layout::Aos);
        let dim = d.dim;
        d.payload = d
            .payload
            .gather(perm.inverse.iter().flat_map(|&old| (0..dim).map(move |c| old * dim + c)));
        d.relayout(layout);
    }
    for m in mesh.maps.iter_mut() {
        if m.to == set {
            for t in &mut m.table {
                *t = perm.forward[*t];
            }
        }
        if m.from == set {
            let a = m.arity;
            let mut table = Vec::with_capacity(m.table.len());
            for &old in &perm.inverse {
                table.extend_from_slice(&m.table[old * a..(old + 1) * a]);
            }
            m.table = table;
        }
    }
    mesh.bump_version();
    Ok(())
}

/// Bandwidth of one map before and after renumbering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenumberRow {
    pub map: String,
    pub before: BandwidthMetric,
    pub after: BandwidthMetric,
}

/// Result of renumbering a whole mesh.
#[derive(Debug, Clone, Default)]
pub struct Renumbering {
    /// Applied permutations, in application order.
    pub perms: Vec<Permutation>,
    pub rows: Vec<RenumberRow>,
}

impl Renumbering {
    pub fn perm(&self, set: SetId) -> Option<&Permutation> {
        self.perms.iter().find(|p| p.set == set)
    }

    /// Values of a dat on `set` read back in the original numbering.
    pub fn restore<T: Copy>(&self, set: SetId, values: &[T], dim: usize) -> Vec<T> {
        match self.perm(set) {
            Some(p) => p.restore(values, dim),
            None => values.to_vec(),
        }
    }
}

/// Renumbers every map target set (RCM), then every set that is only a map
/// source (lexicographic), in declaration order; sets without maps are left alone.
pub fn renumber_mesh(mesh: &mut Mesh) -> Result<Renumbering, RenumberError> {
    let before: Vec<(MapId, BandwidthMetric)> =
        mesh.maps().map(|(id, _)| (id, bandwidth_metric(mesh, id))).collect();
    let targets: Vec<SetId> = mesh
        .sets()
        .map(|(id, _)| id)
        .filter(|&s| mesh.maps_into(s).next().is_some())
        .collect();
    let sources: Vec<SetId> = mesh
        .sets()
        .map(|(id, _)| id)
        .filter(|&s| !targets.contains(&s) && mesh.maps_from(s).next().is_some())
        .collect();
    let mut perms = Vec::new();
    for set in targets.into_iter().chain(sources) {
        let p = compute_ordering(mesh, set)?;
        apply_permutation(mesh, &p)?;
        perms.push(p);
    }
    let rows = before
        .into_iter()
        .map(|(id, before)| RenumberRow {
            map: mesh.map(id).name.clone(),
            before,
            after: bandwidth_metric(mesh, id),
        })
        .collect();
    Ok(Renumbering { perms, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_mesh(labels: &[i64]) -> (Mesh, SetId, MapId) {
        let mut m = Mesh::new();
        let nodes = m.decl_set("nodes", labels.len()).unwrap();
        let edges = m.decl_set("edges", labels.len() - 1).unwrap();
        let table: Vec<i64> = labels.windows(2).flat_map(|w| [w[0], w[1]]).collect();
        let map = m.decl_map("en", edges, nodes, 2, &table).unwrap();
        (m, nodes, map)
    }

    #[test]
    fn ordered_path_is_identity() {
        let (m, nodes, _) = path_mesh(&[1, 2, 3, 4]);
        assert!(compute_ordering(&m, nodes).unwrap().is_identity());
    }

    fn brute_force_min_bandwidth(n: usize, edges: &[(usize, usize)]) -> usize {
        fn permute(k: usize, p: &mut Vec<usize>, edges: &[(usize, usize)], best: &mut usize) {
            if k == p.len() {
                let bw = edges.iter().map(|&(a, b)| p[a].abs_diff(p[b])).max().unwrap_or(0);
                *best = (*best).min(bw);
                return;
            }
            for i in k..p.len() {
                p.swap(k, i);
                permute(k + 1, p, edges, best);
                p.swap(k, i);
            }
        }
        let mut best = usize::MAX;
        permute(0, &mut (0..n).collect(), edges, &mut best);
        best
    }

    #[test]
    fn shuffled_path_restored() {
        let (mut m, nodes, map) = path_mesh(&[3, 1, 4, 2]);
        let before = bandwidth_metric(&m, map);
        assert_eq!(before.max_span, 3);
        let p = compute_ordering(&m, nodes).unwrap();
        apply_permutation(&mut m, &p).unwrap();
        let after = bandwidth_metric(&m, map);
        let edges: Vec<(usize, usize)> = (0..3).map(|e| (m.map(map).row(e)[0], m.map(map).row(e)[1])).collect();
        assert_eq!(after.max_span, brute_force_min_bandwidth(4, &edges));
        assert_eq!(after.max_span, 1);
    }

    #[test]
    fn identity_map_has_zero_span() {
        let mut m = Mesh::new();
        let s = m.decl_set("s", 5).unwrap();
        let id = m.decl_map("id", s, s, 1, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(
            bandwidth_metric(&m, id),
            BandwidthMetric {
                max_span: 0,
                mean_span: 0.0
            }
        );
    }

    #[test]
    fn span_of_first_cell() {
        let mut m = Mesh::new();
        let nodes = m.decl_set("nodes", 14).unwrap();
        let cells = m.decl_set("cells", 1).unwrap();
        let map = m.decl_map("pcell", cells, nodes, 3, &[1, 3, 10]).unwrap();
        assert_eq!(bandwidth_metric(&m, map).max_span, 9);
    }

    #[test]
    fn swap_rewrites_targets() {
        let mut m = crate::apps::sample_mesh();
        let nodes = m.set_by_name("nodes").unwrap();
        let pcell = m.map_by_name("pcell").unwrap();
        let mut fwd: Vec<usize> = (0..14).collect();
        fwd.swap(0, 1);
        let p = Permutation::new(nodes, fwd, m.version()).unwrap();
        apply_permutation(&mut m, &p).unwrap();
        assert_eq!(&m.map(pcell).table_one_based()[..6], &[2, 3, 10, 2, 1, 3]);
    }

    #[test]
    fn stale_permutation_rejected() {
        let (mut m, nodes, _) = path_mesh(&[1, 2, 3]);
        let p = Permutation::identity(nodes, 3, m.version());
        apply_permutation(&mut m, &p).unwrap();
        assert_eq!(
            apply_permutation(&mut m, &p),
            Err(RenumberError::Stale { computed: 0, current: 1 })
        );
    }

    #[test]
    fn no_incident_map() {
        let mut m = Mesh::new();
        let s = m.decl_set("lonely", 3).unwrap();
        assert!(matches!(compute_ordering(&m, s), Err(RenumberError::NoIncidentMap(_))));
    }

    #[test]
    fn non_bijection_rejected() {
        let mut m = Mesh::new();
        let s = m.decl_set("s", 3).unwrap();
        assert!(Permutation::new(s, vec![0, 0, 1], 0).is_err());
    }

    #[test]
    fn restore_inverts_apply() {
        let mut m = Mesh::new();
        let s = m.decl_set("s", 4).unwrap();
        let p = Permutation::new(s, vec![2, 0, 3, 1], 0).unwrap();
        let vals = vec![10, 11, 20, 21, 30, 31, 40, 41];
        assert_eq!(p.restore(&p.apply_to(&vals, 2), 2), vals);
    }

    #[test]
    fn isolated_vertices_are_kept() {
        let adj = vec![vec![], vec![2], vec![1], vec![]];
        let mut o = rcm_order(&adj);
        o.sort();
        assert_eq!(o, vec![0, 1, 2, 3]);
    }
}
