//! Independent oracles shared by the property and acceptance suites.
#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use meshloop::exec::WriteEvent;
use meshloop::mesh::{DatId, MapId, Mesh, Payload, SetId};
use meshloop::par_loop::{Access, Arg, ArgKind, LoopSignature, ParLoop};
use meshloop::partition::{Assignment, Decomposition, RankLayout};
use meshloop::plan::ExecPlan;

pub struct RandomMesh {
    pub mesh: Mesh,
    pub nodes: SetId,
    pub edges: SetId,
    pub cells: SetId,
    pub en: MapId,
    pub cn: MapId,
    pub loops: Vec<ParLoop>,
}

fn table(rng: &mut impl Rng, rows: usize, arity: usize, targets: usize) -> Vec<i64> {
    (0..rows * arity).map(|_| rng.gen_range(1..=targets as i64)).collect()
}

/// Random nodes/edges/cells mesh with at most `max_elems` elements per set
/// and a program of direct, indirect-INC, indirect-WRITE and RW loops.
pub fn random_mesh(rng: &mut impl Rng, max_elems: usize) -> RandomMesh {
    let nn = rng.gen_range(1..=max_elems.clamp(1, 120));
    let ne = rng.gen_range(0..=max_elems);
    let nc = rng.gen_range(0..=max_elems / 2);
    let mut m = Mesh::new();
    let nodes = m.decl_set("nodes", nn).unwrap();
    let edges = m.decl_set("edges", ne).unwrap();
    let cells = m.decl_set("cells", nc).unwrap();
    let en = m.decl_map("en", edges, nodes, 2, &table(rng, ne, 2, nn)).unwrap();
    let cn = m.decl_map("cn", cells, nodes, 3, &table(rng, nc, 3, nn)).unwrap();
    let x: Vec<f64> = (0..2 * nn).map(|_| rng.gen::<f64>()).collect();
    let x = m.decl_dat("x", nodes, 2, x).unwrap();
    let w: Vec<i64> = (0..ne).map(|_| rng.gen_range(-5..=5)).collect();
    let w = m.decl_dat("w", edges, 1, w).unwrap();
    let acc = m.decl_dat("acc", nodes, 1, vec![0i64; nn]).unwrap();
    let tag = m.decl_dat("tag", nodes, 1, vec![0i64; nn]).unwrap();
    let cval = m.decl_dat("cval", cells, 1, vec![0.0f64; nc]).unwrap();
    let ninc = m.decl_dat("ninc", nodes, 1, vec![0.0f64; nn]).unwrap();

    let flux = ParLoop::new(
        "flux",
        edges,
        vec![
            Arg::direct(w, Access::Read),
            Arg::indirect(acc, en, 1, Access::Inc),
            Arg::indirect(acc, en, 2, Access::Inc),
        ],
        |v| {
            let w = v.i64(0)[0];
            v.i64_mut(1)[0] = w;
            v.i64_mut(2)[0] = -2 * w;
        },
    );
    let area = ParLoop::new(
        "area",
        cells,
        vec![
            Arg::indirect(x, cn, 1, Access::Read),
            Arg::indirect(x, cn, 2, Access::Read),
            Arg::indirect(x, cn, 3, Access::Read),
            Arg::direct(cval, Access::Write),
        ],
        |v| {
            let (a, b, c) = (v.f64(0), v.f64(1), v.f64(2));
            v.f64_mut(3)[0] = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        },
    );
    let spread = ParLoop::new(
        "spread",
        cells,
        vec![
            Arg::direct(cval, Access::Read),
            Arg::indirect(ninc, cn, 1, Access::Inc),
            Arg::indirect(ninc, cn, 2, Access::Inc),
            Arg::indirect(ninc, cn, 3, Access::Inc),
        ],
        |v| {
            let s = v.f64(0)[0];
            for k in 1..4 {
                v.f64_mut(k)[0] = s;
            }
        },
    );
    let stamp = ParLoop::new("stamp", cells, vec![Arg::indirect(tag, cn, 2, Access::Write)], |v| {
        v.i64_mut(0)[0] = 7;
    });
    let bump = ParLoop::new("bump", edges, vec![Arg::indirect(acc, en, 1, Access::ReadWrite)], |v| {
        v.i64_mut(0)[0] += 1;
    });
    let double = ParLoop::new("double", nodes, vec![Arg::direct(acc, Access::ReadWrite)], |v| {
        v.i64_mut(0)[0] *= 2;
    });
    RandomMesh {
        mesh: m,
        nodes,
        edges,
        cells,
        en,
        cn,
        loops: vec![flux, area, spread, stamp, bump, double],
    }
}

/// Written (dat, target) pairs of one element.
fn write_targets(mesh: &Mesh, sig: &LoopSignature, e: usize) -> Vec<(DatId, usize)> {
    let mut out = Vec::new();
    let indirect: Vec<DatId> = sig.args.iter().filter(|a| a.map().is_some()).filter_map(|a| a.dat()).collect();
    for a in &sig.args {
        if !matches!(a.mode, Access::Write | Access::ReadWrite | Access::Inc) {
            continue;
        }
        match a.kind {
            ArgKind::Indirect { dat, map, index } => out.push((dat, mesh.map(map).row(e)[index])),
            ArgKind::Direct { dat } if indirect.contains(&dat) => out.push((dat, e)),
            _ => {}
        }
    }
    out
}

pub fn dense(colors: impl Iterator<Item = u32>) -> bool {
    let set: BTreeSet<u32> = colors.collect();
    set.iter().enumerate().all(|(i, &c)| c as usize == i)
}

/// Same-color conflicts at block level and at element level, plus whether
/// both color levels are dense from 0.
pub fn plan_conflicts(mesh: &Mesh, sig: &LoopSignature, plan: &ExecPlan) -> (usize, usize, bool) {
    let n = mesh.set(sig.set).size;
    let mut block_conflicts = 0;
    let mut elem_conflicts = 0;
    let mut dense_ok = dense(plan.block_color.iter().copied()) && plan.block_color.len() == plan.nblocks;
    // target -> (color, block) of the first writer seen
    let mut seen: HashMap<(u32, (DatId, usize)), usize> = HashMap::new();
    for b in 0..plan.nblocks {
        let color = plan.block_color[b];
        let mut in_block: BTreeSet<(DatId, usize)> = BTreeSet::new();
        for e in plan.block_range(b) {
            in_block.extend(write_targets(mesh, sig, e));
        }
        for t in in_block {
            if let Some(&other) = seen.get(&(color, t)) {
                if other != b {
                    block_conflicts += 1;
                }
            } else {
                seen.insert((color, t), b);
            }
        }
        let range: Vec<usize> = plan.block_range(b).collect();
        dense_ok &= dense(range.iter().map(|&e| plan.elem_color[e]));
        let max = range.iter().map(|&e| plan.elem_color[e] + 1).max().unwrap_or(0);
        dense_ok &= plan.elem_ncolors[b] == max;
        for (i, &a) in range.iter().enumerate() {
            let ta = write_targets(mesh, sig, a);
            for &c in &range[i + 1..] {
                if plan.elem_color[a] == plan.elem_color[c] {
                    let tc = write_targets(mesh, sig, c);
                    if ta.iter().any(|t| tc.contains(t)) {
                        elem_conflicts += 1;
                    }
                }
            }
        }
    }
    debug_assert!(plan.block_range(plan.nblocks.saturating_sub(1)).end == n || n == 0);
    (block_conflicts, elem_conflicts, dense_ok)
}

/// Two different blocks of one color phase writing the same target; the
/// trace must come from a single loop call.
pub fn trace_conflicts(trace: &[WriteEvent]) -> usize {
    let mut first: HashMap<(u32, usize, usize), usize> = HashMap::new();
    let mut conflicts = 0;
    for ev in trace {
        let key = (ev.color, ev.dat, ev.target);
        match first.get(&key) {
            Some(&b) if b != ev.block => conflicts += 1,
            Some(_) => {}
            None => {
                first.insert(key, ev.block);
            }
        }
    }
    conflicts
}

/// Random per-set rank assignment.
pub fn random_decomposition(rng: &mut impl Rng, mesh: &Mesh, nranks: usize) -> Decomposition {
    let mut d = Decomposition::new(mesh, nranks);
    for (set, decl) in mesh.sets() {
        let rank_of = (0..decl.size).map(|_| rng.gen_range(0..nranks)).collect();
        d.assign(mesh, Assignment { set, nranks, rank_of }).unwrap();
    }
    d
}

pub struct HaloOracle {
    /// [rank][set] -> (owned, exec, nonexec)
    pub parts: Vec<Vec<(Vec<usize>, Vec<usize>, Vec<usize>)>>,
}

/// Brute-force halo closure: scans every loop, argument and element.
pub fn halo_oracle(mesh: &Mesh, d: &Decomposition, loops: &[LoopSignature]) -> HaloOracle {
    let nsets = mesh.sets().count();
    let owner = |s: SetId| d.rank_of(s).expect("every set assigned");
    let mut parts = Vec::new();
    for r in 0..d.nranks {
        let mut exec: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nsets];
        for l in loops {
            let own = owner(l.set);
            for e in (0..own.len()).filter(|&e| own[e] != r) {
                for a in &l.args {
                    if let ArgKind::Indirect { map, index, .. } = a.kind {
                        let m = mesh.map(map);
                        if a.mode != Access::Read && owner(m.to)[m.row(e)[index]] == r {
                            exec[l.set.index()].insert(e);
                        }
                    }
                }
            }
        }
        let mut nonexec: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nsets];
        for l in loops {
            let own = owner(l.set);
            for e in 0..own.len() {
                if own[e] != r && !exec[l.set.index()].contains(&e) {
                    continue;
                }
                for a in &l.args {
                    if let Some((map, _)) = a.map() {
                        let m = mesh.map(map);
                        for &t in m.row(e) {
                            if owner(m.to)[t] != r && !exec[m.to.index()].contains(&t) {
                                nonexec[m.to.index()].insert(t);
                            }
                        }
                    }
                }
            }
        }
        let sets = mesh
            .sets()
            .map(|(s, _)| {
                let own = owner(s);
                (
                    (0..own.len()).filter(|&e| own[e] == r).collect(),
                    exec[s.index()].iter().copied().collect(),
                    nonexec[s.index()].iter().copied().collect(),
                )
            })
            .collect();
        parts.push(sets);
    }
    HaloOracle { parts }
}

/// Differences between `build_halos` output and the oracle, including the
/// import/export bookkeeping.
pub fn halo_mismatches(mesh: &Mesh, layout: &RankLayout, oracle: &HaloOracle) -> Vec<String> {
    let mut bad = Vec::new();
    for (r, rank) in layout.ranks.iter().enumerate() {
        for (s, part) in rank.sets.iter().enumerate() {
            let (owned, exec, nonexec) = &oracle.parts[r][s];
            if &part.owned != owned || &part.exec_halo != exec || &part.nonexec_halo != nonexec {
                bad.push(format!("rank {r} set {s}: halo differs"));
            }
            let owner = layout
                .decomposition
                .rank_of(mesh.sets().nth(s).unwrap().0)
                .unwrap();
            let mut imported: Vec<usize> = Vec::new();
            for (q, elems) in &part.imports {
                if elems.iter().any(|&e| owner[e] != *q) {
                    bad.push(format!("rank {r} set {s}: import from wrong owner {q}"));
                }
                let mirrored = layout.ranks[*q].sets[s].exports.iter().find(|(to, _)| *to == r);
                if mirrored.map(|(_, v)| v) != Some(elems) {
                    bad.push(format!("rank {r} set {s}: export of {q} does not mirror import"));
                }
                imported.extend(elems);
            }
            imported.sort_unstable();
            let mut want: Vec<usize> = exec.iter().chain(nonexec).copied().collect();
            want.sort_unstable();
            if imported != want {
                bad.push(format!("rank {r} set {s}: imports do not cover the halo"));
            }
        }
    }
    bad
}

/// Norm-wise relative difference: max |a - b| over max |a| (0 for exact).
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        return 0.0;
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

/// `None` when equal (int64 exactly, float64 within `rtol`), else a reason.
pub fn payload_diff(a: &Payload, b: &Payload, rtol: f64) -> Option<String> {
    match (a, b) {
        (Payload::I64(x), Payload::I64(y)) => (x != y).then(|| {
            let i = x.iter().zip(y).position(|(p, q)| p != q).unwrap_or(x.len().min(y.len()));
            format!("int64 differs at {i}")
        }),
        (Payload::F64(x), Payload::F64(y)) => {
            if x.len() != y.len() {
                return Some("length differs".into());
            }
            let d = rel_diff(x, y);
            (d > rtol).then(|| format!("float64 relative difference {d:e}"))
        }
        _ => Some("kind differs".into()),
    }
}
