//! Owner-compute execution on in-process ranks.
//!
//! Each rank is a thread holding a private local mesh: the elements it owns,
//! the exec halo it executes redundantly and the read-only non-exec halo.
//! Ranks share nothing; halo values travel as messages over channels. The
//! host keeps one dirty flag per dat and asks ranks to refresh halos
//! before a loop reads a dat written since the last refresh.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rayon::ThreadPool;

use super::engine::{apply_reductions, combine_into, identity, BoundLoop, ExecCtx};
use super::serial::loop_bytes;
use super::threads::build_pool;
use super::{check_global, Backend, BackendConfig, BackendKind, Fault};
use crate::error::ExecError;
use crate::mesh::{DatDecl, DatId, ElemKind, GlobalId, Layout, MapDecl, Mesh, Payload, SetDecl, SetId};
use crate::par_loop::{validate, Access, LoopSignature, ParLoop};
use crate::partition::{
    build_halos, hybrid_weights, partition_rcb, partition_trivial, partition_weighted, Assignment, Decomposition,
    HaloStatsRow, Partitioner, RankLayout,
};
use crate::perf::{ClassTiming, LoopTiming, PerfLog};
use crate::plan::{PlanCache, PlanStats};

struct HaloMsg {
    epoch: u64,
    dat: usize,
    from: usize,
    values: Payload,
}

enum Command {
    Run {
        lp: ParLoop,
        exchange: Vec<DatId>,
        epoch: u64,
        globals: Vec<Payload>,
    },
    Fetch {
        dat: DatId,
    },
    Shutdown,
}

struct LoopOutcome {
    partials: Vec<Payload>,
    targets: Vec<(usize, Access)>,
    comm: Duration,
    comp: Duration,
    messages: u64,
    plan: Option<PlanStats>,
}

enum Reply {
    Done {
        rank: usize,
        result: Result<LoopOutcome, ExecError>,
    },
    Fetched {
        rank: usize,
        globals: Vec<usize>,
        values: Payload,
    },
}

/// One set as seen by one rank. Local numbering: owned and exec-halo
/// elements in ascending global order (the executed prefix), then the
/// non-exec halo in ascending global order.
struct LocalSet {
    l2g: Vec<usize>,
    exec_count: usize,
    owned: Vec<bool>,
    imports: Vec<(usize, Vec<usize>)>,
    exports: Vec<(usize, Vec<usize>)>,
}

struct Rank {
    rank: usize,
    mesh: Mesh,
    sets: Vec<LocalSet>,
    pool: Option<ThreadPool>,
    plans: PlanCache,
    config: BackendConfig,
    inbox: Receiver<HaloMsg>,
    peers: Vec<Sender<HaloMsg>>,
    pending: HashMap<(u64, usize, usize), Payload>,
}

fn read_elems(d: &DatDecl, size: usize, elems: &[usize]) -> Payload {
    let pos = |e: usize, c: usize| d.layout.position(e, c, size, d.dim);
    match &d.payload {
        Payload::F64(v) => Payload::F64(elems.iter().flat_map(|&e| (0..d.dim).map(move |c| v[pos(e, c)])).collect()),
        Payload::I64(v) => Payload::I64(elems.iter().flat_map(|&e| (0..d.dim).map(move |c| v[pos(e, c)])).collect()),
    }
}

fn write_elems(d: &mut DatDecl, size: usize, elems: &[usize], values: &Payload) {
    let (layout, dim) = (d.layout, d.dim);
    let pos = |e: usize, c: usize| layout.position(e, c, size, dim);
    match (&mut d.payload, values) {
        (Payload::F64(v), Payload::F64(src)) => {
            for (i, &e) in elems.iter().enumerate() {
                for c in 0..dim {
                    v[pos(e, c)] = src[i * dim + c];
                }
            }
        }
        (Payload::I64(v), Payload::I64(src)) => {
            for (i, &e) in elems.iter().enumerate() {
                for c in 0..dim {
                    v[pos(e, c)] = src[i * dim + c];
                }
            }
        }
        _ => unreachable!("halo payload kinds match their dat"),
    }
}

impl Rank {
    fn serve(mut self, commands: Receiver<Command>, replies: Sender<Reply>) {
        while let Ok(cmd) = commands.recv() {
            let reply = match cmd {
                Command::Run {
                    lp,
                    exchange,
                    epoch,
                    globals,
                } => Reply::Done {
                    rank: self.rank,
                    result: self.run(&lp, &exchange, epoch, globals),
                },
                Command::Fetch { dat } => {
                    let set = self.mesh.dat(dat).set;
                    let ls = &self.sets[set.index()];
                    let owned: Vec<usize> = (0..ls.l2g.len()).filter(|&e| ls.owned[e]).collect();
                    let size = self.mesh.set(set).size;
                    Reply::Fetched {
                        rank: self.rank,
                        globals: owned.iter().map(|&e| ls.l2g[e]).collect(),
                        values: read_elems(&self.mesh.dats[dat.index()], size, &owned),
                    }
                }
                Command::Shutdown => break,
            };
            if replies.send(reply).is_err() {
                break;
            }
        }
    }

    fn recv(&mut self, epoch: u64, dat: usize, from: usize, lp: &str) -> Result<Payload, ExecError> {
        if let Some(v) = self.pending.remove(&(epoch, dat, from)) {
            return Ok(v);
        }
        let deadline = Instant::now() + self.config.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(left) {
                Ok(m) if (m.epoch, m.dat, m.from) == (epoch, dat, from) => return Ok(m.values),
                Ok(m) => {
                    self.pending.insert((m.epoch, m.dat, m.from), m.values);
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ExecError::Timeout {
                        rank: self.rank,
                        lp: lp.to_owned(),
                        what: format!("halo of dat `{}` from rank {from}", self.mesh.dats[dat].name),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => return Err(ExecError::Disconnected { rank: from }),
            }
        }
    }

    fn exchange(&mut self, dats: &[DatId], epoch: u64, lp: &str) -> Result<u64, ExecError> {
        let mut messages = 0;
        let silent = self.config.fault == Some(Fault::SilentRank(self.rank));
        for &dat in dats {
            let set = self.mesh.dat(dat).set;
            let size = self.mesh.set(set).size;
            for (q, elems) in &self.sets[set.index()].exports {
                if silent {
                    continue;
                }
                let values = read_elems(&self.mesh.dats[dat.index()], size, elems);
                self.peers[*q]
                    .send(HaloMsg {
                        epoch,
                        dat: dat.index(),
                        from: self.rank,
                        values,
                    })
                    .map_err(|_| ExecError::Disconnected { rank: *q })?;
                messages += 1;
            }
        }
        for &dat in dats {
            let set = self.mesh.dat(dat).set;
            let size = self.mesh.set(set).size;
            let imports: Vec<(usize, Vec<usize>)> = self.sets[set.index()].imports.clone();
            for (q, elems) in imports {
                let values = self.recv(epoch, dat.index(), q, lp)?;
                write_elems(&mut self.mesh.dats[dat.index()], size, &elems, &values);
            }
        }
        Ok(messages)
    }

    fn run(&mut self, lp: &ParLoop, exchange: &[DatId], epoch: u64, globals: Vec<Payload>) -> Result<LoopOutcome, ExecError> {
        let t0 = Instant::now();
        let messages = self.exchange(exchange, epoch, lp.name())?;
        let comm = t0.elapsed();
        for (g, v) in self.mesh.globals.iter_mut().zip(globals) {
            g.value = v;
        }
        let t1 = Instant::now();
        let ls = &self.sets[lp.set().index()];
        let n = ls.exec_count;
        let plan = self
            .plans
            .get_or_build_range(&self.mesh, lp.signature(), n, &self.config.plan_for(lp.name()));
        let ctx = ExecCtx {
            owned: Some(&ls.owned),
            global_index: Some(&ls.l2g),
        };
        let bound = BoundLoop::new(&mut self.mesh, lp);
        let targets = bound.reduction_targets();
        let partials = bound.run_colored(&plan, self.pool.as_ref(), &ctx, None)?;
        Ok(LoopOutcome {
            partials,
            targets,
            comm,
            comp: t1.elapsed(),
            messages,
            plan: Some(plan.stats()),
        })
    }
}

fn coordinate_dat(mesh: &Mesh) -> Option<DatId> {
    mesh.dats()
        .find(|(_, d)| d.kind() == ElemKind::F64 && (2..=3).contains(&d.dim))
        .map(|(id, _)| id)
}

/// The set the partitioner splits: the set carrying coordinates, else the
/// first map target, else the first set.
fn primary_set(mesh: &Mesh) -> Option<SetId> {
    coordinate_dat(mesh)
        .map(|d| mesh.dat(d).set)
        .or_else(|| mesh.maps().next().map(|(_, m)| m.to))
        .or_else(|| mesh.sets().next().map(|(id, _)| id))
}

fn primary_assignment(mesh: &Mesh, config: &BackendConfig) -> Result<Option<Assignment>, ExecError> {
    let Some(set) = primary_set(mesh) else {
        return Ok(None);
    };
    let a = if config.kind == BackendKind::Hybrid {
        let w = hybrid_weights(config.nranks, config.class_a_ranks, config.balance)?;
        partition_weighted(mesh, set, &w)?
    } else {
        match config.partitioner {
            Partitioner::Trivial => partition_trivial(mesh, set, config.nranks)?,
            Partitioner::Rcb => {
                let coords = coordinate_dat(mesh).ok_or(crate::error::PartitionError::BadCoordinates)?;
                partition_rcb(mesh, coords, config.nranks)?
            }
        }
    };
    Ok(Some(a))
}

/// Builds the partition and halos a rank backend would use for `program`.
pub fn plan_layout(mesh: &Mesh, config: &BackendConfig, program: &[LoopSignature]) -> Result<RankLayout, ExecError> {
    let d = match primary_assignment(mesh, config)? {
        Some(a) => Decomposition::derive(mesh, a, program)?,
        None => Decomposition::new(mesh, config.nranks),
    };
    Ok(build_halos(mesh, &d, program)?)
}

fn local_part(mesh: &Mesh, layout: &RankLayout, rank: usize) -> (Mesh, Vec<LocalSet>) {
    let mut g2l_all = Vec::new();
    let mut sets = Vec::new();
    let mut set_decls = Vec::new();
    for (id, decl) in mesh.sets() {
        let p = layout.set_part(rank, id);
        let mut exec: Vec<usize> = p.owned.iter().chain(&p.exec_halo).copied().collect();
        exec.sort_unstable();
        let exec_count = exec.len();
        let mut l2g = exec;
        l2g.extend(&p.nonexec_halo);
        let mut g2l = vec![usize::MAX; decl.size];
        for (l, &g) in l2g.iter().enumerate() {
            g2l[g] = l;
        }
        let mut owned = vec![false; l2g.len()];
        for &g in &p.owned {
            owned[g2l[g]] = true;
        }
        let local = |lists: &[(usize, Vec<usize>)]| -> Vec<(usize, Vec<usize>)> {
            lists
                .iter()
                .map(|(q, v)| (*q, v.iter().map(|&g| g2l[g]).collect()))
                .collect()
        };
        sets.push(LocalSet {
            exec_count,
            owned,
            imports: local(&p.imports),
            exports: local(&p.exports),
            l2g,
        });
        set_decls.push(SetDecl {
            name: decl.name.clone(),
            size: sets.last().map_or(0, |s: &LocalSet| s.l2g.len()),
        });
        g2l_all.push(g2l);
    }
    let maps = mesh
        .maps()
        .map(|(_, m)| {
            let from = &sets[m.from.index()];
            let g2l = &g2l_all[m.to.index()];
            let mut table = Vec::with_capacity(from.l2g.len() * m.arity);
            for &g in &from.l2g {
                table.extend(m.row(g).iter().map(|&t| g2l[t]));
            }
            MapDecl {
                name: m.name.clone(),
                from: m.from,
                to: m.to,
                arity: m.arity,
                table,
            }
        })
        .collect();
    let dats = mesh
        .dats()
        .map(|(_, d)| {
            let ls = &sets[d.set.index()];
            let aos = d.to_aos();
            let dim = d.dim;
            let payload = aos.gather(ls.l2g.iter().flat_map(|&g| (0..dim).map(move |c| g * dim + c)));
            let mut local = DatDecl {
                name: d.name.clone(),
                set: d.set,
                dim,
                layout: Layout::Aos,
                payload,
            };
            // relayout reads the set size from the payload length
            local.relayout(d.layout);
            local
        })
        .collect();
    let globals = mesh.globals().map(|(_, g)| g.clone()).collect();
    let local = Mesh::from_parts(set_decls, maps, dats, globals, mesh.constants().clone());
    (local, sets)
}

/// Ranks (or hybrid two-class ranks) coordinated by the calling thread.
pub struct RanksBackend {
    kind: BackendKind,
    mesh: Mesh,
    layout: RankLayout,
    config: BackendConfig,
    commands: Vec<Sender<Command>>,
    replies: Receiver<Reply>,
    handles: Vec<JoinHandle<()>>,
    /// Halo copies out of date on some rank.
    dirty: Vec<bool>,
    /// Host copy out of date.
    stale: Vec<bool>,
    epoch: u64,
    perf: PerfLog,
    bytes: HashMap<String, u64>,
    busy: Vec<Duration>,
    wall: Duration,
}

impl RanksBackend {
    pub fn new(mut mesh: Mesh, config: &BackendConfig, program: &[LoopSignature]) -> Result<Self, ExecError> {
        config.validate()?;
        mesh.freeze();
        for sig in program {
            validate(&mesh, sig)?;
        }
        let layout = plan_layout(&mesh, config, program)?;
        let nranks = config.nranks;
        let (reply_tx, replies) = mpsc::channel();
        let mut inboxes = Vec::new();
        let mut peers = Vec::new();
        for _ in 0..nranks {
            let (tx, rx) = mpsc::channel();
            peers.push(tx);
            inboxes.push(rx);
        }
        let mut commands = Vec::new();
        let mut handles = Vec::new();
        for (rank, inbox) in inboxes.into_iter().enumerate() {
            let (local, sets) = local_part(&mesh, &layout, rank);
            let width = match config.kind {
                BackendKind::Hybrid if rank < config.class_a_ranks => config.class_a_threads,
                BackendKind::Hybrid => config.class_b_threads,
                _ => config.nthreads,
            };
            let pool = if width > 1 { Some(build_pool(width)?) } else { None };
            let worker = Rank {
                rank,
                mesh: local,
                sets,
                pool,
                plans: PlanCache::new(),
                config: config.clone(),
                inbox,
                peers: peers.clone(),
                pending: HashMap::new(),
            };
            let (tx, rx) = mpsc::channel();
            let reply = reply_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("rank-{rank}"))
                .spawn(move || worker.serve(rx, reply))
                .map_err(|e| ExecError::Config(format!("spawning rank {rank}: {e}")))?;
            commands.push(tx);
            handles.push(handle);
        }
        let ndats = mesh.dats().count();
        Ok(RanksBackend {
            kind: config.kind,
            mesh,
            layout,
            config: config.clone(),
            commands,
            replies,
            handles,
            dirty: vec![false; ndats],
            stale: vec![false; ndats],
            epoch: 0,
            perf: PerfLog::new(),
            bytes: HashMap::new(),
            busy: vec![Duration::ZERO; nranks],
            wall: Duration::ZERO,
        })
    }

    pub fn layout(&self) -> &RankLayout {
        &self.layout
    }

    fn broadcast(&self, make: impl Fn() -> Command) -> Result<(), ExecError> {
        for (rank, tx) in self.commands.iter().enumerate() {
            tx.send(make()).map_err(|_| ExecError::Disconnected { rank })?;
        }
        Ok(())
    }

    fn next_reply(&self) -> Result<Reply, ExecError> {
        loop {
            match self.replies.recv_timeout(self.config.timeout) {
                Ok(r) => return Ok(r),
                Err(RecvTimeoutError::Timeout) => {
                    if let Some(rank) = self.handles.iter().position(|h| h.is_finished()) {
                        return Err(ExecError::Disconnected { rank });
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(ExecError::Disconnected { rank: 0 }),
            }
        }
    }

    fn sync_dat(&mut self, dat: DatId) -> Result<(), ExecError> {
        if !self.stale[dat.index()] {
            return Ok(());
        }
        self.broadcast(|| Command::Fetch { dat })?;
        let d = self.mesh.dat(dat);
        let dim = d.dim;
        let size = self.mesh.set(d.set).size;
        let mut full = Payload::zeros(d.kind(), size * dim);
        for _ in 0..self.config.nranks {
            match self.next_reply()? {
                Reply::Fetched { globals, values, .. } => match (&mut full, &values) {
                    (Payload::F64(dst), Payload::F64(src)) => {
                        for (i, &g) in globals.iter().enumerate() {
                            dst[g * dim..(g + 1) * dim].copy_from_slice(&src[i * dim..(i + 1) * dim]);
                        }
                    }
                    (Payload::I64(dst), Payload::I64(src)) => {
                        for (i, &g) in globals.iter().enumerate() {
                            dst[g * dim..(g + 1) * dim].copy_from_slice(&src[i * dim..(i + 1) * dim]);
                        }
                    }
                    _ => unreachable!("fetched kinds match their dat"),
                },
                Reply::Done { rank, .. } => {
                    return Err(ExecError::Config(format!("rank {rank} answered out of turn")));
                }
            }
        }
        self.mesh.store(dat, full)?;
        self.stale[dat.index()] = false;
        Ok(())
    }

    fn shutdown(&mut self) {
        for tx in &self.commands {
            let _ = tx.send(Command::Shutdown);
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for RanksBackend {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Backend for RanksBackend {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn par_loop(&mut self, lp: &ParLoop) -> Result<LoopTiming, ExecError> {
        let sig = lp.signature();
        validate(&self.mesh, sig)?;
        self.layout.covers(sig).map_err(|m| ExecError::NotCovered {
            lp: sig.name.clone(),
            map: self.mesh.map(m).name.clone(),
        })?;
        let bytes = loop_bytes(&mut self.bytes, &self.mesh, lp);
        let mut exchange: Vec<DatId> = Vec::new();
        for a in &sig.args {
            if let Some(d) = a.dat() {
                if a.mode.reads() && self.dirty[d.index()] && !exchange.contains(&d) {
                    exchange.push(d);
                }
            }
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let globals: Vec<Payload> = self.mesh.globals().map(|(_, g)| g.value().clone()).collect();
        let start = Instant::now();
        self.broadcast(|| Command::Run {
            lp: lp.clone(),
            exchange: exchange.clone(),
            epoch,
            globals: globals.clone(),
        })?;
        let nranks = self.config.nranks;
        let mut outcomes: Vec<Option<Result<LoopOutcome, ExecError>>> = (0..nranks).map(|_| None).collect();
        for _ in 0..nranks {
            match self.next_reply()? {
                Reply::Done { rank, result } => outcomes[rank] = Some(result),
                Reply::Fetched { rank, .. } => {
                    return Err(ExecError::Config(format!("rank {rank} answered out of turn")));
                }
            }
        }
        let wall = start.elapsed();
        let outcomes: Vec<LoopOutcome> = outcomes
            .into_iter()
            .map(|o| o.expect("every rank replied"))
            .collect::<Result<_, _>>()?;
        for d in &exchange {
            self.dirty[d.index()] = false;
        }

        let targets = outcomes[0].targets.clone();
        let combined: Vec<Payload> = targets
            .iter()
            .enumerate()
            .map(|(i, &(g, mode))| {
                let v = self.mesh.global(GlobalId(g)).value();
                let mut acc = identity(mode, v.kind(), v.len());
                for o in &outcomes {
                    combine_into(&mut acc, &o.partials[i], mode);
                }
                acc
            })
            .collect();
        apply_reductions(&mut self.mesh, &targets, &combined);

        for a in &sig.args {
            if let (Some(d), true) = (a.dat(), a.mode.writes()) {
                self.dirty[d.index()] = true;
                self.stale[d.index()] = true;
            }
        }

        let n = nranks as u32;
        let comm = outcomes.iter().map(|o| o.comm).sum::<Duration>() / n;
        let comp = outcomes.iter().map(|o| o.comp).sum::<Duration>() / n;
        for (b, o) in self.busy.iter_mut().zip(&outcomes) {
            *b += o.comp;
        }
        self.wall += wall;
        let timing = LoopTiming {
            wall,
            comm,
            comp,
            messages: outcomes.iter().map(|o| o.messages).sum(),
            plan: outcomes[0].plan.clone(),
        };
        self.perf.record_loop(lp.name(), bytes, timing.clone());
        Ok(timing)
    }

    fn fetch(&mut self, dat: DatId) -> Result<Payload, ExecError> {
        self.sync_dat(dat)?;
        Ok(self.mesh.fetch(dat))
    }

    fn global(&self, id: GlobalId) -> &Payload {
        self.mesh.global(id).value()
    }

    fn set_global(&mut self, id: GlobalId, value: Payload) -> Result<(), ExecError> {
        check_global(&self.mesh, id, &value)?;
        self.mesh.set_global(id, value)?;
        Ok(())
    }

    fn perf(&self) -> &PerfLog {
        &self.perf
    }

    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn halo_stats(&self) -> Option<HaloStatsRow> {
        Some(self.layout.halo_stats())
    }

    fn class_timing(&self) -> Vec<ClassTiming> {
        let wall = self.wall.as_secs_f64();
        let class = |name: &str, ranks: Vec<usize>| {
            let busy = ranks.iter().map(|&r| self.busy[r].as_secs_f64()).sum::<f64>() / ranks.len().max(1) as f64;
            ClassTiming {
                class: name.to_owned(),
                ranks,
                busy_s: busy,
                wait_s: (wall - busy).max(0.0),
            }
        };
        let n = self.config.nranks;
        if self.kind == BackendKind::Hybrid {
            let a = self.config.class_a_ranks;
            vec![class("A", (0..a).collect()), class("B", (a..n).collect())]
        } else {
            vec![class("ranks", (0..n).collect())]
        }
    }

    fn finish(mut self: Box<Self>) -> Result<Mesh, ExecError> {
        let dats: Vec<DatId> = self.mesh.dats().map(|(id, _)| id).collect();
        for d in dats {
            self.sync_dat(d)?;
        }
        self.shutdown();
        Ok(std::mem::take(&mut self.mesh))
    }
}
