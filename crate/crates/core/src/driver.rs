//! End-to-end runs: build or load a mesh, set up an app, optionally
//! renumber and tune, execute on a backend and assemble the report.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::apps::{gen_mesh, shuffle_mesh, CellArea, Diffusion};
use crate::error::{Error, ExecError};
use crate::exec::{launch, plan_layout, Backend, BackendConfig, BackendKind};
use crate::mesh::io::read_mesh;
use crate::mesh::{DatId, ElemKind, Mesh, Payload};
use crate::par_loop::LoopSignature;
use crate::partition::{halo_stats, HaloStatsRow, Partitioner};
use crate::perf::{Report, ReportMeta};
use crate::renumber::{renumber_mesh, Renumbering};
use crate::tuner::{self, Program, TuningTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppKind {
    CellArea,
    Diffusion,
}

impl AppKind {
    pub fn name(self) -> &'static str {
        match self {
            AppKind::CellArea => "cell-area",
            AppKind::Diffusion => "diffusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMode {
    Block,
    Balance,
    Both,
}

impl std::str::FromStr for TuneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "block" => Ok(TuneMode::Block),
            "balance" => Ok(TuneMode::Balance),
            "both" => Ok(TuneMode::Both),
            other => Err(format!("unknown tune mode `{other}`")),
        }
    }
}

impl TuneMode {
    fn block(self) -> bool {
        matches!(self, TuneMode::Block | TuneMode::Both)
    }

    fn balance(self) -> bool {
        matches!(self, TuneMode::Balance | TuneMode::Both)
    }
}

/// Where the mesh comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Generated(usize),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub app: AppKind,
    pub kind: ElemKind,
    pub mesh: MeshSource,
    pub steps: usize,
    pub dt: Option<f64>,
    /// Randomly renumber the mesh with this seed before anything else.
    pub shuffle: Option<u64>,
    pub renumber: bool,
    pub backend: BackendConfig,
    pub tune: Option<TuneMode>,
    pub block_candidates: Vec<usize>,
    pub balance_candidates: Vec<f64>,
    /// Previously tuned parameters applied before the run.
    pub table: Option<TuningTable>,
}

impl RunSpec {
    pub fn new(app: AppKind, kind: ElemKind, n: usize, backend: BackendConfig) -> Self {
        RunSpec {
            app,
            kind,
            mesh: MeshSource::Generated(n),
            steps: 10,
            dt: None,
            shuffle: None,
            renumber: false,
            backend,
            tune: None,
            block_candidates: tuner::default_block_candidates(),
            balance_candidates: tuner::default_balance_candidates(),
            table: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum App {
    CellArea(CellArea),
    Diffusion(Diffusion),
}

/// A prepared app and its mesh; replayable on any backend.
#[derive(Debug, Clone)]
pub struct AppProgram {
    pub mesh: Mesh,
    pub app: App,
    pub steps: usize,
}

impl AppProgram {
    pub fn setup(mut mesh: Mesh, app: AppKind, kind: ElemKind, steps: usize, dt: Option<f64>) -> Result<Self, Error> {
        let app = match app {
            AppKind::CellArea => App::CellArea(CellArea::setup(&mut mesh, kind)?),
            AppKind::Diffusion => {
                let (init, bnd) = crate::apps::diffusion::harmonic_x();
                App::Diffusion(Diffusion::setup(&mut mesh, kind, init, bnd, dt)?)
            }
        };
        Ok(AppProgram { mesh, app, steps })
    }

    /// Runs the program and returns the diffusion residual history (empty
    /// for cell-area).
    pub fn execute(&self, backend: &mut dyn Backend) -> Result<Vec<f64>, ExecError> {
        match &self.app {
            App::CellArea(a) => a.run(backend).map(|_| Vec::new()),
            App::Diffusion(d) => d.run(backend, self.steps),
        }
    }

    fn loop_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in self.signatures() {
            if !names.contains(&s.name) {
                names.push(s.name);
            }
        }
        names
    }
}

impl Program for AppProgram {
    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn signatures(&self) -> Vec<LoopSignature> {
        match &self.app {
            App::CellArea(a) => a.signatures(),
            App::Diffusion(d) => d.signatures(),
        }
    }

    fn run(&self, backend: &mut dyn Backend) -> Result<(), ExecError> {
        self.execute(backend).map(|_| ())
    }

    fn outputs(&self) -> Vec<DatId> {
        match &self.app {
            App::CellArea(a) => vec![a.areac, a.arean],
            App::Diffusion(d) => vec![d.u],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningOutcome {
    pub block: Option<tuner::BlockTuning>,
    pub balance: Option<tuner::BalanceTuning>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    /// Output dats by name, in the numbering of the loaded mesh.
    pub outputs: Vec<(String, Payload)>,
    pub residuals: Vec<f64>,
    pub table: Option<TuningTable>,
    pub tuning: Option<TuningOutcome>,
}

impl RunOutput {
    pub fn output(&self, name: &str) -> Option<&Payload> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }
}

pub fn load_mesh(source: &MeshSource, shuffle: Option<u64>) -> Result<Mesh, Error> {
    let mut mesh = match source {
        MeshSource::Generated(n) => {
            if *n == 0 {
                return Err(ExecError::Config("--n must be at least 1".into()).into());
            }
            gen_mesh(*n).mesh
        }
        MeshSource::File(path) => read_mesh(path)?,
    };
    if let Some(seed) = shuffle {
        shuffle_mesh(&mut mesh, seed)?;
    }
    Ok(mesh)
}

fn restore(renumbering: &Renumbering, mesh: &Mesh, dat: DatId, values: Payload) -> Payload {
    let d = mesh.dat(dat);
    match values {
        Payload::F64(v) => Payload::F64(renumbering.restore(d.set, &v, d.dim)),
        Payload::I64(v) => Payload::I64(renumbering.restore(d.set, &v, d.dim)),
    }
}

/// Runs one app end to end.
pub fn run(spec: &RunSpec) -> Result<RunOutput, Error> {
    spec.backend.validate()?;
    let mesh = load_mesh(&spec.mesh, spec.shuffle)?;
    let mut program = AppProgram::setup(mesh, spec.app, spec.kind, spec.steps, spec.dt)?;
    let renumbering = if spec.renumber {
        renumber_mesh(&mut program.mesh)?
    } else {
        Renumbering::default()
    };
    program.mesh.freeze();

    let mut config = spec.backend.clone();
    if let Some(table) = &spec.table {
        table.apply(&mut config, &program.loop_names());
    }
    let (table, tuning) = match spec.tune {
        Some(mode) => {
            let mut table = spec.table.clone().unwrap_or_default();
            let block = if mode.block() && config.kind != BackendKind::Serial {
                let t = tuner::tune_block_size(&program, &spec.block_candidates, &config)?;
                table.record_blocks(&t, &config);
                config.block_overrides = t.chosen.clone().into_iter().collect();
                Some(t)
            } else {
                None
            };
            let balance = if mode.balance() && config.kind == BackendKind::Hybrid {
                let t = tuner::tune_balance(&program, &spec.balance_candidates, &config)?;
                table.set_balance(config.kind, config.nranks, t.best);
                config.balance = t.best;
                Some(t)
            } else {
                None
            };
            (Some(table), Some(TuningOutcome { block, balance }))
        }
        None => (None, None),
    };

    let mut backend = launch(program.mesh.clone(), &config, &program.signatures())?;
    let start = Instant::now();
    let residuals = program.execute(backend.as_mut())?;
    let total = start.elapsed();
    let mut outputs = Vec::new();
    for dat in program.outputs() {
        let values = backend.fetch(dat)?;
        outputs.push((
            program.mesh.dat(dat).name.clone(),
            restore(&renumbering, &program.mesh, dat, values),
        ));
    }

    let meta = ReportMeta {
        app: spec.app.name().to_owned(),
        backend: config.kind.name().to_owned(),
        nthreads: config.nthreads,
        nranks: match config.kind {
            BackendKind::Ranks | BackendKind::Hybrid => config.nranks,
            _ => 1,
        },
        block_size: config.block_size_label(),
        partitioner: config.partitioner.name().to_owned(),
        renumber: spec.renumber,
        notes: Vec::new(),
    };
    let mut report = Report::new(meta, backend.perf(), total);
    report.halo_stats = backend.halo_stats().into_iter().collect();
    report.renumber = renumbering.rows.clone();
    report.timing.classes = backend.class_timing();
    if let Some(t) = &tuning {
        report.tuning = Some(serde_json::json!({
            "table": table,
            "block_flagged": t.block.as_ref().map(|b| b.flagged.clone()),
            "balance_flagged": t.balance.as_ref().map(|b| b.flagged),
        }));
        report.timing.sweeps = Some(serde_json::json!({
            "block": t.block.as_ref().map(|b| &b.sweep),
            "balance": t.balance.as_ref().map(|b| &b.sweep),
        }));
    }
    backend.finish()?;
    Ok(RunOutput {
        report,
        outputs,
        residuals,
        table,
        tuning,
    })
}

/// Mesh carrying the dats of both apps, with the union of their loops.
pub fn combined_program(mesh: Mesh) -> Result<(Mesh, Vec<LoopSignature>), Error> {
    let a = AppProgram::setup(mesh, AppKind::CellArea, ElemKind::F64, 1, None)?;
    let mut signatures = a.signatures();
    let d = AppProgram::setup(a.mesh, AppKind::Diffusion, ElemKind::F64, 1, None)?;
    signatures.extend(d.signatures());
    Ok((d.mesh, signatures))
}

/// Halo statistics of the combined program for each rank count.
pub fn halo_table(mesh: &Mesh, nranks: &[usize], partitioner: Partitioner) -> Result<Vec<HaloStatsRow>, Error> {
    let (mesh, signatures) = combined_program(mesh.clone())?;
    let mut layouts = Vec::with_capacity(nranks.len());
    for &n in nranks {
        let config = BackendConfig::ranks(n, partitioner);
        config.validate()?;
        layouts.push(plan_layout(&mesh, &config, &signatures)?);
    }
    Ok(halo_stats(&layouts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_area_serial_report() {
        let spec = RunSpec::new(AppKind::CellArea, ElemKind::F64, 4, BackendConfig::serial());
        let out = run(&spec).unwrap();
        let arean = out.output("arean").unwrap().as_f64().unwrap();
        assert!((arean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let names: Vec<&str> = out.report.loops.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["cell_area", "distribute"]);
    }

    #[test]
    fn renumbered_run_restores_numbering() {
        let base = RunSpec::new(AppKind::CellArea, ElemKind::I64, 5, BackendConfig::serial());
        let mut shuffled = base.clone();
        shuffled.shuffle = Some(3);
        let mut renumbered = shuffled.clone();
        renumbered.renumber = true;
        let a = run(&shuffled).unwrap();
        let b = run(&renumbered).unwrap();
        assert_eq!(a.output("arean"), b.output("arean"));
        assert_eq!(b.report.renumber.len(), 3);
        assert!(b.report.renumber.iter().all(|r| r.after.mean_span <= r.before.mean_span));
    }

    #[test]
    fn halo_rows_per_rank_count() {
        let rows = halo_table(&gen_mesh(8).mesh, &[1, 2, 4], Partitioner::Rcb).unwrap();
        assert_eq!(rows.iter().map(|r| r.nranks).collect::<Vec<_>>(), [1, 2, 4]);
        assert_eq!(rows[0].pct_halo, 0.0);
        assert!(rows[1].pct_halo > 0.0);
    }

    #[test]
    fn tuning_records_table() {
        let mut spec = RunSpec::new(AppKind::CellArea, ElemKind::I64, 4, BackendConfig::threads(2, 64));
        spec.tune = Some(TuneMode::Block);
        spec.block_candidates = vec![32, 64];
        let out = run(&spec).unwrap();
        let table = out.table.unwrap();
        let bs = table.block("distribute", BackendKind::Threads, 1).unwrap();
        assert!([32, 64, crate::plan::DEFAULT_BLOCK_SIZE].contains(&bs));
    }
}
