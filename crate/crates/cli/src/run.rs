//! Task dispatch, output files and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nec_core::cmf::ti_evolve;
use nec_core::icmf::{
    fit_linear_law, fit_velocity, init_island, relaxation_time, write_map_csv, IslandOptions, IslandSpec, LatticeModel,
};
use nec_core::stability::{k_axis_with, spectrum_symmetry_check, write_mu_csv, BlochSystem, PhaseConvention};
use nec_core::sweep::{
    column_boundary, fit_boundary, phase_diagram, transition_order_probe, PhaseDiagram, SweepSettings,
};
use nec_core::{ClusterOperatorSet, CmfModel, DensityMatrix, Prescription};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{parse_config_for, Initial, KGrid, RunConfig, SchemaError, SchemaErrors, Task};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n{0}")]
    Schema(#[from] SchemaErrors),
    #[error(transparent)]
    Core(#[from] nec_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("could not start the worker pool: {0}")]
    Pool(String),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Schema(_) => "schema",
            RunError::Core(_) => "computation",
            RunError::Io { .. } => "io",
            RunError::Input { .. } => "input",
            RunError::Pool(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable form written next to the outputs and to stderr.
    pub fn report(&self, task: Task) -> Value {
        let errors: Vec<SchemaError> = match self {
            RunError::Schema(e) => e.0.clone(),
            other => vec![SchemaError {
                path: String::new(),
                message: other.to_string(),
            }],
        };
        json!({
            "status": "error",
            "task": task.name(),
            "kind": self.kind(),
            "errors": errors,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub task: Task,
    pub version: &'static str,
    /// SHA-256 of the resolved configuration echo.
    pub config_hash: String,
    pub config: String,
    pub prescription: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub converged: BTreeMap<String, bool>,
    pub all_converged: bool,
    pub metadata: BTreeMap<String, Value>,
}

/// Command-line request.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub task: Task,
    pub config: PathBuf,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub prescription: Option<Prescription>,
}

/// Output directory a failed invocation reports into.
pub fn fallback_out(inv: &Invocation) -> PathBuf {
    inv.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Collects output files in creation order; all writes go through here.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write<F>(&mut self, name: &str, f: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

#[derive(Default)]
struct Summary {
    converged: BTreeMap<String, bool>,
    metadata: BTreeMap<String, Value>,
}

/// Parses the configuration, runs the task and writes all artifacts.
pub fn invoke(inv: &Invocation) -> Result<Manifest, RunError> {
    let text = fs::read_to_string(&inv.config).map_err(io_err(&inv.config))?;
    let mut cfg = parse_config_for(&text, Some(inv.task))?;
    cfg.task = Some(inv.task);
    if let Some(p) = inv.prescription {
        cfg.model.prescription = p;
    }
    let dir = inv
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = inv.threads.or(cfg.threads) {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| RunError::Pool(e.to_string()))?;

    let start = Instant::now();
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let echo = cfg.to_ini();
    let config_name = format!("{}.config.ini", inv.task.name());
    out.write(&config_name, |w| w.write_all(echo.as_bytes()))?;
    out.files.clear();

    let summary = pool.install(|| match inv.task {
        Task::Steady => steady(&cfg, &mut out),
        Task::Sweep => sweep(&cfg, &mut out, false),
        Task::PhaseDiagram => sweep(&cfg, &mut out, true),
        Task::Stability => stability(&cfg, &mut out),
        Task::Island => island(&cfg, &mut out),
        Task::Fit => fit(&cfg, &mut out),
    })?;

    let manifest = Manifest {
        task: inv.task,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: format!("sha256:{:x}", Sha256::digest(echo.as_bytes())),
        config: config_name,
        prescription: cfg.model.prescription.to_string(),
        threads: pool.current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: out.files,
        all_converged: summary.converged.values().all(|&c| c),
        converged: summary.converged,
        metadata: summary.metadata,
    };
    let path = dir.join(format!("{}.manifest.json", inv.task.name()));
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, body + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

fn cmf_model(cfg: &RunConfig) -> Result<CmfModel, RunError> {
    let ops = ClusterOperatorSet::build(&cfg.params(), cfg.model.ell)?;
    Ok(CmfModel::new(ops, cfg.model.prescription))
}

fn initial_state(ell: usize, initial: Initial) -> DensityMatrix {
    match initial {
        Initial::Up => DensityMatrix::polarized(ell, true),
        Initial::Down => DensityMatrix::polarized(ell, false),
        Initial::Mixed => DensityMatrix::maximally_mixed(1 << (ell * ell)),
    }
}

fn steady(cfg: &RunConfig, out: &mut Outputs) -> Result<Summary, RunError> {
    let model = cmf_model(cfg)?;
    let m = &cfg.model;
    let res = ti_evolve(&model, &initial_state(m.ell, cfg.initial), &cfg.steady_options())?;
    out.write("steady.csv", |w| {
        writeln!(
            w,
            "model,ell,omega,T,h,prescription,initial,mz,purity,converged,time,residual"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.kind,
            m.ell,
            m.omega,
            m.t,
            m.h,
            m.prescription,
            match cfg.initial {
                Initial::Up => "up",
                Initial::Down => "down",
                Initial::Mixed => "mixed",
            },
            res.state.magnetization(),
            res.state.purity(),
            res.converged,
            res.time,
            res.residual
        )
    })?;
    let mut s = Summary::default();
    s.converged.insert("steady".into(), res.converged);
    s.metadata
        .insert("min_eigenvalue".into(), json!(res.state.min_eigenvalue()));
    Ok(s)
}

fn sweep_settings(cfg: &RunConfig) -> SweepSettings {
    SweepSettings {
        ell: cfg.model.ell,
        prescription: cfg.model.prescription,
        steady: cfg.steady_options(),
    }
}

fn sweep(cfg: &RunConfig, out: &mut Outputs, analyze: bool) -> Result<Summary, RunError> {
    let settings = sweep_settings(cfg);
    let params = cfg.params();
    let pd = phase_diagram(&params, &cfg.sweep.temperatures, cfg.sweep.dh, &settings)?;
    let name = if analyze { "phase_diagram.csv" } else { "sweep.csv" };
    out.write(name, |w| pd.write_csv(w))?;
    let mut s = Summary::default();
    for (t, row) in pd.temperatures.iter().zip(&pd.rows) {
        s.converged.insert(format!("T={t}"), row.all_converged());
    }
    s.metadata.insert("threshold".into(), json!(cfg.sweep.threshold));
    if analyze {
        boundary_outputs(cfg, &pd, out, &mut s)?;
        transition_outputs(cfg, out, &mut s)?;
    }
    Ok(s)
}

fn boundary_outputs(cfg: &RunConfig, pd: &PhaseDiagram, out: &mut Outputs, s: &mut Summary) -> Result<(), RunError> {
    let threshold = cfg.sweep.threshold;
    let points = pd.boundary_by_column(threshold);
    out.write("boundary.csv", |w| {
        writeln!(w, "h,T_c")?;
        for (h, t) in &points {
            writeln!(w, "{h},{t}")?;
        }
        Ok(())
    })?;
    // The bistability threshold is a declared choice; report how much the
    // fitted constants move with it.
    let mut thresholds = vec![0.02, threshold, 0.1];
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut rows = Vec::new();
    let mut failures = serde_json::Map::new();
    for th in thresholds {
        match fit_boundary(&pd.boundary_by_column(th)) {
            Ok(f) => rows.push((th, f)),
            Err(e) => {
                failures.insert(th.to_string(), json!(e.to_string()));
            }
        }
    }
    out.write("boundary_fit.csv", |w| {
        writeln!(w, "threshold,t_star,r,t_c0,t_star_err,r_err,residual,points")?;
        for (th, f) in &rows {
            writeln!(
                w,
                "{th},{},{},{},{},{},{},{}",
                f.t_star,
                f.r,
                f.critical_amplitude(0.0),
                f.t_star_err,
                f.r_err,
                f.residual,
                f.points
            )?;
        }
        Ok(())
    })?;
    if !failures.is_empty() {
        s.metadata
            .insert("boundary_fit_failures".into(), Value::Object(failures));
    }
    Ok(())
}

fn transition_outputs(cfg: &RunConfig, out: &mut Outputs, s: &mut Summary) -> Result<(), RunError> {
    if cfg.sweep.order_biases.is_empty() {
        return Ok(());
    }
    let settings = sweep_settings(cfg);
    let params = cfg.params();
    let probes = cfg
        .sweep
        .order_biases
        .iter()
        .map(|&h| {
            transition_order_probe(
                &params,
                h,
                &cfg.sweep.temperatures,
                cfg.sweep.order_resolution,
                cfg.sweep.dh,
                &settings,
            )
            .map(|p| (h, p))
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.write("transition_order.csv", |w| {
        writeln!(w, "h,T,dmz,converged,order")?;
        for (h, p) in &probes {
            for (t, d, c) in &p.points {
                writeln!(w, "{h},{t},{d},{c},{:?}", p.order)?;
            }
        }
        Ok(())
    })?;
    for (h, p) in &probes {
        s.converged.insert(format!("order h={h}"), p.points.iter().all(|q| q.2));
        s.metadata
            .insert(format!("order h={h}"), json!(format!("{:?}", p.order)));
    }
    Ok(())
}

fn stability(cfg: &RunConfig, out: &mut Outputs) -> Result<Summary, RunError> {
    let model = cmf_model(cfg)?;
    let st = &cfg.stability;
    let res = ti_evolve(&model, &initial_state(cfg.model.ell, st.branch), &cfg.steady_options())?;
    let mut sys = BlochSystem::build(&model, &res.state)?.with_convention(st.convention);
    if !st.backaction {
        sys = sys.without_backaction();
    }
    let axis = k_axis_with(cfg.model.ell, st.k_points);
    let ks: Vec<(f64, f64)> = match st.grid {
        KGrid::Line => axis.iter().map(|&k| (k, 0.0)).collect(),
        KGrid::Plane => axis
            .iter()
            .flat_map(|&ky| axis.iter().map(move |&kx| (kx, ky)))
            .collect(),
    };
    let mu = sys.mu_grid(&ks);
    let label = cfg.model.prescription.to_string();
    out.write("stability.csv", |w| write_mu_csv(w, &ks, &mu, &label))?;

    let probe = ks[ks.len() / 3];
    let symmetric = spectrum_symmetry_check(&sys.matrix(probe), &sys.matrix((-probe.0, -probe.1)), 1e-8);
    let mut s = Summary::default();
    s.converged.insert("steady".into(), res.converged);
    s.converged.insert("spectrum_symmetry".into(), symmetric);
    s.metadata.insert("steady_mz".into(), json!(res.state.magnetization()));
    s.metadata.insert("backaction".into(), json!(st.backaction));
    let convention = match st.convention {
        PhaseConvention::ClusterUnits => "cluster",
        PhaseConvention::LatticeUnits => "lattice",
    };
    s.metadata.insert("convention".into(), json!(convention));
    s.metadata.insert("rank_one_terms".into(), json!(sys.terms.len()));
    s.metadata.insert(
        "mu_max".into(),
        json!(mu.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    );
    Ok(s)
}

fn island(cfg: &RunConfig, out: &mut Outputs) -> Result<Summary, RunError> {
    let is = &cfg.island;
    let ell = cfg.model.ell;
    let lattice = LatticeModel::new(cmf_model(cfg)?, is.l / ell, is.boundary);
    let mut steady = cfg.steady_options();
    steady.integrator.rtol = is.rtol;
    let opts = IslandOptions {
        steady,
        stride: is.stride,
        maps: is.maps,
    };
    let mut sizes = is.ell_down.clone();
    sizes.push(0);
    sizes.sort_unstable();
    sizes.dedup();
    let runs = sizes
        .par_iter()
        .map(|&m| {
            let state = init_island(
                is.l,
                ell,
                IslandSpec {
                    ell_down: m,
                    island_up: is.island_up,
                },
            )?;
            lattice.evolve_island(&state, &opts)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let side = is.l / ell;
    let mut taus = Vec::new();
    for (&m, traj) in sizes.iter().zip(&runs) {
        out.write(&format!("island_l{m}.csv"), |w| traj.write_csv(w))?;
        for (k, (_, map)) in traj.maps.iter().enumerate() {
            out.write(&format!("island_l{m}_map{k}.csv"), |w| write_map_csv(w, side, map))?;
        }
        taus.push(relaxation_time(&traj.times, &traj.mz, traj.converged, is.eps).ok());
    }
    let baseline = taus[0];
    out.write("taus.csv", |w| {
        writeln!(w, "ell_down,tau,tau_rel,final_mz,final_time,converged")?;
        for ((m, traj), tau) in sizes.iter().zip(&runs).zip(&taus) {
            let (a, b) = match (tau, baseline) {
                (Some(t), Some(b)) => (t.to_string(), (t - b).to_string()),
                (Some(t), None) => (t.to_string(), String::new()),
                _ => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{m},{a},{b},{},{},{}",
                traj.final_magnetization(),
                traj.final_time,
                traj.converged
            )?;
        }
        Ok(())
    })?;

    let mut s = Summary::default();
    for (m, traj) in sizes.iter().zip(&runs) {
        s.converged.insert(format!("ell_down={m}"), traj.converged);
        s.metadata
            .insert(format!("final_mz ell_down={m}"), json!(traj.final_magnetization()));
    }
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .zip(&taus)
        .filter(|(&m, _)| m > 0)
        .filter_map(|(&m, t)| Some((m as f64, (*t)? - baseline?)))
        .collect();
    if points.len() >= 3 {
        s.metadata.insert(
            "velocity".into(),
            match fit_velocity(&points) {
                Ok(f) => json!({"v": f.v, "v_err": f.v_err, "r2": f.line.r2}),
                Err(e) => json!(e.to_string()),
            },
        );
    }
    Ok(s)
}

/// Rows of a CSV file restricted to `columns`, parsed with `parse`.
fn read_columns<T>(path: &Path, columns: &[&str], parse: impl Fn(&[&str]) -> Option<T>) -> Result<Vec<T>, RunError> {
    let input = |message: String| RunError::Input {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input(e.to_string()))?;
    let headers = reader.headers().map_err(|e| input(e.to_string()))?.clone();
    let idx = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| input(format!("missing column '{c}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input(e.to_string()))?;
        let fields: Vec<&str> = idx.iter().map(|&i| record.get(i).unwrap_or("")).collect();
        if let Some(v) = parse(&fields) {
            rows.push(v);
        } else if fields.iter().any(|f| !f.is_empty()) {
            return Err(input(format!("row {}: cannot parse {:?}", line + 2, fields)));
        }
    }
    if rows.is_empty() {
        return Err(input("no usable rows".into()));
    }
    Ok(rows)
}

fn fit(cfg: &RunConfig, out: &mut Outputs) -> Result<Summary, RunError> {
    let f = &cfg.fit;
    let mut s = Summary::default();
    if let Some(path) = &f.phase_diagram {
        let rows = read_columns(path, &["T", "h", "dmz"], |v| {
            Some((
                v[0].parse::<f64>().ok()?,
                v[1].parse::<f64>().ok()?,
                v[2].parse::<f64>().ok()?,
            ))
        })?;
        let mut temps: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut biases: Vec<f64> = rows.iter().map(|r| r.1).collect();
        for v in [&mut temps, &mut biases] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let mut grid = vec![vec![f64::NAN; biases.len()]; temps.len()];
        for (t, h, d) in &rows {
            let r = temps.iter().position(|x| x == t).unwrap();
            let c = biases.iter().position(|x| x == h).unwrap();
            grid[r][c] = *d;
        }
        if grid.iter().flatten().any(|d| d.is_nan()) {
            return Err(RunError::Input {
                path: path.clone(),
                message: "the (T, h) grid is incomplete".into(),
            });
        }
        let points = column_boundary(&temps, &biases, &grid, f.threshold);
        let fit = fit_boundary(&points)?;
        out.write("fit_boundary.csv", |w| {
            writeln!(w, "threshold,t_star,r,t_c0,t_star_err,r_err,residual,points")?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                f.threshold,
                fit.t_star,
                fit.r,
                fit.critical_amplitude(0.0),
                fit.t_star_err,
                fit.r_err,
                fit.residual,
                fit.points
            )
        })?;
    }
    if let Some(path) = &f.taus {
        let rows = read_columns(path, &["ell_down", "tau_rel", "converged"], |v| {
            Some((
                v[0].parse::<f64>().ok()?,
                v[1].parse::<f64>().ok(),
                v[2].parse::<bool>().ok()?,
            ))
        })?;
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.0 > 0.0 && r.2)
            .filter_map(|r| Some((r.0, r.1?)))
            .collect();
        s.converged.insert("taus".into(), rows.iter().all(|r| r.2));
        let v = fit_velocity(&points)?;
        out.write("fit_velocity.csv", |w| {
            writeln!(w, "v,v_err,slope,intercept,r2,points")?;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                v.v,
                v.v_err,
                v.line.slope,
                v.line.intercept,
                v.line.r2,
                points.len()
            )
        })?;
    }
    if let Some(path) = &f.velocities {
        let rows = read_columns(path, &["series", "value", "v"], |v| {
            Some((v[0].to_string(), v[1].parse::<f64>().ok()?, v[2].parse::<f64>().ok()?))
        })?;
        let pick =
            |name: &str| -> Vec<(f64, f64)> { rows.iter().filter(|r| r.0 == name).map(|r| (r.1, r.2)).collect() };
        let law = fit_linear_law(&pick("T"), &pick("omega"), f.max_rms)?;
        out.write("fit_linear_law.csv", |w| {
            writeln!(w, "D,D_err,E,E_err,intercept_difference")?;
            writeln!(
                w,
                "{},{},{},{},{}",
                law.d, law.d_err, law.e, law.e_err, law.intercept_difference
            )
        })?;
    }
    Ok(s)
}
