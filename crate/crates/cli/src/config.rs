//! Run configuration: an INI-style file with model keys at the top level and
//! one section per task. Parsing collects every schema violation instead of
//! stopping at the first.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use ini::Ini;
use nec_core::icmf::{Boundary, ISLAND_RTOL};
use nec_core::lindblad::SUPEROPERATOR_CAP;
use nec_core::stability::{PhaseConvention, K_POINTS};
use nec_core::sweep::{bias_grid, BISTABILITY_THRESHOLD};
use nec_core::{
    HamiltonianKind, HamiltonianSpec, IntegratorOptions, ModelParams, NecRates, Prescription, SteadyOptions,
};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaError {
    /// `key` for top-level keys, `section.key` otherwise.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaErrors(pub Vec<SchemaError>);

impl fmt::Display for SchemaErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", e.path, e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaErrors {}

impl SchemaErrors {
    pub fn has_path(&self, path: &str) -> bool {
        self.0.iter().any(|e| e.path == path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Steady,
    Sweep,
    PhaseDiagram,
    Stability,
    Island,
    Fit,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Steady,
        Task::Sweep,
        Task::PhaseDiagram,
        Task::Stability,
        Task::Island,
        Task::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Steady => "steady",
            Task::Sweep => "sweep",
            Task::PhaseDiagram => "phase-diagram",
            Task::Stability => "stability",
            Task::Island => "island",
            Task::Fit => "fit",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

/// Initial product state of a single-cluster run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initial {
    Up,
    Down,
    Mixed,
}

impl Initial {
    fn name(self) -> &'static str {
        match self {
            Initial::Up => "up",
            Initial::Down => "down",
            Initial::Mixed => "mixed",
        }
    }
}

impl FromStr for Initial {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(Initial::Up),
            "down" => Ok(Initial::Down),
            "mixed" => Ok(Initial::Mixed),
            other => Err(format!("unknown initial state '{other}' (expected up|down|mixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KGrid {
    /// `k_y = 0`.
    Line,
    Plane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: HamiltonianKind,
    pub omega: f64,
    pub omega1: Option<f64>,
    pub omega2: Option<f64>,
    pub gamma: f64,
    pub gamma_x: f64,
    pub t: f64,
    pub h: f64,
    pub ell: usize,
    pub prescription: Prescription,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub temperatures: Vec<f64>,
    pub dh: f64,
    pub threshold: f64,
    /// Biases at which the transition order is classified.
    pub order_biases: Vec<f64>,
    pub order_resolution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySection {
    pub branch: Initial,
    pub k_points: usize,
    pub grid: KGrid,
    pub backaction: bool,
    pub convention: PhaseConvention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandSection {
    pub l: usize,
    pub ell_down: Vec<usize>,
    pub island_up: bool,
    pub boundary: Boundary,
    pub stride: f64,
    pub maps: usize,
    pub eps: f64,
    pub rtol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSection {
    pub phase_diagram: Option<PathBuf>,
    pub threshold: f64,
    pub taus: Option<PathBuf>,
    pub velocities: Option<PathBuf>,
    pub max_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelSection,
    pub integrator: IntegratorOptions,
    pub steady_tol: f64,
    pub t_max: f64,
    pub window: usize,
    pub initial: Initial,
    pub sweep: SweepSection,
    pub stability: StabilitySection,
    pub island: IslandSection,
    pub fit: FitSection,
}

const SECTIONS: [&str; 6] = ["integrator", "steady", "sweep", "stability", "island", "fit"];

struct Reader<'a> {
    ini: &'a Ini,
    used: BTreeSet<(Option<String>, String)>,
    errors: Vec<SchemaError>,
}

fn path(section: Option<&str>, key: &str) -> String {
    match section {
        Some(s) => format!("{s}.{key}"),
        None => key.to_string(),
    }
}

impl<'a> Reader<'a> {
    fn raw(&mut self, section: Option<&str>, key: &str) -> Option<&'a str> {
        self.used.insert((section.map(str::to_string), key.to_string()));
        let props = self.ini.section(section)?;
        let mut values = props.get_all(key);
        let first = values.next()?;
        if values.next().is_some() {
            self.error(section, key, "key given more than once");
        }
        Some(first.trim())
    }

    fn error(&mut self, section: Option<&str>, key: &str, message: impl Into<String>) {
        self.errors.push(SchemaError {
            path: path(section, key),
            message: message.into(),
        });
    }

    fn parse<T: FromStr>(&mut self, section: Option<&str>, key: &str, what: &str) -> Option<T> {
        let raw = self.raw(section, key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.error(section, key, format!("expected {what}, got '{raw}'"));
                None
            }
        }
    }

    fn real(&mut self, section: Option<&str>, key: &str, default: f64) -> f64 {
        match self.parse::<f64>(section, key, "a number") {
            Some(v) if v.is_finite() => v,
            Some(v) => {
                self.error(section, key, format!("must be finite, got {v}"));
                default
            }
            None => default,
        }
    }

    fn positive(&mut self, section: Option<&str>, key: &str, default: f64) -> f64 {
        let v = self.real(section, key, default);
        if v <= 0.0 {
            self.error(section, key, format!("must be positive, got {v}"));
        }
        v
    }

    fn integer(&mut self, section: Option<&str>, key: &str, default: usize) -> usize {
        self.parse(section, key, "a nonnegative integer").unwrap_or(default)
    }

    fn choice<T: FromStr<Err = String>>(&mut self, section: Option<&str>, key: &str, default: T) -> T {
        let Some(raw) = self.raw(section, key) else {
            return default;
        };
        match raw.parse() {
            Ok(v) => v,
            Err(e) => {
                self.error(section, key, e);
                default
            }
        }
    }

    fn list<T: FromStr>(&mut self, section: Option<&str>, key: &str, what: &str) -> Option<Vec<T>> {
        let raw = self.raw(section, key)?;
        let mut out = Vec::new();
        for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.error(
                        section,
                        key,
                        format!("expected a comma-separated list of {what}, got '{item}'"),
                    );
                    return None;
                }
            }
        }
        Some(out)
    }

    fn flag(&mut self, section: Option<&str>, key: &str, default: bool) -> bool {
        self.parse(section, key, "true or false").unwrap_or(default)
    }

    fn finish_unknown(&mut self) {
        let mut unknown = Vec::new();
        for (section, props) in self.ini.iter() {
            if let Some(s) = section {
                if !SECTIONS.contains(&s) {
                    unknown.push((s.to_string(), "unknown section".to_string()));
                    continue;
                }
            }
            for (key, _) in props.iter() {
                if !self.used.contains(&(section.map(str::to_string), key.to_string())) {
                    unknown.push((path(section, key), "unknown key".to_string()));
                }
            }
        }
        unknown.sort();
        unknown.dedup();
        for (p, m) in unknown {
            self.errors.push(SchemaError { path: p, message: m });
        }
    }
}

fn parse_boundary(s: &str) -> Result<Boundary, String> {
    s.parse()
}

/// Parses and validates `text`; task-specific checks use the `task` key.
pub fn parse_config(text: &str) -> Result<RunConfig, SchemaErrors> {
    parse_config_for(text, None)
}

/// As [`parse_config`], with `task` (from the command line) taking part in
/// validation. A `task` key that disagrees with it is an error.
pub fn parse_config_for(text: &str, task: Option<Task>) -> Result<RunConfig, SchemaErrors> {
    let ini = Ini::load_from_str(text).map_err(|e| {
        SchemaErrors(vec![SchemaError {
            path: String::new(),
            message: format!("syntax error: {e}"),
        }])
    })?;
    let mut r = Reader {
        ini: &ini,
        used: BTreeSet::new(),
        errors: Vec::new(),
    };
    let top = None;

    let file_task: Option<Task> = r.raw(top, "task").and_then(|raw| match raw.parse() {
        Ok(t) => Some(t),
        Err(e) => {
            r.error(top, "task", e);
            None
        }
    });
    if let (Some(a), Some(b)) = (file_task, task) {
        if a != b {
            r.error(
                top,
                "task",
                format!("config is for '{}' but '{}' was requested", a.name(), b.name()),
            );
        }
    }
    let task = task.or(file_task);

    let threads = r.parse::<usize>(top, "threads", "a positive integer");
    if threads == Some(0) {
        r.error(top, "threads", "must be at least 1");
    }
    let out = r.raw(top, "out").map(PathBuf::from);
    let seed = r.parse(top, "seed", "a nonnegative integer").unwrap_or(0);

    let kind = match r.raw(top, "model") {
        Some(raw) => match raw.parse::<HamiltonianKind>() {
            Ok(k) => k,
            Err(e) => {
                r.error(top, "model", e);
                HamiltonianKind::PxpNec
            }
        },
        None => {
            r.error(top, "model", "required key is missing");
            HamiltonianKind::PxpNec
        }
    };
    let omega = r.real(top, "omega", 0.0);
    let omega1 = r.parse::<f64>(top, "omega1", "a number");
    let omega2 = r.parse::<f64>(top, "omega2", "a number");
    let gamma = r.positive(top, "gamma", 1.0);
    let gamma_x = r.real(top, "gamma_x", 0.0);
    if gamma_x < 0.0 {
        r.error(top, "gamma_x", format!("must be nonnegative, got {gamma_x}"));
    }
    let t = r.real(top, "T", 0.0);
    let h = r.real(top, "h", 0.0);
    if t < 0.0 {
        r.error(top, "T", format!("noise amplitude must be nonnegative, got {t}"));
    } else if !(-1.0..=1.0).contains(&h) {
        r.error(top, "h", format!("bias must lie in [-1, 1], got {h}"));
    } else if let Err(e) = NecRates::new(gamma, t, h) {
        r.error(top, "T", format!("rates are not all nonnegative: {e}"));
    }
    let ell = r.integer(top, "ell", 2);
    if !(1..=3).contains(&ell) {
        r.error(top, "ell", format!("cluster size must be 1, 2 or 3, got {ell}"));
    }
    let prescription = r.choice(top, "prescription", Prescription::Trace);

    let sec = Some("integrator");
    let defaults = IntegratorOptions::default();
    let steady_defaults = SteadyOptions::default();
    let integrator = IntegratorOptions {
        rtol: r.positive(sec, "rtol", defaults.rtol),
        atol: r.positive(sec, "atol", defaults.atol),
        dt_init: r.positive(sec, "dt_init", defaults.dt_init),
        dt_min: r.positive(sec, "dt_min", defaults.dt_min),
        dt_max: r.positive(sec, "dt_max", defaults.dt_max),
    };
    if integrator.dt_min >= integrator.dt_max {
        r.error(sec, "dt_min", "must be smaller than dt_max");
    }
    let steady_tol = r.positive(sec, "steady_tol", steady_defaults.tol);
    let t_max = r.positive(sec, "t_max", steady_defaults.t_max);
    let window = r.integer(sec, "window", steady_defaults.window);
    if window == 0 {
        r.error(sec, "window", "must be at least 1");
    }

    let initial = r.choice(Some("steady"), "initial", Initial::Up);

    let sec = Some("sweep");
    let listed = r.list::<f64>(sec, "T_values", "numbers");
    let t_min = r.parse::<f64>(sec, "T_min", "a number");
    let t_max_sweep = r.parse::<f64>(sec, "T_max", "a number");
    let t_count = r.parse::<usize>(sec, "T_count", "a positive integer");
    let explicit = listed.is_some() || t_min.is_some() || t_max_sweep.is_some() || t_count.is_some();
    let temperatures = match (listed, t_min, t_max_sweep, t_count) {
        (Some(v), None, None, None) => v,
        (None, Some(a), Some(b), Some(n)) if n >= 1 && b >= a => {
            if n == 1 {
                vec![a]
            } else {
                (0..n)
                    .map(|i| (a * (n - 1 - i) as f64 + b * i as f64) / (n - 1) as f64)
                    .collect()
            }
        }
        (None, None, None, None) => vec![t],
        (Some(_), _, _, _) => {
            r.error(sec, "T_values", "give either T_values or T_min/T_max/T_count, not both");
            vec![t]
        }
        _ => {
            r.error(
                sec,
                "T_count",
                "T_min, T_max and T_count must all be given, with T_max >= T_min and T_count >= 1",
            );
            vec![t]
        }
    };
    if temperatures.is_empty() {
        r.error(sec, "T_values", "needs at least one value");
    }
    for &tv in temperatures.iter().filter(|_| explicit) {
        // Every bias in [-1, 1] is visited; μ-type rates need T(1+|h|) <= 2.
        if !(0.0..=1.0).contains(&tv) {
            r.error(
                sec,
                "T_values",
                format!("sweep amplitudes must lie in [0, 1], got {tv}"),
            );
        }
    }
    if temperatures.windows(2).any(|w| w[1] <= w[0]) {
        r.error(sec, "T_values", "must be strictly increasing");
    }
    let dh = r.positive(sec, "dh", 0.1);
    if bias_grid(dh).is_err() {
        r.error(sec, "dh", format!("{dh} does not divide 2"));
    }
    let threshold = r.positive(sec, "threshold", BISTABILITY_THRESHOLD);
    let order_biases = r.list::<f64>(sec, "order_biases", "numbers").unwrap_or_default();
    if let Ok(grid) = bias_grid(dh) {
        for &b in &order_biases {
            if !grid.iter().any(|g| (g - b).abs() < 1e-9) {
                r.error(
                    sec,
                    "order_biases",
                    format!("{b} is not on the bias grid with step {dh}"),
                );
            }
        }
    }
    let order_resolution = r.positive(sec, "order_resolution", 2.5e-4);
    let sweep = SweepSection {
        temperatures,
        dh,
        threshold,
        order_biases,
        order_resolution,
    };

    let sec = Some("stability");
    let branch = r.choice(sec, "branch", Initial::Up);
    if branch == Initial::Mixed {
        r.error(sec, "branch", "must be up or down");
    }
    let k_points = r.integer(sec, "k_points", K_POINTS);
    if k_points == 0 {
        r.error(sec, "k_points", "must be at least 1");
    }
    let grid = match r.raw(sec, "grid") {
        None | Some("line") => KGrid::Line,
        Some("plane") => KGrid::Plane,
        Some(other) => {
            let msg = format!("unknown grid '{other}' (expected line|plane)");
            r.error(sec, "grid", msg);
            KGrid::Line
        }
    };
    let backaction = r.flag(sec, "backaction", true);
    let convention = match r.raw(sec, "convention") {
        None | Some("cluster") => PhaseConvention::ClusterUnits,
        Some("lattice") => PhaseConvention::LatticeUnits,
        Some(other) => {
            let msg = format!("unknown convention '{other}' (expected cluster|lattice)");
            r.error(sec, "convention", msg);
            PhaseConvention::ClusterUnits
        }
    };
    let stability = StabilitySection {
        branch,
        k_points,
        grid,
        backaction,
        convention,
    };

    let sec = Some("island");
    let island_used = task == Some(Task::Island) || (task.is_none() && ini.section(sec).is_some());
    let l = r.integer(sec, "L", 20);
    let ell_down = r
        .list::<usize>(sec, "ell_down", "nonnegative integers")
        .unwrap_or_else(|| vec![10]);
    if island_used && ell >= 1 && (l == 0 || !l.is_multiple_of(ell)) {
        r.error(
            sec,
            "L",
            format!("lattice size {l} is not a positive multiple of ell = {ell}"),
        );
    }
    for &m in &ell_down {
        if island_used && (m > l || (ell >= 1 && m % ell != 0)) {
            r.error(
                sec,
                "ell_down",
                format!("island size {m} must be a multiple of ell = {ell} and at most L = {l}"),
            );
        }
    }
    let island_up = match r.raw(sec, "species") {
        None | Some("down") => false,
        Some("up") => true,
        Some(other) => {
            let msg = format!("unknown species '{other}' (expected down|up)");
            r.error(sec, "species", msg);
            false
        }
    };
    let boundary = match r.raw(sec, "boundary") {
        None => Boundary::Periodic,
        Some(raw) => parse_boundary(raw).unwrap_or_else(|e| {
            r.error(sec, "boundary", e);
            Boundary::Periodic
        }),
    };
    let island = IslandSection {
        l,
        ell_down,
        island_up,
        boundary,
        stride: r.positive(sec, "stride", 0.5),
        maps: r.integer(sec, "maps", 10),
        eps: r.positive(sec, "eps", 0.01),
        rtol: r.positive(sec, "rtol", ISLAND_RTOL),
    };

    let sec = Some("fit");
    let fit = FitSection {
        phase_diagram: r.raw(sec, "phase_diagram").map(PathBuf::from),
        threshold: r.positive(sec, "threshold", BISTABILITY_THRESHOLD),
        taus: r.raw(sec, "taus").map(PathBuf::from),
        velocities: r.raw(sec, "velocities").map(PathBuf::from),
        max_rms: r.positive(sec, "max_rms", 0.05),
    };

    r.finish_unknown();

    match task {
        Some(Task::Stability) => {
            let d = 1usize << (ell * ell);
            if d * d > SUPEROPERATOR_CAP {
                r.error(
                    top,
                    "ell",
                    format!(
                        "stability analysis needs ell <= 2 (dense dimension {} exceeds the cap {SUPEROPERATOR_CAP})",
                        d * d
                    ),
                );
            }
        }
        Some(Task::Fit) if fit.phase_diagram.is_none() && fit.taus.is_none() && fit.velocities.is_none() => {
            r.error(
                Some("fit"),
                "phase_diagram",
                "fit needs at least one of phase_diagram, taus, velocities",
            );
        }
        _ => {}
    }

    if !r.errors.is_empty() {
        return Err(SchemaErrors(r.errors));
    }
    Ok(RunConfig {
        task,
        threads,
        out,
        seed,
        model: ModelSection {
            kind,
            omega,
            omega1,
            omega2,
            gamma,
            gamma_x,
            t,
            h,
            ell,
            prescription,
        },
        integrator,
        steady_tol,
        t_max,
        window,
        initial,
        sweep,
        stability,
        island,
        fit,
    })
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        let spec = HamiltonianSpec {
            omega1: m.omega1,
            omega2: m.omega2,
            ..HamiltonianSpec::new(m.kind, m.omega).with_dephasing(m.gamma_x)
        };
        ModelParams::new(NecRates::new(m.gamma, m.t, m.h).expect("validated rates"), spec)
    }

    pub fn steady_options(&self) -> SteadyOptions {
        SteadyOptions {
            tol: self.steady_tol,
            t_max: self.t_max,
            window: self.window,
            integrator: self.integrator,
        }
    }

    /// Every setting with defaults filled in, as a config file that parses
    /// back to `self`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        let _ = writeln!(s, "model = {}", m.kind);
        let _ = writeln!(s, "omega = {}", m.omega);
        if let Some(v) = m.omega1 {
            let _ = writeln!(s, "omega1 = {v}");
        }
        if let Some(v) = m.omega2 {
            let _ = writeln!(s, "omega2 = {v}");
        }
        let _ = writeln!(s, "gamma = {}", m.gamma);
        let _ = writeln!(s, "gamma_x = {}", m.gamma_x);
        let _ = writeln!(s, "T = {}", m.t);
        let _ = writeln!(s, "h = {}", m.h);
        let _ = writeln!(s, "ell = {}", m.ell);
        let _ = writeln!(s, "prescription = {}", m.prescription);
        if let Some(t) = self.task {
            let _ = writeln!(s, "task = {}", t.name());
        }
        if let Some(n) = self.threads {
            let _ = writeln!(s, "threads = {n}");
        }
        if let Some(o) = &self.out {
            let _ = writeln!(s, "out = {}", o.display());
        }
        let _ = writeln!(s, "seed = {}", self.seed);

        let i = &self.integrator;
        let _ = writeln!(s, "\n[integrator]");
        let _ = writeln!(s, "rtol = {}", i.rtol);
        let _ = writeln!(s, "atol = {}", i.atol);
        let _ = writeln!(s, "dt_init = {}", i.dt_init);
        let _ = writeln!(s, "dt_min = {}", i.dt_min);
        let _ = writeln!(s, "dt_max = {}", i.dt_max);
        let _ = writeln!(s, "steady_tol = {}", self.steady_tol);
        let _ = writeln!(s, "t_max = {}", self.t_max);
        let _ = writeln!(s, "window = {}", self.window);

        let _ = writeln!(s, "\n[steady]");
        let _ = writeln!(s, "initial = {}", self.initial.name());

        let w = &self.sweep;
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "T_values = {}", join(&w.temperatures));
        let _ = writeln!(s, "dh = {}", w.dh);
        let _ = writeln!(s, "threshold = {}", w.threshold);
        if !w.order_biases.is_empty() {
            let _ = writeln!(s, "order_biases = {}", join(&w.order_biases));
        }
        let _ = writeln!(s, "order_resolution = {}", w.order_resolution);

        let st = &self.stability;
        let _ = writeln!(s, "\n[stability]");
        let _ = writeln!(s, "branch = {}", st.branch.name());
        let _ = writeln!(s, "k_points = {}", st.k_points);
        let _ = writeln!(s, "grid = {}", if st.grid == KGrid::Line { "line" } else { "plane" });
        let _ = writeln!(s, "backaction = {}", st.backaction);
        let convention = match st.convention {
            PhaseConvention::ClusterUnits => "cluster",
            PhaseConvention::LatticeUnits => "lattice",
        };
        let _ = writeln!(s, "convention = {convention}");

        let is = &self.island;
        let _ = writeln!(s, "\n[island]");
        let _ = writeln!(s, "L = {}", is.l);
        let _ = writeln!(s, "ell_down = {}", join(&is.ell_down));
        let _ = writeln!(s, "species = {}", if is.island_up { "up" } else { "down" });
        let _ = writeln!(s, "boundary = {}", is.boundary);
        let _ = writeln!(s, "stride = {}", is.stride);
        let _ = writeln!(s, "maps = {}", is.maps);
        let _ = writeln!(s, "eps = {}", is.eps);
        let _ = writeln!(s, "rtol = {}", is.rtol);

        let f = &self.fit;
        let _ = writeln!(s, "\n[fit]");
        for (key, p) in [
            ("phase_diagram", &f.phase_diagram),
            ("taus", &f.taus),
            ("velocities", &f.velocities),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "{key} = {}", p.display());
            }
        }
        let _ = writeln!(s, "threshold = {}", f.threshold);
        let _ = writeln!(s, "max_rms = {}", f.max_rms);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model = pxp_nec\nomega = 0.1\nT = 0.1\nh = 0.0\nell = 2\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.model.kind, HamiltonianKind::PxpNec);
        assert_eq!(c.model.gamma, 1.0);
        assert_eq!(c.model.prescription, Prescription::Trace);
        assert_eq!(c.integrator, IntegratorOptions::default());
        assert_eq!(c.sweep.temperatures, vec![0.1]);
        assert_eq!(c.sweep.dh, 0.1);
        assert_eq!(c.stability.k_points, K_POINTS);
        assert_eq!(c.island.ell_down, vec![10]);
    }

    #[test]
    fn resolved_echo_round_trips() {
        let text = format!("{MINIMAL}\n[sweep]\nT_min = 0.05\nT_max = 0.25\nT_count = 5\norder_biases = 0, 0.4\n[island]\nell_down = 4, 6\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.sweep.temperatures.len(), 5);
        let again = parse_config(&c.to_ini()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn all_errors_are_reported_with_paths() {
        let text = "model = pxp_nec\nT = -0.1\nell = 7\nbogus = 1\n[island]\nL = abc\n[extra]\nx = 1\n";
        let e = parse_config(text).unwrap_err();
        for p in ["T", "ell", "bogus", "island.L", "extra"] {
            assert!(e.has_path(p), "missing {p} in {e}");
        }
    }

    #[test]
    fn stability_is_capped_at_two() {
        let text = "model = pxp_nec\nomega = 0.1\nT = 0.1\nell = 3\n";
        assert!(parse_config(text).is_ok());
        let e = parse_config_for(text, Some(Task::Stability)).unwrap_err();
        assert!(e.has_path("ell"));
        let e = parse_config(&format!("{text}task = stability\n")).unwrap_err();
        assert!(e.has_path("ell"));
    }

    #[test]
    fn conflicting_task_is_rejected() {
        let e = parse_config_for(&format!("{MINIMAL}task = sweep\n"), Some(Task::Island)).unwrap_err();
        assert!(e.has_path("task"));
    }

    #[test]
    fn model_key_is_required() {
        assert!(parse_config("T = 0.1\n").unwrap_err().has_path("model"));
    }
}
