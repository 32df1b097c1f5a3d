//! Experiment runner: procedure sweeps over (k, levels) points, correlation
//! studies between layout metrics and latency, baseline comparisons and
//! report emission.
//!
//! CSV column order is fixed:
//! `k,levels,procedure,reuse,seed,best,latency,area,volume,physical_volume,crossings,avg_edge_length,critical_path,runtime_ms,error`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{anneal, ForceParams};
use crate::bisect;
use crate::error::{Error, Result};
use crate::igraph::{critical_path, InteractionGraph};
use crate::layout::{self, compact_dims, linear_mapping, linear_reuse_factory, random_mapping, GridMapping};
use crate::meshsim::{self, simulate, Hints, SimParams, SimReport};
use crate::protocol::{build_error_model, build_factory, Circuit, FactoryConfig, ReusePolicy};
use crate::stitch::{stitch_factory, StitchParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Procedure {
    Random,
    Line,
    FD,
    GP,
    HS,
}

impl Procedure {
    pub const ALL: [Procedure; 5] = [Procedure::Random, Procedure::Line, Procedure::FD, Procedure::GP, Procedure::HS];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Random => "Random",
            Procedure::Line => "Line",
            Procedure::FD => "FD",
            Procedure::GP => "GP",
            Procedure::HS => "HS",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

/// Algorithm parameters shared by every cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub sim: SimParams,
    /// FD mapping; its seed is replaced by the cell seed.
    pub force: ForceParams,
    /// HS mapping; its seed is replaced by the cell seed.
    pub stitch: StitchParams,
    /// Free-cell slack of the GP grid.
    pub gp_slack: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams { sim: SimParams::default(), force: ForceParams::default(), stitch: StitchParams::default(), gp_slack: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// (k, levels) pairs.
    pub points: Vec<(usize, usize)>,
    pub procedures: Vec<Procedure>,
    pub reuse: Vec<ReusePolicy>,
    pub seeds: Vec<u64>,
    pub eps_inject: f64,
    pub target_error: f64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Record wall-clock runtime per row. Off keeps the output a pure
    /// function of the spec.
    pub timing: bool,
    /// Random mappings per correlation study.
    pub corr_samples: usize,
    pub params: PipelineParams,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            points: vec![(2, 1)],
            procedures: vec![Procedure::Line],
            reuse: vec![ReusePolicy::NoReuse],
            seeds: (0..5).collect(),
            eps_inject: 1e-3,
            target_error: 1e-9,
            out_dir: PathBuf::from("results"),
            workers: 0,
            timing: false,
            corr_samples: 50,
            params: PipelineParams::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidExperiment("no (k, levels) points".into()));
        }
        if self.procedures.is_empty() {
            return Err(Error::InvalidExperiment("no procedures".into()));
        }
        if self.reuse.is_empty() {
            return Err(Error::InvalidExperiment("no reuse policies".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidExperiment("no seeds".into()));
        }
        Ok(())
    }

    pub fn config(&self, k: usize, levels: usize, reuse: ReusePolicy, seed: u64) -> FactoryConfig {
        FactoryConfig {
            capacity_k: k,
            levels_l: levels,
            eps_inject: self.eps_inject,
            target_error: self.target_error,
            reuse_policy: reuse,
            seed,
            ..FactoryConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub k: usize,
    pub levels: usize,
    pub procedure: Procedure,
    pub reuse: ReusePolicy,
    pub seed: u64,
    /// Lowest volume among the seeds of its cell.
    pub best: bool,
    pub latency: usize,
    pub area: usize,
    pub volume: u64,
    pub physical_volume: Option<f64>,
    pub crossings: u64,
    pub avg_edge_length: f64,
    pub critical_path: usize,
    pub runtime_ms: u64,
    pub error: Option<String>,
}

impl ResultRow {
    fn key(&self) -> (usize, usize, Procedure, ReusePolicy) {
        (self.k, self.levels, self.procedure, self.reuse)
    }
}

/// A factory circuit with its placement and braid midpoints.
#[derive(Clone, Debug)]
pub struct Mapped {
    pub circuit: Circuit,
    pub mapping: GridMapping,
    pub hints: Hints,
}

/// Builds and places a factory with one of the mapping procedures.
///
/// Random uses the grid of the linear layout. FD anneals the linear layout.
/// GP embeds the whole factory on a near-square grid. HS stitches per-round
/// embeddings. Under reuse, Line and FD use the geometric reuse plan of the
/// linear layout; GP uses the sequential plan.
pub fn map_factory(config: &FactoryConfig, procedure: Procedure, params: &PipelineParams) -> Result<Mapped> {
    config.validate()?;
    let line = || -> Result<(Circuit, GridMapping)> {
        if config.reuse_policy == ReusePolicy::Reuse && config.levels_l > 1 {
            linear_reuse_factory(config)
        } else {
            let c = build_factory(config)?;
            let m = linear_mapping(&c);
            Ok((c, m))
        }
    };
    let (circuit, mapping, hints) = match procedure {
        Procedure::Line => {
            let (c, m) = line()?;
            (c, m, Hints::new())
        }
        Procedure::Random => {
            let (c, m) = line()?;
            let r = random_mapping(&c, m.width, m.height, config.seed)?;
            (c, r, Hints::new())
        }
        Procedure::FD => {
            let (c, m) = line()?;
            let force = ForceParams { seed: config.seed, ..params.force.clone() };
            let (m, _) = anneal(&m, &c, &force)?;
            (c, m, Hints::new())
        }
        Procedure::GP => {
            let c = build_factory(config)?;
            let (w, h) = compact_dims(c.num_data_qubits(), params.gp_slack);
            let m = bisect::embed(&InteractionGraph::from_circuit(&c), w, h)?;
            (c, m, Hints::new())
        }
        Procedure::HS => {
            let sp = StitchParams { seed: config.seed, ..params.stitch.clone() };
            let plan = stitch_factory(config, &sp)?;
            let hints = plan.hints();
            (plan.circuit, plan.mapping, hints)
        }
    };
    Ok(Mapped { circuit, mapping, hints })
}

/// Simulates a mapped factory and fills in the physical volume.
pub fn simulate_mapped(config: &FactoryConfig, mapped: &Mapped, sim: &SimParams) -> Result<SimReport> {
    let report = simulate(&mapped.circuit, &mapped.mapping, &mapped.hints, sim)?;
    meshsim::report(report, config, &build_error_model(config)?)
}

fn run_cell(spec: &ExperimentSpec, k: usize, levels: usize, procedure: Procedure, reuse: ReusePolicy, seed: u64) -> ResultRow {
    let start = Instant::now();
    let config = spec.config(k, levels, reuse, seed);
    let mut row = ResultRow {
        k,
        levels,
        procedure,
        reuse,
        seed,
        best: false,
        latency: 0,
        area: 0,
        volume: 0,
        physical_volume: None,
        crossings: 0,
        avg_edge_length: 0.0,
        critical_path: 0,
        runtime_ms: 0,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let mapped = map_factory(&config, procedure, &spec.params)?;
        let graph = InteractionGraph::from_circuit(&mapped.circuit);
        let sim = simulate_mapped(&config, &mapped, &spec.params.sim)?;
        row.latency = sim.latency;
        row.area = sim.area;
        row.volume = sim.volume;
        row.physical_volume = sim.physical_volume;
        row.crossings = layout::crossing_count(&mapped.mapping, &graph)?;
        row.avg_edge_length = layout::edge_length(&mapped.mapping, &graph)?;
        row.critical_path = critical_path(&mapped.circuit);
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("k={k} l={levels} {} {} seed {seed}: {e}", procedure.name(), reuse.label());
        row.error = Some(e.to_string());
    }
    if spec.timing {
        row.runtime_ms = start.elapsed().as_millis() as u64;
    }
    row
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidExperiment(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every point x procedure x policy x seed cell. Failed cells become
/// rows carrying the error. Rows are sorted by (k, levels, procedure, reuse,
/// seed) and the lowest-volume successful seed of each cell is flagged.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &(k, l) in &spec.points {
        for &p in &spec.procedures {
            for &r in &spec.reuse {
                for &s in &spec.seeds {
                    cells.push((k, l, p, r, s));
                }
            }
        }
    }
    let mut rows: Vec<ResultRow> = with_workers(spec.workers, || {
        cells.par_iter().map(|&(k, l, p, r, s)| run_cell(spec, k, l, p, r, s)).collect()
    })?;
    rows.sort_by_key(|a| (a.key(), a.seed));
    flag_best(&mut rows);
    Ok(rows)
}

fn flag_best(rows: &mut [ResultRow]) {
    let mut best: BTreeMap<_, usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if r.error.is_some() {
            continue;
        }
        let e = best.entry(r.key()).or_insert(i);
        if r.volume < rows[*e].volume {
            *e = i;
        }
    }
    for r in rows.iter_mut() {
        r.best = false;
    }
    for i in best.into_values() {
        rows[i].best = true;
    }
}

/// Pearson correlation with two passes; `None` when either side has zero
/// variance or the lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSample {
    pub seed: u64,
    pub avg_edge_length: f64,
    pub avg_edge_spacing: f64,
    pub crossings: u64,
    pub latency: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub samples: Vec<CorrelationSample>,
    pub r_length: Option<f64>,
    pub r_spacing: Option<f64>,
    pub r_crossings: Option<f64>,
}

impl CorrelationReport {
    pub fn from_samples(samples: Vec<CorrelationSample>) -> Self {
        let lat: Vec<f64> = samples.iter().map(|s| s.latency as f64).collect();
        let col = |f: fn(&CorrelationSample) -> f64| pearson(&samples.iter().map(f).collect::<Vec<_>>(), &lat);
        CorrelationReport {
            r_length: col(|s| s.avg_edge_length),
            r_spacing: col(|s| s.avg_edge_spacing),
            r_crossings: col(|s| s.crossings as f64),
            samples,
        }
    }

    pub fn to_text(&self) -> String {
        let fmt = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        format!(
            "samples {}\nr_length {}\nr_spacing {}\nr_crossings {}\n",
            self.samples.len(),
            fmt(self.r_length),
            fmt(self.r_spacing),
            fmt(self.r_crossings)
        )
    }
}

/// Correlates the congestion metrics of `n_samples` random mappings with
/// their simulated latency. Sample `i` uses seed `seed + i` on the grid of
/// the linear layout.
pub fn correlation_study(k: usize, levels: usize, n_samples: usize, seed: u64, sim: &SimParams) -> Result<CorrelationReport> {
    if n_samples < 10 {
        return Err(Error::InvalidExperiment(format!("correlation needs at least 10 samples, got {n_samples}")));
    }
    let config = FactoryConfig::new(k, levels);
    config.validate()?;
    let circuit = build_factory(&config)?;
    let graph = InteractionGraph::from_circuit(&circuit);
    let grid = linear_mapping(&circuit);
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let m = random_mapping(&circuit, grid.width, grid.height, s)?;
            let metrics = layout::metrics(&m, &graph)?;
            let report = simulate(&circuit, &m, &Hints::new(), sim)?;
            Ok(CorrelationSample {
                seed: s,
                avg_edge_length: metrics.avg_edge_length,
                avg_edge_spacing: metrics.avg_edge_spacing.unwrap_or(0.0),
                crossings: metrics.crossing_count,
                latency: report.latency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationReport::from_samples(samples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub k: usize,
    pub levels: usize,
    pub reuse: ReusePolicy,
    pub baseline_volume: u64,
    pub target_volume: u64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Procedure,
    pub target: Procedure,
    pub ratios: Vec<Ratio>,
    pub geometric_mean: Option<f64>,
    /// Grid points skipped for lack of a successful row on either side.
    pub notes: Vec<String>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = format!("{} / {}\n", self.baseline.name(), self.target.name());
        for r in &self.ratios {
            let _ = writeln!(
                s,
                "k={} l={} {}: {} / {} = {:.4}",
                r.k,
                r.levels,
                r.reuse.label(),
                r.baseline_volume,
                r.target_volume,
                r.ratio
            );
        }
        if let Some(g) = self.geometric_mean {
            let _ = writeln!(s, "geometric mean {g:.4}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Best-seed volume of `baseline` over that of `target` at every
/// (k, levels, reuse) point of the table.
pub fn compare(rows: &[ResultRow], baseline: Procedure, target: Procedure) -> Comparison {
    let mut best: BTreeMap<(usize, usize, ReusePolicy, Procedure), u64> = BTreeMap::new();
    let mut points = std::collections::BTreeSet::new();
    for r in rows {
        points.insert((r.k, r.levels, r.reuse));
        if r.error.is_none() {
            let e = best.entry((r.k, r.levels, r.reuse, r.procedure)).or_insert(r.volume);
            *e = (*e).min(r.volume);
        }
    }
    let mut ratios = Vec::new();
    let mut notes = Vec::new();
    for (k, levels, reuse) in points {
        match (best.get(&(k, levels, reuse, baseline)), best.get(&(k, levels, reuse, target))) {
            (Some(&b), Some(&t)) if t > 0 => ratios.push(Ratio {
                k,
                levels,
                reuse,
                baseline_volume: b,
                target_volume: t,
                ratio: b as f64 / t as f64,
            }),
            _ => notes.push(format!("k={k} l={levels} {}: missing {} or {}", reuse.label(), baseline.name(), target.name())),
        }
    }
    let geometric_mean = (!ratios.is_empty())
        .then(|| (ratios.iter().map(|r| r.ratio.ln()).sum::<f64>() / ratios.len() as f64).exp());
    Comparison { baseline, target, ratios, geometric_mean, notes }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Csv,
    Json,
    PlotData,
}

pub const CSV_HEADER: &str = "k,levels,procedure,reuse,seed,best,latency,area,volume,physical_volume,crossings,avg_edge_length,critical_path,runtime_ms,error";

pub fn to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.levels.to_string(),
            r.procedure.name().to_string(),
            r.reuse.label().to_string(),
            r.seed.to_string(),
            r.best.to_string(),
            r.latency.to_string(),
            r.area.to_string(),
            r.volume.to_string(),
            r.physical_volume.map_or(String::new(), |v| format!("{v:.6e}")),
            r.crossings.to_string(),
            format!("{:.6}", r.avg_edge_length),
            r.critical_path.to_string(),
            r.runtime_ms.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: impl Into<std::io::Error>) -> Error {
    Error::io("<csv>", e.into())
}

/// Per-procedure series of best-seed volume against k, one line per
/// (levels, reuse, k).
pub fn plot_series(rows: &[ResultRow]) -> BTreeMap<Procedure, String> {
    let mut out: BTreeMap<Procedure, String> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.best) {
        let s = out.entry(r.procedure).or_insert_with(|| "# levels reuse k latency area volume\n".to_string());
        let _ = writeln!(s, "{} {} {} {} {} {}", r.levels, r.reuse.label(), r.k, r.latency, r.area, r.volume);
    }
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the table into `dir` and returns the files written.
pub fn emit(rows: &[ResultRow], format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidExperiment("empty result table".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        Format::Csv => Ok(vec![write(dir.join("results.csv"), &to_csv(rows)?)?]),
        Format::Json => Ok(vec![write(dir.join("results.json"), &serde_json::to_string_pretty(rows)?)?]),
        Format::PlotData => plot_series(rows)
            .into_iter()
            .map(|(p, text)| write(dir.join(format!("volume_{}.dat", p.name())), &text))
            .collect(),
    }
}
