//! Command-line front end: subcommands, key=value config files, run records.
//!
//! Every option may come from `--config FILE` (one `key=value` per line, `#` comments)
//! or from the matching long flag; flags win. Outputs go to `--out DIR`, each file written
//! through a temporary file and renamed into place, and a [`RunRecord`] is appended to
//! `DIR/runs.jsonl`.

use crate::dyadic::{box_dimension_fit, box_dimension_of, calibrate_grid_constant, covering_number, dyadic_content};
use crate::dyadic::{read_dyset, set_to_pgm, write_dyset, DyadicSet};
use crate::fractals::{rasterize_ifs, similarity_dimension, IFSSpec};
use crate::measures::{natural_measure, riesz_energy};
use crate::rng::job_rng;
use crate::slicing::{heavy_set, slice_spectrum};
use crate::spectral::{direction_average_sobolev, energy_fourier_check};
use crate::visibility::{
    decompose, direction_average_experiment, solve_parameters, solve_parameters_relaxed, visible_cells, Direction,
    Mode, Params,
};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const RUN_INDEX: &str = "runs.jsonl";

#[derive(Parser, Debug)]
#[command(name = "visifrac", version, about = "Visible parts, projections and slices of fractal sets on dyadic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize a set and write it as DYSET1 (plus PGM in the plane).
    Gen(Opts),
    /// Visible part of a set from one direction.
    Vis(Opts),
    /// Box-counting dimension fit.
    Dim(Opts),
    /// Four-way decomposition for one direction.
    Decomp(Opts),
    /// Slice spectrum for one direction.
    Slice(Opts),
    /// Heavy sets F_M of the projected natural measure.
    Heavy(Opts),
    /// Direction-averaged Sobolev norms of projections.
    Sobolev(Opts),
    /// Riesz energy and its Fourier-side lattice sum.
    Energy(Opts),
    /// Calibrate the shifted-grid constant.
    Calibrate(Opts),
    /// Run a named experiment kind.
    Experiment(Opts),
    /// Summarize a run index.
    Summarize(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin name, IFS spec file or DYSET1 file.
    #[arg(long, visible_alias = "ifs")]
    set: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    /// regular | general
    #[arg(long)]
    mode: Option<String>,
    /// Dimension parameter, or `similarity`.
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    /// Comma-separated levels j (δ = 2^-j) or dyadic δ values.
    #[arg(long)]
    deltas: Option<String>,
    /// Number of sampled directions.
    #[arg(long)]
    directions: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// vis-average | decompose | slice-spectrum | heavy-set | sobolev-average | calibrate
    #[arg(long)]
    kind: Option<String>,
    /// Turn parameter range violations into warnings.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    relaxed: Option<String>,
    /// Planar direction angle in degrees.
    #[arg(long)]
    angle: Option<String>,
    /// Direction vector x,y[,z].
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Comma-separated heavy-set thresholds.
    #[arg(long)]
    m: Option<String>,
    /// Content or energy exponent.
    #[arg(long)]
    t: Option<String>,
    /// Projection dimension for calibration.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    cutoff: Option<String>,
    #[arg(long)]
    lo: Option<String>,
    #[arg(long)]
    hi: Option<String>,
    /// Worker threads (default from VISIFRAC_JOBS).
    #[arg(long)]
    jobs: Option<String>,
    /// Run index to summarize.
    #[arg(long)]
    index: Option<String>,
    /// JSON object of baseline metric values.
    #[arg(long)]
    baselines: Option<String>,
}

const KEYS: &[&str] = &[
    "set", "depth", "mode", "s", "eps", "deltas", "directions", "seed", "out", "kind", "relaxed", "angle", "theta",
    "beta", "sigma", "m", "t", "n", "trials", "cutoff", "lo", "hi", "jobs", "index", "baselines",
];

impl Opts {
    fn flags(&self) -> BTreeMap<&'static str, String> {
        let vals = [
            &self.set, &self.depth, &self.mode, &self.s, &self.eps, &self.deltas, &self.directions, &self.seed,
            &self.out, &self.kind, &self.relaxed, &self.angle, &self.theta, &self.beta, &self.sigma, &self.m, &self.t,
            &self.n, &self.trials, &self.cutoff, &self.lo, &self.hi, &self.jobs, &self.index, &self.baselines,
        ];
        KEYS.iter().zip(vals).filter_map(|(k, v)| v.clone().map(|v| (*k, v))).collect()
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", no + 1)))?;
        let k = k.trim().replace('_', "-");
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

/// Merged options. Every value read is recorded in the snapshot.
struct Settings {
    values: BTreeMap<String, String>,
    snapshot: BTreeMap<String, String>,
}

impl Settings {
    fn new(opts: &Opts) -> Result<Self> {
        let mut values = match &opts.config {
            Some(p) => parse_config(
                &std::fs::read_to_string(p).map_err(|e| Error::Config(format!("config `{}`: {e}", p.display())))?,
            )?,
            None => BTreeMap::new(),
        };
        for (k, v) in opts.flags() {
            values.insert(k.to_string(), v);
        }
        Ok(Settings { values, snapshot: BTreeMap::new() })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.values.get(key).cloned();
        if let Some(v) = &v {
            self.snapshot.insert(key.to_string(), v.clone());
        }
        v
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: ToString,
    {
        match self.raw(key) {
            Some(v) => v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for key `{key}`"))),
            None => {
                self.snapshot.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.raw(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("invalid entry `{x}` for key `{key}`"))))
                    .collect()
            })
            .transpose()
    }

    fn flag(&mut self, key: &str) -> Result<bool> {
        self.get(key, false)
    }
}

struct Source {
    set: DyadicSet,
    spec: Option<IFSSpec>,
}

fn load_set(cfg: &mut Settings) -> Result<Source> {
    let name = cfg.required("set")?;
    let path = Path::new(&name);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        if text.starts_with("DYSET1") {
            let set = read_dyset(&text)?;
            if let Some(d) = cfg.raw("depth") {
                if d.parse::<u32>().ok() != Some(set.depth()) {
                    return Err(Error::Config(format!("key `depth` = {d} disagrees with the DYSET1 file")));
                }
            }
            return Ok(Source { set, spec: None });
        }
        let spec = IFSSpec::parse(&text)?;
        let depth = cfg.get("depth", 8u32)?;
        return Ok(Source { set: rasterize_ifs(&spec, depth)?, spec: Some(spec) });
    }
    let spec = IFSSpec::builtin(&name)?;
    let depth = cfg.get("depth", 8u32)?;
    Ok(Source { set: rasterize_ifs(&spec, depth)?, spec: Some(spec) })
}

fn dimension_s(cfg: &mut Settings, src: &Source) -> Result<f64> {
    let v = cfg.get("s", String::from("similarity"))?;
    if v == "similarity" {
        return src
            .spec
            .as_ref()
            .map(similarity_dimension)
            .ok_or_else(|| Error::Config("key `s` = similarity needs an IFS source".into()));
    }
    v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for key `s`")))
}

/// Levels from the `deltas` key; entries are integers j or dyadic δ = 2^-j.
fn levels(cfg: &mut Settings, depth: u32) -> Result<Vec<u32>> {
    let Some(raw) = cfg.list::<f64>("deltas")? else {
        return Ok(vec![depth]);
    };
    let mut out = Vec::new();
    for v in raw {
        let j = if v >= 1.0 && v.fract() == 0.0 {
            v as u32
        } else if v > 0.0 && v < 1.0 && (-v.log2()).fract() == 0.0 {
            (-v.log2()) as u32
        } else {
            return Err(Error::Config(format!("key `deltas`: {v} is not dyadic")));
        };
        if j > depth {
            return Err(Error::Config(format!("key `deltas`: level {j} is finer than depth {depth}")));
        }
        out.push(j);
    }
    Ok(out)
}

fn direction(cfg: &mut Settings, dim: usize) -> Result<Direction> {
    if let Some(v) = cfg.list::<f64>("theta")? {
        if v.len() != dim {
            return Err(Error::Config(format!("key `theta` needs {dim} components")));
        }
        let mut u = [0.0; 3];
        u[..dim].copy_from_slice(&v);
        return Direction::from_vector(dim, u);
    }
    if dim == 2 {
        let a: f64 = cfg.get("angle", 90.0)?;
        return Ok(Direction::from_angle(a.to_radians()));
    }
    Direction::from_vector(dim, [0.0, 0.0, 1.0])
}

fn sampled(dim: usize, count: usize, seed: u64) -> Result<Vec<Direction>> {
    (0..count).map(|j| Direction::sample(dim, &mut job_rng(seed, j as u64))).collect()
}

fn params(cfg: &mut Settings, s: f64, dim: usize, depth: u32) -> Result<Params> {
    let mode: Mode = cfg.get("mode", String::from("regular"))?.parse()?;
    let eps = cfg.get("eps", 0.01)?;
    if cfg.flag("relaxed")? {
        solve_parameters_relaxed(s, dim, eps, mode, depth)
    } else {
        solve_parameters(s, dim, eps, mode, depth)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub version: String,
    pub wall_time_secs: f64,
    pub seed: Option<u64>,
    pub outputs: Vec<OutputDigest>,
    /// Scalar results used by `summarize`.
    pub metrics: BTreeMap<String, f64>,
}

/// Outputs of one command, held in memory until every file is ready.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    metrics: BTreeMap<String, f64>,
    seed: Option<u64>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<tempfile::NamedTempFile> {
    let mut tmp = tempfile::Builder::new().prefix(&format!(".{name}.")).tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    Ok(tmp)
}

/// Writes every file to a temporary first, then renames them all and appends the record.
fn commit(dir: &Path, command: &str, cfg: Settings, out: Outputs, started: Instant) -> Result<RunRecord> {
    std::fs::create_dir_all(dir)?;
    let temps = out
        .files
        .iter()
        .map(|(name, bytes)| write_atomic(dir, name, bytes).map(|t| (name, t)))
        .collect::<Result<Vec<_>>>()?;
    for (name, tmp) in temps {
        tmp.persist(dir.join(name)).map_err(|e| Error::Io(e.error))?;
    }
    let record = RunRecord {
        command: command.to_string(),
        config: cfg.snapshot,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        seed: out.seed,
        outputs: out.files.iter().map(|(f, b)| OutputDigest { file: f.clone(), sha256: sha256_hex(b) }).collect(),
        metrics: out.metrics,
    };
    let mut line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
    line.push('\n');
    std::fs::OpenOptions::new().create(true).append(true).open(dir.join(RUN_INDEX))?.write_all(line.as_bytes())?;
    Ok(record)
}

fn cmd_gen(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    out.add("set.dyset", write_dyset(&src.set).into_bytes());
    if src.set.dim() == 2 {
        out.add("set.pgm", set_to_pgm(&src.set)?);
    }
    out.metrics.insert("cells".into(), src.set.len() as f64);
    println!("{} cells at depth {}", src.set.len(), src.set.depth());
    Ok(())
}

fn cmd_vis(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let dir = direction(cfg, src.set.dim())?;
    let t: f64 = cfg.get("t", src.set.dim() as f64 - 1.0)?;
    let vis = visible_cells(&src.set, &dir)?;
    let content = dyadic_content(&vis, t)?;
    #[derive(Serialize)]
    struct VisReport {
        direction: Vec<f64>,
        cells: usize,
        visible: usize,
        exponent: f64,
        content: f64,
    }
    let rep = VisReport { direction: dir.unit[..dir.dim].to_vec(), cells: src.set.len(), visible: vis.len(), exponent: t, content };
    out.add("visible.json", to_json(&rep)?);
    out.add("visible.dyset", write_dyset(&vis).into_bytes());
    if vis.dim() == 2 {
        out.add("visible.pgm", set_to_pgm(&vis)?);
    }
    out.metrics.insert("visible".into(), vis.len() as f64);
    out.metrics.insert("content".into(), content);
    println!("{} of {} cells visible; H^{t}_inf content {content:.6}", vis.len(), src.set.len());
    Ok(())
}

fn cmd_dim(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let depth = src.set.depth();
    let lo: u32 = cfg.get("lo", 1.min(depth))?;
    let hi: u32 = cfg.get("hi", depth)?;
    let fit = box_dimension_of(&src.set, lo, hi)?;
    let mut csv = String::from("level,delta,count\n");
    for j in lo..=hi {
        let _ = writeln!(csv, "{j},{},{}", (-(j as f64)).exp2(), covering_number(&src.set, j)?);
    }
    #[derive(Serialize)]
    struct DimReport {
        slope: f64,
        intercept: f64,
        residual: f64,
        points: usize,
        similarity: Option<f64>,
    }
    let similarity = src.spec.as_ref().map(similarity_dimension);
    let rep = DimReport { slope: fit.slope, intercept: fit.intercept, residual: fit.residual, points: fit.points, similarity };
    out.add("dim.csv", csv.into_bytes());
    out.add("dim.json", to_json(&rep)?);
    out.metrics.insert("box_dimension".into(), fit.slope);
    println!("box dimension {:.4} (levels {lo}..{hi})", fit.slope);
    Ok(())
}

fn cmd_decomp(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let p = params(cfg, s, src.set.dim(), src.set.depth())?;
    let dir = direction(cfg, src.set.dim())?;
    let rep = decompose(&src.set, &dir, &p)?;
    out.add("decomposition.json", to_json(&rep)?);
    if src.set.dim() == 2 {
        out.add("decomposition.pgm", rep.to_pgm(&src.set)?);
    }
    for (k, part) in [("EH", &rep.heavy), ("EL", &rep.light), ("EB", &rep.bad), ("EG", &rep.good)] {
        out.metrics.insert(k.into(), part.content);
        println!("{k}: {} cells, content {:.6}", part.cells, part.content);
    }
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_slice(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let beta = cfg.get("beta", 0.1)?;
    let lv = levels(cfg, src.set.depth())?;
    let dir = direction(cfg, src.set.dim())?;
    let rows = slice_spectrum(&src.set, &dir.frame, s, beta, &lv)?;
    out.add("slice_spectrum.csv", crate::slicing::slice_spectrum_csv(&rows).into_bytes());
    for r in &rows {
        out.metrics.insert(format!("fraction_heavy@{}", r.scale), r.fraction_heavy);
        println!("delta={} heavy fraction {:.4}", r.scale, r.fraction_heavy);
    }
    Ok(())
}

fn cmd_heavy(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let eps = cfg.get("eps", 0.01)?;
    let dir = direction(cfg, src.set.dim())?;
    let m = natural_measure(&src.set, s)?;
    let n = dir.frame.n as i32;
    let ms = match cfg.list::<f64>("m")? {
        Some(v) => v,
        None => (0..=6).map(|j| 3f64.powi(n) * m.total_mass * (1u64 << j) as f64).collect(),
    };
    let reports = ms.iter().map(|&t| heavy_set(&src.set, &m, &dir.frame, t, s, eps)).collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("threshold,cells,content,bound,ratio\n");
    for r in &reports {
        let _ = writeln!(csv, "{},{},{},{},{}", r.threshold, r.cells, r.content, r.bound, r.ratio);
        out.metrics.insert(format!("cells@{}", r.threshold), r.cells as f64);
    }
    out.add("heavy.csv", csv.into_bytes());
    out.add("heavy.json", to_json(&reports)?);
    print!("{}", String::from_utf8_lossy(&out.files[0].1));
    Ok(())
}

fn cmd_sobolev(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let n = src.set.dim() as f64 - 1.0;
    let sigma = cfg.get("sigma", ((s - n) / 2.0 - 0.05).max(0.0))?;
    let count = cfg.get("directions", 16usize)?;
    let seed = cfg.get("seed", 1u64)?;
    out.seed = Some(seed);
    let m = natural_measure(&src.set, s)?.normalize();
    let avg = direction_average_sobolev(&m, sigma, count, seed, Some(s))?;
    out.add("sobolev.csv", avg.to_csv().into_bytes());
    out.add("sobolev.json", to_json(&avg)?);
    out.metrics.insert("mean_norm".into(), avg.mean);
    if let Some(w) = &avg.warning {
        eprintln!("warning: {w}");
    }
    println!("mean ‖π_θ μ‖²_(H^{sigma}) over {count} directions: {:.6}", avg.mean);
    Ok(())
}

fn cmd_energy(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let t = cfg.get("t", src.set.dim() as f64 - 0.5)?;
    let cutoff = cfg.get("cutoff", 64i64)?;
    let m = natural_measure(&src.set, s)?.normalize();
    let energy = riesz_energy(&m, t)?;
    let check = energy_fourier_check(&m, t, cutoff)?;
    #[derive(Serialize)]
    struct EnergyReport {
        exponent: f64,
        energy: f64,
        fourier: crate::spectral::EnergyFourierResult,
    }
    out.add("energy.json", to_json(&EnergyReport { exponent: t, energy, fourier: check.clone() })?);
    out.metrics.insert("energy".into(), energy);
    out.metrics.insert("energy_fourier_ratio".into(), check.ratio);
    println!("I_{t}(μ) = {energy:.6}; energy/lattice sum = {:.6}", check.ratio);
    Ok(())
}

fn cmd_calibrate(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let n = cfg.get("n", 1usize)?;
    let trials = cfg.get("trials", 10_000usize)?;
    let seed = cfg.get("seed", 1u64)?;
    out.seed = Some(seed);
    let c = calibrate_grid_constant(n, trials, seed)?;
    #[derive(Serialize)]
    struct Calibration {
        n: usize,
        trials: usize,
        seed: u64,
        c_star: f64,
    }
    out.add("calibration.json", to_json(&Calibration { n, trials, seed, c_star: c })?);
    out.metrics.insert("c_star".into(), c);
    println!("c* = {c:.6}");
    Ok(())
}

fn exp_vis_average(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let depth = src.set.depth();
    let lv = levels(cfg, depth)?;
    let base = params(cfg, s, src.set.dim(), depth)?;
    let relaxed = cfg.flag("relaxed")?;
    let count = cfg.get("directions", 16usize)?;
    let seed = cfg.get("seed", 1u64)?;
    out.seed = Some(seed);
    let table = direction_average_experiment(&src.set, &base, count, seed, &lv, relaxed)?;
    out.add("vis_average.csv", table.to_csv().into_bytes());
    out.add("vis_average.json", to_json(&table)?);
    for a in &table.averages {
        out.metrics.insert(format!("A@{}", a.delta), a.mean_vis_content);
        println!("delta={} A={:.6e} EH={:.3e} EL={:.3e} EB={:.3e}", a.delta, a.mean_vis_content, a.mean_heavy, a.mean_light, a.mean_bad);
    }
    if let Some(v) = table.vis_dimension {
        out.metrics.insert("vis_dimension".into(), v);
    }
    out.metrics.insert("strictly_decreasing".into(), table.strictly_decreasing() as u8 as f64);
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn exp_decompose(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let depth = src.set.depth();
    let lv = levels(cfg, depth)?;
    let count = cfg.get("directions", 8usize)?;
    let seed = cfg.get("seed", 1u64)?;
    out.seed = Some(seed);
    let dirs = sampled(src.set.dim(), count, seed)?;
    let mut csv = String::from("delta,direction,EH,EL,EB,EG,cellsH,cellsL,cellsB,cellsG,normalWithoutCube\n");
    let mut reports = Vec::new();
    for &j in &lv {
        let set = src.set.coarsen(j)?;
        let p = params(cfg, s, set.dim(), j)?;
        let reps: Vec<_> = {
            use rayon::prelude::*;
            dirs.par_iter().map(|d| decompose(&set, d, &p)).collect::<Result<_>>()?
        };
        for (k, r) in reps.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{k},{},{},{},{},{},{},{},{},{}",
                p.delta, r.heavy.content, r.light.content, r.bad.content, r.good.content, r.heavy.cells, r.light.cells,
                r.bad.cells, r.good.cells, r.tube_stats.normal_without_cube
            );
        }
        let mean = |f: &dyn Fn(&crate::visibility::DecompositionReport) -> f64| reps.iter().map(f).sum::<f64>() / count.max(1) as f64;
        out.metrics.insert(format!("EH@{}", p.delta), mean(&|r| r.heavy.content));
        out.metrics.insert(format!("EB@{}", p.delta), mean(&|r| r.bad.content));
        reports.extend(reps);
    }
    print!("{csv}");
    out.add("decompose.csv", csv.into_bytes());
    out.add("decompose.json", to_json(&reports)?);
    Ok(())
}

fn exp_slice_spectrum(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let src = load_set(cfg)?;
    let s = dimension_s(cfg, &src)?;
    let beta = cfg.get("beta", 0.1)?;
    let lv = levels(cfg, src.set.depth())?;
    let count = cfg.get("directions", 8usize)?;
    let seed = cfg.get("seed", 1u64)?;
    out.seed = Some(seed);
    let dirs = sampled(src.set.dim(), count, seed)?;
    let all: Vec<_> = {
        use rayon::prelude::*;
        dirs.par_iter().map(|d| slice_spectrum(&src.set, &d.frame, s, beta, &lv)).collect::<Result<_>>()?
    };
    let mut csv = String::from("direction,scale,thresholdExponent,fractionHeavy,sliceCountP50,sliceCountMax\n");
    let mut monotone = 0;
    for (k, rows) in all.iter().enumerate() {
        for r in rows {
            let _ =
                writeln!(csv, "{k},{},{},{},{},{}", r.scale, r.threshold_exponent, r.fraction_heavy, r.slice_count_p50, r.slice_count_max);
        }
        let mut by_scale = rows.clone();
        by_scale.sort_by(|a, b| b.scale.total_cmp(&a.scale));
        monotone += by_scale.windows(2).all(|w| w[1].fraction_heavy <= w[0].fraction_heavy) as usize;
    }
    out.metrics.insert("monotone_directions".into(), monotone as f64);
    println!("heavy fraction non-increasing in {monotone}/{count} directions");
    out.add("slice_spectrum.csv", csv.into_bytes());
    out.add("slice_spectrum.json", to_json(&all)?);
    Ok(())
}

fn run_experiment(cfg: &mut Settings, out: &mut Outputs) -> Result<()> {
    let kind = cfg.required("kind")?;
    match kind.as_str() {
        "vis-average" => exp_vis_average(cfg, out),
        "decompose" => exp_decompose(cfg, out),
        "slice-spectrum" => exp_slice_spectrum(cfg, out),
        "heavy-set" => cmd_heavy(cfg, out),
        "sobolev-average" => cmd_sobolev(cfg, out),
        "calibrate" => cmd_calibrate(cfg, out),
        _ => Err(Error::Config(format!(
            "key `kind`: unknown experiment `{kind}` (vis-average, decompose, slice-spectrum, heavy-set, sobolev-average, calibrate)"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendSummary {
    pub command: String,
    pub runs: usize,
    /// Least-squares slope of log A against log δ over all vis-average runs.
    pub slope: Option<f64>,
    pub monotone: Option<bool>,
    pub warnings: Vec<String>,
}

/// Per-command trend summaries of a run index. Drift is measured against `baselines`
/// where given, otherwise against the first run recording the metric.
pub fn summarize(index: &Path, baselines: &BTreeMap<String, f64>) -> Result<Vec<TrendSummary>> {
    let text = std::fs::read_to_string(index)
        .map_err(|e| Error::Config(format!("key `index`: cannot read `{}`: {e}", index.display())))?;
    let mut records = Vec::new();
    for (no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: RunRecord = serde_json::from_str(line).map_err(|e| Error::Format(format!("index line {}: {e}", no + 1)))?;
        records.push(r);
    }
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        let kind = r.config.get("kind").map(|k| format!("{} {k}", r.command)).unwrap_or_else(|| r.command.clone());
        groups.entry(kind).or_default().push(r);
    }
    let mut out = Vec::new();
    for (command, runs) in groups {
        let mut warnings = Vec::new();
        let mut first: BTreeMap<&str, f64> = BTreeMap::new();
        for r in &runs {
            for (k, &v) in &r.metrics {
                let base = *baselines.get(k).unwrap_or_else(|| first.entry(k).or_insert(v));
                if base != 0.0 && v != 0.0 && ((v / base).abs() > 2.0 || (v / base).abs() < 0.5) {
                    warnings.push(format!("{k} drifted to {v} from baseline {base}"));
                }
            }
        }
        let mut points: BTreeMap<u64, f64> = BTreeMap::new();
        for r in &runs {
            for (k, &v) in &r.metrics {
                if let Some(d) = k.strip_prefix("A@").and_then(|d| d.parse::<f64>().ok()) {
                    points.insert(d.to_bits(), v);
                }
            }
        }
        let pts: Vec<(f64, f64)> = points.iter().map(|(d, a)| (f64::from_bits(*d), *a)).collect();
        let slope = box_dimension_fit(&pts).ok().map(|f| -f.slope);
        let monotone = (pts.len() >= 2).then(|| {
            let mut p = pts.clone();
            p.sort_by(|a, b| b.0.total_cmp(&a.0));
            p.windows(2).all(|w| w[1].1 < w[0].1)
        });
        out.push(TrendSummary { command, runs: runs.len(), slope, monotone, warnings });
    }
    Ok(out)
}

fn cmd_summarize(cfg: &mut Settings) -> Result<()> {
    let index = PathBuf::from(cfg.get("index", String::from(RUN_INDEX))?);
    let baselines: BTreeMap<String, f64> = match cfg.raw("baselines") {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
            .map_err(|e| Error::Config(format!("key `baselines`: {e}")))?,
        None => BTreeMap::new(),
    };
    let rows = summarize(&index, &baselines)?;
    println!("{:<28} {:>5} {:>12} {:>9}", "experiment", "runs", "slope", "monotone");
    for r in &rows {
        let slope = r.slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        let mono = r.monotone.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<28} {:>5} {:>12} {:>9}", r.command, r.runs, slope, mono);
        for w in &r.warnings {
            println!("WARN {}: {w}", r.command);
        }
    }
    println!("{}", String::from_utf8_lossy(&to_json(&rows)?).trim_end());
    Ok(())
}

fn jobs(cfg: &mut Settings) -> Result<usize> {
    if cfg.values.contains_key("jobs") {
        return cfg.get("jobs", 0usize);
    }
    match std::env::var("VISIFRAC_JOBS") {
        Ok(v) => v.parse().map_err(|_| Error::Config(format!("VISIFRAC_JOBS: invalid value `{v}`"))),
        Err(_) => Ok(0),
    }
}

/// Parse `args` (including the program name) and execute the subcommand.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let (name, opts) = match &cli.command {
        Command::Gen(o) => ("gen", o),
        Command::Vis(o) => ("vis", o),
        Command::Dim(o) => ("dim", o),
        Command::Decomp(o) => ("decomp", o),
        Command::Slice(o) => ("slice", o),
        Command::Heavy(o) => ("heavy", o),
        Command::Sobolev(o) => ("sobolev", o),
        Command::Energy(o) => ("energy", o),
        Command::Calibrate(o) => ("calibrate", o),
        Command::Experiment(o) => ("experiment", o),
        Command::Summarize(o) => ("summarize", o),
    };
    let mut cfg = Settings::new(opts)?;
    let threads = jobs(&mut cfg)?;
    cfg.snapshot.remove("jobs");
    if name == "summarize" {
        return cmd_summarize(&mut cfg);
    }
    let dir = PathBuf::from(cfg.get("out", String::from("."))?);
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("key `jobs`: {e}")))?;
    let mut out = Outputs::default();
    pool.install(|| match name {
        "gen" => cmd_gen(&mut cfg, &mut out),
        "vis" => cmd_vis(&mut cfg, &mut out),
        "dim" => cmd_dim(&mut cfg, &mut out),
        "decomp" => cmd_decomp(&mut cfg, &mut out),
        "slice" => cmd_slice(&mut cfg, &mut out),
        "heavy" => cmd_heavy(&mut cfg, &mut out),
        "sobolev" => cmd_sobolev(&mut cfg, &mut out),
        "energy" => cmd_energy(&mut cfg, &mut out),
        "calibrate" => cmd_calibrate(&mut cfg, &mut out),
        _ => run_experiment(&mut cfg, &mut out),
    })?;
    let rec = commit(&dir, name, cfg, out, started)?;
    println!("wrote {} file(s) to {}", rec.outputs.len(), dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = parse_config("# comment\nset = carpet\ndepth=5 # trailing\n\n").unwrap();
        assert_eq!(c["set"], "carpet");
        assert_eq!(c["depth"], "5");
        let e = parse_config("colour=red").unwrap_err();
        assert!(e.to_string().contains("colour"));
        assert_eq!(e.exit_code(), 2);
        assert!(parse_config("depth").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "depth=5\nseed=3\n").unwrap();
        let opts = Opts { config: Some(path), depth: Some("7".into()), ..Default::default() };
        let mut s = Settings::new(&opts).unwrap();
        assert_eq!(s.get("depth", 0u32).unwrap(), 7);
        assert_eq!(s.get("seed", 0u64).unwrap(), 3);
        assert_eq!(s.get("trials", 10usize).unwrap(), 10);
        assert_eq!(s.snapshot["trials"], "10");
        let e = s.values.insert("eps".into(), "abc".into());
        assert!(e.is_none());
        assert!(s.get("eps", 0.0).unwrap_err().to_string().contains("`eps`"));
    }

    #[test]
    fn dyadic_delta_list() {
        let mut s = Settings { values: BTreeMap::from([("deltas".into(), "6,0.00390625".into())]), snapshot: BTreeMap::new() };
        assert_eq!(levels(&mut s, 10).unwrap(), vec![6, 8]);
        s.values.insert("deltas".into(), "0.3".into());
        assert!(levels(&mut s, 10).is_err());
        s.values.insert("deltas".into(), "12".into());
        assert!(levels(&mut s, 10).is_err());
    }
}
