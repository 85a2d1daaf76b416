//! Experiment configuration, replication, trace files and summaries.
//!
//! A configuration is a TOML document:
//!
//! ```toml
//! problem = "multimodal"      # or an [external] table
//! replications = 25
//! output_dir = "out"
//!
//! [clover]                    # every field of CloverConfig, all optional
//! seed = 100                  # replication i runs with seed + i
//! entropy_floor = 1e-6
//! budget = 60.0
//!
//! [metrics]
//! area_samples = 20000
//! pf_samples = 20000
//!
//! [summary]
//! axis = "cost"               # or "evaluations"
//! checkpoints = [10, 20, 30]  # every distinct axis value when empty
//! ```
//!
//! Truth metrics use common random numbers: the surrogate and the true
//! function are compared on the same fixed Monte Carlo points, so the error
//! carries no sampling noise from the reference.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{problem, AnalyticProblem};
use crate::clover::{run_with_metrics, CloverConfig, IterationTrace, RunOutput, StopReason};
use crate::contour::ContourResult;
use crate::domain::{DomainBox, PointSet, SharedSource};
use crate::error::{CloverError, Result};
use crate::external::{ExternalSource, ExternalSourceSpec};
use crate::linalg::Cholesky;
use crate::misgp::Posterior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Source 0 first.
    pub sources: Vec<ExternalSourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub area_samples: usize,
    pub pf_samples: usize,
    pub seed: u64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            area_samples: 20_000,
            pf_samples: 20_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointAxis {
    #[default]
    Cost,
    Evaluations,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarySettings {
    pub axis: CheckpointAxis,
    pub checkpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: Option<String>,
    #[serde(default)]
    pub external: Option<ExternalProblem>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub write_contours: bool,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub summary: SummarySettings,
    #[serde(default)]
    pub clover: CloverConfig,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn for_problem(name: &str, clover: CloverConfig) -> Self {
        Self {
            problem: Some(name.into()),
            external: None,
            replications: 1,
            output_dir: None,
            write_contours: true,
            metrics: MetricSettings::default(),
            summary: SummarySettings::default(),
            clover,
        }
    }

    /// Parses and validates; parse errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CloverError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CloverError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CloverError::Config(m) => CloverError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(CloverError::Config("replications must be at least 1".into()));
        }
        let setup = self.setup()?;
        self.clover.validate(setup.sources.len())
    }

    fn setup(&self) -> Result<Setup> {
        match (&self.problem, &self.external) {
            (Some(name), None) => {
                let p = problem::<f64>(name)?;
                Ok(Setup {
                    domain: p.domain.clone(),
                    sources: p.sources.clone(),
                    problem: Some(p),
                })
            }
            (None, Some(ext)) => {
                let domain = DomainBox::new(ext.lower.clone(), ext.upper.clone())?;
                let sources = ext
                    .sources
                    .iter()
                    .map(|s| ExternalSource::new(s.clone()).map(|s| Arc::new(s) as SharedSource<f64>))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(CloverError::Config)?;
                if sources.is_empty() {
                    return Err(CloverError::Config("external problem needs at least one source".into()));
                }
                Ok(Setup {
                    domain,
                    sources,
                    problem: None,
                })
            }
            _ => Err(CloverError::Config("give exactly one of 'problem' or an [external] table".into())),
        }
    }

    pub fn replication_seed(&self, i: usize) -> u64 {
        self.clover.seed.wrapping_add(i as u64)
    }
}

struct Setup {
    domain: DomainBox<f64>,
    sources: Vec<SharedSource<f64>>,
    problem: Option<AnalyticProblem<f64>>,
}

/// Relative area and failure-probability errors of the surrogate's
/// excursion set `{μ(0, x) > 0}` against the truth on fixed points. A
/// sample count of zero drops that metric.
#[derive(Debug, Clone)]
pub struct TruthMetrics {
    area: Option<(PointSet<f64>, usize)>,
    pf: Option<(PointSet<f64>, usize)>,
}

impl TruthMetrics {
    pub fn new(problem: &AnalyticProblem<f64>, settings: &MetricSettings) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let region = &problem.area_region;
        let truth = |x: &[f64]| problem.shifted_truth(x) > 0.0;
        let area = (settings.area_samples > 0).then(|| {
            let mut pts = PointSet::new(region.dim());
            for _ in 0..settings.area_samples {
                let u: Vec<f64> = (0..region.dim()).map(|_| rng.gen()).collect();
                pts.push(&region.from_unit(&u));
            }
            let hits = pts.iter().filter(|x| truth(x)).count();
            (pts, hits)
        });
        let pf = match &problem.input {
            Some(input) if settings.pf_samples > 0 => {
                let d = input.mean.len();
                let chol = Cholesky::factor(&input.cov, d)
                    .map_err(|_| CloverError::Config("input covariance is not positive definite".into()))?;
                let mut pts = PointSet::new(d);
                for _ in 0..settings.pf_samples {
                    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let x: Vec<f64> = (0..d)
                        .map(|i| input.mean[i] + (0..=i).map(|k| chol.row(i)[k] * z[k]).sum::<f64>())
                        .collect();
                    pts.push(&x);
                }
                let hits = pts.iter().filter(|x| truth(x)).count();
                Some((pts, hits))
            }
            _ => None,
        };
        Ok(Self { area, pf })
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.area.is_some() {
            v.push("area_error".to_string());
        }
        if self.pf.is_some() {
            v.push("pf_error".into());
        }
        v
    }

    pub fn evaluate(&self, posterior: &Posterior<f64>) -> Vec<f64> {
        let rel = |points: &PointSet<f64>, truth: usize| {
            let hits = points.iter().filter(|x| posterior.mean0(x) > 0.0).count();
            (hits as f64 - truth as f64).abs() / truth.max(1) as f64
        };
        [&self.area, &self.pf]
            .into_iter()
            .flatten()
            .map(|(pts, hits)| rel(pts, *hits))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub metric_names: Vec<String>,
    pub rows: Vec<IterationTrace<f64>>,
}

impl Trace {
    /// Cumulative cost at the first row whose entropy is at most `level`.
    pub fn cost_to_reach(&self, level: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.entropy <= level).map(|r| r.cum_cost)
    }

    pub fn metric(&self, name: &str) -> Option<usize> {
        self.metric_names.iter().position(|m| m == name)
    }

    /// Row in force at checkpoint `c` along `axis`, if any.
    pub fn at(&self, axis: CheckpointAxis, c: f64) -> Option<&IterationTrace<f64>> {
        let pos = match axis {
            CheckpointAxis::Cost => self.rows.partition_point(|r| r.cum_cost <= c),
            CheckpointAxis::Evaluations => (c.floor().max(0.0) as usize).min(self.rows.len()),
        };
        pos.checked_sub(1).map(|i| &self.rows[i])
    }
}

#[derive(Debug)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub trace: Trace,
    pub output: RunOutput<f64>,
}

impl Replication {
    pub fn failed(&self) -> bool {
        self.output.error.is_some()
    }
}

/// Runs replication `index` with seed `master + index`.
pub fn run_replication(config: &ExperimentConfig, index: usize) -> Result<Replication> {
    let setup = config.setup()?;
    let mut clover = config.clover.clone();
    clover.seed = config.replication_seed(index);
    let metrics = setup
        .problem
        .as_ref()
        .map(|p| TruthMetrics::new(p, &config.metrics))
        .transpose()?;
    let names = metrics.as_ref().map(TruthMetrics::names).unwrap_or_default();
    let output = run_with_metrics(&clover, &setup.domain, &setup.sources, |post| {
        metrics.as_ref().map(|m| m.evaluate(post)).unwrap_or_default()
    });
    Ok(Replication {
        index,
        seed: clover.seed,
        trace: Trace {
            metric_names: names,
            rows: output.trace.clone(),
        },
        output,
    })
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub replications: Vec<Replication>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn all_succeeded(&self) -> bool {
        self.replications.iter().all(|r| !r.failed())
    }
}

/// Runs every replication, writing files when an output directory is given.
/// A failed replication is recorded and the others still run.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut reps = Vec::with_capacity(config.replications);
    for i in 0..config.replications {
        let rep = run_replication(config, i)?;
        if let Some(dir) = out_dir {
            write_file(&dir.join(format!("trace_{i:03}.csv")), |w| write_trace(&rep.trace, w))?;
            if config.write_contours {
                if let Some(c) = &rep.output.contour {
                    write_file(&dir.join(format!("contour_{i:03}.csv")), |w| write_sign_grid(c, w))?;
                    if !c.polylines.is_empty() {
                        write_file(&dir.join(format!("polylines_{i:03}.csv")), |w| write_polylines(c, w))?;
                    }
                }
            }
        }
        reps.push(rep);
    }
    let traces: Vec<Trace> = reps.iter().map(|r| r.trace.clone()).collect();
    let summary = summarize(&traces, &config.summary)?;
    if let Some(dir) = out_dir {
        write_file(&dir.join("replications.csv"), |w| write_status(&reps, w))?;
        write_file(&dir.join("summary.csv"), |w| write_summary(&summary, w))?;
    }
    Ok(ExperimentReport {
        replications: reps,
        summary,
    })
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CloverError {
    CloverError::Config(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

fn csv_error(e: impl std::fmt::Display) -> CloverError {
    CloverError::Config(format!("csv: {e}"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| CloverError::Config(format!("csv: '{s}' is not a number")))
}

const FIXED_HEAD: [&str; 2] = ["iter", "source"];
const FIXED_TAIL: [&str; 6] = ["y", "step_cost", "cum_cost", "entropy", "acquisition", "refreshed"];

/// Columns `iter, source, x1..x_d, y, step_cost, cum_cost, entropy,
/// acquisition, refreshed`, then one column per metric. A missing
/// acquisition is an empty field.
pub fn write_trace(trace: &Trace, out: &mut dyn Write) -> Result<()> {
    let d = trace.rows.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_HEAD.iter().map(|s| s.to_string()).collect();
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend(FIXED_TAIL.iter().map(|s| s.to_string()));
    header.extend(trace.metric_names.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for r in &trace.rows {
        let mut rec = vec![r.iter.to_string(), r.source.to_string()];
        rec.extend(r.x.iter().map(|&v| num(v)));
        rec.push(num(r.y));
        rec.push(num(r.step_cost));
        rec.push(num(r.cum_cost));
        rec.push(num(r.entropy));
        rec.push(r.acquisition.map(num).unwrap_or_default());
        rec.push(if r.refreshed { "1" } else { "0" }.into());
        rec.extend(r.metrics.iter().map(|&v| num(v)));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

pub fn read_trace(input: &mut dyn Read) -> Result<Trace> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let d = header.iter().skip(2).take_while(|h| h.starts_with('x')).count();
    let expect: Vec<&str> = FIXED_TAIL.to_vec();
    if header.len() < 2 + d + expect.len()
        || header[..2] != FIXED_HEAD
        || header[2 + d..2 + d + expect.len()].iter().map(String::as_str).ne(expect.iter().copied())
    {
        return Err(CloverError::Config(format!("csv: unexpected trace header {header:?}")));
    }
    let metric_names = header[2 + d + expect.len()..].to_vec();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| f(i).parse::<usize>().map_err(|_| CloverError::Config(format!("csv: bad integer '{}'", f(i))));
        let base = 2 + d;
        rows.push(IterationTrace {
            iter: int(0)?,
            source: int(1)?,
            x: (2..base).map(|i| parse_num(f(i))).collect::<Result<_>>()?,
            y: parse_num(f(base))?,
            step_cost: parse_num(f(base + 1))?,
            cum_cost: parse_num(f(base + 2))?,
            entropy: parse_num(f(base + 3))?,
            acquisition: match f(base + 4) {
                "" => None,
                s => Some(parse_num(s)?),
            },
            refreshed: f(base + 5) == "1",
            metrics: (base + 6..rec.len()).map(|i| parse_num(f(i))).collect::<Result<_>>()?,
        });
    }
    Ok(Trace { metric_names, rows })
}

pub fn write_sign_grid(c: &ContourResult<f64>, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = c.axes.len();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("mean".into());
    header.push("sign".into());
    w.write_record(&header).map_err(csv_error)?;
    for (i, s) in c.signs().into_iter().enumerate() {
        let mut rec: Vec<String> = c.point(i).into_iter().map(num).collect();
        rec.push(num(c.values[i]));
        rec.push(s.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

pub fn write_polylines(c: &ContourResult<f64>, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["polyline", "closed", "x1", "x2"]).map_err(csv_error)?;
    for (k, line) in c.polylines.iter().enumerate() {
        for p in &line.points {
            w.write_record([k.to_string(), u8::from(line.closed).to_string(), num(p[0]), num(p[1])])
                .map_err(csv_error)?;
        }
    }
    w.flush().map_err(csv_error)
}

fn write_status(reps: &[Replication], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replication", "seed", "stop", "evaluations", "total_cost", "final_entropy", "error"])
        .map_err(csv_error)?;
    for r in reps {
        let last = r.trace.rows.last();
        let stop = match r.output.stop {
            StopReason::Budget => "budget",
            StopReason::EntropyFloor => "entropy_floor",
            StopReason::AcquisitionFloor => "acquisition_floor",
            StopReason::MaxEvaluations => "max_evaluations",
            StopReason::Error => "error",
        };
        w.write_record([
            r.index.to_string(),
            r.seed.to_string(),
            stop.to_string(),
            r.trace.rows.len().to_string(),
            last.map_or(String::new(), |l| num(l.cum_cost)),
            last.map_or(String::new(), |l| num(l.entropy)),
            r.output.error.as_ref().map(|e| e.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub checkpoint: f64,
    pub metric: String,
    pub count: usize,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
}

/// Percentile of sorted data by linear interpolation between order
/// statistics at rank `p (n − 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Median and quartiles of entropy and every metric at each checkpoint,
/// carrying each trace's last value forward. Traces with no row yet at a
/// checkpoint are left out of it.
pub fn summarize(traces: &[Trace], settings: &SummarySettings) -> Result<Vec<SummaryRow>> {
    if traces.is_empty() {
        return Err(CloverError::Config("nothing to summarize".into()));
    }
    let names = &traces[0].metric_names;
    if traces.iter().any(|t| &t.metric_names != names) {
        return Err(CloverError::Config("traces carry different metric columns".into()));
    }
    let mut checkpoints = settings.checkpoints.clone();
    if checkpoints.is_empty() {
        for t in traces {
            for (i, r) in t.rows.iter().enumerate() {
                checkpoints.push(match settings.axis {
                    CheckpointAxis::Cost => r.cum_cost,
                    CheckpointAxis::Evaluations => (i + 1) as f64,
                });
            }
        }
    }
    checkpoints.sort_by(f64::total_cmp);
    checkpoints.dedup();
    let mut out = Vec::new();
    for &c in &checkpoints {
        let rows: Vec<&IterationTrace<f64>> = traces.iter().filter_map(|t| t.at(settings.axis, c)).collect();
        let mut metric = |name: &str, pick: &dyn Fn(&IterationTrace<f64>) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(|r| pick(r)).filter(|v| !v.is_nan()).collect();
            v.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                checkpoint: c,
                metric: name.to_string(),
                count: v.len(),
                p25: percentile(&v, 0.25),
                median: percentile(&v, 0.5),
                p75: percentile(&v, 0.75),
            });
        };
        metric("entropy", &|r| r.entropy);
        for (k, name) in names.iter().enumerate() {
            metric(name, &|r| r.metrics.get(k).copied().unwrap_or(f64::NAN));
        }
    }
    Ok(out)
}

pub fn write_summary(rows: &[SummaryRow], out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "# percentiles by linear interpolation between order statistics at rank p(n-1)"
    )
    .map_err(csv_error)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["checkpoint", "metric", "count", "p25", "median", "p75"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([num(r.checkpoint), r.metric.clone(), r.count.to_string(), num(r.p25), num(r.median), num(r.p75)])
            .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

pub fn read_summary(input: &mut dyn Read) -> Result<Vec<SummaryRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        out.push(SummaryRow {
            checkpoint: parse_num(f(0))?,
            metric: f(1).to_string(),
            count: f(2).parse().map_err(|_| CloverError::Config(format!("csv: bad count '{}'", f(2))))?,
            p25: parse_num(f(3))?,
            median: parse_num(f(4))?,
            p75: parse_num(f(5))?,
        });
    }
    Ok(out)
}

/// Reads trace files and summarizes them.
pub fn summarize_files(paths: &[PathBuf], settings: &SummarySettings) -> Result<Vec<SummaryRow>> {
    let traces = paths
        .iter()
        .map(|p| {
            let mut f = fs::File::open(p).map_err(|e| io_error(p, e))?;
            read_trace(&mut f)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&traces, settings)
}
