//! One entry point per CLI verb. Each writes its outputs under `out_dir` and
//! returns the paths written together with the outcome status.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use popmaxent::dynamics::{
    bin_points, fit_dynamics_with, fit_linear_dynamics, panel_to_points, BinnedDynamics, DynamicsFit,
    DynamicsFitOptions, LinearDynamicsFit, DEFAULT_DELTA_U, DEFAULT_MIN_FRAC,
};
use popmaxent::estimation::{
    consistency_workflow_with, fit_moments, fit_rank_q, fit_rank_q1, model_sizes, ConsistencyConfig, FitReport,
};
use popmaxent::growthsim::{self, SimConfig};
use popmaxent::model::{gamma_master_curve, gamma_scale};
use popmaxent::sampling::{confidence_band, ConfidenceBand, DEFAULT_LEVEL, DEFAULT_REPLICAS};
use popmaxent::stats::{pearson_r, slope_through_origin};
use popmaxent::{ModelParams, RankedSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{ingest, write_panel, Dataset, FormatOptions, Provenance};
use crate::error::{CliError, CliResult, EXIT_DECLARED_FAILURE, EXIT_NON_CONVERGENCE, EXIT_OK};

/// How a command ended when it produced output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotConverged,
    DeclaredFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => EXIT_OK,
            Status::NotConverged => EXIT_NON_CONVERGENCE,
            Status::DeclaredFailure => EXIT_DECLARED_FAILURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
}

/// File-name-safe form of a group name.
pub fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    wtr.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        wtr.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn load(input: &Path) -> CliResult<Dataset> {
    ingest(input, &FormatOptions::default())
}

fn sample_of(ds: &Dataset, group: Option<&str>, year: i32) -> CliResult<RankedSample> {
    let sizes = ds.slice(group, year)?;
    Ok(RankedSample::from_sizes(sizes, group.unwrap_or("all"))?)
}

/// Model parameters in the layout used by every report.
#[derive(Debug, Clone, Serialize)]
pub struct ParamsOut {
    pub q: f64,
    pub lambda: f64,
    pub log_lambda: f64,
    pub x0: f64,
    pub log_x0: f64,
    pub sigma: f64,
    pub n_c: Option<usize>,
    pub n_total: Option<f64>,
}

impl From<&ModelParams> for ParamsOut {
    fn from(p: &ModelParams) -> Self {
        Self {
            q: p.q(),
            lambda: p.lambda(),
            log_lambda: p.lambda().ln(),
            x0: p.x0(),
            log_x0: p.x0().ln(),
            sigma: p.sigma(),
            n_c: p.n_c(),
            n_total: p.n_total(),
        }
    }
}

// ---------------------------------------------------------------- ingest-check

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// Panel CSV file.
    pub input: PathBuf,
    /// Also write the summary to `ingest.json` in this directory.
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub dataset: Provenance,
    pub units: usize,
    pub years: Vec<i32>,
    /// Units per group, when the file has a group column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, usize>>,
}

pub fn run_ingest_check(args: &IngestArgs) -> CliResult<(IngestSummary, Outcome)> {
    let ds = load(&args.input)?;
    let units = ds.panel.iter().map(|r| r.unit_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    let groups = ds.groups.as_ref().map(|m| {
        let mut c = BTreeMap::new();
        for g in m.values() {
            *c.entry(g.clone()).or_insert(0) += 1;
        }
        c
    });
    let summary = IngestSummary { dataset: ds.provenance.clone(), units, years: ds.years(), groups };
    let mut files = Vec::new();
    if let Some(dir) = &args.out_dir {
        prepare_dir(dir)?;
        let p = dir.join("ingest.json");
        write_json(&p, &summary)?;
        files.push(p);
    }
    Ok((summary, Outcome { status: Status::Ok, files }))
}

// ---------------------------------------------------------------------- fit

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Rank least squares with q = 1 and no drift.
    Q1,
    /// Rank least squares over q (and σ with --with-drift).
    Q,
    /// Logarithmic-moment system (with drift under --with-drift).
    Moments,
    /// Three-way agreement workflow with outsider exclusion.
    Consistency,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Panel CSV file.
    pub input: PathBuf,
    /// Group to fit; all units when omitted.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub year: i32,
    #[arg(long, value_enum, default_value_t = FitMode::Consistency)]
    pub mode: FitMode,
    /// Include lognormal drift in `q` and `moments` fits.
    #[arg(long)]
    pub with_drift: bool,
    /// Fit the total population N as a parameter (mode q1).
    #[arg(long)]
    pub fit_n: bool,
    /// Total population N for mode q1; defaults to the slice total.
    #[arg(long)]
    pub n_total: Option<f64>,
    /// Most entries the consistency workflow may drop from the large end.
    #[arg(long, default_value_t = 3)]
    pub exclude_head: usize,
    /// Most entries the consistency workflow may drop from the small end.
    #[arg(long, default_value_t = 5)]
    pub exclude_tail: usize,
    /// Monte Carlo replicas for the plot band; 0 skips the band.
    #[arg(long, default_value_t = DEFAULT_REPLICAS)]
    pub replicas: usize,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl FitArgs {
    pub fn new(input: impl Into<PathBuf>, year: i32, mode: FitMode) -> Self {
        Self {
            input: input.into(),
            group: None,
            year,
            mode,
            with_drift: false,
            fit_n: false,
            n_total: None,
            exclude_head: 3,
            exclude_tail: 5,
            replicas: DEFAULT_REPLICAS,
            level: DEFAULT_LEVEL,
            seed: 0,
            out_dir: PathBuf::from("."),
        }
    }

    fn consistency_config(&self) -> ConsistencyConfig {
        ConsistencyConfig { max_head: self.exclude_head, max_tail: self.exclude_tail, ..ConsistencyConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceInfo {
    pub group: Option<String>,
    pub year: i32,
    pub n_c: usize,
    pub total: f64,
}

/// JSON document written by `fit`.
#[derive(Debug, Clone, Serialize)]
pub struct FitDocument {
    pub status: Status,
    pub method: &'static str,
    pub params: ParamsOut,
    pub stderr: popmaxent::estimation::StdErrors,
    #[serde(rename = "R")]
    pub r: f64,
    pub outsiders: Vec<popmaxent::estimation::Outsider>,
    pub converged: bool,
    pub cost: f64,
    pub starts: usize,
    pub notes: Vec<String>,
    pub agreement: Option<popmaxent::estimation::Agreement>,
    pub slice: SliceInfo,
    pub dataset: Provenance,
    pub config: serde_json::Value,
}

/// Fitted model sizes and optional band at the ranks of the fitted sample.
pub struct PlotData {
    pub ranks: Vec<f64>,
    pub observed: Vec<f64>,
    pub fitted: Vec<f64>,
    pub band: Option<ConfidenceBand>,
}

fn fit_sample(args: &FitArgs, sample: &RankedSample) -> CliResult<FitReport> {
    Ok(match args.mode {
        FitMode::Q1 => fit_rank_q1(sample, args.n_total.unwrap_or_else(|| sample.total()), args.fit_n)?,
        FitMode::Q => fit_rank_q(sample, args.with_drift)?,
        FitMode::Moments => fit_moments(sample, args.with_drift)?,
        FitMode::Consistency => consistency_workflow_with(sample, &args.consistency_config())?,
    })
}

fn plot_data(report: &FitReport, sample: &RankedSample, replicas: usize, level: f64, seed: u64) -> CliResult<PlotData> {
    let (head, tail) = report.agreement.as_ref().map(|a| (a.head_excluded, a.tail_excluded)).unwrap_or((0, 0));
    let fitted_sample = sample.trimmed(head, tail)?;
    let n_c = fitted_sample.len();
    let fitted = model_sizes(&report.params, fitted_sample.ranks(), n_c)?;
    let band = if replicas > 0 { Some(confidence_band(&report.params, n_c, replicas, level, seed)?) } else { None };
    Ok(PlotData { ranks: fitted_sample.ranks().to_vec(), observed: fitted_sample.sizes().to_vec(), fitted, band })
}

pub fn write_plot_csv(path: &Path, plot: &PlotData) -> CliResult<()> {
    let rows: Vec<Vec<String>> = (0..plot.ranks.len())
        .map(|i| {
            vec![
                num(plot.ranks[i]),
                num(plot.observed[i]),
                num(plot.fitted[i]),
                opt_num(plot.band.as_ref().map(|b| b.lower[i])),
                opt_num(plot.band.as_ref().map(|b| b.upper[i])),
            ]
        })
        .collect();
    write_csv(path, &["rank", "observed", "fitted", "band_low", "band_high"], &rows)
}

/// Fits one group/year slice and writes `fit_<group>_<year>.json` and
/// `fit_<group>_<year>_plot.csv`.
pub fn run_fit(args: &FitArgs) -> CliResult<(FitDocument, Outcome)> {
    let ds = load(&args.input)?;
    let sample = sample_of(&ds, args.group.as_deref(), args.year)?;
    let report = fit_sample(args, &sample)?;
    let plot = plot_data(&report, &sample, args.replicas, args.level, args.seed)?;
    let status = if report.is_declared_failure() {
        Status::DeclaredFailure
    } else if !report.converged {
        Status::NotConverged
    } else {
        Status::Ok
    };
    let mut config = serde_json::to_value(args).map_err(|e| CliError::Other(e.to_string()))?;
    if args.mode == FitMode::Consistency {
        config["consistency"] = serde_json::to_value(args.consistency_config()).unwrap_or_default();
    }
    let doc = FitDocument {
        status,
        method: report.method.tag(),
        params: ParamsOut::from(&report.params),
        stderr: report.stderr,
        r: report.correlation,
        outsiders: report.outsiders.clone(),
        converged: report.converged,
        cost: report.cost,
        starts: report.starts,
        notes: report.notes.clone(),
        agreement: report.agreement.clone(),
        slice: SliceInfo { group: args.group.clone(), year: args.year, n_c: sample.len(), total: sample.total() },
        dataset: ds.provenance.clone(),
        config,
    };
    prepare_dir(&args.out_dir)?;
    let stem = format!("fit_{}_{}", slug(args.group.as_deref().unwrap_or("all")), args.year);
    let json_path = args.out_dir.join(format!("{stem}.json"));
    let csv_path = args.out_dir.join(format!("{stem}_plot.csv"));
    write_json(&json_path, &doc)?;
    write_plot_csv(&csv_path, &plot)?;
    Ok((doc, Outcome { status, files: vec![json_path, csv_path] }))
}

// -------------------------------------------------------------------- scale

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScaleArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub year: i32,
    /// Groups to scale (repeatable); all groups when omitted.
    #[arg(long = "group")]
    pub groups: Vec<String>,
    /// CSV with columns group,lambda,x0 giving q = 1 parameters; groups are
    /// fitted when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Fit N as well when fitting.
    #[arg(long)]
    pub fit_n: bool,
    /// Replicas for each group's finite-size band; 0 skips the band.
    #[arg(long, default_value_t = DEFAULT_REPLICAS)]
    pub replicas: usize,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleEntry {
    pub group: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsOut>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Scaled end points `(Γ(0,Λ), Λ)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inside_band: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleIndex {
    pub year: i32,
    pub groups: Vec<ScaleEntry>,
    pub dataset: Provenance,
    pub config: ScaleArgs,
}

fn read_param_table(path: &Path) -> CliResult<BTreeMap<String, (f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        group: String,
        lambda: f64,
        x0: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut problems = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        match row {
            Ok(r) => {
                out.insert(r.group, (r.lambda, r.x0));
            }
            Err(e) => problems.push(format!("line {}: {e}", i + 2)),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Parse(problems));
    }
    Ok(out)
}

fn selected_groups(ds: &Dataset, requested: &[String]) -> CliResult<Vec<Option<String>>> {
    if !requested.is_empty() {
        return Ok(requested.iter().cloned().map(Some).collect());
    }
    let names = ds.group_names();
    Ok(if names.is_empty() { vec![None] } else { names.into_iter().map(Some).collect() })
}

fn scale_group(
    ds: &Dataset,
    args: &ScaleArgs,
    group: Option<&str>,
    table: Option<&BTreeMap<String, (f64, f64)>>,
) -> CliResult<(ScaleEntry, Vec<Vec<String>>)> {
    let name = group.unwrap_or("all").to_string();
    let sample = sample_of(ds, group, args.year)?;
    let (params, r) = match table {
        Some(t) => {
            let &(lambda, x0) = t
                .get(&name)
                .ok_or_else(|| CliError::Validation(vec![format!("no parameters for group `{name}`")]))?;
            (ModelParams::q1(lambda, x0)?.with_units(sample.len())?, None)
        }
        None => {
            let rep = fit_rank_q1(&sample, sample.total(), args.fit_n)?;
            if !rep.converged {
                return Err(popmaxent::Error::NonConvergence(format!("q = 1 fit of group `{name}`")).into());
            }
            (rep.params, Some(rep.correlation))
        }
    };
    let scaled = gamma_scale(&sample, &params)?;
    let g0 = popmaxent::specfun::upper_gamma(0.0, params.lambda())?;
    let factor = params.lambda() / params.x0();
    let band = if args.replicas > 0 {
        Some(confidence_band(&params, sample.len(), args.replicas, args.level, args.seed)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(sample.len());
    let mut inside = 0usize;
    for i in 0..sample.len() {
        let master = gamma_master_curve(scaled.ranks[i])?;
        let (lo, hi) = match &band {
            Some(b) => (Some(b.lower[i] * factor), Some(b.upper[i] * factor)),
            None => (None, None),
        };
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if scaled.sizes[i] >= lo && scaled.sizes[i] <= hi {
                inside += 1;
            }
        }
        rows.push(vec![
            name.clone(),
            num(sample.ranks()[i]),
            num(sample.sizes()[i]),
            num(scaled.ranks[i]),
            num(scaled.sizes[i]),
            num(master),
            opt_num(lo),
            opt_num(hi),
        ]);
    }
    let entry = ScaleEntry {
        group: name,
        ok: true,
        params: Some(ParamsOut::from(&params)),
        r,
        endpoint: Some((g0, params.lambda())),
        inside_band: band.map(|_| inside as f64 / sample.len() as f64),
        file: None,
        error: None,
    };
    Ok((entry, rows))
}

const SCALE_HEADER: [&str; 8] = ["group", "rank", "size", "rank_scaled", "size_scaled", "master", "band_low", "band_high"];

/// Gamma-scales each group with its q = 1 parameters. Writes
/// `scale_<group>_<year>.csv` per group and the index `scale_<year>.json`.
/// Groups without a usable fit are reported in the index and make the
/// outcome `NotConverged`.
pub fn run_scale(args: &ScaleArgs) -> CliResult<(ScaleIndex, Outcome)> {
    let ds = load(&args.input)?;
    let table = args.params.as_deref().map(read_param_table).transpose()?;
    let groups = selected_groups(&ds, &args.groups)?;
    prepare_dir(&args.out_dir)?;
    type GroupResult = (String, CliResult<(ScaleEntry, Vec<Vec<String>>)>);
    let results: Vec<GroupResult> = groups
        .par_iter()
        .map(|g| (g.clone().unwrap_or_else(|| "all".into()), scale_group(&ds, args, g.as_deref(), table.as_ref())))
        .collect();
    let mut entries = Vec::new();
    let mut files = Vec::new();
    let mut status = Status::Ok;
    for (name, res) in results {
        match res {
            Ok((mut entry, rows)) => {
                let file = format!("scale_{}_{}.csv", slug(&name), args.year);
                let path = args.out_dir.join(&file);
                write_csv(&path, &SCALE_HEADER, &rows)?;
                entry.file = Some(file);
                files.push(path);
                entries.push(entry);
            }
            Err(e) => {
                status = Status::NotConverged;
                entries.push(ScaleEntry {
                    group: name,
                    ok: false,
                    params: None,
                    r: None,
                    endpoint: None,
                    inside_band: None,
                    file: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let index = ScaleIndex { year: args.year, groups: entries, dataset: ds.provenance.clone(), config: args.clone() };
    let path = args.out_dir.join(format!("scale_{}.json", args.year));
    write_json(&path, &index)?;
    files.push(path);
    Ok((index, Outcome { status, files }))
}

// --------------------------------------------------------------------- band

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandArgs {
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub x0: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Number of units.
    #[arg(long)]
    pub n_c: usize,
    #[arg(long, default_value_t = DEFAULT_REPLICAS)]
    pub replicas: usize,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

/// Writes `band.csv` (rank, lower, median, upper) and `band.json`.
pub fn run_band(args: &BandArgs) -> CliResult<(ConfidenceBand, Outcome)> {
    let params = ModelParams::new(args.q, args.lambda, args.x0, args.sigma)?.with_units(args.n_c)?;
    let band = confidence_band(&params, args.n_c, args.replicas, args.level, args.seed)?;
    prepare_dir(&args.out_dir)?;
    let rows: Vec<Vec<String>> = (0..args.n_c)
        .map(|i| vec![num(i as f64 + 0.5), num(band.lower[i]), num(band.median[i]), num(band.upper[i])])
        .collect();
    let csv_path = args.out_dir.join("band.csv");
    write_csv(&csv_path, &["rank", "lower", "median", "upper"], &rows)?;
    let json_path = args.out_dir.join("band.json");
    write_json(&json_path, &json!({ "params": ParamsOut::from(&params), "config": args }))?;
    Ok((band, Outcome { status: Status::Ok, files: vec![json_path, csv_path] }))
}

// ----------------------------------------------------------------- dynamics

#[derive(Debug, Clone, Args, Serialize)]
pub struct DynamicsArgs {
    pub input: PathBuf,
    /// Group to analyse; all units when omitted.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DELTA_U)]
    pub delta_u: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_FRAC)]
    pub min_bin_frac: f64,
    /// Weight bins by count over variance.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl DynamicsArgs {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            group: None,
            delta_u: DEFAULT_DELTA_U,
            min_bin_frac: DEFAULT_MIN_FRAC,
            weighted: false,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsDocument {
    pub group: Option<String>,
    pub points: usize,
    pub fit: DynamicsFit,
    /// Straight-line diagnostic over the same bins.
    pub linear: Option<LinearDynamicsFit>,
    pub binning: BinnedDynamics,
    pub dataset: Provenance,
    pub config: serde_json::Value,
}

fn dynamics_of(
    panel: &[popmaxent::dynamics::PanelRecord],
    delta_u: f64,
    min_frac: f64,
    weighted: bool,
) -> CliResult<(usize, BinnedDynamics, DynamicsFit)> {
    let points = panel_to_points(panel)?;
    let binned = bin_points(&points, delta_u, min_frac)?;
    let fit = fit_dynamics_with(&binned, &DynamicsFitOptions { weighted, ..DynamicsFitOptions::default() })?;
    Ok((points.len(), binned, fit))
}

/// Runs the binned dynamics fit and writes `dynamics_<group>.json` and
/// `dynamics_<group>_bins.csv`.
pub fn run_dynamics(args: &DynamicsArgs) -> CliResult<(DynamicsDocument, Outcome)> {
    let ds = load(&args.input)?;
    let panel = ds.group_panel(args.group.as_deref())?;
    let (n_points, binned, fit) = dynamics_of(&panel, args.delta_u, args.min_bin_frac, args.weighted)?;
    let linear = fit_linear_dynamics(&binned).ok();
    let mut config = serde_json::to_value(args).map_err(|e| CliError::Other(e.to_string()))?;
    config["fit_options"] = serde_json::to_value(DynamicsFitOptions { weighted: args.weighted, ..Default::default() })
        .unwrap_or_default();
    let rows: Vec<Vec<String>> = binned
        .bins
        .iter()
        .map(|b| {
            let curve = fit.raw_k1 + fit.raw_kq * ((fit.raw_q - 1.0) * b.center).exp();
            vec![num(b.center), num(b.mean_udot), num(b.std_udot), b.count.to_string(), num(curve)]
        })
        .collect();
    let doc = DynamicsDocument {
        group: args.group.clone(),
        points: n_points,
        fit,
        linear,
        binning: binned,
        dataset: ds.provenance.clone(),
        config,
    };
    prepare_dir(&args.out_dir)?;
    let stem = format!("dynamics_{}", slug(args.group.as_deref().unwrap_or("all")));
    let json_path = args.out_dir.join(format!("{stem}.json"));
    let csv_path = args.out_dir.join(format!("{stem}_bins.csv"));
    write_json(&json_path, &doc)?;
    write_csv(&csv_path, &["center", "mean_udot", "std_udot", "count", "fitted"], &rows)?;
    Ok((doc, Outcome { status: Status::Ok, files: vec![json_path, csv_path] }))
}

// ---------------------------------------------------------------- compare-q

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxentMode {
    /// Consistency workflow.
    Consistency,
    /// Rank least squares over q without drift.
    Q,
    /// Rank least squares over q with drift.
    QDrift,
    /// Skip the distribution fit (compare against --reference only).
    None,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    pub input: PathBuf,
    /// Year of the distribution fit; the last year in the data when omitted.
    #[arg(long)]
    pub year: Option<i32>,
    /// Groups to compare (repeatable); all groups when omitted.
    #[arg(long = "group")]
    pub groups: Vec<String>,
    #[arg(long, value_enum, default_value_t = MaxentMode::Consistency)]
    pub maxent: MaxentMode,
    /// CSV with columns group,q of known exponents.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DELTA_U)]
    pub delta_u: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_FRAC)]
    pub min_bin_frac: f64,
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, default_value_t = 3)]
    pub exclude_head: usize,
    #[arg(long, default_value_t = 5)]
    pub exclude_tail: usize,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl CompareArgs {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            year: None,
            groups: Vec::new(),
            maxent: MaxentMode::Consistency,
            reference: None,
            delta_u: DEFAULT_DELTA_U,
            min_bin_frac: DEFAULT_MIN_FRAC,
            weighted: false,
            exclude_head: 3,
            exclude_tail: 5,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub group: String,
    pub q_maxent: Option<f64>,
    pub q_dynamics: Option<f64>,
    pub well_defined: bool,
    pub q_dynamics_raw: Option<f64>,
    pub q_reference: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Proportionality of `q_dynamics` to another measure over well-defined rows.
#[derive(Debug, Clone, Serialize)]
pub struct Proportionality {
    pub against: &'static str,
    pub n: usize,
    pub slope: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub groups: usize,
    /// Groups whose dynamics fit did not resolve the q-term.
    pub ill_defined: Vec<String>,
    pub failed: Vec<String>,
    pub versus_maxent: Option<Proportionality>,
    pub versus_reference: Option<Proportionality>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareDocument {
    pub year: i32,
    pub summary: CompareSummary,
    pub rows: Vec<CompareRow>,
    pub dataset: Provenance,
    pub config: serde_json::Value,
}

fn read_reference(path: &Path) -> CliResult<BTreeMap<String, f64>> {
    #[derive(Deserialize)]
    struct Row {
        group: String,
        q: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut problems = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        match row {
            Ok(r) => {
                out.insert(r.group, r.q);
            }
            Err(e) => problems.push(format!("line {}: {e}", i + 2)),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Parse(problems));
    }
    Ok(out)
}

fn proportionality(against: &'static str, pairs: &[(f64, f64)]) -> Option<Proportionality> {
    if pairs.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Some(Proportionality {
        against,
        n: pairs.len(),
        slope: slope_through_origin(&x, &y).ok()?,
        r: pearson_r(&x, &y).unwrap_or(f64::NAN),
    })
}

/// Summary of comparison rows: slope through the origin and Pearson R of
/// `q_dynamics` against `q_maxent` and against the reference, over rows
/// whose dynamics fit is well defined.
pub fn summarize(rows: &[CompareRow]) -> CompareSummary {
    let good = |r: &&CompareRow| r.well_defined && r.q_dynamics.is_some();
    let vs_m: Vec<(f64, f64)> =
        rows.iter().filter(good).filter_map(|r| Some((r.q_maxent?, r.q_dynamics?))).collect();
    let vs_r: Vec<(f64, f64)> =
        rows.iter().filter(good).filter_map(|r| Some((r.q_reference?, r.q_dynamics?))).collect();
    CompareSummary {
        groups: rows.len(),
        ill_defined: rows.iter().filter(|r| r.q_dynamics.is_some() && !r.well_defined).map(|r| r.group.clone()).collect(),
        failed: rows.iter().filter(|r| !r.errors.is_empty()).map(|r| r.group.clone()).collect(),
        versus_maxent: proportionality("q_maxent", &vs_m),
        versus_reference: proportionality("q_reference", &vs_r),
    }
}

fn compare_group(ds: &Dataset, args: &CompareArgs, year: i32, group: Option<&str>, reference: Option<f64>) -> CompareRow {
    let name = group.unwrap_or("all").to_string();
    let mut errors = Vec::new();
    let q_maxent = if args.maxent == MaxentMode::None {
        None
    } else {
        let fitted = sample_of(ds, group, year).and_then(|s| {
            Ok(match args.maxent {
                MaxentMode::Consistency => {
                    let cfg = ConsistencyConfig {
                        max_head: args.exclude_head,
                        max_tail: args.exclude_tail,
                        ..ConsistencyConfig::default()
                    };
                    consistency_workflow_with(&s, &cfg)?
                }
                MaxentMode::QDrift => fit_rank_q(&s, true)?,
                _ => fit_rank_q(&s, false)?,
            })
        });
        match fitted {
            Ok(r) if r.is_declared_failure() => {
                errors.push("distribution fit: estimators disagree".into());
                None
            }
            Ok(r) => Some(r.params.q()),
            Err(e) => {
                errors.push(format!("distribution fit: {e}"));
                None
            }
        }
    };
    let dynamics = ds
        .group_panel(group)
        .and_then(|p| dynamics_of(&p, args.delta_u, args.min_bin_frac, args.weighted));
    let (q_dynamics, well_defined, q_raw) = match dynamics {
        Ok((_, _, f)) => (Some(f.q), f.well_defined, Some(f.raw_q)),
        Err(e) => {
            errors.push(format!("dynamics fit: {e}"));
            (None, false, None)
        }
    };
    CompareRow { group: name, q_maxent, q_dynamics, well_defined, q_dynamics_raw: q_raw, q_reference: reference, errors }
}

/// Compares distribution and dynamics estimates of `q` per group. Writes
/// `compare_q.csv` and `compare_q.json`.
pub fn run_compare_q(args: &CompareArgs) -> CliResult<(CompareDocument, Outcome)> {
    let ds = load(&args.input)?;
    let reference = args.reference.as_deref().map(read_reference).transpose()?;
    let groups = selected_groups(&ds, &args.groups)?;
    if groups.len() < 2 {
        return Err(CliError::Validation(vec![format!("comparison needs ≥ 2 groups, got {}", groups.len())]));
    }
    let year = match args.year {
        Some(y) => y,
        None => *ds.years().last().ok_or_else(|| CliError::Validation(vec!["no years".into()]))?,
    };
    let rows: Vec<CompareRow> = groups
        .par_iter()
        .map(|g| {
            let r = reference.as_ref().and_then(|m| g.as_ref().and_then(|n| m.get(n)).copied());
            compare_group(&ds, args, year, g.as_deref(), r)
        })
        .collect();
    let summary = summarize(&rows);
    prepare_dir(&args.out_dir)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.group.clone(),
                opt_num(r.q_maxent),
                opt_num(r.q_dynamics),
                r.well_defined.to_string(),
                opt_num(r.q_dynamics_raw),
                opt_num(r.q_reference),
            ]
        })
        .collect();
    let csv_path = args.out_dir.join("compare_q.csv");
    write_csv(
        &csv_path,
        &["group", "q_maxent", "q_dynamics", "well_defined", "q_dynamics_raw", "q_reference"],
        &csv_rows,
    )?;
    let config = serde_json::to_value(args).map_err(|e| CliError::Other(e.to_string()))?;
    let doc = CompareDocument { year, summary, rows, dataset: ds.provenance.clone(), config };
    let json_path = args.out_dir.join("compare_q.json");
    write_json(&json_path, &doc)?;
    Ok((doc, Outcome { status: Status::Ok, files: vec![json_path, csv_path] }))
}

// ----------------------------------------------------------------- simulate

/// One simulated group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvinceSpec {
    pub name: String,
    pub config: SimConfig,
}

/// Simulation plan file: a single configuration or a list of named groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimulationPlan {
    Provinces { provinces: Vec<ProvinceSpec> },
    Single(SimConfig),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON simulation plan.
    pub plan: PathBuf,
    /// Overrides the seeds of the plan: group `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

/// Runs a plan and returns the panel with its group map (for multi-group plans).
pub fn simulate_plan(plan: &SimulationPlan, seed: Option<u64>) -> CliResult<crate::dataset::Panel> {
    match plan {
        SimulationPlan::Single(cfg) => {
            let mut cfg = cfg.clone();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Ok((growthsim::simulate(&cfg)?, None))
        }
        SimulationPlan::Provinces { provinces } => {
            let mut names = std::collections::BTreeSet::new();
            if let Some(dup) = provinces.iter().find(|p| !names.insert(p.name.as_str())) {
                return Err(CliError::Validation(vec![format!("duplicate group name `{}`", dup.name)]));
            }
            let parts: Vec<CliResult<Vec<popmaxent::dynamics::PanelRecord>>> = provinces
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut cfg = p.config.clone();
                    if let Some(s) = seed {
                        cfg.seed = s.wrapping_add(i as u64);
                    }
                    let mut recs = growthsim::simulate(&cfg)?;
                    for r in &mut recs {
                        r.unit_id = format!("{}-{}", p.name, r.unit_id);
                    }
                    Ok(recs)
                })
                .collect();
            let mut panel = Vec::new();
            let mut groups = BTreeMap::new();
            for (p, part) in provinces.iter().zip(parts) {
                for r in part? {
                    groups.entry(r.unit_id.clone()).or_insert_with(|| p.name.clone());
                    panel.push(r);
                }
            }
            Ok((panel, Some(groups)))
        }
    }
}

/// Simulates a plan and writes `panel.csv` (the ingest layout),
/// `reference_q.csv` (group, q) and `simulate.json`.
pub fn run_simulate(args: &SimulateArgs) -> CliResult<Outcome> {
    let bytes = std::fs::read(&args.plan).map_err(|e| CliError::io(&args.plan, e))?;
    let plan: SimulationPlan =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Parse(vec![format!("{}: {e}", args.plan.display())]))?;
    let (panel, groups) = simulate_plan(&plan, args.seed)?;
    prepare_dir(&args.out_dir)?;
    let panel_path = args.out_dir.join("panel.csv");
    let file = std::fs::File::create(&panel_path).map_err(|e| CliError::io(&panel_path, e))?;
    write_panel(std::io::BufWriter::new(file), &panel, groups.as_ref())?;
    let reference: Vec<Vec<String>> = match &plan {
        SimulationPlan::Single(c) => vec![vec!["all".into(), num(c.q)]],
        SimulationPlan::Provinces { provinces } => {
            provinces.iter().map(|p| vec![p.name.clone(), num(p.config.q)]).collect()
        }
    };
    let ref_path = args.out_dir.join("reference_q.csv");
    write_csv(&ref_path, &["group", "q"], &reference)?;
    let json_path = args.out_dir.join("simulate.json");
    let plan_sha = crate::dataset::sha256_hex(&bytes);
    write_json(&json_path, &json!({ "plan": plan, "plan_sha256": plan_sha, "records": panel.len(), "config": args }))?;
    Ok(Outcome { status: Status::Ok, files: vec![panel_path, ref_path, json_path] })
}
