use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sns_core::admm::AdmmConfig;
use sns_core::bench::{bench_iteration, loglog_slope, BenchOptions};
use sns_core::jgl::{JglConfig, JglPath};
use sns_core::linalg::{center_scale, DataMatrix};
use sns_core::pipeline::{sns_fit, CoefficientSet, EdgeRule, InsPath, MultiEdgeSet, SnsConfig, SnsPath};
use sns_core::roc::{average_curves, lambda_grid, roc_curve, RocCurve, TruthSets};
use sns_core::sim::{replicate_seed, sample_subpopulation, simulate, SimulationSpec, PRNG_ID};

use crate::error::CliError;
use crate::io::{self, FileDigest, RunManifest};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Args)]
pub struct SolverArgs {
    /// Relative primal and dual residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// ADMM step size b.
    #[arg(long, default_value_t = 1.0)]
    pub step_size: f64,
}

impl SolverArgs {
    fn admm(&self) -> AdmmConfig {
        AdmmConfig {
            step_size: self.step_size,
            tol_primal: self.tol,
            tol_dual: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    /// Common edges as a fraction of all vertex pairs.
    #[arg(long)]
    pub s: f64,
    /// Individual edges per subpopulation as a fraction of the common edges.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sns,
    Ins,
    Jgl,
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value_t = Method::Sns)]
    pub method: Method,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = sns_core::pipeline::DEFAULT_LAMBDA_INIT)]
    pub lambda_init: f64,
    #[arg(long, default_value_t = EdgeRule::And)]
    pub edge_rule: EdgeRule,
    #[arg(long, default_value_t = 1)]
    pub lla_steps: usize,
    /// One CSV file per subpopulation, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RocMethod {
    Sns,
    Ins,
    Jgl,
    /// Reports the true edge sets at every λ.
    Oracle,
}

impl RocMethod {
    fn name(self) -> &'static str {
        match self {
            RocMethod::Sns => "sns",
            RocMethod::Ins => "ins",
            RocMethod::Jgl => "jgl",
            RocMethod::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct RocArgs {
    /// Directory written by `sns simulate`; otherwise a preset is simulated.
    #[arg(long, conflicts_with_all = ["p", "n"])]
    pub truth_dir: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 5e-3)]
    pub s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sns,ins")]
    pub methods: Vec<RocMethod>,
    #[arg(long, default_value_t = 1e-5)]
    pub grid_start: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grid_end: f64,
    #[arg(long, default_value_t = 100)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = sns_core::pipeline::DEFAULT_LAMBDA_INIT)]
    pub lambda_init: f64,
    #[arg(long, default_value_t = EdgeRule::And)]
    pub edge_rule: EdgeRule,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub p_list: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum measured time per method and dimension.
    #[arg(long, default_value_t = 0.2)]
    pub min_seconds: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// manifest.json of the run to repeat.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write; defaults to the recorded output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Collects the files a command writes so the manifest can list their digests.
struct Run {
    command: &'static str,
    dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
    volatile: Vec<String>,
    inputs: Vec<FileDigest>,
}

impl Run {
    fn start(command: &'static str, dir: &Path) -> Result<Self, CliError> {
        io::create_dir(dir)?;
        Ok(Self {
            command,
            dir: dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
            volatile: Vec::new(),
            inputs: Vec::new(),
        })
    }

    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.outputs.push(name);
        p
    }

    fn volatile_path(&mut self, name: &str) -> PathBuf {
        self.volatile.push(name.to_string());
        self.path(name.to_string())
    }

    fn finish(self, config: serde_json::Value, seed: Option<u64>, notes: serde_json::Value) -> Result<RunManifest, CliError> {
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                Ok(FileDigest {
                    path: PathBuf::from(name),
                    sha256: io::sha256_file(&self.dir.join(name))?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            prng: PRNG_ID.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs,
            volatile: self.volatile.into_iter().map(PathBuf::from).collect(),
            notes,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        manifest.write(&self.dir)?;
        Ok(manifest)
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("arguments serialize")
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    path.canonicalize().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest, CliError> {
    let spec = SimulationSpec {
        p: args.p,
        k: args.k,
        n: args.n,
        s: args.s,
        rho: args.rho,
        seed: args.seed,
    };
    let scenario = simulate(&spec)?;
    let mut run = Run::start("simulate", &args.out_dir)?;
    for k in 0..spec.k {
        let path = run.path(format!("data_{}.csv", k + 1));
        io::write_matrix(&path, &scenario.data[k])?;
        let path = run.path(format!("truth_edges_{}.csv", k + 1));
        io::write_edges(&path, &scenario.truth.edges(k))?;
        let path = run.path(format!("omega_{}.csv", k + 1));
        io::write_matrix(&path, &scenario.truth.precisions[k])?;
    }
    let notes = json!({
        "common_edges": scenario.truth.edge_sets.common.len(),
        "individual_edges": scenario.truth.edge_sets.individual.iter().map(BTreeSet::len).collect::<Vec<_>>(),
    });
    run.finish(to_json(args), Some(args.seed), notes)
}

fn load_data(paths: &[PathBuf], run: &mut Run) -> Result<Vec<DataMatrix>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("no data files given".into()));
    }
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let raw = io::read_matrix(path)?;
        run.inputs.push(FileDigest::of(path)?);
        let x = center_scale(&raw)?;
        if let Some(first) = out.first() {
            let first: &DataMatrix = first;
            if first.ncols() != x.ncols() {
                return Err(sns_core::Error::Dimension(format!(
                    "{} has {} columns, {} has {}",
                    paths[0].display(),
                    first.ncols(),
                    path.display(),
                    x.ncols()
                ))
                .into());
            }
        }
        out.push(x);
    }
    Ok(out)
}

pub fn cmd_fit(args: &FitArgs) -> Result<RunManifest, CliError> {
    let mut args = args.clone();
    args.data = args.data.iter().map(|p| absolute(p)).collect::<Result<_, _>>()?;
    let mut run = Run::start("fit", &args.out_dir)?;
    let data = load_data(&args.data, &mut run)?;
    let admm = args.solver.admm();

    let (edges, matrices, matrix_name, notes, unconverged) = match args.method {
        Method::Sns | Method::Ins => {
            let fit = if args.method == Method::Sns {
                let cfg = SnsConfig {
                    lambda: args.lambda,
                    lambda_init: args.lambda_init,
                    lla_steps: args.lla_steps,
                    edge_rule: args.edge_rule,
                    admm,
                };
                sns_fit(&data, &cfg, None)?
            } else {
                InsPath::new(&data, &admm)?.fit(args.lambda)?
            };
            let unconverged = fit.solves.iter().filter(|s| !s.converged).count();
            (
                fit.edges(args.edge_rule),
                fit.coefficients.clone().into_inner(),
                "theta",
                json!({ "solves": fit.solves }),
                unconverged,
            )
        }
        Method::Jgl => {
            let cfg = JglConfig {
                lambda_init: args.lambda_init,
                admm,
            };
            let fit = JglPath::new(&data, &cfg)?.fit(args.lambda)?;
            let unconverged = fit.reports.iter().filter(|r| !r.converged).count();
            (fit.edges(), fit.precisions.clone(), "omega", json!({ "solves": fit.reports }), unconverged)
        }
    };
    for (k, m) in matrices.iter().enumerate() {
        let path = run.path(format!("edges_{}.csv", k + 1));
        io::write_edges(&path, edges.edges(k))?;
        let path = run.path(format!("{matrix_name}_{}.csv", k + 1));
        io::write_matrix(&path, m)?;
    }
    let manifest = run.finish(to_json(&args), None, notes)?;
    if unconverged > 0 {
        return Err(CliError::NotConverged { count: unconverged });
    }
    Ok(manifest)
}

/// The data and truth of one ROC replicate.
struct Replicate {
    data: Vec<DataMatrix>,
    truth: TruthSets,
}

fn standardize(raw: &[DMatrix<f64>]) -> Result<Vec<DataMatrix>, CliError> {
    raw.iter().map(|x| center_scale(x).map_err(CliError::from)).collect()
}

fn truth_dir_replicates(dir: &Path, args: &RocArgs, run: &mut Run) -> Result<Vec<Replicate>, CliError> {
    let mut omegas = Vec::new();
    let mut raw = Vec::new();
    for k in 1.. {
        let omega_path = dir.join(format!("omega_{k}.csv"));
        if !omega_path.exists() {
            break;
        }
        let data_path = dir.join(format!("data_{k}.csv"));
        omegas.push(io::read_matrix(&omega_path)?);
        raw.push(io::read_matrix(&data_path)?);
        run.inputs.push(FileDigest::of(&omega_path)?);
        run.inputs.push(FileDigest::of(&data_path)?);
    }
    if omegas.is_empty() {
        return Err(CliError::Io {
            path: dir.join("omega_1.csv"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no truth files"),
        });
    }
    let truth = TruthSets::from_precisions(&omegas)?;
    let mut reps = vec![Replicate {
        data: standardize(&raw)?,
        truth: truth.clone(),
    }];
    for r in 1..args.replicates {
        let seed = replicate_seed(args.seed, r as u64);
        let sampled = omegas
            .iter()
            .zip(&raw)
            .enumerate()
            .map(|(k, (om, x))| sample_subpopulation(om, x.nrows(), seed, k))
            .collect::<Result<Vec<_>, _>>()?;
        reps.push(Replicate {
            data: standardize(&sampled)?,
            truth: truth.clone(),
        });
    }
    Ok(reps)
}

fn preset_replicates(args: &RocArgs) -> Result<Vec<Replicate>, CliError> {
    let (Some(p), Some(n)) = (args.p, args.n) else {
        return Err(CliError::Usage("give --truth-dir or both --p and --n".into()));
    };
    (0..args.replicates)
        .map(|r| {
            let spec = SimulationSpec {
                p,
                k: args.k,
                n,
                s: args.s,
                rho: args.rho,
                seed: replicate_seed(args.seed, r as u64),
            };
            let scenario = simulate(&spec)?;
            Ok(Replicate {
                data: standardize(&scenario.data)?,
                truth: TruthSets::from_precisions(&scenario.truth.precisions)?,
            })
        })
        .collect()
}

/// Curve of one method on one replicate, plus the number of solves that did
/// not converge.
fn method_curve(
    method: RocMethod,
    rep: &Replicate,
    grid: &[f64],
    args: &RocArgs,
) -> Result<(RocCurve, usize), CliError> {
    let admm = args.solver.admm();
    let mut unconverged = 0;
    let curve = match method {
        RocMethod::Oracle => {
            let truth = MultiEdgeSet::new(rep.truth.dim(), rep.truth.sets().to_vec())?;
            roc_curve(&rep.truth, grid, |_| Ok(truth.clone()))?
        }
        RocMethod::Ins => {
            let path = InsPath::new(&rep.data, &admm)?;
            roc_curve(&rep.truth, grid, |l| {
                let fit = path.fit(l)?;
                unconverged += fit.solves.iter().filter(|s| !s.converged).count();
                Ok(fit.edges(args.edge_rule))
            })?
        }
        RocMethod::Sns => {
            let init = InsPath::new(&rep.data, &admm)?.fit(args.lambda_init)?;
            unconverged += init.solves.iter().filter(|s| !s.converged).count();
            let init: CoefficientSet = init.coefficients;
            if init.is_all_zero() {
                return Err(sns_core::Error::EmptyInitializer.into());
            }
            let path = SnsPath::new(&rep.data, &init, &admm)?;
            roc_curve(&rep.truth, grid, |l| {
                let fit = path.fit(l)?;
                unconverged += fit.solves.iter().filter(|s| !s.converged).count();
                Ok(fit.edges(args.edge_rule))
            })?
        }
        RocMethod::Jgl => {
            let cfg = JglConfig {
                lambda_init: args.lambda_init,
                admm,
            };
            let path = JglPath::new(&rep.data, &cfg)?;
            let mut first = true;
            roc_curve(&rep.truth, grid, |l| {
                let fit = path.fit(l)?;
                // the initial fit is reported with every λ; count it once
                unconverged += fit.reports.iter().filter(|r| !r.converged && (first || r.stage > 0)).count();
                first = false;
                Ok(fit.edges())
            })?
        }
    };
    Ok((curve, unconverged))
}

pub fn cmd_roc(args: &RocArgs) -> Result<RunManifest, CliError> {
    if args.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    if args.methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    let mut args = args.clone();
    if let Some(dir) = &args.truth_dir {
        args.truth_dir = Some(absolute(dir)?);
    }
    let grid = lambda_grid(args.grid_points, args.grid_start, args.grid_end)?;
    let mut run = Run::start("roc", &args.out_dir)?;
    let reps = match &args.truth_dir {
        Some(dir) => truth_dir_replicates(dir, &args, &mut run)?,
        None => preset_replicates(&args)?,
    };

    let mut roc = String::from("lambda,afpr,atpr,method,replicate\n");
    let mut auc = String::from("method,replicate,auc\n");
    let mut summary = serde_json::Map::new();
    let mut unconverged = 0;
    for &method in &args.methods {
        let mut curves = Vec::with_capacity(reps.len());
        for rep in &reps {
            let (curve, bad) = method_curve(method, rep, &grid, &args)?;
            unconverged += bad;
            curves.push(curve);
        }
        let mean = average_curves(&curves)?;
        let labelled = curves
            .iter()
            .enumerate()
            .map(|(r, c)| (r.to_string(), c))
            .chain(std::iter::once(("mean".to_string(), &mean)));
        for (label, curve) in labelled {
            for q in &curve.points {
                roc.push_str(&format!(
                    "{},{},{},{},{label}\n",
                    io::format_number(q.lambda),
                    io::format_number(q.afpr),
                    io::format_number(q.atpr),
                    method.name()
                ));
            }
            auc.push_str(&format!("{},{label},{}\n", method.name(), io::format_number(curve.auc)));
        }
        summary.insert(method.name().to_string(), json!(mean.auc));
    }
    let path = run.path("roc.csv".into());
    io::write_text(&path, &roc)?;
    let path = run.path("auc.csv".into());
    io::write_text(&path, &auc)?;
    let notes = json!({ "mean_auc": summary, "unconverged_solves": unconverged });
    let manifest = run.finish(to_json(&args), Some(args.seed), notes)?;
    if unconverged > 0 {
        return Err(CliError::NotConverged { count: unconverged });
    }
    Ok(manifest)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<RunManifest, CliError> {
    if args.p_list.is_empty() {
        return Err(CliError::Usage("empty --p-list".into()));
    }
    let opts = BenchOptions {
        min_seconds: args.min_seconds,
        ..BenchOptions::default()
    };
    let mut run = Run::start("bench", &args.out_dir)?;
    let mut table = String::from("p,n,method,seconds_per_iter\n");
    let mut ps = Vec::new();
    let mut sns = Vec::new();
    let mut jgl = Vec::new();
    for &p in &args.p_list {
        let r = bench_iteration(p, args.n, args.k, args.seed, &opts)?;
        table.push_str(&format!("{p},{},sns,{}\n", args.n, io::format_number(r.sns_iter_seconds)));
        table.push_str(&format!("{p},{},jgl,{}\n", args.n, io::format_number(r.jgl_iter_seconds)));
        ps.push(p as f64);
        sns.push(r.sns_iter_seconds);
        jgl.push(r.jgl_iter_seconds);
    }
    let path = run.volatile_path("bench.csv");
    io::write_text(&path, &table)?;
    let mut notes = json!({});
    if ps.len() >= 2 {
        let s = loglog_slope(&ps, &sns)?;
        let j = loglog_slope(&ps, &jgl)?;
        let path = run.volatile_path("slopes.csv");
        io::write_text(
            &path,
            &format!("method,slope\nsns,{}\njgl,{}\n", io::format_number(s), io::format_number(j)),
        )?;
        notes = json!({ "sns_slope": s, "jgl_slope": j });
    }
    run.finish(to_json(args), Some(args.seed), notes)
}

fn parse_config<T: for<'de> Deserialize<'de>>(manifest: &RunManifest) -> Result<T, CliError> {
    serde_json::from_value(manifest.config.clone()).map_err(|e| CliError::Manifest(format!("config: {e}")))
}

/// Re-runs a recorded command and checks that every non-volatile output is
/// byte-identical to the recorded one.
pub fn cmd_replay(args: &ReplayArgs) -> Result<RunManifest, CliError> {
    let recorded = RunManifest::read(&args.manifest)?;
    for input in &recorded.inputs {
        let now = io::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::Manifest(format!("input {} changed since the run", input.path.display())));
        }
    }
    let manifest = match recorded.command.as_str() {
        "simulate" => {
            let mut a: SimulateArgs = parse_config(&recorded)?;
            if let Some(d) = &args.out_dir {
                a.out_dir = d.clone();
            }
            cmd_simulate(&a)?
        }
        "fit" => {
            let mut a: FitArgs = parse_config(&recorded)?;
            if let Some(d) = &args.out_dir {
                a.out_dir = d.clone();
            }
            cmd_fit(&a)?
        }
        "roc" => {
            let mut a: RocArgs = parse_config(&recorded)?;
            if let Some(d) = &args.out_dir {
                a.out_dir = d.clone();
            }
            cmd_roc(&a)?
        }
        "bench" => {
            let mut a: BenchArgs = parse_config(&recorded)?;
            if let Some(d) = &args.out_dir {
                a.out_dir = d.clone();
            }
            cmd_bench(&a)?
        }
        other => return Err(CliError::Manifest(format!("unknown command {other:?}"))),
    };
    for out in &recorded.outputs {
        if recorded.volatile.contains(&out.path) {
            continue;
        }
        let now = manifest.outputs.iter().find(|o| o.path == out.path);
        if now.map(|o| &o.sha256) != Some(&out.sha256) {
            return Err(CliError::ReplayMismatch { path: out.path.clone() });
        }
    }
    Ok(manifest)
}

