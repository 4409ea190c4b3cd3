//! Command-line front end: `generate`, `fit`, `predict`, `evaluate`, `bench`
//! and `tune-k`.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
//! Outputs are written only when a command succeeds.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::bench_size;
use crate::covkernel::MaternParams;
use crate::error::{Error, Result};
use crate::geometry::{Location, DEFAULT_ETA, DEFAULT_LEAF_SIZE};
use crate::hfactor::FactorForm;
use crate::io::{self, Dataset, Table};
use crate::knn::{select_k, KdTree, DEFAULT_SPLITS};
use crate::krige::KrigingModel;
use crate::loglik::{HConfig, DEFAULT_FIT_EPS};
use crate::metrics::{mloe_mmom, rmse, MetricConfig, DEFAULT_M};
use crate::mle::{empirical_start, fit, Coordinate, OptimizerConfig, ReparamPoint};
use crate::simgen::{generate, TukeyParams};

#[derive(Parser, Debug)]
#[command(name = "hmle", version, about = "H-matrix Matérn likelihood, MLE, kriging and kNN for 2-D data")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a Matérn field and split it into train.csv and test.csv.
    Generate(GenerateArgs),
    /// Estimate Matérn parameters by maximum likelihood.
    Fit(FitArgs),
    /// Predict values at test locations.
    Predict(PredictArgs),
    /// Score predictions against the truth.
    Evaluate(EvaluateArgs),
    /// Time assembly and factorization over problem sizes.
    Bench(BenchArgs),
    /// Choose k for kNN by repeated 1:9 validation splits.
    TuneK(TuneKArgs),
}

fn parse_quad(s: &str) -> std::result::Result<[f64; 4], String> {
    io::parse_quad(s).map_err(|e| e.to_string())
}

/// Comma-separated integers and inclusive ranges such as `1-20`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntList(pub Vec<usize>);

fn parse_list(s: &str) -> std::result::Result<IntList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| format!("bad range {part:?}"))?, b.trim().parse().map_err(|_| format!("bad range {part:?}"))?);
            if a > b {
                return Err(format!("empty range {part:?}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad integer {part:?}"))?);
        }
    }
    Ok(IntList(out))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Hmle,
    Knn,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Form {
    Ldl,
    Cholesky,
}

#[derive(Args, Debug, Clone)]
pub struct HArgs {
    /// H-matrix accuracy.
    #[arg(long, default_value_t = DEFAULT_FIT_EPS)]
    pub eps: f64,
    /// Factorization truncation accuracy (default: --eps).
    #[arg(long)]
    pub eps_f: Option<f64>,
    /// Fixed block rank; overrides --eps for assembly.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value_t = Form::Ldl)]
    pub form: Form,
    /// Admissibility parameter.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_LEAF_SIZE)]
    pub leaf_size: usize,
}

impl HArgs {
    fn config(&self) -> HConfig {
        HConfig {
            eps: self.eps,
            eps_f: self.eps_f,
            form: match self.form {
                Form::Ldl => FactorForm::Ldl,
                Form::Cholesky => FactorForm::Cholesky,
            },
            eta: self.eta,
            leaf_size: self.leaf_size,
            rank: self.rank,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    /// σ²,ℓ,ν,τ²
    #[arg(long, value_parser = parse_quad)]
    pub params: [f64; 4],
    /// ξ,ω,g,h of a Tukey g-and-h transform.
    #[arg(long, value_parser = parse_quad)]
    pub tukey: Option<[f64; 4]>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training fraction.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Training CSV (x,y,z) or dataset directory.
    #[arg(long)]
    pub train: PathBuf,
    #[command(flatten)]
    pub h: HArgs,
    /// Initial reparameterized point σ₀,ℓ₀,ν₀,τ₀.
    #[arg(long, value_parser = parse_quad, conflicts_with = "auto_init")]
    pub init: Option<[f64; 4]>,
    /// Start from σ² and ℓ estimated from the empirical covariance.
    #[arg(long)]
    pub auto_init: bool,
    #[arg(long, default_value_t = 400)]
    pub max_iters: usize,
    /// Sweep improvement that ends the search.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    /// Coordinates held at their initial value (sigma0, ell0, nu0, tau0).
    #[arg(long, value_delimiter = ',')]
    pub fix: Vec<String>,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Training CSV (x,y,z) or dataset directory.
    #[arg(long)]
    pub train: PathBuf,
    /// Test CSV (x,y[,z]) or dataset directory.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Hmle)]
    pub method: Method,
    /// σ²,ℓ,ν,τ²
    #[arg(long, value_parser = parse_quad, conflicts_with = "report")]
    pub params: Option<[f64; 4]>,
    /// Fit report providing parameters and H-matrix settings.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Neighbors for kNN.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub h: HArgs,
    /// Predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Scatter plot of training and predicted points.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV with true values at the predicted locations.
    #[arg(long)]
    pub truth: PathBuf,
    /// Also compute MLOE and MMOM.
    #[arg(long, requires_all = ["theta_true", "theta_approx"])]
    pub mloe: bool,
    #[arg(long, value_parser = parse_quad)]
    pub theta_true: Option<[f64; 4]>,
    #[arg(long, value_parser = parse_quad)]
    pub theta_approx: Option<[f64; 4]>,
    /// Locations for MLOE/MMOM (default: the truth file).
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// Evaluation locations for MLOE/MMOM.
    #[arg(long, default_value_t = DEFAULT_M)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_list, default_value = "1024,2048,4096,8192")]
    pub sizes: IntList,
    #[command(flatten)]
    pub h: HArgs,
    /// σ²,ℓ,ν,τ²
    #[arg(long, value_parser = parse_quad, default_value = "1,0.1,0.5,1e-4")]
    pub params: [f64; 4],
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Runs per size; the fastest is reported.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Skip the dense log-determinant check.
    #[arg(long)]
    pub no_dense: bool,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneKArgs {
    /// Training CSV (x,y,z) or dataset directory.
    #[arg(long)]
    pub train: PathBuf,
    /// Candidate k values, e.g. `1-20` or `1,3,5`.
    #[arg(long, value_parser = parse_list, default_value = "1-20")]
    pub ks: IntList,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV of k and validation RMSE.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Outputs::default();
    let r = pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a, &mut out),
        Command::Predict(a) => cmd_predict(a, &mut out),
        Command::Evaluate(a) => cmd_evaluate(a, &mut out),
        Command::Bench(a) => cmd_bench(a, &mut out),
        Command::TuneK(a) => cmd_tune_k(a, &mut out),
    });
    if r.is_err() {
        out.remove_all();
    }
    r
}

/// Files written so far by a command; removed if a later step fails.
#[derive(Default)]
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        io::write_atomic(path, contents)?;
        self.0.push(path.to_path_buf());
        Ok(())
    }

    fn remove_all(&self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

fn resolve(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

fn read_training(path: &Path) -> Result<(Vec<Location>, Vec<f64>)> {
    let p = resolve(path, io::TRAIN_FILE);
    let t = io::read_table(&p)?;
    let z = t.require_values(&p)?.to_vec();
    if t.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((t.locations, z))
}

fn params_from(q: [f64; 4]) -> Result<MaternParams> {
    MaternParams::new(q[0], q[1], q[2], q[3])
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let params = params_from(a.params)?;
    let tukey = a.tukey.map(|t| TukeyParams::new(t[0], t[1], t[2], t[3])).transpose()?;
    let data = generate(a.n, &params, tukey.as_ref(), a.seed, a.split)?;
    let pick = |idx: &[usize]| Table {
        locations: idx.iter().map(|&i| data.locations[i]).collect(),
        values: Some(idx.iter().map(|&i| data.values[i]).collect()),
    };
    let meta = vec![
        ("n".to_string(), a.n.to_string()),
        ("params".into(), io::params_text(&params)),
        ("tukey".into(), a.tukey.map_or("none".into(), |t| t.map(io::fmt_f64).join(","))),
        ("seed".into(), a.seed.to_string()),
        ("split".into(), io::fmt_f64(a.split)),
        ("n_train".into(), data.train.len().to_string()),
        ("n_test".into(), data.test.len().to_string()),
    ];
    io::write_dataset(&a.out, &Dataset { train: pick(&data.train), test: pick(&data.test), meta })?;
    eprintln!("generated {} training and {} test points in {}", data.train.len(), data.test.len(), a.out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs, out: &mut Outputs) -> Result<()> {
    let (locs, z) = read_training(&a.train)?;
    let mut cfg = OptimizerConfig { max_iters: a.max_iters, threshold: a.threshold, h: a.h.config(), ..Default::default() };
    if let Some(p) = a.init {
        cfg.initial = ReparamPoint::from_array(p);
    }
    if a.auto_init {
        cfg.initial = empirical_start(&locs, &z)?;
    }
    for name in &a.fix {
        let c = Coordinate::from_name(name.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown coordinate {name:?}; use sigma0, ell0, nu0 or tau0")))?;
        cfg.free[c.index()] = false;
    }
    let report = fit(&locs, &z, &cfg)?;
    out.write(&a.out, &io::fit_report_text(&report, locs.len(), &cfg.h))?;
    let t = &report.theta_hat;
    eprintln!(
        "fit n={} sigma2={:.6} ell={:.6} nu={:.6} tau2={:.3e} loglik={:.6} iterations={} seconds={:.2} threads={}",
        locs.len(),
        t.sigma2,
        t.ell,
        t.nu,
        t.tau2,
        report.loglik,
        report.iterations,
        report.seconds,
        rayon::current_num_threads()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut Outputs) -> Result<()> {
    let (train, z) = read_training(&a.train)?;
    let test_path = resolve(&a.test, io::TEST_FILE);
    let test = io::read_table(&test_path)?;
    let start = Instant::now();
    let pred = match a.method {
        Method::Knn => {
            let k = a.k.ok_or_else(|| Error::InvalidInput("--k is required with --method knn".into()))?;
            let tree = KdTree::build(&train, &z)?;
            crate::geometry::validate_locations(&test.locations)?;
            test.locations.iter().map(|q| tree.predict_one(q, k)).collect::<Result<Vec<f64>>>()?
        }
        Method::Hmle => {
            let (params, h) = match (&a.report, a.params) {
                (Some(r), _) => {
                    let s = io::read_fit_report(r)?;
                    (s.theta_hat, s.h)
                }
                (None, Some(p)) => (params_from(p)?, a.h.config()),
                (None, None) => return Err(Error::InvalidInput("--params or --report is required with --method hmle".into())),
            };
            KrigingModel::new(&train, &z, &params, &h)?.predict(&test.locations)?
        }
    };
    out.write(&a.out, &io::table_csv(&test.locations, Some(&pred))?)?;
    if let Some(svg) = &a.svg {
        out.write(svg, &scatter_svg(&train, &test.locations))?;
    }
    let mut msg = format!("predicted {} points in {:.2} s", pred.len(), start.elapsed().as_secs_f64());
    if let Some(truth) = &test.values {
        if !truth.is_empty() {
            write!(msg, ", RMSE {:.6}", rmse(&pred, truth)?).unwrap();
        }
    }
    eprintln!("{msg}");
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut Outputs) -> Result<()> {
    let pred = io::read_table(&a.pred)?;
    let truth_path = resolve(&a.truth, io::TEST_FILE);
    let truth = io::read_table(&truth_path)?;
    let zp = pred.require_values(&a.pred)?;
    let zt = truth.require_values(&truth_path)?;
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if let Some(i) = pred.locations.iter().zip(&truth.locations).position(|(p, t)| p != t) {
        return Err(Error::InvalidInput(format!("row {} of predictions and truth are at different locations", i + 2)));
    }
    let mut rows = vec![("n_t", truth.len().to_string()), ("rmse", io::fmt_f64(rmse(zp, zt)?))];
    if a.mloe {
        let (tt, ta) = (params_from(a.theta_true.unwrap())?, params_from(a.theta_approx.unwrap())?);
        let locs = match &a.locations {
            Some(p) => io::read_table(p)?.locations,
            None => truth.locations.clone(),
        };
        let r = mloe_mmom(&locs, &tt, &ta, &MetricConfig { m: a.m, seed: a.seed })?;
        rows.push(("mloe", io::fmt_f64(r.mloe)));
        rows.push(("mmom", io::fmt_f64(r.mmom)));
        rows.push(("m", r.m.to_string()));
    }
    out.write(&a.out, &io::metrics_csv(&rows))?;
    for (k, v) in &rows {
        eprintln!("{k} = {v}");
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, out: &mut Outputs) -> Result<()> {
    let params = params_from(a.params)?;
    let h = a.h.config();
    eprintln!("bench threads={} eps={} params={}", rayon::current_num_threads(), h.eps, io::params_text(&params));
    let mut csv = String::from("n,assemble_s,factor_s,bytes,factor_bytes,max_rank,logdet_err\n");
    for &n in &a.sizes.0 {
        let r = bench_size(n, &params, &h, a.seed, a.repeats, !a.no_dense)?;
        let line = format!(
            "{},{:.6},{:.6},{},{},{},{}\n",
            r.n,
            r.assemble_s,
            r.factor_s,
            r.bytes,
            r.factor_bytes,
            r.max_rank,
            r.logdet_err.map_or(String::new(), |e| format!("{e:.3e}"))
        );
        eprint!("{line}");
        csv.push_str(&line);
    }
    match &a.out {
        Some(p) => out.write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_tune_k(a: TuneKArgs, out: &mut Outputs) -> Result<()> {
    let (locs, z) = read_training(&a.train)?;
    let s = select_k(&locs, &z, &a.ks.0, a.splits, a.seed)?;
    let mut csv = String::from("k,cv_rmse\n");
    for (k, e) in &s.cv_rmse {
        writeln!(csv, "{k},{}", io::fmt_f64(*e)).unwrap();
    }
    if let Some(p) = &a.out {
        out.write(p, &csv)?;
    }
    println!("k = {}", s.k);
    println!("cv_rmse = {:.6}", s.rmse_of(s.k).unwrap());
    println!("mean_rmse = {:.6}", s.mean_rmse);
    Ok(())
}

/// Scatter plot: training points in yellow, prediction locations in blue.
pub fn scatter_svg(train: &[Location], predicted: &[Location]) -> String {
    const SIZE: f64 = 600.0;
    const PAD: f64 = 10.0;
    let all: Vec<Location> = train.iter().chain(predicted).copied().collect();
    let b = crate::geometry::BoundingBox::of(&all);
    let span = (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]).max(f64::MIN_POSITIVE);
    let scale = (SIZE - 2.0 * PAD) / span;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (pts, color, r) in [(train, "#f2c500", 1.5), (predicted, "#1f5fbf", 2.0)] {
        writeln!(s, "<g fill=\"{color}\">").unwrap();
        for p in pts {
            let x = PAD + (p.x() - b.min[0]) * scale;
            let y = SIZE - PAD - (p.y() - b.min[1]) * scale;
            writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\"/>").unwrap();
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
