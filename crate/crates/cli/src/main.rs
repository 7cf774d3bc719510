use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stkr_core::data::{self, ScoreRule};
use stkr_core::index::Metric;
use stkr_core::metrics::{evaluate_run, format_report, read_tiers, write_report_csv};
use stkr_core::pipeline::{self, ExperimentConfig, Method, RunParams};
use stkr_core::raster::{Bounds, Raster};
use stkr_core::synth::{self, SynthParams};
use stkr_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "stkr",
    version,
    about = "Kernel regression of broadband quality over space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw measurement file into the canonical CSV and print a summary.
    Ingest(IngestArgs),
    /// Generate a synthetic clustered dataset.
    Synth(SynthArgs),
    /// Run the full experiment and write a run directory.
    Run(Box<RunArgs>),
    /// Rasterize a fitted model from a run directory.
    Heatmap(HeatmapArgs),
    /// Re-evaluate the predictions stored in a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    /// Canonical CSV destination; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    w_down: f64,
    #[arg(long, default_value_t = 1.0)]
    w_up: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with generator parameters; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    n_dense: Option<usize>,
    #[arg(long)]
    n_sparse: Option<usize>,
    #[arg(long)]
    dense_std: Option<f64>,
    #[arg(long)]
    ring_inner: Option<f64>,
    #[arg(long)]
    ring_outer: Option<f64>,
    #[arg(long)]
    wavelength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, alias = "seed")]
    synth_seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    w_down: f64,
    #[arg(long, default_value_t = 1.0)]
    w_up: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML); flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    w_down: Option<f64>,
    #[arg(long)]
    w_up: Option<f64>,
    #[arg(long)]
    smooth_k: Option<usize>,
    #[arg(long)]
    smooth_k_speeds: Option<usize>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    grid_rows: Option<usize>,
    #[arg(long)]
    grid_cols: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    cv_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    c_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long)]
    gp_fraction: Option<f64>,
    #[arg(long)]
    gp_restarts: Option<usize>,
    #[arg(long)]
    gp_seed: Option<u64>,
    #[arg(long)]
    gp_max_evals: Option<usize>,
    #[arg(long)]
    gp_full: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// planar or equirectangular
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    classify: Option<bool>,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Run directory written by `stkr run`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "stbkr")]
    method: String,
    #[arg(long, default_value_t = 50)]
    rows: usize,
    #[arg(long, default_value_t = 50)]
    cols: usize,
    /// min_lon,min_lat,max_lon,max_lat; defaults to the data extent.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Output path prefix; defaults to <run>/heatmap_<method>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count points per cell instead of evaluating a model.
    #[arg(long)]
    density: bool,
    #[arg(long, default_value_t = 8)]
    cell_px: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Restrict to these methods (comma separated).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Print the CSV form instead of the table.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Run(a) => run(*a),
        Command::Heatmap(a) => heatmap(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let rule = ScoreRule::new(a.w_down, a.w_up)?;
    let ds = data::parse_records(open(&a.input)?, &rule)?;
    match &a.output {
        Some(p) => ds.write_csv(create(p)?)?,
        None => ds.write_csv(io::stdout().lock())?,
    }
    let summary = data::summarize(&ds)?;
    if a.output.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<(), Error> {
    let mut p: SynthParams = match &a.config {
        Some(path) => {
            toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthParams::default(),
    };
    macro_rules! set {
        ($($f:ident => $g:ident),*) => { $(if let Some(v) = a.$f { p.$g = v; })* };
    }
    set!(n_dense => n_dense, n_sparse => n_sparse, dense_std => dense_std,
         ring_inner => ring_inner, ring_outer => ring_outer, wavelength => wavelength,
         noise => noise, synth_seed => seed);
    let rule = ScoreRule::new(a.w_down, a.w_up)?;
    let ds = synth::generate(&p, &rule)?;
    ds.write_csv(create(&a.output)?)?;
    println!("{}", data::summarize(&ds)?);
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, Error> {
    names.iter().map(|m| m.parse()).collect()
}

fn run_config(a: RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(
        output_dir,
        w_down,
        w_up,
        smooth_k,
        split_ratio,
        split_seed,
        grid_rows,
        grid_cols,
        cv_folds,
        cv_seed,
        c_grid,
        k_grid,
        gp_fraction,
        gp_restarts,
        gp_seed,
        gp_max_evals,
        gp_full,
        classify
    );
    if a.input.is_some() {
        cfg.input = a.input;
    }
    if a.smooth_k_speeds.is_some() {
        cfg.smooth_k_speeds = a.smooth_k_speeds;
    }
    if let Some(m) = &a.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(m) = &a.metric {
        cfg.metric = match m.as_str() {
            "planar" => Metric::Planar,
            "equirectangular" => Metric::Equirectangular,
            other => return Err(Error::Config(format!("unknown metric {other:?}"))),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<(), Error> {
    let cfg = run_config(a)?;
    let ds = pipeline::load_input(&cfg)?;
    let exp = pipeline::run_experiment(&ds, &cfg)?;
    pipeline::write_artifacts(&exp, &cfg, &cfg.output_dir)?;
    print!("{}", pipeline::render_report(&exp));
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<(), Error> {
    let method: Method = a.method.parse()?;
    let smoothed = data::read_canonical(open(&a.run.join(pipeline::SMOOTHED_FILE))?)?;
    let all = smoothed.locations();
    let bounds = match &a.bounds {
        Some(s) => Bounds::parse(s)?,
        None => Bounds::enclosing(&all, 0.0)?,
    };
    let (raster, stem) = if a.density {
        (
            Raster::density(&all, bounds, a.rows, a.cols)?,
            "density".to_string(),
        )
    } else {
        let (model, _, _) = pipeline::load_model(&a.run, method)?;
        let r = Raster::evaluate(bounds, a.rows, a.cols, |xs| model.predict(xs))?;
        (r, format!("heatmap_{method}"))
    };
    let prefix = a.out.unwrap_or_else(|| a.run.join(stem));
    let with_ext = |ext: &str| {
        let mut s = prefix.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    raster.write_csv(create(&with_ext(".csv"))?)?;
    raster.write_pgm(create(&with_ext(".pgm"))?)?;
    raster.write_svg(create(&with_ext(".svg"))?, a.cell_px)?;
    fs::write(with_ext(".range.toml"), raster.range_toml())?;
    let (lo, hi) = raster.range().unwrap_or((f64::NAN, f64::NAN));
    println!(
        "{}x{} raster written to {}.{{csv,pgm,svg,range.toml}}; range [{lo}, {hi}]",
        raster.rows,
        raster.cols,
        prefix.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Error> {
    let params = RunParams::load(&a.run)?;
    let methods = match &a.methods {
        Some(m) => parse_methods(m)?,
        None => Method::ALL
            .into_iter()
            .filter(|m| a.run.join(pipeline::predictions_file(*m)).exists())
            .collect(),
    };
    if methods.is_empty() {
        return Err(Error::Config(format!(
            "no prediction files in {}",
            a.run.display()
        )));
    }
    let mut out = io::stdout().lock();
    for m in methods {
        let preds = open(&a.run.join(pipeline::predictions_file(m)))?;
        let tiers_path = a.run.join(pipeline::tiers_file(m));
        let tiers = if tiers_path.exists() {
            Some(read_tiers(open(&tiers_path)?)?)
        } else {
            None
        };
        let reports = evaluate_run(preds, Some(&params.segmentation), tiers.as_deref())?;
        if a.csv {
            writeln!(out, "# {m}")?;
            write_report_csv(&reports, &mut out)?;
        } else {
            writeln!(out, "{}", format_report(&format!("[{m}]"), &reports))?;
        }
    }
    Ok(())
}
