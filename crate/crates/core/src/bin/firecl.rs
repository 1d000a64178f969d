use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use firecl::config::RunConfig;
use firecl::cube::{load_cube, DataCube, SplitTag};
use firecl::diagnostics::{
    feature_diff_report, feature_ratio_svg, latent_distance_report, write_feature_diff_csv, write_latent_csv,
    FeatureDiffConfig,
};
use firecl::model::ModelParams;
use firecl::prepared::{prepare, read_prepared, write_prepared, Prepared};
use firecl::samplers::Strategy;
use firecl::sidecar::Sidecar;
use firecl::synth::write_synthetic;
use firecl::trainer::{evaluate, latents, write_history_rows, HistoryRow, Trainer};
use firecl::{Error, Result};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG_KEY: u8 = 3;
const EXIT_MISSING_INPUT: u8 = 4;
const EXIT_INVARIANT: u8 = 5;

const SOURCE_FILE: &str = "source.txt";

#[derive(Parser)]
#[command(name = "firecl", version, about = "Curriculum contrastive learning for spatio-temporal risk maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run config file (`[section]` + `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.seed=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cube.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract, split and balance patches; build sampler maps.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Strategy maps to build (repeatable); all when omitted.
        #[arg(long)]
        strategy: Vec<String>,
    },
    /// Train a model on a prepared directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs_pre: Option<usize>,
        #[arg(long)]
        epochs_cl: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many epochs (in total) are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate a model on one split.
    Eval {
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Feature-difference and latent-distance reports.
    Diagnose {
        #[arg(long)]
        prep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Models for the latent report, as `name=path` or `path`.
        #[arg(long)]
        model: Vec<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 10)]
        n_pairs: usize,
        #[arg(long, default_value_t = 0.1)]
        percentile: f64,
        #[arg(long)]
        max_anchors: Option<usize>,
        /// Cap on positives drawn for the latent report.
        #[arg(long)]
        latent_cap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write an SVG bar chart of the feature ratios.
        #[arg(long)]
        svg: bool,
    },
}

struct Summary {
    command: &'static str,
    lines: Vec<(String, String)>,
}

impl Summary {
    fn new(command: &'static str) -> Self {
        Self { command, lines: Vec::new() }
    }

    fn add(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn artifact(&mut self, path: &Path) {
        self.add("artifact", path.display());
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("summary.txt");
        let mut text = format!("command = {}\n", self.command);
        for (k, v) in &self.lines {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!("artifact = {}\n", path.display()));
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn run_config(cfg: &ConfigArgs) -> Result<RunConfig> {
    if let Some(p) = &cfg.config {
        require(p)?;
    }
    RunConfig::load_with(cfg.config.as_deref(), &cfg.overrides)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

/// Loads the cube a prepared directory was built from.
fn prepared_cube(prep: &Path) -> Result<DataCube> {
    let src = prep.join(SOURCE_FILE);
    require(&src)?;
    let text = fs::read_to_string(&src).map_err(|e| io_err(&src, e))?;
    let cube = text
        .lines()
        .find_map(|l| l.strip_prefix("cube = "))
        .ok_or_else(|| Error::Manifest(format!("{} lacks a `cube` entry", src.display())))?;
    let cube = PathBuf::from(cube.trim());
    require(&cube)?;
    load_cube(&cube)
}

fn load_prepared(prep: &Path) -> Result<(DataCube, Prepared)> {
    require(prep)?;
    let cube = prepared_cube(prep)?;
    let p = read_prepared(prep, &cube)?;
    Ok((cube, p))
}

fn load_model(path: &Path) -> Result<ModelParams> {
    require(path)?;
    ModelParams::from_sidecar(&Sidecar::read(path)?)
}

fn cmd_synth(cfg: &ConfigArgs, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut rc = run_config(cfg)?;
    if let Some(s) = seed {
        rc.synth.seed = s;
    }
    let cube = write_synthetic(&rc.synth, out)?;
    let mut s = Summary::new("synth");
    s.add("seed", rc.synth.seed);
    s.add("positives", cube.fire.iter().filter(|&&v| v == 1).count());
    s.artifact(out);
    s.write(out)
}

fn cmd_prepare(cfg: &ConfigArgs, cube_path: &Path, out: &Path, strategies: &[String]) -> Result<()> {
    let rc = run_config(cfg)?;
    require(cube_path)?;
    let strategies: Vec<Strategy> = if strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        strategies
            .iter()
            .map(|s| s.parse().map_err(config_err))
            .collect::<Result<_>>()?
    };
    let cube = load_cube(cube_path)?;
    let prep = prepare(&cube, &rc, &strategies)?;
    create_dir(out)?;
    let mut s = Summary::new("prepare");
    let cube_abs = fs::canonicalize(cube_path).map_err(|e| io_err(cube_path, e))?;
    let src = out.join(SOURCE_FILE);
    fs::write(&src, format!("cube = {}\n", cube_abs.display())).map_err(|e| io_err(&src, e))?;
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let set = prep.split(tag);
        s.add(&format!("{}_patches", tag.as_str()), set.len());
        s.add(&format!("{}_positives", tag.as_str()), set.n_positive());
    }
    s.add(
        "strategies",
        strategies.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(","),
    );
    s.artifact(&src);
    for p in write_prepared(&prep, out)? {
        s.artifact(&p);
    }
    s.write(out)
}

struct TrainArgs<'a> {
    cfg: &'a ConfigArgs,
    prep: &'a Path,
    out: &'a Path,
    protocol: Option<&'a str>,
    strategy: Option<&'a str>,
    loss: Option<&'a str>,
    seed: Option<u64>,
    epochs_pre: Option<usize>,
    epochs_cl: Option<usize>,
    resume: Option<&'a Path>,
    stop_after: Option<usize>,
}

fn checkpoint_sidecar(params: &ModelParams, next_epoch: usize, fingerprint: &str, history: &[u8]) -> Sidecar {
    let mut s = params.to_sidecar();
    s.set_meta("checkpoint_next_epoch", next_epoch);
    s.set_meta("checkpoint_config", fingerprint);
    s.push_u8("history_csv", history.to_vec());
    s
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut rc = run_config(a.cfg)?;
    let t = &mut rc.train;
    if let Some(p) = a.protocol {
        t.protocol = p.parse().map_err(config_err)?;
    }
    if let Some(p) = a.strategy {
        t.strategy = p.parse().map_err(config_err)?;
    }
    if let Some(p) = a.loss {
        t.loss = p.parse().map_err(config_err)?;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.epochs_pre {
        t.epochs_pre = v;
    }
    if let Some(v) = a.epochs_cl {
        t.epochs_cl = v;
    }
    // reject bad combinations before touching the data
    let resolved = rc.train.resolve()?;
    if let Some(r) = a.resume {
        require(r)?;
    }
    let (_cube, prep) = load_prepared(a.prep)?;
    let fingerprint = format!("{:?}|{:?}", resolved, rc.model).replace('\n', " ");
    let val = (!prep.val.is_empty()).then_some(&prep.val);
    let trainer = Trainer::new(&prep.train, val, &rc.train, Some(prep.maps.clone()))?;
    let (mut params, start, mut history) = match a.resume {
        Some(path) => {
            let s = Sidecar::read(path)?;
            if s.meta("checkpoint_config")? != fingerprint {
                return Err(Error::Config("checkpoint was written with a different configuration".into()));
            }
            let next: usize = s.meta_parse("checkpoint_next_epoch")?;
            (ModelParams::from_sidecar(&s)?, next, s.u8s("history_csv")?.to_vec())
        }
        None => {
            let mut h = Vec::new();
            write_history_rows(&[], &mut h, true)?;
            (trainer.init(&rc.model)?, 0, h)
        }
    };
    create_dir(a.out)?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    let total = trainer.total_epochs();
    let end = a.stop_after.unwrap_or(total).min(total);
    let ckpt_path = a.out.join("checkpoint.bin");
    let mut rows: Vec<HistoryRow> = Vec::new();
    trainer.run(&mut params, start, end, |p, row| {
        write_history_rows(std::slice::from_ref(row), &mut history, false)?;
        checkpoint_sidecar(p, row.epoch + 1, &fingerprint, &history).write(&ckpt_path)?;
        rows.push(row.clone());
        Ok(())
    })?;
    if start >= end {
        checkpoint_sidecar(&params, start, &fingerprint, &history).write(&ckpt_path)?;
    }
    let hist_path = a.out.join("history.csv");
    fs::File::create(&hist_path)
        .and_then(|mut f| f.write_all(&history))
        .map_err(|e| io_err(&hist_path, e))?;
    let params_path = a.out.join("params.bin");
    params.to_sidecar().write(&params_path)?;

    let mut s = Summary::new("train");
    s.add("protocol", resolved.protocol.as_str());
    s.add("strategy", resolved.strategy.as_str());
    s.add("loss", resolved.loss.as_str());
    s.add("seed", resolved.seed);
    s.add("epochs_done", end.max(start));
    s.add("epochs_total", total);
    for w in &resolved.warnings {
        s.add("warning", w);
    }
    s.artifact(&ckpt_path);
    s.artifact(&hist_path);
    s.artifact(&params_path);
    s.write(a.out)
}

fn cmd_eval(prep: &Path, model: &Path, out: &Path, split: &str) -> Result<()> {
    let tag: SplitTag = split.parse().map_err(config_err)?;
    let params = load_model(model)?;
    let (_cube, p) = load_prepared(prep)?;
    let report = evaluate(&params, p.split(tag))?;
    create_dir(out)?;
    let path = out.join("metrics.csv");
    let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    report.write_csv(f)?;
    let mut s = Summary::new("eval");
    s.add("split", tag.as_str());
    s.add("n", report.n);
    s.add("macro_f1", firecl::diagnostics::fmt_opt(report.macro_f1()));
    s.add("auroc", firecl::diagnostics::fmt_opt(report.auroc));
    s.artifact(&path);
    s.write(out)?;
    println!("f1 = {}", firecl::diagnostics::fmt_opt(report.macro_f1()));
    Ok(())
}

struct DiagnoseArgs<'a> {
    prep: &'a Path,
    out: &'a Path,
    models: &'a [String],
    split: &'a str,
    fd: FeatureDiffConfig,
    latent_cap: Option<usize>,
    svg: bool,
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let tag: SplitTag = a.split.parse().map_err(config_err)?;
    let models: Vec<(String, PathBuf)> = a
        .models
        .iter()
        .map(|m| match m.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(m);
                let name = p.file_stem().map_or_else(|| m.clone(), |s| s.to_string_lossy().into_owned());
                (name, p)
            }
        })
        .collect();
    for (_, p) in &models {
        require(p)?;
    }
    let (cube, p) = load_prepared(a.prep)?;
    create_dir(a.out)?;
    let mut s = Summary::new("diagnose");
    let reports = Strategy::ALL
        .iter()
        .filter(|&&st| p.maps.has(st))
        .map(|&st| feature_diff_report(&p.train, &cube.dyn_names, &p.maps, st, &a.fd))
        .collect::<Result<Vec<_>>>()?;
    let fd_path = a.out.join("feature_diff.csv");
    write_feature_diff_csv(&reports, fs::File::create(&fd_path).map_err(|e| io_err(&fd_path, e))?)?;
    s.artifact(&fd_path);
    if a.svg {
        let svg_path = a.out.join("feature_ratio.svg");
        fs::write(&svg_path, feature_ratio_svg(&reports)).map_err(|e| io_err(&svg_path, e))?;
        s.artifact(&svg_path);
    }
    if !models.is_empty() {
        let set = p.split(tag);
        let labels: Vec<u8> = set.patches.iter().map(|x| x.label).collect();
        let mut rows = Vec::new();
        for (name, path) in &models {
            let params = load_model(path)?;
            let z = latents(&params, set)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.fd.seed);
            rows.push((name.clone(), latent_distance_report(&z, &labels, a.latent_cap, &mut rng)?));
        }
        let lat_path = a.out.join("latent.csv");
        write_latent_csv(&rows, fs::File::create(&lat_path).map_err(|e| io_err(&lat_path, e))?)?;
        s.artifact(&lat_path);
    }
    s.write(a.out)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { cfg, out, seed } => cmd_synth(cfg, out, *seed),
        Command::Prepare {
            cfg,
            cube,
            out,
            strategy,
        } => cmd_prepare(cfg, cube, out, strategy),
        Command::Train {
            cfg,
            prep,
            out,
            protocol,
            strategy,
            loss,
            seed,
            epochs_pre,
            epochs_cl,
            resume,
            stop_after,
        } => cmd_train(TrainArgs {
            cfg,
            prep,
            out,
            protocol: protocol.as_deref(),
            strategy: strategy.as_deref(),
            loss: loss.as_deref(),
            seed: *seed,
            epochs_pre: *epochs_pre,
            epochs_cl: *epochs_cl,
            resume: resume.as_deref(),
            stop_after: *stop_after,
        }),
        Command::Eval { prep, model, out, split } => cmd_eval(prep, model, out, split),
        Command::Diagnose {
            prep,
            out,
            model,
            split,
            n_pairs,
            percentile,
            max_anchors,
            latent_cap,
            seed,
            svg,
        } => cmd_diagnose(DiagnoseArgs {
            prep,
            out,
            models: model,
            split,
            fd: FeatureDiffConfig {
                n_pairs: *n_pairs,
                percentile: *percentile,
                max_anchors: *max_anchors,
                seed: *seed,
            },
            latent_cap: *latent_cap,
            svg: *svg,
        }),
    }
}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::UnknownConfigKey(_) => ("invalid_config_key", EXIT_CONFIG_KEY),
        Error::MissingFile(_) => ("missing_input", EXIT_MISSING_INPUT),
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            ("missing_input", EXIT_MISSING_INPUT)
        }
        Error::Config(_) => ("invariant_violation", EXIT_INVARIANT),
        _ => ("runtime", EXIT_OTHER),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage exit={EXIT_USAGE} msg={first}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={kind} exit={code} msg={msg}");
            ExitCode::from(code)
        }
    }
}
