//! Command-line entry point.
//!
//! Every command resolves its flags and config file into a [`CommandPlan`],
//! runs it, and writes a [`RunManifest`] next to its outputs. `replay`
//! re-runs a manifest's plan into a fresh directory and checks that every
//! artifact comes out byte-identical.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 missing prerequisite.

pub mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::cnn3d::CnnError;
use crate::data_model::{BiomarkerRanges, Distribution};
use crate::experiments::{CnnArchChoice, ExperimentConfig, ExperimentError, Mode, SearchSpace, TuneConfig, TuneObjective};
use crate::ingest::SyntheticConfig;
use crate::semisup::DEFAULT_BESTK_RUNS;

pub use commands::CommandPlan;
pub use manifest::{RunManifest, MANIFEST_NAME};

/// Environment variable naming the cache directory for saved CNNs.
pub const CACHE_ENV: &str = "NODULE_CACHE_DIR";
const DEFAULT_CACHE: &str = ".nodule-cache";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Prerequisite(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Prerequisite(_) => 4,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Invalid(m) => CliError::Usage(m),
            ExperimentError::Prerequisite(m) => CliError::Prerequisite(m),
            ExperimentError::Cnn(CnnError::Architecture { .. } | CnnError::ShapeUnderflow { .. } | CnnError::InvalidConfig(_)) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lung-nodule", version, about = "Lung-nodule malignancy-suspicion experiments")]
pub struct Cli {
    /// Worker threads for iteration-level parallelism.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Where to write the run manifest (default: inside the output directory).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a container from annotation XML or filter an existing container.
    Ingest(IngestArgs),
    /// Generate a synthetic container.
    Synth(SynthArgs),
    /// Run experiments 1 to 6.
    Experiment(ExperimentArgs),
    /// Random search over forest hyperparameters.
    Tune(TuneArgs),
    /// Select K for pseudo-labeling.
    Bestk(BestKArgs),
    /// Re-run a manifest and verify its artifact checksums.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory searched recursively for annotation XML.
    #[arg(long, conflicts_with = "container_in", required_unless_present = "container_in")]
    pub xml_dir: Option<PathBuf>,
    #[arg(long)]
    pub container_in: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// File of patient ids to drop, one per line; `#` starts a comment.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// In-plane pixel spacing in mm for XML input.
    #[arg(long, default_value_t = 1.0)]
    pub pixel_spacing: f32,
    /// Slice spacing in mm when the contours do not reveal it.
    #[arg(long, default_value_t = 1.0)]
    pub slice_spacing: f32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key.path=value` override in TOML syntax; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fully,
    Semi,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Fully => vec![Mode::Fully],
            ModeArg::Semi => vec![Mode::Semi],
            ModeArg::Both => vec![Mode::Fully, Mode::Semi],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Reference,
    Compact,
    Small,
}

impl From<ArchArg> for CnnArchChoice {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Reference => CnnArchChoice::Reference,
            ArchArg::Compact => CnnArchChoice::Compact,
            ArchArg::Small => CnnArchChoice::Small,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExperimentFlags {
    /// TOML experiment settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; required here or as `master_seed` in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub stratified: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub cnn_arch: Option<ArchArg>,
    /// CNN input box as `X,Y,Z`.
    #[arg(long, value_parser = parse_dims)]
    pub input_dims: Option<[usize; 3]>,
    /// Re-select K on every iteration with this many runs.
    #[arg(long)]
    pub per_iteration_k_runs: Option<usize>,
    /// Cache directory for saved CNNs (default: $NODULE_CACHE_DIR, then ./.nodule-cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// `key.path=value` override in TOML syntax; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub container: PathBuf,
    /// Experiment ids; comma-separated or repeated.
    #[arg(long, required = true, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=6))]
    pub id: Vec<u8>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistributionArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Auc,
    Accuracy,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub container: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub experiment: u8,
    #[arg(long, value_enum, ignore_case = true)]
    pub distribution: DistributionArg,
    /// Sampled configurations.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Auc)]
    pub objective: ObjectiveArg,
    /// TOML search space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Output file for the best parameters; the full report goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

#[derive(Debug, Args)]
pub struct BestKArgs {
    #[arg(long)]
    pub container: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BESTK_RUNS, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub runs: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest of the run to reproduce.
    #[arg(long = "from")]
    pub from: PathBuf,
    /// Output directory for the replay (default: `replay/` next to the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated sizes, got {s:?}"))
}

fn read_toml(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Applies `a.b.c=value`; the value is TOML, falling back to a bare string.
fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Dotted paths present in `given` but absent from `known`.
fn unknown_keys(given: &serde_json::Value, known: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    if let (Some(g), Some(k)) = (given.as_object(), known.as_object()) {
        for (key, v) in g {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                None => out.push(path),
                Some(kv) => unknown_keys(v, kv, &path, out),
            }
        }
    }
}

/// Config file, then `--set` overrides, into `T`. Unknown keys are errors.
fn resolve<T: DeserializeOwned + Serialize>(file: Option<&Path>, sets: &[String]) -> Result<(T, toml::Table), CliError> {
    let mut table = match file {
        Some(p) => read_toml(p)?,
        None => toml::Table::new(),
    };
    for s in sets {
        apply_set(&mut table, s)?;
    }
    let value: T = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let mut unknown = Vec::new();
    let given = serde_json::to_value(&table).expect("toml converts to json");
    let known = serde_json::to_value(&value).expect("config serializes");
    unknown_keys(&given, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))));
    }
    Ok((value, table))
}

fn cache_dir(flag: Option<&PathBuf>) -> PathBuf {
    flag.cloned()
        .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE))
}

fn experiment_config(flags: &ExperimentFlags, iterations: Option<usize>) -> Result<ExperimentConfig, CliError> {
    let (mut cfg, table): (ExperimentConfig, _) = resolve(flags.config.as_deref(), &flags.sets)?;
    match flags.seed {
        Some(s) => cfg.master_seed = s,
        None if table.contains_key("master_seed") => {}
        None => return Err(CliError::Usage("a master seed is required: pass --seed or set master_seed".into())),
    }
    if let Some(n) = iterations {
        cfg.iterations = Some(n);
    }
    if let Some(k) = flags.k {
        cfg.pseudo.k = k;
    }
    if let Some(f) = flags.train_fraction {
        cfg.train_fraction = f;
    }
    if flags.stratified {
        cfg.stratified = true;
    }
    if let Some(e) = flags.epochs {
        cfg.cnn.train.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        cfg.cnn.train.batch_size = b;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.cnn.train.learning_rate = lr;
    }
    if let Some(a) = flags.cnn_arch {
        cfg.cnn.architecture = a.into();
    }
    if let Some(d) = flags.input_dims {
        cfg.cnn.input_dims = d;
    }
    if let Some(r) = flags.per_iteration_k_runs {
        cfg.per_iteration_k_runs = Some(r);
    }
    Ok(cfg)
}

fn read_exclusions(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut ids: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Turns parsed arguments into a plan; `replay` has none.
pub fn plan(command: &Command) -> Result<Option<CommandPlan>, CliError> {
    Ok(Some(match command {
        Command::Ingest(a) => {
            let source = match (&a.xml_dir, &a.container_in) {
                (Some(d), _) => commands::IngestSource::XmlDir(d.clone()),
                (None, Some(c)) => commands::IngestSource::Container(c.clone()),
                (None, None) => return Err(CliError::Usage("pass --xml-dir or --container-in".into())),
            };
            CommandPlan::Ingest(commands::IngestPlan {
                source,
                out: a.out.clone(),
                exclude: a.exclude.as_deref().map(read_exclusions).transpose()?.unwrap_or_default(),
                pixel_spacing: a.pixel_spacing,
                slice_spacing: a.slice_spacing,
                ranges: BiomarkerRanges::default(),
            })
        }
        Command::Synth(a) => {
            let (mut config, _): (SyntheticConfig, _) = resolve(a.config.as_deref(), &a.sets)?;
            if let Some(n) = a.n {
                config.n_records = n;
            }
            if let Some(s) = a.seed {
                config.seed = s;
            }
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            CommandPlan::Synth(commands::SynthPlan {
                config,
                out: a.out.clone(),
            })
        }
        Command::Experiment(a) => {
            let config = experiment_config(&a.flags, a.iterations)?;
            CommandPlan::Experiment(commands::ExperimentPlan {
                container: a.container.clone(),
                ids: a.id.clone(),
                modes: a.mode.modes(),
                config,
                cache_dir: cache_dir(a.flags.cache_dir.as_ref()),
                out: a.out.clone(),
            })
        }
        Command::Tune(a) => {
            let experiment_config = experiment_config(&a.flags, None)?;
            let (space, _): (SearchSpace, _) = resolve(a.space.as_deref(), &[])?;
            space.validate()?;
            CommandPlan::Tune(commands::TunePlan {
                container: a.container.clone(),
                experiment: a.experiment,
                distribution: match a.distribution {
                    DistributionArg::A => Distribution::A,
                    DistributionArg::B => Distribution::B,
                },
                tune: TuneConfig {
                    folds: a.folds,
                    iterations: a.iterations,
                    objective: match a.objective {
                        ObjectiveArg::Auc => TuneObjective::Auc,
                        ObjectiveArg::Accuracy => TuneObjective::Accuracy,
                    },
                    seed: experiment_config.master_seed,
                },
                experiment_config,
                space,
                cache_dir: cache_dir(a.flags.cache_dir.as_ref()),
                out: a.out.clone(),
            })
        }
        Command::Bestk(a) => CommandPlan::Bestk(commands::BestKPlan {
            container: a.container.clone(),
            runs: a.runs,
            seed: a.seed,
            out: a.out.clone(),
        }),
        Command::Replay(_) => return Ok(None),
    }))
}

/// Runs `plan`, writes its manifest, and returns it.
pub fn execute_plan(plan: &CommandPlan, jobs: usize, manifest_path: Option<&Path>) -> Result<(RunManifest, PathBuf), CliError> {
    let clock = manifest::Clock::start();
    let inputs = plan.input_digests()?;
    let exec = plan.execute()?;
    let root = plan.output_root();
    let artifacts = manifest::digest_artifacts(&root, &exec.artifacts)?;
    let m = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: plan.name().into(),
        config: plan.clone(),
        master_seed: plan.master_seed(),
        jobs,
        inputs,
        output_root: root.clone(),
        artifacts,
        summary: exec.summary,
        timings: clock.finish(),
    };
    let path = manifest_path.map(Path::to_path_buf).unwrap_or_else(|| root.join(MANIFEST_NAME));
    m.write(&path)?;
    Ok((m, path))
}

/// Outcome of a replay: the fresh manifest and any artifact mismatches.
pub struct ReplayOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub mismatches: Vec<String>,
}

pub fn replay(from: &Path, out: Option<&Path>, jobs: usize, manifest_path: Option<&Path>) -> Result<ReplayOutcome, CliError> {
    let original = RunManifest::read(from)?;
    let root = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| from.parent().unwrap_or(Path::new(".")).join("replay"));
    let plan = original.config.rerooted(&root);
    let inputs = plan.input_digests()?;
    if inputs != original.inputs {
        return Err(CliError::Data("inputs differ from the recorded run".into()));
    }
    let (manifest, manifest_path) = execute_plan(&plan, jobs, manifest_path)?;
    let mismatches = manifest::mismatches(&original.artifacts, &manifest.artifacts);
    Ok(ReplayOutcome {
        manifest,
        manifest_path,
        mismatches,
    })
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let jobs = cli.jobs as usize;
    let manifest_path = cli.manifest.as_deref();
    if let Command::Replay(a) = &cli.command {
        let r = replay(&a.from, a.out.as_deref(), jobs, manifest_path)?;
        println!("manifest: {}", r.manifest_path.display());
        if !r.mismatches.is_empty() {
            return Err(CliError::Data(format!("replay differs: {}", r.mismatches.join("; "))));
        }
        println!("replay verified {} artifacts", r.manifest.artifacts.len());
        return Ok(());
    }
    let plan = plan(&cli.command)?.expect("not replay");
    let (m, path) = execute_plan(&plan, jobs, manifest_path)?;
    println!("{}", serde_json::to_string_pretty(&m.summary).expect("json"));
    println!("manifest: {}", path.display());
    Ok(())
}

/// Parses `args`, runs the command on a pool of `--jobs` threads, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs as usize).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 3;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overrides_nest_and_parse() {
        let mut t = toml::Table::new();
        apply_set(&mut t, "cnn.train.epochs=3").unwrap();
        apply_set(&mut t, "cnn.architecture=compact").unwrap();
        apply_set(&mut t, "stratified = true").unwrap();
        let cfg: ExperimentConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.cnn.train.epochs, 3);
        assert_eq!(cfg.cnn.architecture, CnnArchChoice::Compact);
        assert!(cfg.stratified);
        assert!(apply_set(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let sets = vec!["cnn.train.epochz=3".to_string()];
        let err = resolve::<ExperimentConfig>(None, &sets).unwrap_err();
        assert!(err.to_string().contains("cnn.train.epochz"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let ok = vec!["rf.n_estimators=7".to_string()];
        let (cfg, _) = resolve::<ExperimentConfig>(None, &ok).unwrap();
        assert_eq!(cfg.rf.unwrap().n_estimators, 7);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "master_seed = 5\niterations = 9\n[pseudo]\nk = 7\n").unwrap();
        let cli = Cli::try_parse_from([
            "lung-nodule", "experiment", "--container", "c", "--id", "1", "--out", "o", "--config",
            path.to_str().unwrap(), "--k", "11",
        ])
        .unwrap();
        let Some(CommandPlan::Experiment(p)) = plan(&cli.command).unwrap() else {
            panic!("experiment plan expected")
        };
        assert_eq!((p.config.master_seed, p.config.iterations, p.config.pseudo.k), (5, Some(9), 11));
        assert_eq!(p.modes, vec![Mode::Fully, Mode::Semi]);
    }

    #[test]
    fn seed_is_mandatory_for_experiments() {
        let cli = Cli::try_parse_from(["lung-nodule", "experiment", "--container", "c", "--id", "1", "--out", "o"]).unwrap();
        let err = plan(&cli.command).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(Cli::try_parse_from(["lung-nodule", "experiment", "--container", "c", "--id", "7", "--out", "o"]).is_err());
    }

    #[test]
    fn dims_parser() {
        assert_eq!(parse_dims("32,32,16").unwrap(), [32, 32, 16]);
        assert!(parse_dims("32,32").is_err());
        assert!(parse_dims("a,b,c").is_err());
    }

    #[test]
    fn exclusion_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.txt");
        std::fs::write(&path, "# header\nP2\n\nP1  # trailing\nP2\n").unwrap();
        assert_eq!(read_exclusions(&path).unwrap(), vec!["P1", "P2"]);
    }

    #[test]
    fn rerooting_keeps_file_names() {
        let p = CommandPlan::Bestk(commands::BestKPlan {
            container: "c".into(),
            runs: 3,
            seed: 1,
            out: "a/b/k.json".into(),
        });
        assert_eq!(p.output_root(), PathBuf::from("a/b"));
        let CommandPlan::Bestk(q) = p.rerooted(Path::new("r")) else { unreachable!() };
        assert_eq!(q.out, PathBuf::from("r/k.json"));
    }
}
