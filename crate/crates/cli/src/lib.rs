//! `melreject` command line. Every subcommand is a thin composition of
//! library calls; the binary only parses arguments and maps errors to exit
//! codes.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use melreject_core::fixture::{self, ErrorBudget, FixtureConfig, FixtureMode};
use melreject_core::ingest::{
    binarize_labels, build_oversample_plan, make_split, merge_manifests, parse_dataset_layout, parse_predictions,
    to_csv, to_json, DatasetManifest, LabelPolicy, LayoutDescriptor, ParseOptions, PredictionFormat, Role, Split,
};
use melreject_core::pipeline::{run_pipeline, PipelineOutput};
use melreject_core::rejection::{best_point, sweep_csv, sweep_thresholds, RejectionPolicy, SweepPoint};
use melreject_core::report::{
    self, format_percent, format_score, parse_rows_json, rank_leaderboard, roster_code, BeforeAfterRow, Metric,
    MetricKey, RowMeta, CALIBRATION_COLUMNS, CLASSIFICATION_COLUMNS,
};
use melreject_core::uncertainty::annotate_set;
use melreject_core::{Error as CoreError, EvaluationSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: CoreError },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::NoAdmissibleThreshold) => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "melreject", version, about = "Entropy-based rejection for melanoma classifiers")]
pub struct Cli {
    /// Seed for every random choice (splits, fixtures).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output format for stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a binarized dataset manifest from one or more layout descriptors.
    Manifest(ManifestArgs),
    /// Tune the threshold on validation, apply it to test, write the reports.
    Evaluate(EvaluateArgs),
    /// Print the validation threshold sweep.
    Sweep(SweepArgs),
    /// Combine before/after rows into a table or leaderboard.
    Report(ReportArgs),
    /// Write synthetic validation and test predictions plus a ground-truth sidecar.
    GenFixture(FixtureArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Largest admissible rejected fraction on validation.
    #[arg(long)]
    pub max_reject: Option<f64>,
    /// Calibration bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

impl PolicyArgs {
    pub fn policy(&self) -> RejectionPolicy {
        let base = RejectionPolicy::default();
        RejectionPolicy {
            grid_step: self.grid_step.unwrap_or(base.grid_step),
            max_reject_fraction: self.max_reject.unwrap_or(base.max_reject_fraction),
            bins: self.bins.unwrap_or(base.bins),
            ..base
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Validation predictions (CSV or JSON).
    #[arg(long)]
    pub val: PathBuf,
    /// Test predictions (CSV or JSON).
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Positive class name when none is called "melanoma".
    #[arg(long)]
    pub positive_class: Option<String>,
    /// Test set label in the report row; defaults to the test file stem.
    #[arg(long)]
    pub test_set: Option<String>,
    #[arg(long, default_value = "")]
    pub network: String,
    /// Comma-separated training datasets, rendered as roster letters.
    #[arg(long, value_delimiter = ',')]
    pub train_sets: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub val: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Also write the sweep CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub positive_class: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Columns {
    Classification,
    Calibration,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Row files written by `evaluate` (before_after.json).
    #[arg(long, required = true, num_args = 1..)]
    pub rows: Vec<PathBuf>,
    /// Rank rows by a metric key such as `precision_after`.
    #[arg(long)]
    pub rank: Option<String>,
    #[arg(long, value_enum, default_value_t = Columns::Classification)]
    pub columns: Columns,
    /// Also write the rendered output to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Planted,
    Calibrated,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    /// Records per set.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub positive_fraction: f64,
    /// Fraction of records misclassified.
    #[arg(long, conflicts_with = "errors")]
    pub error_rate: Option<f64>,
    /// Exact number of misclassified records per set.
    #[arg(long)]
    pub errors: Option<usize>,
    /// Share of errors that are false positives.
    #[arg(long, default_value_t = 0.5)]
    pub fp_share: f64,
    /// Probability that an error is placed in the high-entropy band.
    #[arg(long, default_value_t = 0.6)]
    pub correlation: f64,
    #[arg(long, default_value_t = 0.03)]
    pub ambiguous: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Planted)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl FixtureArgs {
    pub fn config(&self, seed: u64) -> FixtureConfig {
        let base = FixtureConfig::default();
        FixtureConfig {
            n: self.n,
            positive_fraction: self.positive_fraction,
            errors: match (self.errors, self.error_rate) {
                (Some(c), _) => ErrorBudget::Count(c),
                (None, Some(r)) => ErrorBudget::Rate(r),
                (None, None) => base.errors,
            },
            fp_share: self.fp_share,
            correlation: self.correlation,
            ambiguous_fraction: self.ambiguous,
            mode: match self.mode {
                ModeArg::Planted => FixtureMode::Planted,
                ModeArg::Calibrated => FixtureMode::Calibrated,
            },
            bins: self.bins,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ManifestArgs {
    /// Layout descriptor files (TOML or JSON); several are merged.
    #[arg(long, required = true, num_args = 1..)]
    pub layout: Vec<PathBuf>,
    /// Dataset root, for a single descriptor without `root`.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Extra raw labels that mean melanoma.
    #[arg(long)]
    pub melanoma_label: Vec<String>,
    /// Reject raw labels outside this list.
    #[arg(long)]
    pub known_label: Vec<String>,
    /// Train share of a stratified train/validation split, e.g. 0.8.
    #[arg(long)]
    pub split: Option<f64>,
    /// Write an oversampling plan that balances the train split.
    #[arg(long)]
    pub oversample: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Directory holding run logs.
    #[arg(long, default_value = "runs")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Allowed browser origin; repeat for several, `*` for any.
    #[arg(long, default_value = "http://localhost:5173")]
    pub cors_origin: Vec<String>,
}

/// Parse arguments, run, print diagnostics and return the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let text = match &cli.command {
        Command::Evaluate(args) => render_evaluation(&cmd_evaluate(args)?, cli.format),
        Command::Sweep(args) => cmd_sweep(args, cli.format, out)?,
        Command::Report(args) => cmd_report(args, cli.format)?,
        Command::GenFixture(args) => cmd_gen_fixture(args, cli.seed, cli.format)?,
        Command::Manifest(args) => cmd_manifest(args, cli.seed, cli.format)?,
        Command::Serve(args) => return cmd_serve(args),
    };
    out.write_all(text.as_bytes()).map_err(|source| CliError::Write {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a prediction file; the format follows the extension (CSV otherwise).
pub fn load_set(path: &Path, role: Role, positive_class: Option<&str>) -> CliResult<EvaluationSet> {
    let input = |source| CliError::Input {
        path: path.to_path_buf(),
        source,
    };
    let bytes = fs::read(path).map_err(|e| input(CoreError::io(path, e)))?;
    let opts = ParseOptions {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "predictions".into()),
        role,
        positive_class: positive_class.map(str::to_string),
    };
    let format = PredictionFormat::from_path(path).unwrap_or(PredictionFormat::Csv);
    parse_predictions(&bytes, format, &opts).map_err(input)
}

fn row_meta(args: &EvaluateArgs, test: &EvaluationSet) -> CliResult<RowMeta> {
    let train_sets = if args.train_sets.is_empty() {
        String::new()
    } else {
        roster_code(&args.train_sets)?
    };
    Ok(RowMeta {
        test_set: args.test_set.clone().unwrap_or_else(|| test.name().to_string()),
        network: args.network.clone(),
        train_sets,
    })
}

/// Run the pipeline and write the five report files into `--out`.
pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<PipelineOutput> {
    if args.val == args.test {
        return Err(CliError::Usage("--val and --test must be different files".into()));
    }
    let positive = args.positive_class.as_deref();
    let val = load_set(&args.val, Role::Validation, positive)?;
    let test = load_set(&args.test, Role::Test, positive)?;
    let meta = row_meta(args, &test)?;
    let output = run_pipeline(&val, &test, &args.policy.policy(), meta)?;
    create_dir(&args.out)?;
    for (name, contents) in output.files() {
        write_file(&args.out.join(name), &contents)?;
    }
    Ok(output)
}

pub fn render_evaluation(output: &PipelineOutput, format: Format) -> String {
    let rows = std::slice::from_ref(&output.row);
    match format {
        Format::Json => report::render_json(rows),
        Format::Csv => report::render_csv(rows),
        Format::Text => {
            let mut s = report::render_text(rows, &CLASSIFICATION_COLUMNS);
            s.push('\n');
            s.push_str(&report::render_text(rows, &CALIBRATION_COLUMNS));
            let e = &output.evaluation;
            s.push_str(&format!(
                "\nthreshold {}  accepted {}/{} ({})  misdiagnoses prevented {}\n",
                output.policy.threshold,
                e.partition.accepted.len(),
                e.before.n,
                format_percent(Some(e.partition.coverage())),
                output.reduction.prevented,
            ));
            s
        }
    }
}

fn sweep_text(points: &[SweepPoint], selected: Option<f64>) -> String {
    let mut s = String::from("threshold  rejected  accuracy  ece     brier   objective  feasible\n");
    for p in points {
        let mark = if Some(p.threshold) == selected { "  <- selected" } else { "" };
        s.push_str(&format!(
            "{:<9}  {:<8}  {:<8}  {:<6}  {:<6}  {:<9}  {}{}\n",
            format!("{:.2}", p.threshold),
            format_percent(Some(p.reject_fraction)),
            format_percent(p.accuracy),
            format_score(p.ece),
            format_score(p.brier),
            format_score(p.objective),
            if p.feasible { "yes" } else { "no" },
            mark
        ));
    }
    s
}

/// Prints the sweep even when no point is feasible, then reports that as an
/// error so the exit code is 1.
pub fn cmd_sweep(args: &SweepArgs, format: Format, out: &mut dyn Write) -> CliResult<String> {
    let val = annotate_set(&load_set(&args.val, Role::Validation, args.positive_class.as_deref())?);
    let points = sweep_thresholds(&val, &args.policy.policy())?;
    if let Some(path) = &args.out {
        write_file(path, &sweep_csv(&points))?;
    }
    let selected = best_point(&points).ok().map(|p| p.threshold);
    let text = match format {
        Format::Csv => sweep_csv(&points),
        Format::Json => {
            let doc = serde_json::json!({ "selected_threshold": selected, "points": points });
            serde_json::to_string_pretty(&doc).expect("sweep serializes") + "\n"
        }
        Format::Text => sweep_text(&points, selected),
    };
    if selected.is_none() {
        out.write_all(text.as_bytes()).map_err(|source| CliError::Write {
            path: PathBuf::from("<stdout>"),
            source,
        })?;
        return Err(CoreError::NoAdmissibleThreshold.into());
    }
    Ok(text)
}

pub fn cmd_report(args: &ReportArgs, format: Format) -> CliResult<String> {
    let mut rows: Vec<BeforeAfterRow> = Vec::new();
    for path in &args.rows {
        let input = |source| CliError::Input {
            path: path.clone(),
            source,
        };
        let text = fs::read_to_string(path).map_err(|e| input(CoreError::io(path, e)))?;
        rows.extend(parse_rows_json(&text).map_err(input)?);
    }
    if let Some(key) = &args.rank {
        let key: MetricKey = key.parse()?;
        rows = rank_leaderboard(&rows, key);
    }
    let columns: Vec<Metric> = match args.columns {
        Columns::Classification => CLASSIFICATION_COLUMNS.to_vec(),
        Columns::Calibration => CALIBRATION_COLUMNS.to_vec(),
        Columns::All => Metric::ALL.to_vec(),
    };
    let text = match format {
        Format::Text => report::render_text(&rows, &columns),
        Format::Csv => report::render_csv(&rows),
        Format::Json => report::render_json(&rows),
    };
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    Ok(text)
}

/// Writes `val.<ext>`, `test.<ext>` and `sidecar.json`; JSON predictions with
/// `--format json`, CSV otherwise.
pub fn cmd_gen_fixture(args: &FixtureArgs, seed: u64, format: Format) -> CliResult<String> {
    let fx = fixture::generate(&args.config(seed))?;
    create_dir(&args.out)?;
    let (ext, render): (&str, fn(&EvaluationSet) -> String) = match format {
        Format::Json => ("json", to_json),
        _ => ("csv", to_csv),
    };
    let val_path = args.out.join(format!("val.{ext}"));
    let test_path = args.out.join(format!("test.{ext}"));
    write_file(&val_path, &render(&fx.validation))?;
    write_file(&test_path, &render(&fx.test))?;
    let sidecar = serde_json::to_string_pretty(&fx.sidecar).expect("sidecar serializes");
    write_file(&args.out.join("sidecar.json"), &sidecar)?;
    Ok(format!(
        "wrote {} and {} ({} records each, {} planted errors in test)\n",
        val_path.display(),
        test_path.display(),
        fx.test.len(),
        fx.sidecar.test.planted_errors.len()
    ))
}

pub const MANIFEST_JSON: &str = "manifest.json";
pub const OVERSAMPLE_JSON: &str = "oversample.json";

/// Parse, binarize, merge, split and plan oversampling; writes
/// `manifest.json` and, with `--oversample`, `oversample.json`.
pub fn cmd_manifest(args: &ManifestArgs, seed: u64, format: Format) -> CliResult<String> {
    if args.root.is_some() && args.layout.len() != 1 {
        return Err(CliError::Usage("--root applies to a single --layout only".into()));
    }
    let mut policy = LabelPolicy::default();
    policy.melanoma_synonyms.extend(args.melanoma_label.iter().map(|s| s.to_lowercase()));
    if !args.known_label.is_empty() {
        policy = policy.strict(args.known_label.iter().cloned());
    }
    let mut manifests = Vec::with_capacity(args.layout.len());
    for path in &args.layout {
        let input = |source| CliError::Input {
            path: path.clone(),
            source,
        };
        let desc = LayoutDescriptor::load(path).map_err(input)?;
        let root = args
            .root
            .clone()
            .or_else(|| desc.root.clone())
            .or_else(|| path.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        let parsed = parse_dataset_layout(&root, &desc).map_err(input)?;
        manifests.push(binarize_labels(&parsed, &policy).map_err(input)?);
    }
    let mut manifest: DatasetManifest = if manifests.len() == 1 {
        manifests.pop().expect("one manifest")
    } else {
        merge_manifests(&manifests)?
    };
    if let Some(ratio) = args.split {
        manifest = make_split(&manifest, ratio, seed)?;
    }
    create_dir(&args.out)?;
    write_file(&args.out.join(MANIFEST_JSON), &manifest.to_json())?;
    let plan = if args.oversample {
        let plan = build_oversample_plan(&manifest)?;
        let text = serde_json::to_string_pretty(&plan).expect("plan serializes");
        write_file(&args.out.join(OVERSAMPLE_JSON), &text)?;
        Some(plan)
    } else {
        None
    };
    Ok(match format {
        Format::Json => manifest.to_json() + "\n",
        Format::Csv => manifest_csv(&manifest),
        Format::Text => {
            let mut s = format!("{}: {} entries\n", manifest.source_name, manifest.len());
            for split in [Split::Train, Split::Validation, Split::Test] {
                let (mel, non) = manifest.class_counts(split)?;
                if mel + non > 0 {
                    s.push_str(&format!("  {split:?}: {mel} melanoma, {non} non-melanoma\n"));
                }
            }
            if let Some(plan) = plan {
                let (mel, non) = plan.totals();
                s.push_str(&format!("  oversampled train: {mel} melanoma, {non} non-melanoma\n"));
            }
            s
        }
    })
}

fn manifest_csv(m: &DatasetManifest) -> String {
    let mut s = String::from("entry_id,path,raw_label,binary_label,split,source\n");
    let quote = |v: &str| {
        if v.contains([',', '"', '\n']) {
            format!("\"{}\"", v.replace('"', "\"\""))
        } else {
            v.to_string()
        }
    };
    for e in &m.entries {
        let split = serde_json::to_value(e.split).expect("split serializes");
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            quote(&e.entry_id),
            quote(&e.path),
            quote(&e.raw_label),
            e.binary_label.map(|b| b.as_str()).unwrap_or(""),
            split.as_str().unwrap_or(""),
            quote(e.source.as_deref().unwrap_or(&m.source_name)),
        ));
    }
    s
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    let config = melreject_service::ServiceConfig {
        data_dir: args.data_dir.clone(),
        cors_origins: args.cors_origin.clone(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::Serve)?;
    eprintln!("listening on http://{}", args.addr);
    runtime
        .block_on(melreject_service::serve(config, args.addr))
        .map_err(CliError::Serve)
}
