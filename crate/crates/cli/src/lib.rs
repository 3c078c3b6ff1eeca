//! The `plkg` command line.
//!
//! Exit codes: 0 success, 1 findings with severity error, 2 usage or I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use plkg_core::agreement::cohen_kappa;
use plkg_core::annotation::{merge_annotations, normalize_annotation, records_to_jsonl, to_training_records};
use plkg_core::features::{
    extract_all, suggest_labels, vanishing_point_with, EngineConstants, ImageRaster, LineSegment, PathPolyline,
};
use plkg_core::ontology::{diff_schemas, load_schema, validate_schema, SchemaError};
use plkg_core::report::to_sorted_json;
use plkg_core::{Annotation, FeatureVector, Schema, ValidationReport};
use plkg_store::{check_annotation, Workspace};

pub const SCHEMA_ENV: &str = "PLKG_SCHEMA";

#[derive(Debug, Parser)]
#[command(name = "plkg", version, about = "Painting-language knowledge graph annotation tools")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schema checks
    #[command(subcommand)]
    Schema(SchemaCommand),
    /// Annotation checks and transforms
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Image feature extraction
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Write training records for every annotation in a directory
    Export {
        /// [SCHEMA] DIR
        #[arg(required = true, num_args = 1..=2, value_name = "PATH")]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cohen's kappa between two annotation directories
    Agreement {
        /// [SCHEMA] DIR_A DIR_B
        #[arg(required = true, num_args = 2..=3, value_name = "PATH")]
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Labels whose measurable criteria match a feature vector
    Suggest {
        /// [SCHEMA] FEATURES_JSON
        #[arg(required = true, num_args = 1..=2, value_name = "PATH")]
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve a workspace over HTTP
    Serve {
        workspace: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, Subcommand)]
enum SchemaCommand {
    Validate {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    Diff {
        old: PathBuf,
        new: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
enum AnnotateCommand {
    Validate(AnnotationArgs),
    /// Print the annotation with every missing ancestor label added
    Normalize(AnnotationArgs),
    /// Majority-vote consensus of several annotations of one image
    Merge {
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
        #[arg(long, env = SCHEMA_ENV)]
        schema: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct AnnotationArgs {
    /// [SCHEMA] ANNOTATION
    #[arg(required = true, num_args = 1..=2, value_name = "PATH")]
    paths: Vec<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum FeaturesCommand {
    Extract {
        image: PathBuf,
        /// JSON array of [x, y] points in unit coordinates
        #[arg(long)]
        path: Option<PathBuf>,
        /// JSON array of [[x, y], [x, y]] segments in unit coordinates
        #[arg(long)]
        lines: Option<PathBuf>,
        /// Also write the feature vector as JSON to this file
        #[arg(long, value_name = "OUT")]
        json: Option<PathBuf>,
    },
}

/// Message for stderr, exit code 2.
#[derive(Debug)]
struct Fatal(String);

impl<E: std::fmt::Display> From<E> for Fatal {
    fn from(e: E) -> Self {
        Fatal(e.to_string())
    }
}

fn fatal(msg: impl Into<String>) -> Fatal {
    Fatal(msg.into())
}

type Outcome = Result<i32, Fatal>;

fn read(path: &Path) -> Result<Vec<u8>, Fatal> {
    fs::read(path).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

fn load_schema_file(path: &Path) -> Result<Schema, Fatal> {
    load_schema(&read(path)?).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

fn load_annotation(path: &Path) -> Result<Annotation, Fatal> {
    Annotation::from_json(&read(path)?).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Fatal> {
    serde_json::from_slice(&read(path)?).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

/// Splits an optional leading schema path off `paths`, falling back to
/// `PLKG_SCHEMA`.
fn split_schema(paths: &[PathBuf], rest: usize) -> Result<(Schema, &[PathBuf]), Fatal> {
    if paths.len() == rest + 1 {
        return Ok((load_schema_file(&paths[0])?, &paths[1..]));
    }
    match std::env::var_os(SCHEMA_ENV) {
        Some(p) if paths.len() == rest => Ok((load_schema_file(Path::new(&p))?, paths)),
        _ => Err(fatal(format!("no schema given and {SCHEMA_ENV} is not set"))),
    }
}

/// `*.json` files directly inside `dir`, sorted by name.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, Fatal> {
    let entries = fs::read_dir(dir).map_err(|e| fatal(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Fatal> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.persist(path).map_err(|e| fatal(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn print_report(out: &mut dyn Write, report: &ValidationReport, json: bool) -> Outcome {
    if json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        write!(out, "{report}")?;
    }
    Ok(if report.has_errors() { 1 } else { 0 })
}

fn schema_validate(out: &mut dyn Write, file: &Path, json: bool) -> Outcome {
    let report = match load_schema(&read(file)?) {
        Ok(schema) => validate_schema(&schema),
        Err(SchemaError::Structure(report)) => report,
        Err(e) => return Err(fatal(format!("{}: {e}", file.display()))),
    };
    print_report(out, &report, json)
}

fn schema_diff(out: &mut dyn Write, old: &Path, new: &Path, json: bool) -> Outcome {
    let diff = diff_schemas(&load_schema_file(old)?, &load_schema_file(new)?);
    if json {
        writeln!(out, "{}", to_sorted_json(&diff))?;
        return Ok(0);
    }
    for id in &diff.added {
        writeln!(out, "+ {id}")?;
    }
    for id in &diff.removed {
        writeln!(out, "- {id}")?;
    }
    for change in &diff.modified {
        writeln!(out, "~ {} ({})", change.id, change.fields.join(", "))?;
    }
    for (mark, ids) in [("+", &diff.rules_added), ("-", &diff.rules_removed), ("~", &diff.rules_modified)] {
        for id in ids {
            writeln!(out, "{mark} rule {id}")?;
        }
    }
    if diff.is_empty() {
        writeln!(out, "no differences")?;
    }
    Ok(0)
}

fn annotate_validate(out: &mut dyn Write, args: &AnnotationArgs) -> Outcome {
    let (schema, rest) = split_schema(&args.paths, 1)?;
    let ann = load_annotation(&rest[0])?;
    print_report(out, &check_annotation(&schema, &ann), args.json)
}

fn annotate_normalize(out: &mut dyn Write, err: &mut dyn Write, args: &AnnotationArgs) -> Outcome {
    let (schema, rest) = split_schema(&args.paths, 1)?;
    let ann = load_annotation(&rest[0])?;
    let report = check_annotation(&schema, &ann);
    if report.has_errors() {
        return print_report(err, &report, args.json);
    }
    writeln!(out, "{}", normalize_annotation(&schema, &ann)?.to_json_pretty())?;
    Ok(0)
}

fn annotate_merge(out: &mut dyn Write, err: &mut dyn Write, files: &[PathBuf], schema: Option<&Path>) -> Outcome {
    let schema = schema.ok_or_else(|| fatal(format!("no --schema given and {SCHEMA_ENV} is not set")))?;
    let schema = load_schema_file(schema)?;
    let anns = files.iter().map(|f| load_annotation(f)).collect::<Result<Vec<_>, _>>()?;
    let mut failed = false;
    for (file, ann) in files.iter().zip(&anns) {
        let report = check_annotation(&schema, ann);
        if report.has_errors() {
            writeln!(err, "{}:\n{report}", file.display())?;
            failed = true;
        }
    }
    if failed {
        return Ok(1);
    }
    writeln!(out, "{}", merge_annotations(&schema, &anns)?.to_json_pretty())?;
    Ok(0)
}

fn features_extract(
    out: &mut dyn Write,
    image: &Path,
    path: Option<&Path>,
    lines: Option<&Path>,
    json: Option<&Path>,
) -> Outcome {
    let img = ImageRaster::open_png(image).map_err(|e| fatal(format!("{}: {e}", image.display())))?;
    let path: Option<PathPolyline> = path.map(load_json).transpose()?;
    let lines: Option<Vec<LineSegment>> = lines.map(load_json).transpose()?;
    let constants = EngineConstants::default();
    let fv = extract_all(&img, path.as_ref(), lines.as_deref(), &constants)?;
    if let Some(target) = json {
        write_atomic(target, format!("{}\n", to_sorted_json(&fv)).as_bytes())?;
    }
    let width = fv.keys().map(|k| k.as_str().len()).max().unwrap_or(0);
    for (key, value) in &fv {
        writeln!(out, "{:<width$}  {value}", key.as_str())?;
    }
    if let Some(lines) = &lines {
        let vp = vanishing_point_with(lines, constants.parallel_tolerance)?;
        writeln!(out, "vanishing point  {} {}", vp.point[0], vp.point[1])?;
    }
    Ok(0)
}

fn export(out: &mut dyn Write, err: &mut dyn Write, paths: &[PathBuf], target: &Path) -> Outcome {
    let (schema, rest) = split_schema(paths, 1)?;
    let files = json_files(&rest[0])?;
    let anns = files.iter().map(|f| load_annotation(f)).collect::<Result<Vec<_>, _>>()?;
    let mut failed = false;
    for (file, ann) in files.iter().zip(&anns) {
        let report = check_annotation(&schema, ann);
        if report.has_errors() {
            writeln!(err, "{}:\n{report}", file.display())?;
            failed = true;
        }
    }
    if failed {
        writeln!(err, "nothing written")?;
        return Ok(1);
    }
    let records = to_training_records(&schema, &anns)?;
    write_atomic(target, records_to_jsonl(&records).as_bytes())?;
    writeln!(out, "wrote {} records to {}", records.len(), target.display())?;
    Ok(0)
}

fn load_corpus(schema: &Schema, dir: &Path, err: &mut dyn Write) -> Result<Option<Vec<Annotation>>, Fatal> {
    let mut corpus = Vec::new();
    let mut failed = false;
    for file in json_files(dir)? {
        let ann = load_annotation(&file)?;
        let report = check_annotation(schema, &ann);
        if report.has_errors() {
            writeln!(err, "{}:\n{report}", file.display())?;
            failed = true;
            continue;
        }
        corpus.push(normalize_annotation(schema, &ann)?);
    }
    Ok(if failed { None } else { Some(corpus) })
}

fn agreement(out: &mut dyn Write, err: &mut dyn Write, paths: &[PathBuf], json: bool) -> Outcome {
    let (schema, rest) = split_schema(paths, 2)?;
    let (Some(a), Some(b)) = (load_corpus(&schema, &rest[0], err)?, load_corpus(&schema, &rest[1], err)?) else {
        return Ok(1);
    };
    let report = cohen_kappa(&a, &b, None)?;
    if json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        write!(out, "{}", report.to_table())?;
    }
    Ok(0)
}

fn suggest(out: &mut dyn Write, paths: &[PathBuf], json: bool) -> Outcome {
    let (schema, rest) = split_schema(paths, 1)?;
    let fv: FeatureVector = load_json(&rest[0])?;
    let suggestions = suggest_labels(&schema, &fv);
    if json {
        writeln!(out, "{}", to_sorted_json(&suggestions))?;
        return Ok(0);
    }
    for s in &suggestions {
        let mut why = String::new();
        for c in &s.satisfied_criteria {
            let _ = write!(why, " [{c}]");
        }
        writeln!(out, "{:.3}  {}{why}", s.score, s.node_id)?;
    }
    Ok(0)
}

fn serve(out: &mut dyn Write, err: &mut dyn Write, root: &Path, bind: &str) -> Outcome {
    let ws = Workspace::open(root)?;
    for finding in &ws.quarantine().findings {
        writeln!(err, "{finding}")?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = plkg_store::bind(bind).await?;
        writeln!(out, "listening on http://{}", listener.local_addr()?)?;
        out.flush()?;
        plkg_store::serve_on(Arc::new(ws), listener).await?;
        Ok(0)
    })
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match cli.command {
        Command::Schema(SchemaCommand::Validate { file, json }) => schema_validate(out, &file, json),
        Command::Schema(SchemaCommand::Diff { old, new, json }) => schema_diff(out, &old, &new, json),
        Command::Annotate(AnnotateCommand::Validate(args)) => annotate_validate(out, &args),
        Command::Annotate(AnnotateCommand::Normalize(args)) => annotate_normalize(out, err, &args),
        Command::Annotate(AnnotateCommand::Merge { annotations, schema }) => {
            annotate_merge(out, err, &annotations, schema.as_deref())
        }
        Command::Features(FeaturesCommand::Extract { image, path, lines, json }) => {
            features_extract(out, &image, path.as_deref(), lines.as_deref(), json.as_deref())
        }
        Command::Export { paths, out: target } => export(out, err, &paths, &target),
        Command::Agreement { paths, json } => agreement(out, err, &paths, json),
        Command::Suggest { paths, json } => suggest(out, &paths, json),
        Command::Serve { workspace, bind } => serve(out, err, &workspace, &bind),
    }
}

/// Runs one command line and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let stream: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(stream, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(Fatal(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}
