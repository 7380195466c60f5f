//! `meterfill` command-line driver.
//!
//! Pipeline stages read and write files under the config's `output_dir`:
//!
//! ```text
//! ingest      readings CSV        -> hourly.csv, ingest_report.json
//! preprocess  hourly.csv          -> splits.json, masks.json, census.csv
//! train       hourly.csv          -> models/<model>-<mode>[-<building>].mfm
//! evaluate    hourly.csv          -> report.json, mae_by_building.csv,
//!                                    imputed_vs_actual_<building>.csv, summary.md
//! grid-search hourly.csv          -> grid.json
//! report      report.json         -> summary.md, census.md (also printed)
//! ```
//!
//! On failure a JSON object is written to stderr and the process exits
//! with a code that identifies the failure class (see [`ExitClass`]).

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use meterfill::artifact::ModelArtifact;
use meterfill::config::RunConfig;
use meterfill::eval::experiment::{prepare, run_prepared, train_artifacts};
use meterfill::eval::{grid_search, EvaluationReport, Mode};
use meterfill::ingest::{ingest_all, parse_readings, write_readings, ReadingsFormat};
use meterfill::preprocess::DayTimezone;
use meterfill::synth::{generate_fleet, inject_gaps, BuildingProfile, GapKind, GapMechanism};
use meterfill::tables;
use meterfill::{Error, HourlySeries, RawReading};

#[derive(Parser)]
#[command(name = "meterfill", version, about = "Hourly water-meter ingestion and imputation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic cumulative readings plus the hourly truth.
    Synthgen {
        #[arg(long, default_value_t = 3)]
        buildings: usize,
        #[arg(long, default_value_t = 400)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for readings.csv and truth.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum)]
        gap_kind: Option<GapArg>,
        #[arg(long, default_value_t = 0.0)]
        gap_rate: f64,
        /// Per-building rate scale drawn from 1 ± jitter.
        #[arg(long, default_value_t = 0.0)]
        scale_jitter: f64,
        /// JSON file with a building profile overriding the defaults.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Aggregate cumulative readings into hourly consumption.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write split and mask manifests and the missing-data census.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit every configured model and save artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Only this mode (default: the config's modes).
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Fill missing slots of an hourly CSV with a saved model.
    Impute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "UTC")]
        timezone: DayTimezone,
        /// Fail unless the artifact holds this model kind.
        #[arg(long)]
        expect_kind: Option<String>,
    },
    /// Run the masked evaluation and write the report and tables.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score the config's grid points and pick the best.
    GridSearch {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render summary tables from a report.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GapArg {
    RandomPoint,
    Burst,
    WholeDay,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dedicated,
    Common,
}

/// Process exit codes.
#[derive(Debug, Clone, Copy)]
enum ExitClass {
    Internal = 1,
    Usage = 2,
    MissingInput = 3,
    Data = 4,
    Version = 5,
    Integrity = 6,
    Diverged = 7,
}

struct Failure {
    code: String,
    message: String,
    class: ExitClass,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Config(_) => ExitClass::Usage,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ExitClass::MissingInput,
            Error::Io { .. } | Error::Json(_) => ExitClass::Internal,
            Error::VersionMismatch { .. } => ExitClass::Version,
            Error::Checksum | Error::BadMagic | Error::KindMismatch { .. } => ExitClass::Integrity,
            Error::TrainingDiverged { .. } => ExitClass::Diverged,
            _ => ExitClass::Data,
        };
        let code = match (&e, class) {
            (Error::Io { .. }, ExitClass::MissingInput) => "missing-input",
            _ => e.code(),
        };
        Failure {
            code: code.into(),
            message: e.to_string(),
            class,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(Failure {
                code: "usage".into(),
                message: e.to_string().trim().to_string(),
                class: ExitClass::Usage,
            })
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let body = json!({
        "error": {
            "code": f.code,
            "message": f.message,
            "exit_code": f.class as u8,
        }
    });
    eprintln!("{body}");
    ExitCode::from(f.class as u8)
}

fn run(command: Command) -> CliResult<serde_json::Value> {
    match command {
        Command::Synthgen {
            buildings,
            days,
            seed,
            out,
            gap_kind,
            gap_rate,
            scale_jitter,
            profile,
        } => synthgen(buildings, days, seed, &out, gap_kind, gap_rate, scale_jitter, profile.as_deref()),
        Command::Ingest { config } => ingest(&load(&config)?),
        Command::Preprocess { config } => preprocess(&load(&config)?),
        Command::Train { config, mode } => train(&load(&config)?, mode),
        Command::Impute {
            model,
            input,
            out,
            timezone,
            expect_kind,
        } => impute(&model, &input, &out, timezone, expect_kind.as_deref()),
        Command::Evaluate { config } => evaluate(&load(&config)?),
        Command::GridSearch { config } => grid(&load(&config)?),
        Command::Report { config } => report(&load(&config)?),
    }
}

fn load(path: &Path) -> CliResult<RunConfig> {
    Ok(RunConfig::load(path)?)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| {
        Error::Io {
            context: path.display().to_string(),
            source: e,
        }
        .into()
    }
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_series(path: &Path) -> CliResult<Vec<HourlySeries>> {
    Ok(tables::read_hourly(open(path)?)?)
}

fn hourly_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("hourly.csv")
}

#[allow(clippy::too_many_arguments)]
fn synthgen(
    buildings: usize,
    days: usize,
    seed: u64,
    out: &Path,
    gap_kind: Option<GapArg>,
    gap_rate: f64,
    scale_jitter: f64,
    profile: Option<&Path>,
) -> CliResult<serde_json::Value> {
    let profile: BuildingProfile = match profile {
        Some(p) => serde_json::from_reader(open(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => BuildingProfile::default(),
    };
    if buildings == 0 || days == 0 {
        return Err(Error::Config("--buildings and --days must be positive".into()).into());
    }
    let fleet = generate_fleet(&profile, buildings, days, seed, scale_jitter)?;
    let mut readings: Vec<RawReading> = Vec::new();
    let mut truth = Vec::new();
    for (i, g) in fleet.into_iter().enumerate() {
        let kept = match gap_kind {
            Some(kind) if gap_rate > 0.0 => {
                let kind = match kind {
                    GapArg::RandomPoint => GapKind::RandomPoint,
                    GapArg::Burst => GapKind::Burst,
                    GapArg::WholeDay => GapKind::WholeDay,
                };
                let mech = GapMechanism::new(kind, gap_rate, meterfill::rng::derive(seed, &[1 << 32, i as u64]));
                let gapped = inject_gaps(&g.truth, &mech)?;
                // a hidden slot loses every reading taken during that hour
                let start = g.truth.start_hour;
                g.readings
                    .into_iter()
                    .filter(|r| {
                        let slot = (r.timestamp - start).num_hours();
                        slot < 0 || gapped.values[slot as usize].is_some()
                    })
                    .collect()
            }
            _ => g.readings,
        };
        readings.extend(kept);
        truth.push(g.truth);
    }
    let readings_path = out.join("readings.csv");
    let truth_path = out.join("truth.csv");
    write_readings(create(&readings_path)?, &readings)?;
    tables::write_hourly(create(&truth_path)?, &truth)?;
    Ok(json!({
        "command": "synthgen",
        "buildings": buildings,
        "readings": readings.len(),
        "outputs": [readings_path, truth_path],
    }))
}

fn ingest(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let parsed = parse_readings(open(&cfg.readings)?, &ReadingsFormat::default())?;
    let (series, rep) = ingest_all(&parsed, &cfg.ingest_options())?;
    let hourly = hourly_path(cfg);
    let report_path = cfg.output_dir.join("ingest_report.json");
    tables::write_hourly(create(&hourly)?, &series)?;
    write_json(&report_path, &rep)?;
    Ok(json!({
        "command": "ingest",
        "buildings": series.len(),
        "malformed_lines": rep.malformed.len(),
        "outputs": [hourly, report_path],
    }))
}

fn preprocess(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let series = read_series(&hourly_path(cfg))?;
    let prepared = prepare(&cfg.experiment(), &series)?;
    let splits: Vec<_> = prepared.buildings.iter().map(|b| b.split_manifest()).collect();
    let masks: Vec<_> = prepared.buildings.iter().map(|b| b.mask_manifest()).collect();
    let dir = &cfg.output_dir;
    write_json(&dir.join("splits.json"), &splits)?;
    write_json(&dir.join("masks.json"), &masks)?;
    write_json(&dir.join("excluded.json"), &prepared.excluded)?;
    tables::write_census(create(&dir.join("census.csv"))?, &prepared.census)?;
    let outputs: Vec<String> = ["splits.json", "masks.json", "excluded.json", "census.csv"]
        .iter()
        .map(|f| dir.join(f).display().to_string())
        .collect();
    Ok(json!({
        "command": "preprocess",
        "buildings": prepared.buildings.len(),
        "excluded": prepared.excluded.len(),
        "outputs": outputs,
    }))
}

fn train(cfg: &RunConfig, only: Option<ModeArg>) -> CliResult<serde_json::Value> {
    let spec = cfg.experiment();
    let series = read_series(&hourly_path(cfg))?;
    let prepared = prepare(&spec, &series)?;
    let modes = match only {
        Some(ModeArg::Dedicated) => vec![Mode::Dedicated],
        Some(ModeArg::Common) => vec![Mode::Common],
        None => spec.modes.clone(),
    };
    let dir = cfg.output_dir.join("models");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut written = Vec::new();
    for model in &spec.models {
        for &mode in &modes {
            for artifact in train_artifacts(&spec, &prepared, model, mode)? {
                let name = match mode {
                    Mode::Common => format!("{}-common.mfm", model.label()),
                    Mode::Dedicated => format!("{}-dedicated-{}.mfm", model.label(), artifact.metadata.buildings[0]),
                };
                let path = dir.join(name);
                artifact.save(&path)?;
                written.push(path);
            }
        }
    }
    Ok(json!({ "command": "train", "outputs": written }))
}

fn impute(model: &Path, input: &Path, out: &Path, tz: DayTimezone, expect: Option<&str>) -> CliResult<serde_json::Value> {
    let artifact = ModelArtifact::load(model, expect)?;
    let series = read_series(input)?;
    let mut filled_series = Vec::new();
    let mut filled = serde_json::Map::new();
    let mut skipped = Vec::new();
    for s in &series {
        if !artifact.norm.contains_key(&s.building_id) {
            skipped.push(s.building_id.clone());
            continue;
        }
        let (f, n) = artifact.impute_series(s, tz)?;
        filled.insert(s.building_id.clone(), n.into());
        filled_series.push(f);
    }
    if filled_series.is_empty() {
        return Err(Error::Config(format!("{} covers none of the buildings in {}", model.display(), input.display())).into());
    }
    tables::write_hourly(create(out)?, &filled_series)?;
    Ok(json!({
        "command": "impute",
        "kind": artifact.model.kind(),
        "filled": filled,
        "skipped_buildings": skipped,
        "outputs": [out],
    }))
}

fn evaluate(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let spec = cfg.experiment();
    let series = read_series(&hourly_path(cfg))?;
    let prepared = prepare(&spec, &series)?;
    let report = run_prepared(&spec, &prepared)?;
    let dir = &cfg.output_dir;
    let mut outputs = vec![dir.join("report.json"), dir.join("mae_by_building.csv"), dir.join("summary.md")];
    write_json(&outputs[0], &report)?;
    tables::write_mae_by_building(create(&outputs[1])?, &report.results)?;
    fs::write(&outputs[2], tables::summary_table(&report)).map_err(io_err(&outputs[2]))?;
    for b in &prepared.buildings {
        let points: Vec<_> = report.imputed.iter().filter(|p| p.building == b.id).collect();
        let path = dir.join(format!("imputed_vs_actual_{}.csv", b.id));
        tables::write_imputed_vs_actual(create(&path)?, &points)?;
        outputs.push(path);
    }
    Ok(json!({
        "command": "evaluate",
        "aggregates": report.aggregates,
        "mask_digest": report.mask_digest,
        "outputs": outputs,
    }))
}

fn grid(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let g = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [grid] section".into()))?;
    let series = read_series(&hourly_path(cfg))?;
    let result = grid_search(&g.points, &series, &cfg.experiment(), g.seed)?;
    let path = cfg.output_dir.join("grid.json");
    write_json(&path, &result)?;
    Ok(json!({
        "command": "grid-search",
        "best": result.best_entry().label,
        "outputs": [path],
    }))
}

fn report(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let path = cfg.output_dir.join("report.json");
    let rep: EvaluationReport = serde_json::from_reader(open(&path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if rep.schema_version != meterfill::eval::experiment::REPORT_SCHEMA_VERSION {
        return Err(Error::Config(format!("report schema version {} is not supported", rep.schema_version)).into());
    }
    let summary = tables::summary_table(&rep);
    let census = tables::census_table(&rep.census);
    let (s_path, c_path) = (cfg.output_dir.join("summary.md"), cfg.output_dir.join("census.md"));
    fs::write(&s_path, &summary).map_err(io_err(&s_path))?;
    fs::write(&c_path, &census).map_err(io_err(&c_path))?;
    Ok(json!({
        "command": "report",
        "summary": summary,
        "census": census,
        "outputs": [s_path, c_path],
    }))
}
