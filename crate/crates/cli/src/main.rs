//! `fhirflow` command line. Each subcommand composes library calls; tables
//! move between subcommands as CSV files.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::{NaiveDate, NaiveTime, TimeZone, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fhirflow::explore::{
    build_daily_series, build_distribution, build_ecg_trace, ecg_counts_per_subject,
    export_chart_json_file, export_csv_file, read_csv_file, render_chart_svg,
    time_in_study_weeks_across, ChartSpec,
};
use fhirflow::flatten::{EcgRow, StudyTables};
use fhirflow::process::{
    activity_index, aggregate_daily_mean, aggregate_daily_sum, filter_outliers, mask_identifiers,
    select_date_range, select_users, DailyAgg, MaskKey, OutlierPolicy, Phq9Scorer, ScoreRegistry,
    SeverityBands,
};
use fhirflow::{
    CodeRegistry, FlatTable, FsStore, MetricKind, ResourceKind, ResourceStore, StoreQuery,
};

#[derive(Debug, Parser)]
#[command(
    name = "fhirflow",
    version,
    about = "Flatten, process and explore FHIR wearable data"
)]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "FHIRFLOW_STORE_PATH")]
    store: Option<PathBuf>,
    /// Code registry JSON replacing the bundled one.
    #[arg(long, global = true, env = "FHIRFLOW_REGISTRY_PATH")]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty store.
    Init,
    /// Load a file or directory of JSON / NDJSON / Bundle resources.
    Ingest {
        path: PathBuf,
        /// Exit 0 even if some documents were rejected.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Rebuild the store index from its data files.
    Reindex,
    /// Query the store and write one flat table.
    Flatten {
        #[arg(long, value_enum)]
        kind: FlattenKind,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one processing step to a CSV table.
    Process {
        #[arg(long, value_enum)]
        op: ProcessOp,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Outlier policy JSON for filter-outliers.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Hex key file for mask; defaults to $FHIRFLOW_MASK_KEY.
        #[arg(long)]
        key_file: Option<PathBuf>,
        /// Users kept by select.
        #[arg(long = "user")]
        users: Vec<String>,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Score questionnaire responses.
    Score {
        #[arg(long, default_value = "phq9")]
        instrument: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Severity band JSON replacing the standard bands.
        #[arg(long)]
        bands: Option<PathBuf>,
        /// Exit 0 even if some responses could not be scored.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Build a chart and write it as SVG or JSON (by extension).
    Chart(ChartArgs),
    /// Run the review service over the store.
    Serve {
        #[arg(long, env = "FHIRFLOW_BIND_ADDR", default_value = "127.0.0.1:8080")]
        bind: std::net::SocketAddr,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FlattenKind {
    Observation,
    Ecg,
    Questionnaire,
    Users,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProcessOp {
    FilterOutliers,
    DailySum,
    DailyMean,
    ActivityIndex,
    Mask,
    Select,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChartKindArg {
    Daily,
    Distribution,
    EcgCounts,
    TimeInStudy,
    EcgTrace,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AggArg {
    Sum,
    Mean,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long = "user")]
    users: Vec<String>,
    /// Metric id or name, repeatable.
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// First UTC date, inclusive.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last UTC date, inclusive.
    #[arg(long)]
    to: Option<NaiveDate>,
}

#[derive(Debug, Args)]
struct ChartArgs {
    #[arg(long, value_enum)]
    kind: ChartKindArg,
    /// CSV input(s); without one, tables are flattened from the store.
    #[arg(long = "in")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, value_enum, default_value = "sum")]
    agg: AggArg,
    #[arg(long = "user")]
    users: Vec<String>,
    /// Recording id for ecg-trace.
    #[arg(long)]
    resource: Option<String>,
    /// Window start in seconds for ecg-trace.
    #[arg(long, requires = "end")]
    start: Option<f64>,
    #[arg(long, requires = "start")]
    end: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code 1 for data and I/O failures, 2 for usage errors.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let registry = match &cli.registry {
        Some(p) => {
            CodeRegistry::load(p).with_context(|| format!("loading registry {}", p.display()))?
        }
        None => CodeRegistry::default(),
    };
    let store_path = || {
        cli.store
            .clone()
            .ok_or_else(|| usage("--store or FHIRFLOW_STORE_PATH is required"))
    };
    let open_store = || -> Result<FsStore, Failure> {
        let path = store_path()?;
        Ok(FsStore::open_with_registry(&path, registry.clone())?)
    };

    match cli.command {
        Command::Init => {
            let path = store_path()?;
            FsStore::init(&path)?;
            println!("initialized store at {}", path.display());
        }
        Command::Ingest {
            path,
            allow_partial,
        } => {
            let store = open_store()?;
            let report = store.ingest(&path)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            for r in &report.rejected {
                eprintln!("rejected {}: {}", r.location, r.error);
            }
            if !report.rejected.is_empty() && !allow_partial {
                return Err(anyhow!("{} document(s) rejected", report.rejected.len()).into());
            }
        }
        Command::Reindex => {
            let n = open_store()?.reindex()?;
            println!("indexed {n} resources");
        }
        Command::Flatten { kind, query, out } => {
            let store = open_store()?;
            let q = build_query(&query, kind)?;
            let tables = StudyTables::load(&store, &registry, &q)?;
            let table = match kind {
                FlattenKind::Observation => tables.observations,
                FlattenKind::Ecg => tables.ecgs,
                FlattenKind::Questionnaire => {
                    for u in &tables.questionnaire_report.unresolved {
                        eprintln!("unresolved answer text: {u:?}");
                    }
                    tables.questionnaires
                }
                FlattenKind::Users => tables.users,
            };
            export_csv_file(&table, &out)?;
            eprintln!("wrote {} rows to {}", table.len(), out.display());
        }
        Command::Process {
            op,
            input,
            out,
            policy,
            key_file,
            users,
            from,
            to,
        } => {
            let table = read_csv_file(&input)?;
            let result = match op {
                ProcessOp::FilterOutliers => {
                    let policy = match policy {
                        Some(p) => OutlierPolicy::load(p)?,
                        None => OutlierPolicy::default(),
                    };
                    let (kept, removed) = filter_outliers(&table, &policy)?;
                    eprintln!("removed {removed} outlier rows");
                    kept
                }
                ProcessOp::DailySum => aggregate_daily_sum(&table)?,
                ProcessOp::DailyMean => aggregate_daily_mean(&table)?,
                ProcessOp::ActivityIndex => activity_index(&table)?,
                ProcessOp::Mask => mask_identifiers(&table, &load_key(key_file.as_deref())?)?,
                ProcessOp::Select => select(&table, &users, from, to)?,
            };
            export_csv_file(&result, &out)?;
        }
        Command::Score {
            instrument,
            input,
            out,
            bands,
            allow_partial,
        } => {
            let table = read_csv_file(&input)?;
            let mut registry = ScoreRegistry::default();
            if let Some(path) = bands {
                let scorer = Phq9Scorer::standard().with_bands(SeverityBands::load(path)?)?;
                registry = ScoreRegistry::empty();
                registry.register(
                    fhirflow::process::PHQ9_INSTRUMENT,
                    std::sync::Arc::new(move |g| scorer.score(g)),
                )?;
            }
            if !registry
                .instruments()
                .any(|i| i == fhirflow::process::normalize_instrument(&instrument))
            {
                return Err(usage(format!("unknown instrument {instrument:?}")));
            }
            let report = registry.score_instrument(&instrument, &table)?;
            export_csv_file(&report.to_table()?, &out)?;
            for r in &report.rejected {
                eprintln!(
                    "unscored response {} (user {}): {}",
                    r.resource_id,
                    r.user_id,
                    serde_json::to_string(&r.error)?
                );
            }
            if !report.rejected.is_empty() && !allow_partial {
                return Err(
                    anyhow!("{} response(s) could not be scored", report.rejected.len()).into(),
                );
            }
        }
        Command::Chart(args) => chart(args, &registry, open_store)?,
        Command::Serve { bind } => {
            let path = store_path()?;
            let key = MaskKey::from_env()?;
            let mut config = fhirflow_review::ServiceConfig::new(path, key);
            config.bind_addr = bind;
            config.registry_path = cli.registry.clone();
            if let Ok(origins) = std::env::var(fhirflow_review::config::CORS_ORIGIN_ENV) {
                config.cors_origins = origins.split(',').map(|o| o.trim().to_string()).collect();
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(fhirflow_review::run(config, |addr| {
                println!("listening on http://{addr}");
                let _ = std::io::stdout().flush();
            }))?;
        }
    }
    Ok(())
}

fn build_query(args: &QueryArgs, kind: FlattenKind) -> Result<StoreQuery, Failure> {
    let kinds = match kind {
        FlattenKind::Observation | FlattenKind::Ecg => vec![ResourceKind::Observation],
        FlattenKind::Questionnaire => vec![
            ResourceKind::QuestionnaireResponse,
            ResourceKind::Questionnaire,
        ],
        FlattenKind::Users => ResourceKind::ALL.to_vec(),
    };
    let mut q = StoreQuery::kinds(kinds);
    if !args.users.is_empty() {
        q = q.with_subjects(args.users.iter().cloned());
    }
    if !args.metrics.is_empty() {
        let metrics = args
            .metrics
            .iter()
            .map(|m| m.parse::<MetricKind>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| usage(e.to_string()))?;
        q = q.with_metrics(metrics);
    }
    let start = args
        .from
        .map(|d| Utc.from_utc_datetime(&d.and_time(NaiveTime::MIN)));
    let end = args.to.map(|d| {
        Utc.from_utc_datetime(
            &d.and_hms_nano_opt(23, 59, 59, 999_999_999)
                .expect("valid time"),
        )
    });
    q = q.between(start, end);
    if !q.is_valid() {
        return Err(usage("--from is after --to"));
    }
    Ok(q)
}

fn load_key(file: Option<&Path>) -> Result<MaskKey, Failure> {
    Ok(match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading key {}", p.display()))?;
            MaskKey::from_hex(&text)?
        }
        None => MaskKey::from_env()?,
    })
}

fn select(
    table: &FlatTable,
    users: &[String],
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<FlatTable, Failure> {
    if users.is_empty() && from.is_none() && to.is_none() {
        return Err(usage("select needs --user, --from or --to"));
    }
    let mut out = table.clone();
    if !users.is_empty() {
        out = select_users(&out, users);
    }
    if from.is_some() || to.is_some() {
        out = select_date_range(
            &out,
            from.unwrap_or(NaiveDate::MIN),
            to.unwrap_or(NaiveDate::MAX),
        )?;
    }
    Ok(out)
}

fn chart(
    args: ChartArgs,
    registry: &CodeRegistry,
    open_store: impl FnOnce() -> Result<FsStore, Failure>,
) -> Outcome {
    let ext = args
        .out
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let svg = match ext.as_deref() {
        Some("svg") => true,
        Some("json") => false,
        _ => return Err(usage("--out must end in .svg or .json")),
    };
    let tables: Vec<FlatTable> = if args.inputs.is_empty() {
        let t = StudyTables::load(&open_store()?, registry, &StoreQuery::all())?;
        vec![t.observations, t.ecgs, t.questionnaires]
    } else {
        args.inputs
            .iter()
            .map(read_csv_file)
            .collect::<Result<_, _>>()?
    };
    let find = |schema: fhirflow::SchemaKind| -> Result<&FlatTable, Failure> {
        tables
            .iter()
            .find(|t| t.schema() == schema)
            .ok_or_else(|| usage(format!("this chart needs a {schema} input")))
    };
    let metric = || -> Result<MetricKind, Failure> {
        args.metric
            .as_deref()
            .ok_or_else(|| usage("--metric is required"))?
            .parse()
            .map_err(|e: fhirflow::fhir::UnknownMetric| usage(e.to_string()))
    };
    let spec: ChartSpec = match args.kind {
        ChartKindArg::Daily => {
            let agg = match args.agg {
                AggArg::Sum => DailyAgg::Sum,
                AggArg::Mean => DailyAgg::Mean,
            };
            let users: BTreeSet<String> = args.users.iter().cloned().collect();
            let users = (!users.is_empty()).then_some(&users);
            build_daily_series(
                find(fhirflow::SchemaKind::ObservationFlat)?,
                &metric()?,
                agg,
                users,
            )?
        }
        ChartKindArg::Distribution => {
            build_distribution(find(fhirflow::SchemaKind::ObservationFlat)?, &metric()?)?
        }
        ChartKindArg::EcgCounts => ecg_counts_per_subject(find(fhirflow::SchemaKind::EcgFlat)?)?.1,
        ChartKindArg::TimeInStudy => {
            let dated: Vec<&FlatTable> = tables
                .iter()
                .filter(|t| t.schema().date_column().is_some())
                .collect();
            time_in_study_weeks_across(&dated)?.1
        }
        ChartKindArg::EcgTrace => {
            let id = args
                .resource
                .as_deref()
                .ok_or_else(|| usage("--resource is required for ecg-trace"))?;
            let rows: Vec<EcgRow> = find(fhirflow::SchemaKind::EcgFlat)?.typed_rows()?;
            let row = rows
                .iter()
                .find(|r| r.resource_id == id)
                .ok_or_else(|| anyhow!("no ECG recording {id:?}"))?;
            build_ecg_trace(row, args.start.zip(args.end))?
        }
    };
    if svg {
        let text = render_chart_svg(&spec)?;
        std::fs::write(&args.out, text)
            .with_context(|| format!("writing {}", args.out.display()))?;
    } else {
        export_chart_json_file(&spec, &args.out)?;
    }
    Ok(())
}
