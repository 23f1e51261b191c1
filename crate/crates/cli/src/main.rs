mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use f1rapm_core::backtest::{default_grid, tune_csv, tune_table};
use f1rapm_core::ingest::{apply_parent_map, classify_entries, parse_results, read_dataset, write_dataset};
use f1rapm_core::rating_engine::{composite_table, read_ratings, write_ratings};
use f1rapm_core::{
    evaluate, fit_history, predict_next, ratings_from_snapshots, topn_sweep, tune, ClassifiedEntry,
    DecayParams, DnfPolicy, History, IndeterminateStatuses, LineupEntry, ParentMap,
    RaceId, RatingTable, Session,
};

use config::{RunConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "f1rapm", version, about = "Driver and constructor ratings from race results")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "f1rapm-out")]
    out: PathBuf,
    #[arg(long, global = true, value_name = "race|qualifying")]
    session: Option<Session>,
    #[arg(long, global = true, value_name = "exclude|include|attribute")]
    dnf_policy: Option<DnfPolicy>,
    #[arg(long, global = true, value_name = "on|off")]
    rank_weights: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `constructor,parent` file, or `builtin` for the bundled lineage table.
    #[arg(long, global = true)]
    parent_map: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a results export into the canonical dataset.
    Ingest {
        #[arg(long)]
        results: Option<PathBuf>,
        /// One status per line to classify as indeterminate.
        #[arg(long)]
        statuses: Option<PathBuf>,
    },
    /// Refit after every event and write the rating series.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Rank a lineup with the ratings as of an event.
    Predict {
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Event as `season:round`.
        #[arg(long)]
        as_of: RaceId,
        /// `driver,constructor` file.
        #[arg(long)]
        lineup: Option<PathBuf>,
    },
    /// Walk-forward next-race evaluation.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Add the logistic top-N report for N = 3..=18.
        #[arg(long)]
        topn_sweep: bool,
    },
    /// Grid search over season and round decay.
    Tune {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `season_decay,round_decay` per line; defaults to the 3x3 grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Write the rating series, and a composite table when a lineup is given.
    ExportRatings {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, requires = "lineup")]
        as_of: Option<RaceId>,
        #[arg(long, requires = "as_of")]
        lineup: Option<PathBuf>,
    },
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.session {
        cfg.fit.session = s;
    }
    if let Some(p) = global.dnf_policy {
        cfg.fit.dnf_policy = p;
    }
    if let Some(rw) = &global.rank_weights {
        cfg.set("rank_weights", rw).map_err(usage)?;
    }
    if global.parent_map.is_some() {
        cfg.parent_map = global.parent_map.clone();
    }
    if let Some(seed) = global.seed {
        cfg.fit.seed = seed;
    }
    cfg.fit.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str, key: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| usage(format!("missing --{name} (or `{key}` in the config file)")))
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let out = Self { dir: dir.to_path_buf() };
        out.write("config.resolved", cfg.render().as_bytes())?;
        Ok(out)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}

fn load_parent_map(spec: Option<&str>) -> Result<ParentMap> {
    match spec {
        None => Ok(ParentMap::identity()),
        Some("builtin") => Ok(ParentMap::hybrid_era()),
        Some(path) if !Path::new(path).exists() => {
            log::warn!("parent map {path} not found; constructors map to themselves");
            Ok(ParentMap::identity())
        }
        Some(path) => Ok(ParentMap::from_path(path)?),
    }
}

fn load_dataset(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<Vec<ClassifiedEntry>> {
    let path = pick(flag, &cfg.dataset, "data", "dataset")?;
    read_dataset(&path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_ingest(
    cfg: &mut RunConfig,
    out: &Path,
    results: &Option<PathBuf>,
    statuses: &Option<PathBuf>,
) -> Result<()> {
    let results = pick(results, &cfg.results, "results", "results")?;
    cfg.results = Some(results.clone());
    if statuses.is_some() {
        cfg.indeterminate_statuses = statuses.clone();
    }
    let parents = load_parent_map(cfg.parent_map.as_deref())?;
    let overrides = match &cfg.indeterminate_statuses {
        Some(p) => IndeterminateStatuses::from_path(p)?,
        None => IndeterminateStatuses::default(),
    };
    let mut raw = parse_results(&results, Session::Race)?;
    raw.extend(parse_results(&results, Session::Qualifying)?);
    let entries = classify_entries(&apply_parent_map(&raw, &parents), &overrides);

    let out = Output::create(out, cfg)?;
    let file = fs::File::create(out.path("dataset.csv"))?;
    write_dataset(file, &entries)?;
    let events = |s: Session| {
        let mut ids: Vec<RaceId> = entries.iter().filter(|e| e.entry.session == s).map(|e| e.entry.race).collect();
        ids.dedup();
        ids.len()
    };
    println!(
        "{} rows, {} race events, {} qualifying events -> {}",
        entries.len(),
        events(Session::Race),
        events(Session::Qualifying),
        out.path("dataset.csv").display()
    );
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, out: &Path, data: &Option<PathBuf>) -> Result<()> {
    let entries = load_dataset(data, cfg)?;
    let history = History::from_config(&entries, &cfg.fit);
    let snapshots = fit_history(&history, &cfg.fit)?;
    let series = ratings_from_snapshots(&history.index, &snapshots, &cfg.fit);

    let out = Output::create(out, cfg)?;
    write_ratings(fs::File::create(out.path("ratings.csv"))?, &series)?;
    let mut snap = String::from("season,round,entity,kind,coefficient,stdev,n_races\n");
    for s in &snapshots {
        for (column, entity) in history.index.entities().enumerate() {
            if s.n_races_seen[column] == 0 {
                continue;
            }
            snap.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.as_of.season,
                s.as_of.round,
                csv_field(&entity.key),
                entity.kind,
                s.solution.coefficients[column],
                s.spread.stdev[column],
                s.n_races_seen[column]
            ));
        }
    }
    out.write("snapshots.csv", snap.as_bytes())?;
    println!(
        "{} snapshots over {} entities -> {}",
        snapshots.len(),
        history.index.len(),
        out.dir.display()
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn read_lineup(path: &Path, parents: &ParentMap) -> Result<Vec<LineupEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lineup = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let (Some(driver), Some(constructor)) = (record.get(0), record.get(1)) else {
            bail!(f1rapm_core::Error::Parse {
                line: record.position().map_or(0, |p| p.line()),
                field: "lineup".into(),
                message: "expected `driver,constructor`".into(),
            });
        };
        lineup.push(LineupEntry::new(driver, parents.resolve(constructor)));
    }
    if lineup.is_empty() {
        bail!(f1rapm_core::Error::EmptyInput(format!("lineup {} is empty", path.display())));
    }
    Ok(lineup)
}

fn cmd_predict(cfg: &RunConfig, out: &Path, ratings: &Option<PathBuf>, as_of: RaceId, lineup: &Option<PathBuf>) -> Result<()> {
    let ratings_path = pick(ratings, &cfg.ratings, "ratings", "ratings")?;
    let lineup_path = pick(lineup, &cfg.lineup, "lineup", "lineup")?;
    let file = fs::File::open(&ratings_path).with_context(|| format!("reading {}", ratings_path.display()))?;
    let series = read_ratings(file)?;
    let events = series.events();
    if events.binary_search(&as_of).is_err() {
        let listed: Vec<String> = events.iter().map(|e| e.to_string()).collect();
        bail!(f1rapm_core::Error::UnknownEntity(format!(
            "no ratings as of {as_of}; available events: {}",
            listed.join(", ")
        )));
    }
    let parents = load_parent_map(cfg.parent_map.as_deref())?;
    let lineup = read_lineup(&lineup_path, &parents)?;
    let table = RatingTable::at(&series, as_of, &cfg.fit.blend);
    let prediction = predict_next(&table, &lineup, cfg.fit.prediction_mode);

    let mut ordered: Vec<_> = prediction.entries.iter().collect();
    ordered.sort_by_key(|e| e.predicted_rank);
    let mut text = String::from("predicted_rank,driver,constructor,score\n");
    for e in &ordered {
        text.push_str(&format!(
            "{},{},{},{}\n",
            e.predicted_rank,
            csv_field(&e.driver),
            csv_field(&e.constructor),
            e.score
        ));
    }
    let out = Output::create(out, cfg)?;
    out.write("prediction.csv", text.as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:>4}  {:<24} {:<24} {:>8}", "Rank", "Driver", "Constructor", "Score")?;
    for e in ordered {
        writeln!(stdout, "{:>4}  {:<24} {:<24} {:>8.3}", e.predicted_rank, e.driver, e.constructor, e.score)?;
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path, data: &Option<PathBuf>, sweep: bool) -> Result<()> {
    let entries = load_dataset(data, cfg)?;
    let evaluation = evaluate(&entries, &cfg.fit)?;
    let out = Output::create(out, cfg)?;
    out.write("eval_report.csv", evaluation.report.to_csv().as_bytes())?;
    let table = evaluation.report.to_table();
    out.write("eval_report.txt", table.as_bytes())?;
    print!("{table}");
    if sweep {
        let ns: Vec<u32> = (3..=18).collect();
        let logistic = topn_sweep(&entries, &cfg.fit, &ns)?;
        out.write("logistic_report.csv", logistic.to_csv().as_bytes())?;
        let text = logistic.to_table();
        out.write("logistic_report.txt", text.as_bytes())?;
        println!();
        print!("{text}");
    }
    Ok(())
}

fn read_grid(path: &Path) -> Result<Vec<DecayParams>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut grid = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with("season_decay") {
            continue;
        }
        let parse = |v: Option<&str>| v.and_then(|v| v.trim().parse::<f64>().ok());
        let mut parts = line.split(',');
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(season_decay), Some(round_decay), None) => grid.push(DecayParams { season_decay, round_decay }),
            _ => bail!(f1rapm_core::Error::Parse {
                line: i as u64 + 1,
                field: "grid".into(),
                message: format!("expected `season_decay,round_decay`, got `{line}`"),
            }),
        }
    }
    Ok(grid)
}

fn cmd_tune(cfg: &mut RunConfig, out: &Path, data: &Option<PathBuf>, grid: &Option<PathBuf>) -> Result<()> {
    let entries = load_dataset(data, cfg)?;
    if grid.is_some() {
        cfg.grid = grid.clone();
    }
    let grid = match &cfg.grid {
        Some(path) => read_grid(path)?,
        None => default_grid(),
    };
    if grid.is_empty() {
        return Err(usage("tuning grid is empty"));
    }
    let rows = tune(&entries, &cfg.fit, &grid)?;
    let out = Output::create(out, cfg)?;
    out.write("tune.csv", tune_csv(&rows).as_bytes())?;
    let table = tune_table(&rows);
    out.write("tune.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_export(
    cfg: &RunConfig,
    out: &Path,
    data: &Option<PathBuf>,
    as_of: Option<RaceId>,
    lineup: &Option<PathBuf>,
) -> Result<()> {
    let entries = load_dataset(data, cfg)?;
    let history = History::from_config(&entries, &cfg.fit);
    let snapshots = fit_history(&history, &cfg.fit)?;
    let series = ratings_from_snapshots(&history.index, &snapshots, &cfg.fit);
    let out = Output::create(out, cfg)?;
    write_ratings(fs::File::create(out.path("ratings.csv"))?, &series)?;
    if let (Some(as_of), Some(lineup)) = (as_of, lineup) {
        if history.event_position(as_of).is_none() {
            bail!(f1rapm_core::Error::UnknownEntity(format!("no event {as_of} in the dataset")));
        }
        let parents = load_parent_map(cfg.parent_map.as_deref())?;
        let table = RatingTable::at(&series, as_of, &cfg.fit.blend);
        let rows = composite_table(&table, &read_lineup(lineup, &parents)?);
        let mut text = String::from(
            "driver,constructor,driver_rating,driver_ci,constructor_rating,constructor_ci,overall_rating,overall_ci\n",
        );
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&r.driver),
                csv_field(&r.constructor),
                r.driver_rating,
                r.driver_half_width,
                r.constructor_rating,
                r.constructor_half_width,
                r.overall_rating,
                r.overall_half_width
            ));
        }
        out.write("composite.csv", text.as_bytes())?;
        println!("{:<24} {:>14} {:>14} {:>14}", "Driver", "Driver", "Constructor", "Overall");
        for r in &rows {
            println!(
                "{:<24} {:>+7.2} ±{:<5.2} {:>+7.2} ±{:<5.2} {:>+7.2} ±{:<5.2}",
                r.driver,
                r.driver_rating,
                r.driver_half_width,
                r.constructor_rating,
                r.constructor_half_width,
                r.overall_rating,
                r.overall_half_width
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    if let Some(threads) = cli.global.threads {
        if threads == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = cli.global.out.as_path();
    match &cli.command {
        Command::Ingest { results, statuses } => cmd_ingest(&mut cfg, out, results, statuses),
        Command::Fit { data } => cmd_fit(&cfg, out, data),
        Command::Predict { ratings, as_of, lineup } => cmd_predict(&cfg, out, ratings, *as_of, lineup),
        Command::Evaluate { data, topn_sweep } => cmd_evaluate(&cfg, out, data, *topn_sweep),
        Command::Tune { data, grid } => cmd_tune(&mut cfg, out, data, grid),
        Command::ExportRatings { data, as_of, lineup } => cmd_export(&cfg, out, data, *as_of, lineup),
    }
}

fn core_exit_code(e: &f1rapm_core::Error) -> u8 {
    use f1rapm_core::Error as E;
    match e {
        E::InvalidParameter(_) => 1,
        E::Numeric(_) => 3,
        E::FitFailed { source, .. } => core_exit_code(source),
        _ => 2,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<f1rapm_core::Error>() {
            return core_exit_code(e);
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
