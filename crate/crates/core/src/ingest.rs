//! Result-file parsing, parent-constructor normalization and DNF handling.
//!
//! The results schema is a flat, comma-delimited export with the header
//! `season,round,session,driver,constructor,grid,position,laps,status`.
//! `position` is empty for unclassified entries; `laps` is required for race
//! rows and ignored for qualifying rows.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A single event, ordered by season then round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RaceId {
    pub season: u16,
    pub round: u16,
}

impl RaceId {
    pub fn new(season: u16, round: u16) -> Result<Self> {
        if season < 1950 {
            return Err(Error::InvalidParameter(format!(
                "season {season} predates 1950"
            )));
        }
        if round == 0 {
            return Err(Error::InvalidParameter("round must be >= 1".into()));
        }
        Ok(Self { season, round })
    }
}

impl fmt::Display for RaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.season, self.round)
    }
}

impl FromStr for RaceId {
    type Err = Error;

    /// Parses `season:round` (also accepts `season-round` and `season/round`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("expected `season:round`, got `{s}`"));
        let (season, round) = s
            .split_once([':', '-', '/'])
            .ok_or_else(bad)?;
        let season = season.trim().parse().map_err(|_| bad())?;
        let round = round.trim().parse().map_err(|_| bad())?;
        RaceId::new(season, round)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Session {
    #[default]
    Race,
    Qualifying,
}

impl Session {
    pub fn as_str(self) -> &'static str {
        match self {
            Session::Race => "race",
            Session::Qualifying => "qualifying",
        }
    }
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Session {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "race" | "r" => Ok(Session::Race),
            "qualifying" | "q" => Ok(Session::Qualifying),
            other => Err(Error::InvalidParameter(format!("unknown session `{other}`"))),
        }
    }
}

/// One driver/constructor row in one session.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceEntry {
    pub race: RaceId,
    pub session: Session,
    pub driver: String,
    pub constructor: String,
    pub parent: String,
    pub grid: Option<u32>,
    pub position: Option<u32>,
    pub laps: Option<u32>,
    pub status: String,
    pub entrant_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DnfClass {
    Finished,
    DriverFault,
    ConstructorFault,
    Indeterminate,
}

impl DnfClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DnfClass::Finished => "finished",
            DnfClass::DriverFault => "driver",
            DnfClass::ConstructorFault => "constructor",
            DnfClass::Indeterminate => "indeterminate",
        }
    }
}

impl FromStr for DnfClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "finished" => Ok(DnfClass::Finished),
            "driver" => Ok(DnfClass::DriverFault),
            "constructor" => Ok(DnfClass::ConstructorFault),
            "indeterminate" => Ok(DnfClass::Indeterminate),
            other => Err(Error::InvalidParameter(format!("unknown DNF class `{other}`"))),
        }
    }
}

/// How non-finishers enter the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DnfPolicy {
    /// Drop non-finishers and re-rank the classified field.
    #[default]
    Exclude,
    /// Keep everyone; non-finishers are placed behind the finishers.
    IncludeAll,
    /// Like `IncludeAll`, but only the faulting party carries the result.
    Attribute,
}

impl DnfPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            DnfPolicy::Exclude => "exclude",
            DnfPolicy::IncludeAll => "include",
            DnfPolicy::Attribute => "attribute",
        }
    }
}

impl fmt::Display for DnfPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DnfPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exclude" => Ok(DnfPolicy::Exclude),
            "include" | "include-all" | "includeall" => Ok(DnfPolicy::IncludeAll),
            "attribute" => Ok(DnfPolicy::Attribute),
            other => Err(Error::InvalidParameter(format!("unknown DNF policy `{other}`"))),
        }
    }
}

/// Raw constructor name → parent constructor. Unknown names map to themselves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParentMap {
    entries: BTreeMap<String, String>,
}

const HYBRID_ERA_PARENTS: &[(&str, &str)] = &[
    ("Renault", "Alpine F1 Team"),
    ("Lotus F1", "Alpine F1 Team"),
    ("Racing Point", "Aston Martin"),
    ("Force India", "Aston Martin"),
    ("Lotus", "Caterham"),
    ("Marussia", "Manor Marussia"),
    ("Virgin", "Manor Marussia"),
    ("Brawn", "Mercedes"),
    ("Alfa Romeo", "Sauber"),
    ("BMW Sauber", "Sauber"),
    ("RB F1 Team", "Toro Rosso"),
    ("AlphaTauri", "Toro Rosso"),
];

impl ParentMap {
    pub fn identity() -> Self {
        Self::default()
    }

    /// The team lineage table for the 2012–2024 grid.
    pub fn hybrid_era() -> Self {
        Self::new(
            HYBRID_ERA_PARENTS
                .iter()
                .map(|(raw, parent)| (raw.to_string(), parent.to_string())),
        )
        .expect("built-in parent map is chain-free")
    }

    /// Builds a map, rejecting chains (a parent that is itself remapped) and
    /// conflicting duplicate aliases.
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (raw, parent) in pairs {
            let raw = raw.trim().to_string();
            let parent = parent.trim().to_string();
            if raw.is_empty() || parent.is_empty() {
                return Err(Error::InvalidParentMap("empty constructor name".into()));
            }
            if let Some(prev) = entries.get(&raw) {
                if prev != &parent {
                    return Err(Error::InvalidParentMap(format!(
                        "`{raw}` mapped to both `{prev}` and `{parent}`"
                    )));
                }
            }
            entries.insert(raw, parent);
        }
        for (raw, parent) in &entries {
            if let Some(next) = entries.get(parent) {
                if next != parent {
                    return Err(Error::InvalidParentMap(format!(
                        "chain `{raw}` -> `{parent}` -> `{next}`"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Reads a `constructor,parent` file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let raw_idx = column(&headers, "constructor", 1)?;
        let parent_idx = column(&headers, "parent", 1)?;
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let get = |idx: usize, name: &str| {
                record
                    .get(idx)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| Error::Parse {
                        line,
                        field: name.into(),
                        message: "missing value".into(),
                    })
            };
            pairs.push((get(raw_idx, "constructor")?, get(parent_idx, "parent")?));
        }
        Self::new(pairs)
    }

    pub fn resolve<'a>(&'a self, constructor: &'a str) -> &'a str {
        self.entries
            .get(constructor)
            .map(String::as_str)
            .unwrap_or(constructor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Statuses the user wants treated as neither driver nor constructor fault.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndeterminateStatuses {
    statuses: BTreeSet<String>,
}

impl IndeterminateStatuses {
    pub fn new<S: AsRef<str>>(statuses: impl IntoIterator<Item = S>) -> Self {
        Self {
            statuses: statuses
                .into_iter()
                .map(|s| normalize_status(s.as_ref()))
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// One status per line; blank lines are skipped.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        Ok(Self::new(lines))
    }

    pub fn contains(&self, status: &str) -> bool {
        self.statuses.contains(&normalize_status(status))
    }

    pub fn len(&self) -> usize {
        self.statuses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statuses.is_empty()
    }
}

fn normalize_status(status: &str) -> String {
    status
        .trim()
        .to_lowercase()
        .replace('-', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn column(headers: &csv::StringRecord, name: &str, line: u64) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Parse {
            line,
            field: name.into(),
            message: "missing column in header".into(),
        })
}

fn parse_opt<T: FromStr>(value: &str, line: u64, field: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "\\N" {
        return Ok(None);
    }
    value.parse().map(Some).map_err(|_| Error::Parse {
        line,
        field: field.into(),
        message: format!("cannot parse `{value}`"),
    })
}

fn parse_req<T: FromStr>(value: &str, line: u64, field: &str) -> Result<T> {
    parse_opt(value, line, field)?.ok_or_else(|| Error::Parse {
        line,
        field: field.into(),
        message: "missing value".into(),
    })
}

struct RawRow {
    line: u64,
    entry: RaceEntry,
    class: Option<DnfClass>,
}

fn read_rows<R: Read>(reader: R, session: Option<Session>, canonical: bool) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = |name| column(&headers, name, 1);
    let (i_season, i_round, i_session) = (idx("season")?, idx("round")?, idx("session")?);
    let (i_driver, i_constructor) = (idx("driver")?, idx("constructor")?);
    let (i_grid, i_position, i_laps, i_status) =
        (idx("grid")?, idx("position")?, idx("laps")?, idx("status")?);
    let canonical_cols = if canonical {
        Some((idx("parent")?, idx("dnf_class")?))
    } else {
        None
    };

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                field: "row".into(),
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");

        let row_session: Session = field(i_session).parse().map_err(|_| Error::Parse {
            line,
            field: "session".into(),
            message: format!("unknown session `{}`", field(i_session)),
        })?;
        if session.is_some_and(|s| s != row_session) {
            continue;
        }
        let season: u16 = parse_req(field(i_season), line, "season")?;
        let round: u16 = parse_req(field(i_round), line, "round")?;
        let race = RaceId::new(season, round).map_err(|e| Error::Parse {
            line,
            field: "season/round".into(),
            message: e.to_string(),
        })?;
        let driver = field(i_driver).to_string();
        if driver.is_empty() {
            return Err(Error::Parse {
                line,
                field: "driver".into(),
                message: "missing value".into(),
            });
        }
        let constructor = field(i_constructor).to_string();
        if constructor.is_empty() {
            return Err(Error::Parse {
                line,
                field: "constructor".into(),
                message: "missing value".into(),
            });
        }
        let grid = parse_opt(field(i_grid), line, "grid")?;
        let position: Option<u32> = parse_opt(field(i_position), line, "position")?;
        if position == Some(0) {
            return Err(Error::PositionOutOfRange {
                line,
                position: 0,
                entrant_count: 0,
            });
        }
        let laps = match row_session {
            Session::Race => Some(parse_req(field(i_laps), line, "laps")?),
            Session::Qualifying => parse_opt(field(i_laps), line, "laps").unwrap_or(None),
        };
        let (parent, class) = match canonical_cols {
            Some((i_parent, i_class)) => {
                let class = field(i_class).parse().map_err(|_| Error::Parse {
                    line,
                    field: "dnf_class".into(),
                    message: format!("unknown class `{}`", field(i_class)),
                })?;
                (field(i_parent).to_string(), Some(class))
            }
            None => (constructor.clone(), None),
        };
        rows.push(RawRow {
            line,
            entry: RaceEntry {
                race,
                session: row_session,
                driver,
                constructor,
                parent,
                grid,
                position,
                laps,
                status: field(i_status).to_string(),
                entrant_count: 0,
            },
            class,
        });
    }

    let mut counts: BTreeMap<(RaceId, Session), u32> = BTreeMap::new();
    let mut seen = HashSet::new();
    for row in &rows {
        let e = &row.entry;
        if !seen.insert((e.race, e.session, e.driver.clone())) {
            return Err(Error::DuplicateEntry {
                season: e.race.season,
                round: e.race.round,
                session: e.session.to_string(),
                driver: e.driver.clone(),
            });
        }
        *counts.entry((e.race, e.session)).or_default() += 1;
    }
    for row in &mut rows {
        let count = counts[&(row.entry.race, row.entry.session)];
        row.entry.entrant_count = count;
        if let Some(p) = row.entry.position {
            if p > count {
                return Err(Error::PositionOutOfRange {
                    line: row.line,
                    position: p,
                    entrant_count: count,
                });
            }
        }
    }
    rows.sort_by(|a, b| entry_order(&a.entry, &b.entry));
    Ok(rows)
}

fn entry_order(a: &RaceEntry, b: &RaceEntry) -> std::cmp::Ordering {
    (a.race, a.session, a.position.unwrap_or(u32::MAX), &a.driver).cmp(&(
        b.race,
        b.session,
        b.position.unwrap_or(u32::MAX),
        &b.driver,
    ))
}

/// Parses a results file, keeping only rows of `session`.
///
/// Output is sorted by event, then position with unclassified entries last.
pub fn parse_results(path: impl AsRef<Path>, session: Session) -> Result<Vec<RaceEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_results_from_reader(file, session)
}

pub fn parse_results_from_reader<R: Read>(reader: R, session: Session) -> Result<Vec<RaceEntry>> {
    Ok(read_rows(reader, Some(session), false)?
        .into_iter()
        .map(|r| r.entry)
        .collect())
}

pub fn apply_parent_map(entries: &[RaceEntry], map: &ParentMap) -> Vec<RaceEntry> {
    entries
        .iter()
        .map(|e| RaceEntry {
            parent: map.resolve(&e.constructor).to_string(),
            ..e.clone()
        })
        .collect()
}

const DRIVER_FAULT_STATUSES: &[&str] = &["collision", "accident", "spun off"];

fn is_completion_status(status: &str) -> bool {
    let s = normalize_status(status);
    s == "finished" || s == "lapped" || s.starts_with('+')
}

/// Classifies one race result. Override statuses take precedence over the
/// built-in driver-fault list.
pub fn classify_dnf(
    status: &str,
    position_present: bool,
    overrides: &IndeterminateStatuses,
) -> DnfClass {
    if position_present && is_completion_status(status) {
        return DnfClass::Finished;
    }
    if overrides.contains(status) {
        return DnfClass::Indeterminate;
    }
    let s = normalize_status(status);
    if DRIVER_FAULT_STATUSES.contains(&s.as_str()) {
        DnfClass::DriverFault
    } else {
        DnfClass::ConstructorFault
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedEntry {
    pub entry: RaceEntry,
    pub class: DnfClass,
}

/// Qualifying rows have no DNF concept: a ranked row is a finisher, an
/// unranked one is dropped later by [`filter_by_policy`].
pub fn classify_entries(
    entries: &[RaceEntry],
    overrides: &IndeterminateStatuses,
) -> Vec<ClassifiedEntry> {
    entries
        .iter()
        .map(|e| {
            let class = match e.session {
                Session::Race => classify_dnf(&e.status, e.position.is_some(), overrides),
                Session::Qualifying if e.position.is_some() => DnfClass::Finished,
                Session::Qualifying => DnfClass::Indeterminate,
            };
            ClassifiedEntry {
                entry: e.clone(),
                class,
            }
        })
        .collect()
}

/// A training/test row after the DNF policy has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub entry: RaceEntry,
    pub class: DnfClass,
    /// Effective position: re-ranked finishers, then imputed non-finishers.
    pub position: u32,
    /// Number of rows retained for this event and session.
    pub field_size: u32,
}

pub fn filter_by_policy(entries: &[ClassifiedEntry], policy: DnfPolicy) -> Vec<PolicyRow> {
    let mut groups: BTreeMap<(RaceId, Session), Vec<&ClassifiedEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry((e.entry.race, e.entry.session)).or_default().push(e);
    }

    let mut out = Vec::with_capacity(entries.len());
    for ((_, session), group) in groups {
        let (mut finishers, mut retired): (Vec<_>, Vec<_>) =
            group.into_iter().partition(|e| e.class == DnfClass::Finished);
        finishers.sort_by(|a, b| entry_order(&a.entry, &b.entry));
        let keep_retired = session == Session::Race && policy != DnfPolicy::Exclude;
        if keep_retired {
            // Later retirement ranks ahead; then grid slot, then driver key.
            retired.sort_by(|a, b| {
                let laps = |e: &ClassifiedEntry| e.entry.laps.unwrap_or(0);
                let grid = |e: &ClassifiedEntry| match e.entry.grid {
                    Some(g) if g > 0 => g,
                    _ => u32::MAX,
                };
                laps(b)
                    .cmp(&laps(a))
                    .then(grid(a).cmp(&grid(b)))
                    .then(a.entry.driver.cmp(&b.entry.driver))
            });
        } else {
            retired.clear();
        }
        let field_size = (finishers.len() + retired.len()) as u32;
        for (i, e) in finishers.into_iter().chain(retired).enumerate() {
            out.push(PolicyRow {
                entry: e.entry.clone(),
                class: e.class,
                position: i as u32 + 1,
                field_size,
            });
        }
    }
    out
}

const DATASET_HEADER: [&str; 11] = [
    "season",
    "round",
    "session",
    "driver",
    "constructor",
    "parent",
    "grid",
    "position",
    "laps",
    "status",
    "dnf_class",
];

/// Writes the canonical dataset consumed by the fitting commands.
pub fn write_dataset<W: Write>(writer: W, entries: &[ClassifiedEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(DATASET_HEADER)?;
    let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for ClassifiedEntry { entry: e, class } in entries {
        wtr.write_record([
            e.race.season.to_string(),
            e.race.round.to_string(),
            e.session.to_string(),
            e.driver.clone(),
            e.constructor.clone(),
            e.parent.clone(),
            opt(e.grid),
            opt(e.position),
            opt(e.laps),
            e.status.clone(),
            class.as_str().to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ClassifiedEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from_reader(file)
}

pub fn read_dataset_from_reader<R: Read>(reader: R) -> Result<Vec<ClassifiedEntry>> {
    Ok(read_rows(reader, None, true)?
        .into_iter()
        .map(|r| ClassifiedEntry {
            entry: r.entry,
            class: r.class.expect("canonical rows carry a class"),
        })
        .collect())
}
