//! Race-by-race refits, rating series with confidence bands, and predictions.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{filter_by_policy, ClassifiedEntry, DnfPolicy, PolicyRow, RaceId, Session};
use crate::regression::{
    bootstrap, build_design, solve_ridge, BootstrapSpread, DesignRow, Entity, EntityIndex,
    EntityKind, ResponseKind, RidgeSolution,
};
use crate::smoothing::{blend, blend_weight, loess_fit_predict, BlendParams, SeriesPoint};
use crate::weighting::{
    overall_weight, rank_weight, time_decay_weight, DecayParams, RankWeightParams,
};

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictionMode {
    #[default]
    Blended,
    Raw,
}

impl std::str::FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blended" => Ok(PredictionMode::Blended),
            "raw" => Ok(PredictionMode::Raw),
            other => Err(Error::InvalidParameter(format!("unknown prediction mode `{other}`"))),
        }
    }
}

impl PredictionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionMode::Blended => "blended",
            PredictionMode::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub decay: DecayParams,
    pub rank_weights: RankWeightParams,
    pub lambda: f64,
    pub dnf_policy: DnfPolicy,
    pub blend: BlendParams,
    /// Bootstrap replicates per snapshot; 0 skips the bootstrap (zero-width bands).
    pub bootstrap_replicates: usize,
    pub seed: u64,
    /// Leading seasons used only as training history.
    pub warm_start_seasons: u16,
    pub session: Session,
    pub prediction_mode: PredictionMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            decay: DecayParams::default(),
            rank_weights: RankWeightParams::default(),
            lambda: 1.0,
            dnf_policy: DnfPolicy::Exclude,
            blend: BlendParams::default(),
            bootstrap_replicates: 50,
            seed: 0,
            warm_start_seasons: 2,
            session: Session::Race,
            prediction_mode: PredictionMode::Blended,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.decay.validate()?;
        self.blend.validate()?;
        if self.rank_weights.points_positions == 0 {
            return Err(Error::InvalidParameter("points_positions must be >= 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.bootstrap_replicates == 1 {
            return Err(Error::InvalidParameter(
                "bootstrap_replicates must be 0 (off) or >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Policy-filtered rows of one session, grouped by event in order.
#[derive(Debug, Clone)]
pub struct History {
    pub session: Session,
    pub policy: DnfPolicy,
    pub rows: Vec<PolicyRow>,
    pub events: Vec<RaceId>,
    bounds: Vec<(usize, usize)>,
    pub index: EntityIndex,
}

impl History {
    pub fn new(entries: &[ClassifiedEntry], session: Session, policy: DnfPolicy) -> Self {
        let selected: Vec<ClassifiedEntry> = entries
            .iter()
            .filter(|e| e.entry.session == session)
            .cloned()
            .collect();
        let rows = filter_by_policy(&selected, policy);
        let mut events = Vec::new();
        let mut bounds: Vec<(usize, usize)> = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if events.last() != Some(&row.entry.race) {
                events.push(row.entry.race);
                bounds.push((i, i + 1));
            } else if let Some(b) = bounds.last_mut() {
                b.1 = i + 1;
            }
        }
        let index = EntityIndex::from_rows(&rows);
        Self {
            session,
            policy,
            rows,
            events,
            bounds,
            index,
        }
    }

    pub fn from_config(entries: &[ClassifiedEntry], config: &FitConfig) -> Self {
        Self::new(entries, config.session, config.dnf_policy)
    }

    pub fn event_rows(&self, event: usize) -> &[PolicyRow] {
        let (a, b) = self.bounds[event];
        &self.rows[a..b]
    }

    /// Rows of every event up to and including `event`.
    pub fn rows_through(&self, event: usize) -> &[PolicyRow] {
        &self.rows[..self.bounds[event].1]
    }

    pub fn event_position(&self, race: RaceId) -> Option<usize> {
        self.events.binary_search(&race).ok()
    }
}

/// Overall weights of `rows` relative to the event `as_of`.
pub fn training_weights(rows: &[PolicyRow], as_of: RaceId, config: &FitConfig) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let rank = rank_weight(r.position, r.field_size, &config.rank_weights)?;
            Ok(overall_weight(rank, time_decay_weight(as_of, r.entry.race, &config.decay)))
        })
        .collect()
}

/// Design rows for a fit as of `event`, with weights relative to that event.
pub fn training_design(
    history: &History,
    event: usize,
    response: ResponseKind,
    config: &FitConfig,
) -> Result<Vec<DesignRow>> {
    let rows = history.rows_through(event);
    let weights = training_weights(rows, history.events[event], config)?;
    build_design(rows, &history.index, &weights, response, history.policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub as_of: RaceId,
    /// Position of `as_of` in the fitted history.
    pub ordinal: usize,
    pub solution: RidgeSolution,
    pub spread: BootstrapSpread,
    /// Per column: events through `as_of` where the entity carried positive weight.
    pub n_races_seen: Vec<u32>,
}

impl ModelSnapshot {
    pub fn races_seen(&self, index: &EntityIndex, entity: &Entity) -> u32 {
        index.column(entity).map_or(0, |c| self.n_races_seen[c])
    }
}

fn snapshot_seed(seed: u64, ordinal: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (ordinal as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cumulative appearance counts per column after each event.
fn appearance_counts(history: &History, config: &FitConfig) -> Result<Vec<Vec<u32>>> {
    let n_cols = history.index.len();
    let mut counts = vec![0u32; n_cols];
    let mut out = Vec::with_capacity(history.events.len());
    for event in 0..history.events.len() {
        let mut seen = BTreeSet::new();
        for row in history.event_rows(event) {
            if rank_weight(row.position, row.field_size, &config.rank_weights)? <= 0.0 {
                continue;
            }
            let design = build_design(
                std::slice::from_ref(row),
                &history.index,
                &[1.0],
                ResponseKind::CenteredRank,
                history.policy,
            )?;
            seen.extend(design[0].features.iter().filter(|(_, v)| *v != 0.0).map(|(c, _)| *c));
        }
        for c in seen {
            counts[c] += 1;
        }
        out.push(counts.clone());
    }
    Ok(out)
}

fn fit_event(history: &History, event: usize, counts: Vec<u32>, config: &FitConfig) -> Result<ModelSnapshot> {
    let as_of = history.events[event];
    let n_cols = history.index.len();
    let design = training_design(history, event, ResponseKind::CenteredRank, config)?;
    let crossing = history
        .rows_through(event)
        .iter()
        .filter(|r| r.entry.race.season < as_of.season && r.entry.race.round > as_of.round)
        .count();
    log::debug!("fit as of {as_of}: {} rows, {crossing} with negative round delta", design.len());
    let solution = solve_ridge(&design, n_cols, config.lambda)?;
    let seed = snapshot_seed(config.seed, event);
    let spread = if config.bootstrap_replicates >= 2 {
        bootstrap(&design, n_cols, config.lambda, config.bootstrap_replicates, seed)?
    } else {
        BootstrapSpread::zeros(n_cols, seed)
    };
    Ok(ModelSnapshot {
        as_of,
        ordinal: event,
        solution,
        spread,
        n_races_seen: counts,
    })
}

/// Fits one model per event using all data through that event.
///
/// Events are fitted in parallel; the output is in event order and does not
/// depend on the thread count.
pub fn fit_history(history: &History, config: &FitConfig) -> Result<Vec<ModelSnapshot>> {
    config.validate()?;
    if history.events.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "history spans {} event(s); need at least 2",
            history.events.len()
        )));
    }
    let counts = appearance_counts(history, config)?;
    counts
        .into_par_iter()
        .enumerate()
        .map(|(event, counts)| {
            fit_event(history, event, counts, config).map_err(|e| {
                let as_of = history.events[event];
                Error::FitFailed {
                    season: as_of.season,
                    round: as_of.round,
                    source: Box::new(e),
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingPoint {
    pub as_of: RaceId,
    pub ordinal: usize,
    pub beta_raw: f64,
    pub beta_loess: f64,
    pub beta_blended: f64,
    pub stdev: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_races: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntitySeries {
    pub entity: Entity,
    pub points: Vec<RatingPoint>,
}

/// Per-entity rating trajectories, in column order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingSeries {
    pub series: Vec<EntitySeries>,
}

fn rating_point(
    history_points: &[SeriesPoint],
    snapshot: &ModelSnapshot,
    column: usize,
    kind: EntityKind,
    params: &BlendParams,
) -> RatingPoint {
    let beta_raw = snapshot.solution.coefficients[column];
    let stdev = snapshot.spread.stdev[column];
    let n_races = snapshot.n_races_seen[column];
    let beta_loess = loess_fit_predict(history_points, snapshot.ordinal as i64 + 1, params);
    let beta_blended = blend(beta_raw, beta_loess, n_races.max(1), kind, params);
    let half = Z95 * stdev;
    RatingPoint {
        as_of: snapshot.as_of,
        ordinal: snapshot.ordinal,
        beta_raw,
        beta_loess,
        beta_blended,
        stdev,
        ci_low: beta_blended - half,
        ci_high: beta_blended + half,
        n_races,
    }
}

/// LOESS-blended ratings with 95% bands for every entity and snapshot from the
/// entity's first appearance on.
pub fn ratings_from_snapshots(
    index: &EntityIndex,
    snapshots: &[ModelSnapshot],
    config: &FitConfig,
) -> RatingSeries {
    let series = (0..index.len())
        .into_par_iter()
        .map(|column| {
            let kind = index.kind(column);
            let mut raw = Vec::new();
            let mut points = Vec::new();
            for snap in snapshots.iter().filter(|s| s.n_races_seen[column] > 0) {
                raw.push(SeriesPoint {
                    ordinal: snap.ordinal as i64,
                    beta_raw: snap.solution.coefficients[column],
                    stdev: snap.spread.stdev[column],
                });
                points.push(rating_point(&raw, snap, column, kind, &config.blend));
            }
            EntitySeries {
                entity: index.entity(column),
                points,
            }
        })
        .collect();
    RatingSeries { series }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub raw: f64,
    pub blended: f64,
    /// Half-width of the 95% band.
    pub half_width: f64,
    /// Raw-coefficient weight used in the blend.
    pub blend_weight: f64,
}

impl Rating {
    pub fn value(&self, mode: PredictionMode) -> f64 {
        match mode {
            PredictionMode::Blended => self.blended,
            PredictionMode::Raw => self.raw,
        }
    }
}

/// Ratings of every entity seen by `as_of`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingTable {
    pub as_of: Option<RaceId>,
    pub ratings: HashMap<Entity, Rating>,
}

impl RatingTable {
    pub fn at(series: &RatingSeries, as_of: RaceId, params: &BlendParams) -> Self {
        let ratings = series
            .series
            .iter()
            .filter_map(|s| {
                let i = s.points.binary_search_by(|p| p.as_of.cmp(&as_of)).ok()?;
                let p = &s.points[i];
                Some((
                    s.entity.clone(),
                    Rating {
                        raw: p.beta_raw,
                        blended: p.beta_blended,
                        half_width: (p.ci_high - p.ci_low) / 2.0,
                        blend_weight: blend_weight(p.n_races.max(1), s.entity.kind, params),
                    },
                ))
            })
            .collect();
        Self {
            as_of: Some(as_of),
            ratings,
        }
    }

    /// Unseen entities rate 0 with a zero-width band.
    pub fn get(&self, entity: &Entity) -> Rating {
        self.ratings.get(entity).copied().unwrap_or(Rating {
            raw: 0.0,
            blended: 0.0,
            half_width: 0.0,
            blend_weight: 0.0,
        })
    }

    pub fn driver(&self, key: &str) -> Rating {
        self.get(&Entity::driver(key))
    }

    pub fn constructor(&self, key: &str) -> Rating {
        self.get(&Entity::constructor(key))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LineupEntry {
    pub driver: String,
    pub constructor: String,
}

impl LineupEntry {
    pub fn new(driver: impl Into<String>, constructor: impl Into<String>) -> Self {
        Self {
            driver: driver.into(),
            constructor: constructor.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedEntry {
    pub driver: String,
    pub constructor: String,
    pub score: f64,
    pub predicted_rank: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RacePrediction {
    pub as_of: Option<RaceId>,
    /// In lineup order.
    pub entries: Vec<PredictedEntry>,
}

/// Ranks by descending score, ties broken by ascending driver key.
pub fn rank_scores(scores: &[f64], drivers: &[&str]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| drivers[a].cmp(drivers[b]))
    });
    let mut ranks = vec![0; scores.len()];
    for (rank, i) in order.into_iter().enumerate() {
        ranks[i] = rank as u32 + 1;
    }
    ranks
}

/// Scores each lineup entry as driver rating plus constructor rating.
pub fn predict_next(table: &RatingTable, lineup: &[LineupEntry], mode: PredictionMode) -> RacePrediction {
    let scores: Vec<f64> = lineup
        .iter()
        .map(|e| table.driver(&e.driver).value(mode) + table.constructor(&e.constructor).value(mode))
        .collect();
    let drivers: Vec<&str> = lineup.iter().map(|e| e.driver.as_str()).collect();
    let ranks = rank_scores(&scores, &drivers);
    RacePrediction {
        as_of: table.as_of,
        entries: lineup
            .iter()
            .zip(scores)
            .zip(ranks)
            .map(|((e, score), predicted_rank)| PredictedEntry {
                driver: e.driver.clone(),
                constructor: e.constructor.clone(),
                score,
                predicted_rank,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeRow {
    pub driver: String,
    pub constructor: String,
    pub driver_rating: f64,
    pub driver_half_width: f64,
    pub constructor_rating: f64,
    pub constructor_half_width: f64,
    pub overall_rating: f64,
    pub overall_half_width: f64,
}

/// Sum of two ratings with the band combined in quadrature (independence assumed).
pub fn composite(driver: f64, driver_hw: f64, constructor: f64, constructor_hw: f64) -> (f64, f64) {
    (driver + constructor, driver_hw.hypot(constructor_hw))
}

/// Driver/constructor/overall ratings for a lineup, best overall first.
pub fn composite_table(table: &RatingTable, lineup: &[LineupEntry]) -> Vec<CompositeRow> {
    let mut rows: Vec<CompositeRow> = lineup
        .iter()
        .map(|e| {
            let d = table.driver(&e.driver);
            let c = table.constructor(&e.constructor);
            let (overall, overall_hw) = composite(d.blended, d.half_width, c.blended, c.half_width);
            CompositeRow {
                driver: e.driver.clone(),
                constructor: e.constructor.clone(),
                driver_rating: d.blended,
                driver_half_width: d.half_width,
                constructor_rating: c.blended,
                constructor_half_width: c.half_width,
                overall_rating: overall,
                overall_half_width: overall_hw,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.overall_rating
            .total_cmp(&a.overall_rating)
            .then_with(|| a.driver.cmp(&b.driver))
    });
    rows
}

const RATINGS_HEADER: [&str; 9] = [
    "entity",
    "kind",
    "season",
    "round",
    "beta_raw",
    "beta_loess",
    "beta_blended",
    "ci_low",
    "ci_high",
];

pub fn write_ratings<W: Write>(writer: W, series: &RatingSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RATINGS_HEADER)?;
    for s in &series.series {
        for p in &s.points {
            wtr.write_record([
                s.entity.key.clone(),
                s.entity.kind.to_string(),
                p.as_of.season.to_string(),
                p.as_of.round.to_string(),
                p.beta_raw.to_string(),
                p.beta_loess.to_string(),
                p.beta_blended.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<ratings>", e))?;
    Ok(())
}

pub fn export_ratings(series: &RatingSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ratings(file, series)
}

/// Reads a ratings export. Ordinals are reassigned from the distinct events in
/// the file; appearance counts are not stored and come back as 0.
pub fn read_ratings<R: Read>(reader: R) -> Result<RatingSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_entity: Vec<EntitySeries> = Vec::new();
    let mut slot: HashMap<Entity, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                field: name.into(),
                message: "missing value".into(),
            })
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            let v = field(i, name)?;
            v.parse().map_err(|_| Error::Parse {
                line,
                field: name.into(),
                message: format!("cannot parse `{v}`"),
            })
        };
        let kind: EntityKind = field(1, "kind")?.parse()?;
        let entity = Entity {
            kind,
            key: field(0, "entity")?.to_string(),
        };
        let as_of = RaceId::new(num(2, "season")? as u16, num(3, "round")? as u16)?;
        let (ci_low, ci_high) = (num(7, "ci_low")?, num(8, "ci_high")?);
        let point = RatingPoint {
            as_of,
            ordinal: 0,
            beta_raw: num(4, "beta_raw")?,
            beta_loess: num(5, "beta_loess")?,
            beta_blended: num(6, "beta_blended")?,
            stdev: (ci_high - ci_low) / (2.0 * Z95),
            ci_low,
            ci_high,
            n_races: 0,
        };
        let i = *slot.entry(entity.clone()).or_insert_with(|| {
            by_entity.push(EntitySeries {
                entity,
                points: Vec::new(),
            });
            by_entity.len() - 1
        });
        by_entity[i].points.push(point);
    }
    let events: BTreeSet<RaceId> = by_entity
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.as_of))
        .collect();
    let events: Vec<RaceId> = events.into_iter().collect();
    for s in &mut by_entity {
        s.points.sort_by_key(|p| p.as_of);
        for p in &mut s.points {
            p.ordinal = events.binary_search(&p.as_of).unwrap_or(0);
        }
    }
    Ok(RatingSeries { series: by_entity })
}

impl RatingSeries {
    pub fn get(&self, entity: &Entity) -> Option<&EntitySeries> {
        self.series.iter().find(|s| &s.entity == entity)
    }

    /// Distinct snapshot events present in the series.
    pub fn events(&self) -> Vec<RaceId> {
        let set: BTreeSet<RaceId> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.as_of))
            .collect();
        set.into_iter().collect()
    }
}
