//! Walk-forward evaluation: each test event is predicted from the snapshot
//! of the event before it.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{
    logistic_influence, mcfadden, Appearance, EvalReport, LogisticReport, LogisticRow,
    ProbabilityRow, RaceOutcomePair,
};
use crate::ingest::{ClassifiedEntry, DnfPolicy};
use crate::rating_engine::{
    fit_history, rank_scores, ratings_from_snapshots, FitConfig, History, PredictionMode,
    RatingTable,
};
use crate::regression::{
    build_design, restrict_features, solve_logistic_ridge, DesignRow, EntityKind, ResponseKind,
};
use crate::weighting::{time_decay_weight, DecayParams};

pub const DEFAULT_TOPN: [u32; 3] = [3, 6, 10];

/// Event indices whose results are scored: seasons after the warm start, and
/// never the first event (it has no prior snapshot).
pub fn test_window(history: &History, warm_start_seasons: u16) -> Result<Range<usize>> {
    let Some(first) = history.events.first() else {
        return Err(Error::EmptyInput("no events in history".into()));
    };
    let first_test_season = u32::from(first.season) + u32::from(warm_start_seasons);
    let start = history
        .events
        .iter()
        .position(|e| u32::from(e.season) >= first_test_season)
        .unwrap_or(history.events.len())
        .max(1);
    if start >= history.events.len() {
        return Err(Error::EmptyInput(format!(
            "test window is empty: {} event(s), warm start of {warm_start_seasons} season(s)",
            history.events.len()
        )));
    }
    Ok(start..history.events.len())
}

/// 1 + number of strictly larger scores; equal scores share a rank.
fn competition_ranks(scores: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .map(|s| 1.0 + scores.iter().filter(|t| *t > s).count() as f64)
        .collect()
}

/// Prediction pairs for every event in `window`, using ratings as of the
/// preceding event.
pub fn outcome_pairs(
    history: &History,
    table_at: impl Fn(usize) -> RatingTable + Sync,
    mode: PredictionMode,
    window: Range<usize>,
) -> Vec<RaceOutcomePair> {
    window
        .into_par_iter()
        .map(|event| {
            let table = table_at(event - 1);
            let rows = history.event_rows(event);
            let drivers: Vec<&str> = rows.iter().map(|r| r.entry.driver.as_str()).collect();
            let d: Vec<_> = rows.iter().map(|r| table.driver(&r.entry.driver)).collect();
            let c: Vec<_> = rows.iter().map(|r| table.constructor(&r.entry.parent)).collect();
            let score = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..rows.len()).map(f).collect() };
            let ranked = |s: Vec<f64>| -> Vec<f64> {
                rank_scores(&s, &drivers).into_iter().map(f64::from).collect()
            };
            RaceOutcomePair {
                race: history.events[event],
                drivers: drivers.iter().map(|s| s.to_string()).collect(),
                constructors: rows.iter().map(|r| r.entry.parent.clone()).collect(),
                actual: rows.iter().map(|r| f64::from(r.position)).collect(),
                predicted: ranked(score(&|i| d[i].value(mode) + c[i].value(mode))),
                predicted_raw: ranked(score(&|i| d[i].raw + c[i].raw)),
                predicted_constructor_only: competition_ranks(&score(&|i| c[i].value(mode))),
                predicted_driver_only: competition_ranks(&score(&|i| d[i].value(mode))),
            }
        })
        .collect()
}

pub fn appearances(history: &History) -> Vec<Appearance> {
    history
        .rows
        .iter()
        .map(|r| Appearance {
            driver: r.entry.driver.clone(),
            season: r.entry.race.season,
            parent: r.entry.parent.clone(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub pairs: Vec<RaceOutcomePair>,
}

/// Next-race evaluation of the ridge model over the test window.
///
/// The bootstrap does not affect any metric and is skipped.
pub fn evaluate_history(history: &History, config: &FitConfig) -> Result<Evaluation> {
    let window = test_window(history, config.warm_start_seasons)?;
    let config = FitConfig {
        bootstrap_replicates: 0,
        ..config.clone()
    };
    let snapshots = fit_history(history, &config)?;
    let series = ratings_from_snapshots(&history.index, &snapshots, &config);
    let pairs = outcome_pairs(
        history,
        |event| RatingTable::at(&series, history.events[event], &config.blend),
        config.prediction_mode,
        window,
    );
    let report = EvalReport::from_pairs(&pairs, &appearances(history))?;
    Ok(Evaluation { report, pairs })
}

pub fn evaluate(entries: &[ClassifiedEntry], config: &FitConfig) -> Result<Evaluation> {
    evaluate_history(&History::from_config(entries, config), config)
}

fn decay_weights(history: &History, event: usize, decay: &DecayParams) -> Vec<f64> {
    let as_of = history.events[event];
    history
        .rows_through(event)
        .iter()
        .map(|r| time_decay_weight(as_of, r.entry.race, decay))
        .collect()
}

fn probabilities(
    solution: &crate::regression::LogisticSolution,
    test: &[DesignRow],
) -> Vec<f64> {
    test.iter().map(|r| solution.probability(&r.features)).collect()
}

struct SnapshotScores {
    rows: Vec<ProbabilityRow>,
    degenerate: bool,
}

fn score_topn_event(
    history: &History,
    event: usize,
    n: u32,
    config: &FitConfig,
) -> Result<SnapshotScores> {
    let train_event = event - 1;
    let weights = decay_weights(history, train_event, &config.decay);
    let response = ResponseKind::TopN(n);
    let train = build_design(
        history.rows_through(train_event),
        &history.index,
        &weights,
        response,
        history.policy,
    )?;
    let test_rows = history.event_rows(event);
    let test = build_design(
        test_rows,
        &history.index,
        &vec![1.0; test_rows.len()],
        response,
        history.policy,
    )?;
    let n_cols = history.index.len();
    let fit = |rows: &[DesignRow]| solve_logistic_ridge(rows, n_cols, config.lambda);
    let full = fit(&train)?;
    let constructors = fit(&restrict_features(&train, &history.index, EntityKind::Constructor))?;
    let drivers = fit(&restrict_features(&train, &history.index, EntityKind::Driver))?;
    let null_rows: Vec<DesignRow> = train
        .iter()
        .map(|r| DesignRow {
            features: Vec::new(),
            ..r.clone()
        })
        .collect();
    let null = fit(&null_rows)?;

    let p_full = probabilities(&full, &test);
    let p_c = probabilities(&constructors, &test);
    let p_d = probabilities(&drivers, &test);
    let p_null = null.probability(&[]);
    let rows = test
        .iter()
        .enumerate()
        .map(|(i, r)| ProbabilityRow {
            y: r.response,
            p_full: p_full[i],
            p_constructor_only: p_c[i],
            p_driver_only: p_d[i],
            p_null,
        })
        .collect();
    Ok(SnapshotScores {
        rows,
        degenerate: full.degenerate,
    })
}

/// Logistic Top-N next-race evaluation for each `n`.
///
/// Uses the DNF-inclusive rows of the configured session and time-decay
/// weights only; the rank weight would discount exactly the negative class.
pub fn topn_sweep(
    entries: &[ClassifiedEntry],
    config: &FitConfig,
    ns: &[u32],
) -> Result<LogisticReport> {
    config.validate()?;
    if ns.contains(&0) {
        return Err(Error::InvalidParameter("top-N cut-offs must be >= 1".into()));
    }
    let history = History::new(entries, config.session, DnfPolicy::IncludeAll);
    let window = test_window(&history, config.warm_start_seasons)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let per_event: Vec<SnapshotScores> = window
            .clone()
            .into_par_iter()
            .map(|event| score_topn_event(&history, event, n, config))
            .collect::<Result<_>>()?;
        let degenerate_fits = per_event.iter().filter(|s| s.degenerate).count();
        let all: Vec<ProbabilityRow> = per_event.into_iter().flat_map(|s| s.rows).collect();
        let m = mcfadden(&all)?;
        let influence = logistic_influence(m.partial_constructor, m.partial_driver).unwrap_or(f64::NAN);
        if degenerate_fits > 0 {
            log::warn!("top-{n}: {degenerate_fits} of {} test events had a single-class training set", window.len());
        }
        log::info!("top-{n}: pseudo R2 {:.3}", m.pseudo_r2);
        rows.push(LogisticRow {
            top_n: n,
            test_entries: all.len(),
            pseudo_r2: m.pseudo_r2,
            partial_r2_constructor: m.partial_constructor,
            partial_r2_driver: m.partial_driver,
            implied_constructor_influence: influence,
            degenerate_fits,
        });
    }
    Ok(LogisticReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneRow {
    pub season_decay: f64,
    pub round_decay: f64,
    pub mae: f64,
    pub tau: f64,
    pub ndcg_3: f64,
    pub ndcg_6: f64,
    pub ndcg_10: f64,
}

pub fn default_grid() -> Vec<DecayParams> {
    let values = [0.75, 0.075, 0.0075];
    values
        .iter()
        .flat_map(|&season_decay| {
            values.iter().map(move |&round_decay| DecayParams {
                season_decay,
                round_decay,
            })
        })
        .collect()
}

/// Evaluates every decay pair; best (lowest) MAE first, grid order on ties.
pub fn tune(entries: &[ClassifiedEntry], config: &FitConfig, grid: &[DecayParams]) -> Result<Vec<TuneRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("tuning grid is empty".into()));
    }
    let history = History::from_config(entries, config);
    let mut rows = Vec::with_capacity(grid.len());
    for decay in grid {
        let cfg = FitConfig {
            decay: *decay,
            ..config.clone()
        };
        let r = evaluate_history(&history, &cfg)?.report;
        rows.push(TuneRow {
            season_decay: decay.season_decay,
            round_decay: decay.round_decay,
            mae: r.mae_overall,
            tau: r.tau,
            ndcg_3: r.ndcg_3,
            ndcg_6: r.ndcg_6,
            ndcg_10: r.ndcg_10,
        });
    }
    rows.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    Ok(rows)
}

pub fn tune_csv(rows: &[TuneRow]) -> String {
    let mut out = String::from("season_decay,round_decay,mae,tau,ndcg_3,ndcg_6,ndcg_10\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.season_decay, r.round_decay, r.mae, r.tau, r.ndcg_3, r.ndcg_6, r.ndcg_10
        ));
    }
    out
}

pub fn tune_table(rows: &[TuneRow]) -> String {
    let mut out = format!(
        "{:>8} {:>8} {:>6} {:>7} {:>7} {:>7} {:>7}\n",
        "Season", "Round", "MAE", "tau", "nDCG3", "nDCG6", "nDCG10"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>8} {:>8} {:>6.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
            r.season_decay, r.round_decay, r.mae, r.tau, r.ndcg_3, r.ndcg_6, r.ndcg_10
        ));
    }
    out
}
