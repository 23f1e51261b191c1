//! Time-decayed ridge ratings for Formula 1 drivers and constructors.
//!
//! Results are ingested into [`ClassifiedEntry`] rows, refitted after every
//! event by [`fit_history`], smoothed into a [`RatingSeries`] and scored with
//! walk-forward next-race predictions in [`backtest`].

pub mod backtest;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod rating_engine;
pub mod regression;
pub mod smoothing;
pub mod synthetic;
pub mod weighting;

pub use backtest::{evaluate, evaluate_history, topn_sweep, tune, Evaluation, TuneRow};
pub use error::{Error, Result};
pub use evaluation::{
    kendall_tau_race, logistic_influence, mae, mcfadden, ndcg_at_k, partial_taus, variance_share,
    DriverSeasonType, EvalReport, LogisticReport, MaeScope, RaceOutcomePair,
};
pub use ingest::{
    ClassifiedEntry, DnfClass, DnfPolicy, IndeterminateStatuses, ParentMap, RaceEntry, RaceId,
    Session,
};
pub use rating_engine::{
    fit_history, predict_next, ratings_from_snapshots, FitConfig, History, LineupEntry,
    ModelSnapshot, PredictionMode, RacePrediction, RatingSeries, RatingTable,
};
pub use regression::{
    solve_logistic_ridge, solve_ridge, DesignRow, Entity, EntityIndex, EntityKind, RidgeSolution,
};
pub use smoothing::BlendParams;
pub use weighting::{DecayParams, RankWeightParams};
