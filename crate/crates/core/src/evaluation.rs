//! Ranking and likelihood metrics for next-race predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingest::RaceId;

/// Actual and predicted rank vectors for one race, aligned by entry.
///
/// Single-component predictions may contain ties (teammates share a
/// constructor rating).
#[derive(Debug, Clone, PartialEq)]
pub struct RaceOutcomePair {
    pub race: RaceId,
    pub drivers: Vec<String>,
    pub constructors: Vec<String>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub predicted_raw: Vec<f64>,
    pub predicted_constructor_only: Vec<f64>,
    pub predicted_driver_only: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauSelector {
    /// Actual vs. the configured (default blended) prediction.
    Full,
    /// Actual vs. raw-coefficient prediction.
    Raw,
    ConstructorOnly,
    DriverOnly,
    /// Constructor-only vs. driver-only predictions.
    DriverVsConstructor,
}

/// Concordant minus discordant pairs over C(n, 2); pairs tied in either
/// vector count as neither.
///
/// Uses the O(n log n) sort-and-merge count.
pub fn kendall_tau_race(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    let n = actual.len();
    if n != predicted.len() {
        return Err(Error::InvalidParameter(format!(
            "rank vectors differ in length ({n} vs {})",
            predicted.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("kendall tau needs at least 2 entries".into()));
    }
    let mut pairs: Vec<(f64, f64)> = actual.iter().copied().zip(predicted.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n * (n - 1) / 2) as i64;
    let mut tied_x = 0i64;
    let mut tied_xy = 0i64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let run = (j - i) as i64;
        tied_x += run * (run - 1) / 2;
        let mut k = i;
        while k < j {
            let mut m = k + 1;
            while m < j && pairs[m].1 == pairs[k].1 {
                m += 1;
            }
            let r = (m - k) as i64;
            tied_xy += r * (r - 1) / 2;
            k = m;
        }
        i = j;
    }

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as i64;

    let mut tied_y = 0i64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        let run = (j - i) as i64;
        tied_y += run * (run - 1) / 2;
        i = j;
    }

    let discordant = swaps;
    let concordant = n0 - tied_x - tied_y + tied_xy - discordant;
    Ok((concordant - discordant) as f64 / n0 as f64)
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut swaps = merge_count(left, &mut buf[..mid]) + merge_count(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            buf[k] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        } else {
            buf[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    while i < left.len() {
        buf[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        buf[k] = right[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    swaps
}

fn select(pair: &RaceOutcomePair, which: TauSelector) -> (&[f64], &[f64]) {
    match which {
        TauSelector::Full => (&pair.actual, &pair.predicted),
        TauSelector::Raw => (&pair.actual, &pair.predicted_raw),
        TauSelector::ConstructorOnly => (&pair.actual, &pair.predicted_constructor_only),
        TauSelector::DriverOnly => (&pair.actual, &pair.predicted_driver_only),
        TauSelector::DriverVsConstructor => {
            (&pair.predicted_constructor_only, &pair.predicted_driver_only)
        }
    }
}

/// Unweighted mean of per-race taus.
pub fn mean_tau(pairs: &[RaceOutcomePair], which: TauSelector) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no races to average".into()));
    }
    let mut sum = 0.0;
    for p in pairs {
        let (a, b) = select(p, which);
        sum += kendall_tau_race(a, b)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Partial taus of the outcome on constructors (controlling for drivers) and
/// on drivers (controlling for constructors).
pub fn partial_taus(tau_yc: f64, tau_yd: f64, tau_dc: f64) -> Result<(f64, f64)> {
    let den_c = (1.0 - tau_yd * tau_yd) * (1.0 - tau_dc * tau_dc);
    let den_d = (1.0 - tau_yc * tau_yc) * (1.0 - tau_dc * tau_dc);
    if !(den_c > 0.0 && den_d > 0.0) {
        return Err(Error::Numeric(format!(
            "degenerate correlation structure (tau_yc={tau_yc}, tau_yd={tau_yd}, tau_dc={tau_dc})"
        )));
    }
    let pc = (tau_yc - tau_yd * tau_dc) / den_c.sqrt();
    let pd = (tau_yd - tau_yc * tau_dc) / den_d.sqrt();
    Ok((pc, pd))
}

/// Constructor share of explained variance from squared partial taus.
pub fn variance_share(partial_constructor: f64, partial_driver: f64) -> Result<f64> {
    let c = partial_constructor * partial_constructor;
    let d = partial_driver * partial_driver;
    if c + d == 0.0 {
        return Err(Error::Numeric("both partial taus are zero".into()));
    }
    Ok(c / (c + d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaeScope {
    Overall,
    /// Entries whose actual rank is at most n.
    TopN(u32),
}

pub fn mae(pairs: &[RaceOutcomePair], scope: MaeScope) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in pairs {
        for (a, pr) in p.actual.iter().zip(&p.predicted) {
            let keep = match scope {
                MaeScope::Overall => true,
                MaeScope::TopN(n) => *a <= f64::from(n),
            };
            if keep {
                sum += (pr - a).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput(format!("no entries in MAE scope {scope:?}")));
    }
    Ok(sum / count as f64)
}

fn relevance(actual_rank: f64) -> f64 {
    (11.0 - actual_rank).max(0.0)
}

fn dcg(relevances: impl Iterator<Item = f64>, k: usize) -> f64 {
    relevances
        .take(k)
        .enumerate()
        .map(|(i, rel)| rel / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k with gain `max(0, 11 - actual rank)` and predicted order by
/// ascending predicted rank.
pub fn ndcg_at_k(actual: &[f64], predicted: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if actual.len() != predicted.len() {
        return Err(Error::InvalidParameter("rank vectors differ in length".into()));
    }
    let mut order: Vec<usize> = (0..actual.len()).collect();
    order.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]).then(a.cmp(&b)));
    let got = dcg(order.iter().map(|&i| relevance(actual[i])), k);
    let mut ideal: Vec<f64> = actual.iter().map(|&a| relevance(a)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(ideal.into_iter(), k);
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok(got / best)
}

pub fn mean_ndcg(pairs: &[RaceOutcomePair], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no races for nDCG".into()));
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += ndcg_at_k(&p.actual, &p.predicted, k)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// One scored test entry for the likelihood metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityRow {
    pub y: f64,
    pub p_full: f64,
    pub p_constructor_only: f64,
    pub p_driver_only: f64,
    pub p_null: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McFadden {
    pub pseudo_r2: f64,
    pub partial_constructor: f64,
    pub partial_driver: f64,
}

const P_CLIP: f64 = 1e-12;

fn log_lik(y: f64, p: f64) -> f64 {
    let p = p.clamp(P_CLIP, 1.0 - P_CLIP);
    y * p.ln() + (1.0 - y) * (1.0 - p).ln()
}

/// McFadden pseudo-R² of the full model and the partials for each component.
///
/// The constructor partial compares the drivers-only model against the full
/// model, and vice versa.
pub fn mcfadden(rows: &[ProbabilityRow]) -> Result<McFadden> {
    let (mut full, mut cons, mut drv, mut null) = (0.0, 0.0, 0.0, 0.0);
    for r in rows {
        full += log_lik(r.y, r.p_full);
        cons += log_lik(r.y, r.p_constructor_only);
        drv += log_lik(r.y, r.p_driver_only);
        null += log_lik(r.y, r.p_null);
    }
    if null == 0.0 {
        return Err(Error::Numeric("null log-likelihood is zero".into()));
    }
    Ok(McFadden {
        pseudo_r2: 1.0 - full / null,
        partial_constructor: (drv - full) / null,
        partial_driver: (cons - full) / null,
    })
}

/// Constructor share from unsquared McFadden partials.
pub fn logistic_influence(partial_constructor: f64, partial_driver: f64) -> Result<f64> {
    let total = partial_constructor + partial_driver;
    if partial_constructor == 0.0 && partial_driver == 0.0 {
        return Err(Error::Numeric("both McFadden partials are zero".into()));
    }
    Ok(partial_constructor / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DriverSeasonType {
    SameTeam,
    NewTeam,
    NewDriver,
}

impl DriverSeasonType {
    pub fn label(self) -> &'static str {
        match self {
            DriverSeasonType::SameTeam => "Same Team",
            DriverSeasonType::NewTeam => "New Team",
            DriverSeasonType::NewDriver => "New Driver",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StratumStats {
    /// Test entries (driver-races) in the stratum.
    pub count: usize,
    pub avg_finish: f64,
    pub mae: f64,
}

/// `(driver, season, parent)` appearance used to classify driver-seasons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Appearance {
    pub driver: String,
    pub season: u16,
    pub parent: String,
}

fn modal_parents(history: &[Appearance]) -> BTreeMap<(&str, u16), &str> {
    let mut counts: BTreeMap<(&str, u16), BTreeMap<&str, usize>> = BTreeMap::new();
    for a in history {
        *counts
            .entry((a.driver.as_str(), a.season))
            .or_default()
            .entry(a.parent.as_str())
            .or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(k, by_parent)| {
            // Most appearances; ties go to the lexicographically first parent.
            let mut best = ("", 0usize);
            for (parent, n) in by_parent {
                if n > best.1 {
                    best = (parent, n);
                }
            }
            (k, best.0)
        })
        .collect()
}

/// Classifies a driver-season against the full appearance history.
pub fn classify_driver_season(
    driver: &str,
    season: u16,
    history: &[Appearance],
) -> DriverSeasonType {
    let modal = modal_parents(history);
    classify_with(&modal, history, driver, season)
}

fn classify_with(
    modal: &BTreeMap<(&str, u16), &str>,
    history: &[Appearance],
    driver: &str,
    season: u16,
) -> DriverSeasonType {
    let raced_before = history.iter().any(|a| a.driver == driver && a.season < season);
    if !raced_before {
        return DriverSeasonType::NewDriver;
    }
    match (modal.get(&(driver, season - 1)), modal.get(&(driver, season))) {
        (Some(prev), Some(cur)) if prev != cur => DriverSeasonType::NewTeam,
        _ => DriverSeasonType::SameTeam,
    }
}

/// MAE and average finish by driver-season type over all test entries.
pub fn stratify_driver_seasons(
    pairs: &[RaceOutcomePair],
    history: &[Appearance],
) -> BTreeMap<DriverSeasonType, StratumStats> {
    let modal = modal_parents(history);
    let mut cache: BTreeMap<(&str, u16), DriverSeasonType> = BTreeMap::new();
    let mut acc: BTreeMap<DriverSeasonType, (usize, f64, f64)> = BTreeMap::new();
    for p in pairs {
        for (i, driver) in p.drivers.iter().enumerate() {
            let class = *cache
                .entry((driver.as_str(), p.race.season))
                .or_insert_with(|| classify_with(&modal, history, driver, p.race.season));
            let e = acc.entry(class).or_default();
            e.0 += 1;
            e.1 += p.actual[i];
            e.2 += (p.predicted[i] - p.actual[i]).abs();
        }
    }
    acc.into_iter()
        .map(|(k, (n, finish, err))| {
            (
                k,
                StratumStats {
                    count: n,
                    avg_finish: finish / n as f64,
                    mae: err / n as f64,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub races: usize,
    pub entries: usize,
    pub mae_overall: f64,
    pub mae_t3: f64,
    pub mae_t6: f64,
    pub mae_t10: f64,
    pub tau: f64,
    pub tau_blended: f64,
    pub tau_constructor_only: f64,
    pub tau_driver_only: f64,
    pub tau_driver_vs_constructor: f64,
    pub tau_partial_constructor: f64,
    pub tau_partial_driver: f64,
    pub constructor_variance_explained: f64,
    pub ndcg_3: f64,
    pub ndcg_6: f64,
    pub ndcg_10: f64,
    pub stratified_mae: BTreeMap<DriverSeasonType, StratumStats>,
}

impl EvalReport {
    /// Aggregates every metric over the test pairs.
    pub fn from_pairs(pairs: &[RaceOutcomePair], history: &[Appearance]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("test window is empty".into()));
        }
        let tau_yc = mean_tau(pairs, TauSelector::ConstructorOnly)?;
        let tau_yd = mean_tau(pairs, TauSelector::DriverOnly)?;
        let tau_dc = mean_tau(pairs, TauSelector::DriverVsConstructor)?;
        let (pc, pd) = partial_taus(tau_yc, tau_yd, tau_dc)?;
        Ok(Self {
            races: pairs.len(),
            entries: pairs.iter().map(|p| p.actual.len()).sum(),
            mae_overall: mae(pairs, MaeScope::Overall)?,
            mae_t3: mae(pairs, MaeScope::TopN(3))?,
            mae_t6: mae(pairs, MaeScope::TopN(6))?,
            mae_t10: mae(pairs, MaeScope::TopN(10))?,
            tau: mean_tau(pairs, TauSelector::Raw)?,
            tau_blended: mean_tau(pairs, TauSelector::Full)?,
            tau_constructor_only: tau_yc,
            tau_driver_only: tau_yd,
            tau_driver_vs_constructor: tau_dc,
            tau_partial_constructor: pc,
            tau_partial_driver: pd,
            constructor_variance_explained: variance_share(pc, pd)?,
            ndcg_3: mean_ndcg(pairs, 3)?,
            ndcg_6: mean_ndcg(pairs, 6)?,
            ndcg_10: mean_ndcg(pairs, 10)?,
            stratified_mae: stratify_driver_seasons(pairs, history),
        })
    }

    fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("races", self.races as f64),
            ("entries", self.entries as f64),
            ("mae_overall", self.mae_overall),
            ("mae_t3", self.mae_t3),
            ("mae_t6", self.mae_t6),
            ("mae_t10", self.mae_t10),
            ("tau", self.tau),
            ("tau_blended", self.tau_blended),
            ("tau_constructor_only", self.tau_constructor_only),
            ("tau_driver_only", self.tau_driver_only),
            ("tau_driver_vs_constructor", self.tau_driver_vs_constructor),
            ("tau_partial_constructor", self.tau_partial_constructor),
            ("tau_partial_driver", self.tau_partial_driver),
            ("constructor_variance_explained", self.constructor_variance_explained),
            ("ndcg_3", self.ndcg_3),
            ("ndcg_6", self.ndcg_6),
            ("ndcg_10", self.ndcg_10),
        ]
    }

    /// `metric,value` rows, stratified MAE appended as `stratum.<type>.<field>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.metrics() {
            let _ = writeln!(out, "{k},{v}");
        }
        for (class, s) in &self.stratified_mae {
            let key = class.label().to_lowercase().replace(' ', "_");
            let _ = writeln!(out, "stratum.{key}.count,{}", s.count);
            let _ = writeln!(out, "stratum.{key}.avg_finish,{}", s.avg_finish);
            let _ = writeln!(out, "stratum.{key}.mae,{}", s.mae);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Next-race evaluation ({} races, {} entries)", self.races, self.entries);
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>10} {:>10} {:>10} {:>8} {:>12}",
            "MAE", "tau", "tau-blend", "partial-C", "partial-D", "C/D", "constructor"
        );
        let ratio = (self.tau_partial_constructor / self.tau_partial_driver).powi(2);
        let _ = writeln!(
            out,
            "{:>6.2} {:>8.3} {:>10.3} {:>10.3} {:>10.3} {:>8.3} {:>11.1}%",
            self.mae_overall,
            self.tau,
            self.tau_blended,
            self.tau_partial_constructor,
            self.tau_partial_driver,
            ratio,
            100.0 * self.constructor_variance_explained
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>6} {:>6} {:>6} {:>8} {:>8} {:>8}", "T3", "T6", "T10", "nDCG@3", "nDCG@6", "nDCG@10");
        let _ = writeln!(
            out,
            "{:>6.2} {:>6.2} {:>6.2} {:>8.3} {:>8.3} {:>8.3}",
            self.mae_t3, self.mae_t6, self.mae_t10, self.ndcg_3, self.ndcg_6, self.ndcg_10
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>8} {:>10} {:>6}", "Driver", "Entries", "Avg Finish", "MAE");
        for (class, s) in &self.stratified_mae {
            let _ = writeln!(out, "{:<12} {:>8} {:>10.1} {:>6.2}", class.label(), s.count, s.avg_finish, s.mae);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticRow {
    pub top_n: u32,
    pub test_entries: usize,
    pub pseudo_r2: f64,
    pub partial_r2_constructor: f64,
    pub partial_r2_driver: f64,
    /// NaN when both partials vanish.
    pub implied_constructor_influence: f64,
    /// Snapshots whose full-model fit saw a single class.
    pub degenerate_fits: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogisticReport {
    pub rows: Vec<LogisticRow>,
}

impl LogisticReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "top_n,test_entries,pseudo_r2,partial_r2_constructor,partial_r2_driver,implied_constructor_influence,degenerate_fits\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.top_n,
                r.test_entries,
                r.pseudo_r2,
                r.partial_r2_constructor,
                r.partial_r2_driver,
                r.implied_constructor_influence,
                r.degenerate_fits
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6} {:>10} {:>12} {:>12} {:>12} {:>11}",
            "Top N", "Pseudo R2", "Partial C", "Partial D", "Constructor", "Degenerate"
        );
        for r in &self.rows {
            let influence = if r.implied_constructor_influence.is_nan() {
                "-".to_string()
            } else {
                format!("{:.1}%", 100.0 * r.implied_constructor_influence)
            };
            let _ = writeln!(
                out,
                "{:>6} {:>10.3} {:>12.3} {:>12.3} {:>12} {:>11}",
                r.top_n,
                r.pseudo_r2,
                r.partial_r2_constructor,
                r.partial_r2_driver,
                influence,
                r.degenerate_fits
            );
        }
        out
    }
}
