//! Seeded synthetic seasons with planted additive constructor and driver effects.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{ClassifiedEntry, DnfClass, RaceEntry, RaceId, Session};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub first_season: u16,
    pub seasons: u16,
    pub races_per_season: u16,
    pub constructors: usize,
    pub drivers_per_constructor: usize,
    pub constructor_sd: f64,
    pub driver_sd: f64,
    /// Per-entry performance noise.
    pub noise_sd: f64,
    /// Seat exchanges between teams at each new season.
    pub swaps_per_season: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            first_season: 2020,
            seasons: 3,
            races_per_season: 20,
            constructors: 10,
            drivers_per_constructor: 2,
            // Constructor variance three times the driver variance.
            constructor_sd: 3f64.sqrt(),
            driver_sd: 1.0,
            noise_sd: 1.5,
            swaps_per_season: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Race session only, every car classified as a finisher.
    pub entries: Vec<ClassifiedEntry>,
    pub constructor_effects: BTreeMap<String, f64>,
    pub driver_effects: BTreeMap<String, f64>,
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("standard deviation must be finite and >= 0, got {sd}")));
    }
    Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(format!("standard deviation {sd}: {e}")))
}

/// Normal draws rescaled to mean 0 and exactly `sd`, so the planted spread
/// ratio does not drift with the seed.
fn planted(keys: &[String], dist: &Normal<f64>, sd: f64, rng: &mut ChaCha8Rng) -> BTreeMap<String, f64> {
    let draws: Vec<f64> = keys.iter().map(|_| dist.sample(rng)).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let spread = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    keys.iter()
        .zip(draws)
        .map(|(k, d)| {
            let v = if spread > 0.0 { (d - mean) / spread * sd } else { 0.0 };
            (k.clone(), v)
        })
        .collect()
}

/// Finishing order per race is the descending order of
/// `constructor effect + driver effect + noise`.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.constructors == 0 || config.drivers_per_constructor == 0 || config.seasons == 0 {
        return Err(Error::InvalidParameter("synthetic grid must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c_dist = normal(config.constructor_sd)?;
    let d_dist = normal(config.driver_sd)?;
    let noise = normal(config.noise_sd)?;

    let constructors: Vec<String> = (1..=config.constructors).map(|i| format!("team_{i:02}")).collect();
    let n_drivers = config.constructors * config.drivers_per_constructor;
    let drivers: Vec<String> = (1..=n_drivers).map(|i| format!("driver_{i:02}")).collect();
    let constructor_effects = planted(&constructors, &c_dist, config.constructor_sd, &mut rng);
    let driver_effects = planted(&drivers, &d_dist, config.driver_sd, &mut rng);

    // seat[i] = driver index in seat i; seat i belongs to team i / drivers_per_constructor.
    let mut seats: Vec<usize> = (0..n_drivers).collect();
    seats.shuffle(&mut rng);

    let field = n_drivers as u32;
    let mut entries = Vec::new();
    for s in 0..config.seasons {
        if s > 0 && config.constructors > 1 {
            for _ in 0..config.swaps_per_season {
                let a = rng.random_range(0..n_drivers);
                let b = rng.random_range(0..n_drivers);
                if a / config.drivers_per_constructor != b / config.drivers_per_constructor {
                    seats.swap(a, b);
                }
            }
        }
        let season = config.first_season + s;
        for round in 1..=config.races_per_season {
            let race = RaceId::new(season, round)?;
            let mut perf: Vec<(f64, usize)> = seats
                .iter()
                .enumerate()
                .map(|(seat, &d)| {
                    let team = &constructors[seat / config.drivers_per_constructor];
                    let p = constructor_effects[team] + driver_effects[&drivers[d]] + noise.sample(&mut rng);
                    (p, seat)
                })
                .collect();
            perf.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (i, &(_, seat)) in perf.iter().enumerate() {
                let team = constructors[seat / config.drivers_per_constructor].clone();
                let position = i as u32 + 1;
                entries.push(ClassifiedEntry {
                    entry: RaceEntry {
                        race,
                        session: Session::Race,
                        driver: drivers[seats[seat]].clone(),
                        constructor: team.clone(),
                        parent: team,
                        grid: Some(position),
                        position: Some(position),
                        laps: Some(57),
                        status: "Finished".into(),
                        entrant_count: field,
                    },
                    class: DnfClass::Finished,
                });
            }
        }
    }
    Ok(SyntheticData {
        entries,
        constructor_effects,
        driver_effects,
    })
}
