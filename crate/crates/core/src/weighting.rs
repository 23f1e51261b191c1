//! Row weights: finishing-rank weight times exponential time decay.

use crate::error::{Error, Result};
use crate::ingest::RaceId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankWeightParams {
    /// Number of leading positions that all receive weight 1.
    pub points_positions: u32,
    pub enabled: bool,
}

impl Default for RankWeightParams {
    fn default() -> Self {
        Self {
            points_positions: 10,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayParams {
    pub season_decay: f64,
    pub round_decay: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self {
            season_decay: 0.75,
            round_decay: 0.075,
        }
    }
}

impl DecayParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.season_decay >= 0.0 && self.season_decay.is_finite())
            || !(self.round_decay >= 0.0 && self.round_decay.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "decay factors must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Weight of a finishing position: flat through the points positions, then a
/// linear decay clamped at zero for the last cars.
pub fn rank_weight(position: u32, cars_total: u32, params: &RankWeightParams) -> Result<f64> {
    if position == 0 || position > cars_total {
        return Err(Error::InvalidParameter(format!(
            "position {position} outside [1, {cars_total}]"
        )));
    }
    if !params.enabled {
        return Ok(1.0);
    }
    if params.points_positions == 0 {
        return Err(Error::InvalidParameter("points_positions must be >= 1".into()));
    }
    if position <= params.points_positions {
        return Ok(1.0);
    }
    // position > points_positions, so cars_total > points_positions here.
    let outside = f64::from(cars_total - params.points_positions);
    let behind = f64::from(position - params.points_positions + 1);
    Ok(((outside - behind) / (outside + 1.0)).clamp(0.0, 1.0))
}

/// `exp(-season_decay * Δseason) * exp(-round_decay * Δround)`.
///
/// Δround is the raw signed round difference, so a late round of an earlier
/// season can carry a negative Δround.
pub fn time_decay_weight(current: RaceId, past: RaceId, params: &DecayParams) -> f64 {
    let d_season = f64::from(current.season) - f64::from(past.season);
    let d_round = f64::from(current.round) - f64::from(past.round);
    (-params.season_decay * d_season).exp() * (-params.round_decay * d_round).exp()
}

pub fn overall_weight(rank_w: f64, decay_w: f64) -> f64 {
    rank_w * decay_w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn race(season: u16, round: u16) -> RaceId {
        RaceId { season, round }
    }

    #[test]
    fn rank_weight_examples() {
        let p = RankWeightParams::default();
        assert_eq!(rank_weight(7, 20, &p).unwrap(), 1.0);
        assert!((rank_weight(11, 20, &p).unwrap() - 8.0 / 11.0).abs() < 1e-15);
        // The linear ramp evaluates to -1/11 at the last position.
        assert_eq!(rank_weight(20, 20, &p).unwrap(), 0.0);
        assert_eq!(rank_weight(19, 20, &p).unwrap(), 0.0);
    }

    #[test]
    fn rank_weight_rejects_out_of_range() {
        let p = RankWeightParams::default();
        assert!(rank_weight(0, 20, &p).is_err());
        assert!(rank_weight(21, 20, &p).is_err());
        assert!(rank_weight(3, 2, &p).is_err());
    }

    #[test]
    fn disabled_rank_weights_are_flat() {
        let p = RankWeightParams {
            enabled: false,
            ..Default::default()
        };
        for pos in 1..=22 {
            assert_eq!(rank_weight(pos, 22, &p).unwrap(), 1.0);
        }
    }

    #[test]
    fn decay_examples() {
        let p = DecayParams::default();
        assert_eq!(time_decay_weight(race(2016, 5), race(2016, 5), &p), 1.0);
        let e = (-0.75f64).exp();
        assert!((time_decay_weight(race(2017, 3), race(2016, 3), &p) - e).abs() < 1e-12);
        assert!((time_decay_weight(race(2016, 15), race(2016, 5), &p) - e).abs() < 1e-12);
        assert!((e - 0.4724).abs() < 1e-4);
    }

    #[test]
    fn overall_examples() {
        assert_eq!(overall_weight(1.0, 1.0), 1.0);
        let w = overall_weight(8.0 / 11.0, (-0.75f64).exp());
        assert!((w - 0.3436).abs() < 1e-4);
        assert_eq!(overall_weight(0.0, 0.77), 0.0);
    }

    proptest! {
        #[test]
        fn rank_weight_non_increasing(cars in 1u32..30, pp in 1u32..15, enabled: bool) {
            let p = RankWeightParams { points_positions: pp, enabled };
            let mut prev = f64::INFINITY;
            for pos in 1..=cars {
                let w = rank_weight(pos, cars, &p).unwrap();
                prop_assert!((0.0..=1.0).contains(&w));
                prop_assert!(w <= prev);
                prev = w;
            }
        }

        #[test]
        fn decay_non_increasing_along_each_axis(
            season_decay in 0.0f64..2.0,
            round_decay in 0.0f64..0.5,
            season in 2012u16..2024,
            round in 1u16..24,
        ) {
            let p = DecayParams { season_decay, round_decay };
            let now = race(2024, 24);
            let w = time_decay_weight(now, race(season, round), &p);
            prop_assert!(w > 0.0);
            prop_assert!(time_decay_weight(now, race(season - 1, round), &p) <= w);
            if round > 1 {
                prop_assert!(time_decay_weight(now, race(season, round - 1), &p) <= w);
            }
        }

        #[test]
        fn decay_bounded_when_exponent_nonnegative(
            season_decay in 0.0f64..2.0,
            round_decay in 0.0f64..0.5,
            past_season in 2012u16..=2024,
            past_round in 1u16..=24,
            cur_round in 1u16..=24,
        ) {
            let p = DecayParams { season_decay, round_decay };
            let cur = race(2024, cur_round);
            let past = race(past_season, past_round);
            prop_assume!(past <= cur);
            let exponent = season_decay * f64::from(2024 - past_season)
                + round_decay * (f64::from(cur_round) - f64::from(past_round));
            let w = time_decay_weight(cur, past, &p);
            prop_assert!(w > 0.0);
            if exponent >= 0.0 {
                prop_assert!(w <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn signed_round_delta_can_exceed_one_across_seasons() {
        // 0.075 * 24 > 0.75: the season term does not dominate at the defaults.
        let w = time_decay_weight(race(2016, 1), race(2015, 24), &DecayParams::default());
        assert!((w - (-0.75f64 + 0.075 * 23.0).exp()).abs() < 1e-12);
        assert!(w > 1.0);
    }
}
