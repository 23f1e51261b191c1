//! LOESS forecasts over coefficient histories and the raw/LOESS blend.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regression::EntityKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    /// Global event index in the fitted history.
    pub ordinal: i64,
    pub beta_raw: f64,
    pub stdev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSeries {
    pub entity: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendParams {
    pub driver_cap: f64,
    pub constructor_cap: f64,
    /// Appearances at which the raw weight would reach 1 before capping.
    pub races_scale: u32,
    pub loess_span: f64,
    pub loess_degree: u32,
}

impl Default for BlendParams {
    fn default() -> Self {
        Self {
            driver_cap: 0.3,
            constructor_cap: 0.7,
            races_scale: 40,
            loess_span: 0.75,
            loess_degree: 1,
        }
    }
}

impl BlendParams {
    pub fn validate(&self) -> Result<()> {
        let cap_ok = |c: f64| c > 0.0 && c <= 1.0;
        if !cap_ok(self.driver_cap) || !cap_ok(self.constructor_cap) {
            return Err(Error::InvalidParameter("blend caps must lie in (0, 1]".into()));
        }
        if self.races_scale == 0 {
            return Err(Error::InvalidParameter("races_scale must be >= 1".into()));
        }
        if !(self.loess_span > 0.0 && self.loess_span <= 1.0) {
            return Err(Error::InvalidParameter("loess_span must lie in (0, 1]".into()));
        }
        if self.loess_degree > 2 {
            return Err(Error::InvalidParameter("loess_degree must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    pub fn cap(&self, kind: EntityKind) -> f64 {
        match kind {
            EntityKind::Driver => self.driver_cap,
            EntityKind::Constructor => self.constructor_cap,
        }
    }
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

/// Local polynomial fit anchored at the last observation, evaluated at `target`.
///
/// Uses the `ceil(span * n)` most recent points with tricube weights on their
/// distance from the last ordinal. Fewer than three points returns the last
/// raw value.
pub fn loess_fit_predict(points: &[SeriesPoint], target: i64, params: &BlendParams) -> f64 {
    let Some(last) = points.last() else {
        return 0.0;
    };
    let n = points.len();
    if n < 3 {
        return last.beta_raw;
    }
    let degree = params.loess_degree as usize;
    let q = ((params.loess_span * n as f64).ceil() as usize)
        .max(degree + 2)
        .max(3)
        .min(n);
    let window = &points[n - q..];
    let anchor = last.ordinal;
    let h = (anchor - window[0].ordinal) as f64;
    if h <= 0.0 {
        return last.beta_raw;
    }

    // Centered, bandwidth-scaled abscissa keeps the normal equations well scaled.
    let cols = degree + 1;
    let mut xtwx = DMatrix::<f64>::zeros(cols, cols);
    let mut xtwy = DVector::<f64>::zeros(cols);
    for p in window {
        let u = (anchor - p.ordinal) as f64 / h;
        let w = tricube(u);
        if w == 0.0 {
            continue;
        }
        let x = (p.ordinal - anchor) as f64 / h;
        let powers: Vec<f64> = (0..cols).map(|k| x.powi(k as i32)).collect();
        for i in 0..cols {
            xtwy[i] += w * powers[i] * p.beta_raw;
            for j in 0..cols {
                xtwx[(i, j)] += w * powers[i] * powers[j];
            }
        }
    }
    let xt = (target - anchor) as f64 / h;
    match xtwx.clone().lu().solve(&xtwy) {
        Some(coef) if coef.iter().all(|c| c.is_finite()) => {
            (0..cols).map(|k| coef[k] * xt.powi(k as i32)).sum()
        }
        // Degenerate local design: fall back to the weighted mean.
        _ => xtwy[0] / xtwx[(0, 0)],
    }
}

pub fn blend_weight(n_races: u32, kind: EntityKind, params: &BlendParams) -> f64 {
    (f64::from(n_races) / f64::from(params.races_scale)).min(params.cap(kind))
}

/// `w * raw + (1 - w) * loess` with `w = min(n_races / races_scale, cap)`.
pub fn blend(beta_raw: f64, beta_loess: f64, n_races: u32, kind: EntityKind, params: &BlendParams) -> f64 {
    let w = blend_weight(n_races, kind, params);
    w * beta_raw + (1.0 - w) * beta_loess
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[(i64, f64)]) -> Vec<SeriesPoint> {
        values
            .iter()
            .map(|&(ordinal, beta_raw)| SeriesPoint { ordinal, beta_raw, stdev: 0.0 })
            .collect()
    }

    #[test]
    fn short_series_returns_last_value() {
        let p = BlendParams::default();
        assert_eq!(loess_fit_predict(&series(&[(0, 2.0)]), 5, &p), 2.0);
        assert_eq!(loess_fit_predict(&series(&[(0, 1.0), (1, 2.0)]), 2, &p), 2.0);
    }

    #[test]
    fn affine_series_reproduced() {
        let pts: Vec<_> = (0..10).map(|t| (t, 0.5 * t as f64 + 1.0)).collect();
        let got = loess_fit_predict(&series(&pts), 10, &BlendParams::default());
        assert!((got - 6.0).abs() < 1e-6);
    }

    #[test]
    fn degree_zero_and_two() {
        let pts: Vec<_> = (0..12).map(|t| (t, 3.0)).collect();
        for degree in 0..=2 {
            let p = BlendParams { loess_degree: degree, ..Default::default() };
            assert!((loess_fit_predict(&series(&pts), 12, &p) - 3.0).abs() < 1e-9);
        }
        let quad: Vec<_> = (0..12).map(|t| (t, (t * t) as f64)).collect();
        let p = BlendParams { loess_degree: 2, ..Default::default() };
        assert!((loess_fit_predict(&series(&quad), 12, &p) - 144.0).abs() < 1e-6);
    }

    #[test]
    fn blend_examples() {
        let p = BlendParams::default();
        assert!((blend(1.0, 0.0, 40, EntityKind::Driver, &p) - 0.3).abs() < 1e-15);
        assert!((blend(1.0, 0.0, 400, EntityKind::Constructor, &p) - 0.7).abs() < 1e-15);
        assert!((blend(1.7, 1.7, 8, EntityKind::Driver, &p) - 1.7).abs() < 1e-15);
        assert_eq!(blend_weight(60, EntityKind::Driver, &p), 0.3);
        assert_eq!(blend_weight(8, EntityKind::Driver, &p), 0.2);
    }

    #[test]
    fn params_validated() {
        assert!(BlendParams::default().validate().is_ok());
        assert!(BlendParams { driver_cap: 0.0, ..Default::default() }.validate().is_err());
        assert!(BlendParams { loess_span: 1.5, ..Default::default() }.validate().is_err());
        assert!(BlendParams { loess_degree: 3, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn blend_stays_between_inputs(raw in -10.0f64..10.0, lo in -10.0f64..10.0, n in 1u32..500, driver: bool) {
            let kind = if driver { EntityKind::Driver } else { EntityKind::Constructor };
            let b = blend(raw, lo, n, kind, &BlendParams::default());
            prop_assert!(b >= raw.min(lo) - 1e-12 && b <= raw.max(lo) + 1e-12);
        }

        #[test]
        fn blend_weight_monotone_and_capped(n in 1u32..500, driver: bool) {
            let p = BlendParams::default();
            let kind = if driver { EntityKind::Driver } else { EntityKind::Constructor };
            let w = blend_weight(n, kind, &p);
            prop_assert!(w <= p.cap(kind));
            prop_assert!(blend_weight(n + 1, kind, &p) >= w);
        }

        #[test]
        fn constant_series_is_fixed_point(c in -5.0f64..5.0, n in 1usize..40, span in 0.05f64..=1.0) {
            let pts: Vec<_> = (0..n as i64).map(|t| (t * 2, c)).collect();
            let p = BlendParams { loess_span: span, ..Default::default() };
            let got = loess_fit_predict(&series(&pts), 2 * n as i64, &p);
            prop_assert!((got - c).abs() < 1e-9);
        }
    }
}
