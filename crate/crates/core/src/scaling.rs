//! Power-law fits `eps ~ c d^-gamma` of pruning curves and their split into
//! low-error plateau, power-law window and high-error plateau.

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

/// Errors of exactly zero are raised to this before taking logs.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-16;
/// Plateau band: within a factor `1 + tolerance` of the reference level.
pub const DEFAULT_PLATEAU_TOLERANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("point {index} has a non-positive or non-finite value (d = {d}, eps = {eps})")]
    Domain { index: usize, d: f64, eps: f64 },
    #[error("all densities in the window are equal")]
    Degenerate,
    #[error("points must be sorted by decreasing density")]
    Unsorted,
    #[error("plateau tolerance must be non-negative")]
    BadTolerance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub c: f64,
    pub gamma: f64,
    pub r_squared: f64,
    /// Inclusive density interval `(low, high)` the fit used.
    pub window: (f64, f64),
    pub points: usize,
    /// Points whose zero error was raised to the floor.
    pub clamped: usize,
}

impl PowerLawFit {
    pub fn predict(&self, d: f64) -> f64 {
        self.c * d.powf(-self.gamma)
    }
}

impl fmt::Display for PowerLawFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "c = {}", self.c)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "r_squared = {}", self.r_squared)?;
        writeln!(f, "window = [{}, {}]", self.window.0, self.window.1)?;
        write!(f, "points = {}", self.points)?;
        if self.clamped > 0 {
            write!(f, "\nclamped_zero_errors = {}", self.clamped)?;
        }
        Ok(())
    }
}

/// Least squares of `ln eps` on `ln d` over the points whose density lies in
/// `window` (all points when `None`). `gamma = -slope`, `c = exp(intercept)`.
pub fn fit_power_law(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<PowerLawFit, ScalingError> {
    fit_power_law_with_floor(points, window, DEFAULT_EPSILON_FLOOR)
}

pub fn fit_power_law_with_floor(
    points: &[(f64, f64)],
    window: Option<(f64, f64)>,
    epsilon_floor: f64,
) -> Result<PowerLawFit, ScalingError> {
    let mut clamped = 0;
    let mut logs = Vec::with_capacity(points.len());
    for (index, &(d, eps)) in points.iter().enumerate() {
        if let Some((lo, hi)) = window {
            if d < lo || d > hi {
                continue;
            }
        }
        if !(d > 0.0 && d.is_finite() && eps >= 0.0 && eps.is_finite()) {
            return Err(ScalingError::Domain { index, d, eps });
        }
        let eps = if eps == 0.0 {
            clamped += 1;
            epsilon_floor
        } else {
            eps
        };
        logs.push((d.ln(), eps.ln()));
    }
    if clamped > 0 {
        eprintln!("warning: {clamped} zero errors clamped to {epsilon_floor:e} before the log fit");
    }
    if logs.len() < 3 {
        return Err(ScalingError::InsufficientData {
            needed: 3,
            got: logs.len(),
        });
    }
    // fixed summation order, so the fit ignores input order
    logs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &logs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(ScalingError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = logs
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    let lo = logs.first().map_or(0.0, |p| p.0.exp());
    let hi = logs.last().map_or(0.0, |p| p.0.exp());
    Ok(PowerLawFit {
        c: intercept.exp(),
        gamma: -slope,
        r_squared,
        window: window.unwrap_or((lo, hi)),
        points: logs.len(),
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LowPlateau,
    PowerLaw,
    HighPlateau,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::LowPlateau => "low_plateau",
            Regime::PowerLaw => "power_law",
            Regime::HighPlateau => "high_plateau",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentQuality {
    Clean,
    /// Error falls somewhere inside the power-law window as density drops.
    NonMonotone,
    /// Fewer than three points between the plateaus.
    ShortPowerLaw,
}

/// Index ranges into the density-descending input.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSegmentation {
    pub points: Vec<(f64, f64)>,
    pub low: std::ops::Range<usize>,
    pub power_law: std::ops::Range<usize>,
    pub high: std::ops::Range<usize>,
    /// Reference level of the low plateau (error at the densest point).
    pub eps_low: f64,
    /// Reference level of the high plateau (error at the sparsest point).
    pub eps_up: f64,
    pub quality: SegmentQuality,
}

fn interval(points: &[(f64, f64)], r: &std::ops::Range<usize>) -> Option<(f64, f64)> {
    (!r.is_empty()).then(|| (points[r.end - 1].0, points[r.start].0))
}

impl RegimeSegmentation {
    pub fn low_interval(&self) -> Option<(f64, f64)> {
        interval(&self.points, &self.low)
    }

    pub fn power_law_interval(&self) -> Option<(f64, f64)> {
        interval(&self.points, &self.power_law)
    }

    pub fn high_interval(&self) -> Option<(f64, f64)> {
        interval(&self.points, &self.high)
    }

    pub fn regime(&self, index: usize) -> Regime {
        if self.low.contains(&index) {
            Regime::LowPlateau
        } else if self.high.contains(&index) {
            Regime::HighPlateau
        } else {
            Regime::PowerLaw
        }
    }

    /// `d,epsilon,regime`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,epsilon,regime\n");
        for (i, &(d, e)) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{d},{e},{}", self.regime(i).label());
        }
        out
    }
}

/// Split a curve sorted by decreasing density.
///
/// The low plateau is the longest prefix with `eps <= (1 + tol) eps_0`. The
/// high plateau is the longest suffix after it whose errors lie within a
/// factor `1 + tol` of the last error. Whatever sits between is the
/// power-law window.
pub fn segment_regimes(points: &[(f64, f64)], tolerance: f64) -> Result<RegimeSegmentation, ScalingError> {
    if points.len() < 5 {
        return Err(ScalingError::InsufficientData {
            needed: 5,
            got: points.len(),
        });
    }
    if !(tolerance >= 0.0) {
        return Err(ScalingError::BadTolerance);
    }
    for (index, &(d, eps)) in points.iter().enumerate() {
        if !(d > 0.0 && eps >= 0.0 && d.is_finite() && eps.is_finite()) {
            return Err(ScalingError::Domain { index, d, eps });
        }
    }
    if points.windows(2).any(|w| w[1].0 > w[0].0) {
        return Err(ScalingError::Unsorted);
    }
    let band = 1.0 + tolerance;
    let eps_low = points[0].1;
    let eps_up = points[points.len() - 1].1;
    let a = points.iter().take_while(|p| p.1 <= band * eps_low).count();
    let mut b = points.len();
    while b > a {
        let e = points[b - 1].1;
        if e <= band * eps_up && e * band >= eps_up {
            b -= 1;
        } else {
            break;
        }
    }
    let power_law = a..b;
    let quality = if power_law.len() < 3 && a < points.len() {
        SegmentQuality::ShortPowerLaw
    } else if points[power_law.clone()].windows(2).any(|w| w[1].1 < w[0].1) {
        SegmentQuality::NonMonotone
    } else {
        SegmentQuality::Clean
    };
    Ok(RegimeSegmentation {
        points: points.to_vec(),
        low: 0..a,
        power_law,
        high: b..points.len(),
        eps_low,
        eps_up,
        quality,
    })
}

/// Exponent for one layer's single-layer pruning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerExponent {
    pub layer: usize,
    pub fit: PowerLawFit,
    pub segmentation: RegimeSegmentation,
    /// The power-law window had fewer than three points, so the fit used
    /// the whole curve.
    pub full_range: bool,
}

/// Fit each `(layer, curve)` in its power-law window. Curves are `(layer
/// density, eps)` in density-descending order.
pub fn layerwise_exponents(
    curves: &[(usize, Vec<(f64, f64)>)],
    tolerance: f64,
) -> Result<Vec<LayerExponent>, ScalingError> {
    curves
        .iter()
        .map(|(layer, curve)| {
            let seg = segment_regimes(curve, tolerance)?;
            let window = &curve[seg.power_law.clone()];
            let (fit, full_range) = if window.len() >= 3 {
                (fit_power_law(window, None)?, false)
            } else {
                (fit_power_law(curve, None)?, true)
            };
            Ok(LayerExponent {
                layer: *layer,
                fit,
                segmentation: seg,
                full_range,
            })
        })
        .collect()
}

/// `layer,gamma,c,r_squared,d_low,d_high,points,full_range`.
pub fn layer_exponents_csv(rows: &[LayerExponent]) -> String {
    let mut out = String::from("layer,gamma,c,r_squared,d_low,d_high,points,full_range\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.layer + 1,
            r.fit.gamma,
            r.fit.c,
            r.fit.r_squared,
            r.fit.window.0,
            r.fit.window.1,
            r.fit.points,
            u8::from(r.full_range)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(c: f64, gamma: f64) -> Vec<(f64, f64)> {
        (0..30).map(|n| 0.95f64.powi(n)).map(|d| (d, c * d.powf(-gamma))).collect()
    }

    #[test]
    fn exact_on_log_linear_data() {
        let fit = fit_power_law(&[(1.0, 2.0), (0.5, 16.0), (0.25, 128.0)], None).unwrap();
        assert!((fit.gamma - 3.0).abs() < 1e-12);
        assert!((fit.c - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        for gamma in [0.5, 3.0, 9.61] {
            let fit = fit_power_law(&synthetic(0.7, gamma), None).unwrap();
            assert!((fit.gamma - gamma).abs() < 1e-10, "{gamma}: {}", fit.gamma);
        }
    }

    #[test]
    fn constant_error_has_zero_gamma() {
        let pts: Vec<_> = (1..=5).map(|i| (i as f64 / 5.0, 0.01)).collect();
        let fit = fit_power_law(&pts, None).unwrap();
        assert!(fit.gamma.abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            fit_power_law(&[(1.0, 1.0), (0.5, 2.0)], None),
            Err(ScalingError::InsufficientData { needed: 3, got: 2 })
        );
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (0.5, -2.0), (0.2, 3.0)], None),
            Err(ScalingError::Domain { index: 1, .. })
        ));
        let fit = fit_power_law(&[(1.0, 0.0), (0.5, 1e-3), (0.2, 1e-2)], None).unwrap();
        assert_eq!(fit.clamped, 1);
        assert_eq!(
            fit_power_law(&[(0.5, 1.0), (0.5, 2.0), (0.5, 3.0)], None),
            Err(ScalingError::Degenerate)
        );
    }

    #[test]
    fn window_restricts_points() {
        let mut pts = synthetic(1.0, 2.0);
        pts.push((0.01, 1.0));
        let fit = fit_power_law(&pts, Some((0.2, 1.0))).unwrap();
        assert!((fit.gamma - 2.0).abs() < 1e-10);
        assert_eq!(fit.window, (0.2, 1.0));
    }

    // flat 1e-3 on [0.5, 1], then 1e-3 (d / 0.5)^-5, flat again below 0.2
    fn three_regimes() -> Vec<(f64, f64)> {
        (0..20)
            .map(|k| 1.0 - 0.05 * k as f64)
            .map(|d| {
                let eps = if d >= 0.5 - 1e-12 {
                    1e-3
                } else {
                    1e-3 * (d.max(0.2) / 0.5).powf(-5.0)
                };
                (d, eps)
            })
            .collect()
    }

    #[test]
    fn segments_a_synthetic_three_regime_curve() {
        let pts = three_regimes();
        let seg = segment_regimes(&pts, DEFAULT_PLATEAU_TOLERANCE).unwrap();
        // last plateau point is d = 0.5 (index 10); one grid point of slack
        assert!((10..=11).contains(&(seg.low.end - 1)), "{:?}", seg.low);
        assert_eq!(seg.high_interval().unwrap().1, pts[16].0);
        assert_eq!(seg.quality, SegmentQuality::Clean);
        let window = &pts[seg.power_law.clone()];
        let fit = fit_power_law(window, None).unwrap();
        assert!((fit.gamma - 5.0).abs() < 1e-9);
        assert!(seg.to_csv().lines().nth(1).unwrap().ends_with("low_plateau"));
    }

    #[test]
    fn constant_curve_is_all_low_plateau() {
        let pts: Vec<_> = (0..8).map(|k| (1.0 - 0.1 * k as f64, 0.02)).collect();
        let seg = segment_regimes(&pts, 1.0).unwrap();
        assert_eq!(seg.low, 0..8);
        assert!(seg.power_law.is_empty());
        assert!(seg.high.is_empty());
    }

    #[test]
    fn segmentation_preconditions() {
        assert!(segment_regimes(&[(1.0, 1.0), (0.5, 1.0)], 1.0).is_err());
        let mut pts = three_regimes();
        pts.swap(2, 3);
        assert_eq!(segment_regimes(&pts, 1.0), Err(ScalingError::Unsorted));
    }

    #[test]
    fn layerwise_recovers_planted_exponent() {
        let planted: Vec<(f64, f64)> = (0..60)
            .map(|k| 0.95f64.powi(k))
            .map(|d| (d, if d > 0.7 { 0.01 } else { 0.01 * (d / 0.7).powf(-1.36) }))
            .collect();
        let flat: Vec<(f64, f64)> = (0..25).map(|k| (0.95f64.powi(k), 0.01)).collect();
        let rows = layerwise_exponents(&[(0, planted), (1, flat)], 1.0).unwrap();
        assert!((rows[0].fit.gamma - 1.36).abs() < 0.01, "{}", rows[0].fit.gamma);
        assert!(rows[1].fit.gamma.abs() < 1e-12);
        assert!(rows[1].full_range);
        assert!(layer_exponents_csv(&rows).starts_with("layer,gamma"));
    }
}
