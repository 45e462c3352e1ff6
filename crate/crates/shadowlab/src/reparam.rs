//! Piecewise-linear reparametrizations of time and membership in the
//! three classes: Rep (increasing, g(0) = 0), Rep* (additionally onto R,
//! encoded by positive end slopes), Rep(eps) (all chord slopes within
//! eps of 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear g with breakpoints (u_j, g(u_j)), extended linearly
/// beyond the ends with declared nonnegative slopes. One breakpoint sits
/// at u = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reparametrization {
    pub breakpoints: Vec<(f64, f64)>,
    pub left_slope: f64,
    pub right_slope: f64,
}

/// Minimal positive slope used when emitting near-stalling witnesses;
/// keeps them strictly increasing.
pub const SLOPE_FLOOR: f64 = 1e-9;

impl Reparametrization {
    /// Validated constructor: breakpoint times strictly increasing, one of
    /// them zero, end slopes nonnegative. Values are free (classification
    /// decides what class, if any, the function belongs to).
    pub fn new(breakpoints: Vec<(f64, f64)>, left_slope: f64, right_slope: f64) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::BadParameter("reparametrization needs breakpoints".into()));
        }
        if !breakpoints.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::BadParameter("breakpoint times must strictly increase".into()));
        }
        if !breakpoints.iter().any(|&(u, _)| u == 0.0) {
            return Err(Error::BadParameter("one breakpoint must sit at u = 0".into()));
        }
        if left_slope < 0.0 || right_slope < 0.0 {
            return Err(Error::BadParameter("end slopes must be nonnegative".into()));
        }
        Ok(Self { breakpoints, left_slope, right_slope })
    }

    pub fn identity() -> Self {
        Self { breakpoints: vec![(0.0, 0.0)], left_slope: 1.0, right_slope: 1.0 }
    }

    /// g(t) = slope * t.
    pub fn from_slope(slope: f64) -> Self {
        Self { breakpoints: vec![(0.0, 0.0)], left_slope: slope, right_slope: slope }
    }

    /// Witness construction from matched (chain time, orbit time) pairs.
    ///
    /// Pairs must be nondecreasing in both coordinates; duplicate times
    /// collapse to the last value and stalls are tilted up by the slope
    /// floor so the result is strictly increasing.
    pub fn from_pairs(pairs: &[(f64, f64)], end_slope: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::BadParameter("witness needs at least one pair".into()));
        }
        let mut cleaned: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for &(u, g) in pairs {
            match cleaned.last_mut() {
                Some(last) if u == last.0 => last.1 = last.1.max(g),
                Some(last) => {
                    if u < last.0 {
                        return Err(Error::BadParameter("pair times must be nondecreasing".into()));
                    }
                    let floor = last.1 + SLOPE_FLOOR * (u - last.0);
                    cleaned.push((u, g.max(floor)));
                }
                None => cleaned.push((u, g)),
            }
        }
        Self::new(cleaned, end_slope, end_slope)
    }

    /// Piecewise-linear evaluation with linear extension.
    pub fn eval(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        let (u0, g0) = bp[0];
        if t <= u0 {
            return g0 + self.left_slope * (t - u0);
        }
        let (un, gn) = *bp.last().unwrap();
        if t >= un {
            return gn + self.right_slope * (t - un);
        }
        let idx = bp.partition_point(|&(u, _)| u <= t) - 1;
        let (ua, ga) = bp[idx];
        let (ub, gb) = bp[idx + 1];
        ga + (gb - ga) * (t - ua) / (ub - ua)
    }

    /// Internal segment slopes plus the two extension slopes. For
    /// piecewise-linear g, chord-slope extremes over all of R occur on
    /// exactly these.
    pub fn slopes(&self) -> Vec<f64> {
        let mut out = vec![self.left_slope];
        for w in self.breakpoints.windows(2) {
            out.push((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
        }
        out.push(self.right_slope);
        out
    }

    /// Class membership flags at tolerance `eps`.
    pub fn classify(&self, eps: f64) -> ClassFlags {
        assert!(eps >= 0.0, "eps must be nonnegative");
        let values_increase = self.breakpoints.windows(2).all(|w| w[0].1 < w[1].1);
        let zero_at_zero = self
            .breakpoints
            .iter()
            .find(|&&(u, _)| u == 0.0)
            .map(|&(_, g)| g == 0.0)
            .unwrap_or(false);
        let in_rep = values_increase && zero_at_zero;
        let in_rep_star = in_rep && self.left_slope > 0.0 && self.right_slope > 0.0;
        let in_rep_eps =
            in_rep_star && self.slopes().iter().all(|&m| (m - 1.0).abs() <= eps + 1e-12);
        ClassFlags { in_rep, in_rep_star, in_rep_eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFlags {
    pub in_rep: bool,
    pub in_rep_star: bool,
    pub in_rep_eps: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_eval_and_classes() {
        let g = Reparametrization::identity();
        for t in [-3.0, 0.0, 0.5, 7.25] {
            assert_eq!(g.eval(t), t);
        }
        for eps in [0.0, 0.3, 2.0] {
            let c = g.classify(eps);
            assert!(c.in_rep && c.in_rep_star && c.in_rep_eps);
        }
    }

    #[test]
    fn constant_half_slope() {
        let g = Reparametrization::from_slope(0.5);
        assert_eq!(g.eval(4.0), 2.0);
        let c = g.classify(0.4);
        assert!(c.in_rep && c.in_rep_star && !c.in_rep_eps);
        let c = g.classify(0.5);
        assert!(c.in_rep_eps);
    }

    #[test]
    fn linear_interpolation_between_breakpoints() {
        let g = Reparametrization::new(vec![(0.0, 0.0), (1.0, 3.0)], 1.0, 1.0).unwrap();
        assert_eq!(g.eval(0.5), 1.5);
        assert_eq!(g.eval(1.0), 3.0);
        // Extension with slope 1 past the last breakpoint.
        assert_eq!(g.eval(2.0), 4.0);
    }

    #[test]
    fn bounded_saturating_is_rep_only() {
        let g = Reparametrization::new(vec![(0.0, 0.0), (1.0, 1.0)], 0.0, 0.0).unwrap();
        let c = g.classify(0.5);
        assert!(c.in_rep && !c.in_rep_star && !c.in_rep_eps);
        // Even large finite eps cannot fix surjectivity.
        let c = g.classify(0.99);
        assert!(!c.in_rep_eps);
    }

    #[test]
    fn classify_invariant_under_collinear_breakpoints() {
        let g = Reparametrization::new(vec![(0.0, 0.0), (2.0, 1.0)], 0.5, 0.5).unwrap();
        let with_mid =
            Reparametrization::new(vec![(0.0, 0.0), (1.0, 0.5), (2.0, 1.0)], 0.5, 0.5).unwrap();
        for eps in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(g.classify(eps), with_mid.classify(eps));
        }
        assert_eq!(g.eval(1.3), with_mid.eval(1.3));
    }

    #[test]
    fn from_pairs_handles_stalls_and_duplicates() {
        let g = Reparametrization::from_pairs(
            &[(0.0, 0.0), (1.0, 0.4), (1.0, 0.9), (2.0, 0.9), (3.0, 2.0)],
            1.0,
        )
        .unwrap();
        let c = g.classify(10.0);
        assert!(c.in_rep, "witness must stay in Rep");
        assert!(g.eval(2.0) > g.eval(1.0));
    }

    proptest! {
        /// Class nesting: Rep(eps) => Rep* => Rep on random monotone
        /// piecewise-linear functions.
        #[test]
        fn class_nesting(
            raw in proptest::collection::vec((0.01f64..2.0, 0.01f64..2.0), 1..8),
            left in 0.0f64..2.0,
            right in 0.0f64..2.0,
            eps in 0.0f64..3.0,
        ) {
            let mut u = 0.0;
            let mut v = 0.0;
            let mut bp = vec![(0.0, 0.0)];
            for (du, dv) in raw {
                u += du;
                v += dv;
                bp.push((u, v));
            }
            let g = Reparametrization::new(bp, left, right).unwrap();
            let c = g.classify(eps);
            prop_assert!(c.in_rep);
            if c.in_rep_eps {
                prop_assert!(c.in_rep_star);
            }
        }

        /// Chord extremes occur on segments: dense chord sampling never
        /// exceeds the segment-slope envelope.
        #[test]
        fn chord_slopes_within_segment_envelope(
            raw in proptest::collection::vec((0.05f64..1.5, 0.05f64..1.5), 2..6),
            left in 0.01f64..2.0,
            right in 0.01f64..2.0,
        ) {
            let mut u = 0.0;
            let mut v = 0.0;
            let mut bp = vec![(0.0, 0.0)];
            for (du, dv) in raw {
                u += du;
                v += dv;
                bp.push((u, v));
            }
            let g = Reparametrization::new(bp, left, right).unwrap();
            let slopes = g.slopes();
            let (lo, hi) = slopes
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
            let span = g.breakpoints.last().unwrap().0 + 1.0;
            let n = 40;
            for a in 0..n {
                for b in (a + 1)..=n {
                    let s = -1.0 + (span + 2.0) * a as f64 / n as f64;
                    let t = -1.0 + (span + 2.0) * b as f64 / n as f64;
                    let chord = (g.eval(t) - g.eval(s)) / (t - s);
                    prop_assert!(chord >= lo - 1e-9 && chord <= hi + 1e-9);
                }
            }
        }
    }
}
