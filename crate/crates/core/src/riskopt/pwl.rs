//! Secant (chord) piecewise-affine approximations.
//!
//! For a convex `f`, the chord interpolant lies above `f` on every segment and
//! equals the pointwise maximum of its affine pieces, so a constraint
//! `s * f(t) <= r` with `s >= 0` is conservatively replaced by one linear
//! row per piece.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine piece `slope * t + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub slope: f64,
    pub intercept: f64,
}

impl AffinePiece {
    pub fn eval(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }

    fn through(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let slope = (y1 - y0) / (x1 - x0);
        Self {
            slope,
            intercept: y0 - slope * x0,
        }
    }
}

/// How breakpoints are spread over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Spacing {
    Uniform,
    /// Distances to `anchor` shrink geometrically from `lo` to `hi`; used to
    /// concentrate breakpoints where a function blows up at `anchor`.
    GeometricToward(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlApprox {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    pieces: Vec<AffinePiece>,
}

impl PwlApprox {
    /// Chord interpolant of `f` through `breakpoints` (strictly increasing).
    pub fn from_breakpoints(f: impl Fn(f64) -> f64, breakpoints: Vec<f64>) -> Result<Self> {
        let values = breakpoints.iter().map(|&t| f(t)).collect();
        Self::from_values(breakpoints, values)
    }

    pub fn from_values(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() {
            return Err(Error::Argument(
                "need at least two breakpoints with matching values".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Argument("breakpoints must be strictly increasing".into()));
        }
        if values.iter().chain(&breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite breakpoint or value".into()));
        }
        // Pieces are lifted by a few ulps so rounding never puts a chord
        // below the function at a breakpoint.
        let pieces = breakpoints
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, y)| {
                let mut piece = AffinePiece::through(x[0], y[0], x[1], y[1]);
                let scale = 1.0 + y[0].abs().max(y[1].abs()) + piece.slope.abs() * x[0].abs().max(x[1].abs());
                piece.intercept += 1e-13 * scale;
                piece
            })
            .collect();
        Ok(Self {
            breakpoints,
            values,
            pieces,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pieces(&self) -> &[AffinePiece] {
        &self.pieces
    }

    pub fn segments(&self) -> usize {
        self.pieces.len()
    }

    pub fn lo(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn hi(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Segment index containing `t` (clamped to the domain).
    pub fn segment_of(&self, t: f64) -> usize {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        idx.saturating_sub(1).min(self.segments() - 1)
    }

    /// Interpolated value; clamps `t` to the domain.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(self.lo(), self.hi());
        self.pieces[self.segment_of(t)].eval(t)
    }

    /// Maximum over all pieces (equals `eval` when convex).
    pub fn eval_max(&self, t: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.eval(t))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_convex(&self) -> bool {
        self.pieces
            .windows(2)
            .all(|w| w[1].slope >= w[0].slope - 1e-12 * w[0].slope.abs().max(1.0))
    }

    /// Lower convex envelope of the interpolant over segments
    /// `first..=last`, as affine pieces.
    pub fn convex_envelope(&self, first: usize, last: usize) -> Vec<AffinePiece> {
        let xs = &self.breakpoints[first..=last + 1];
        let ys = &self.values[first..=last + 1];
        // Andrew's monotone chain, lower hull only.
        let mut hull: Vec<usize> = Vec::new();
        for i in 0..xs.len() {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
                if cross <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        hull.windows(2)
            .map(|w| AffinePiece::through(xs[w[0]], ys[w[0]], xs[w[1]], ys[w[1]]))
            .collect()
    }

    /// Largest `pwl(t) - f(t)` over the domain, by sampling each segment and
    /// refining the best sample with a golden-section search.
    pub fn max_gap(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (s, piece) in self.pieces.iter().enumerate() {
            let (a, b) = (self.breakpoints[s], self.breakpoints[s + 1]);
            let gap = |t: f64| piece.eval(t) - f(t);
            let samples = 64;
            let mut best_i = 0;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=samples {
                let t = a + (b - a) * i as f64 / samples as f64;
                let g = gap(t);
                if g > best {
                    best = g;
                    best_i = i;
                }
            }
            let step = (b - a) / samples as f64;
            let mut lo = (a + step * (best_i as f64 - 1.0)).max(a);
            let mut hi = (a + step * (best_i as f64 + 1.0)).min(b);
            let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..80 {
                let m1 = hi - inv_phi * (hi - lo);
                let m2 = lo + inv_phi * (hi - lo);
                if gap(m1) < gap(m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            worst = worst.max(best).max(gap(0.5 * (lo + hi)));
        }
        worst
    }
}

/// Breakpoints for `segments` pieces on `[lo, hi]`.
pub fn breakpoints(lo: f64, hi: f64, segments: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if segments == 0 {
        return Err(Error::Argument("need at least one segment".into()));
    }
    if !(lo < hi) {
        return Err(Error::Argument(format!("empty interval [{lo}, {hi}]")));
    }
    let s = segments as f64;
    let mut out: Vec<f64> = match spacing {
        Spacing::Uniform => (0..=segments)
            .map(|i| lo + (hi - lo) * i as f64 / s)
            .collect(),
        Spacing::GeometricToward(anchor) => {
            let d0 = (anchor - lo).abs();
            let d1 = (anchor - hi).abs();
            if !(d0 > 0.0 && d1 > 0.0) || (anchor - lo).signum() != (anchor - hi).signum() {
                return Err(Error::Argument("anchor must lie outside (lo, hi)".into()));
            }
            let dir = (anchor - lo).signum();
            (0..=segments)
                .map(|i| anchor - dir * d0 * (d1 / d0).powf(i as f64 / s))
                .collect()
        }
    };
    out[0] = lo;
    out[segments] = hi;
    Ok(out)
}

/// Secant approximation of `f` on `[lo, hi]` with `segments` pieces.
pub fn build_secant_pwl(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    segments: usize,
    spacing: Spacing,
) -> Result<PwlApprox> {
    PwlApprox::from_breakpoints(f, breakpoints(lo, hi, segments, spacing)?)
}

/// Upper end of the risk-variable domain: `1 - 1e-6`.
pub const GAMMA_BAR_MAX: f64 = 1.0 - 1e-6;
pub const GAMMA_BAR_MIN: f64 = 0.5;

/// Default secant approximation of the logistic bound on `[0.5, 1 - 1e-6]`,
/// geometrically refined toward 1.
pub fn logit_bound_pwl(segments: usize) -> Result<PwlApprox> {
    build_secant_pwl(
        super::normal::logit_bound_unchecked,
        GAMMA_BAR_MIN,
        GAMMA_BAR_MAX,
        segments,
        Spacing::GeometricToward(1.0),
    )
}
