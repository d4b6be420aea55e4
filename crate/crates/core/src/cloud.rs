//! Point clouds in the canonical unit cube.

use std::fmt;

/// Maximum number of violations kept in a [`ValidationReport`].
pub const MAX_REPORTED_VIOLATIONS: usize = 10;

pub const CONSTANT_AXIS_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub pos: [f64; 3],
    pub color: [f64; 3],
}

impl Point {
    pub fn new(pos: [f64; 3], color: [f64; 3]) -> Self {
        Self { pos, color }
    }

    /// `[x, y, z, r, g, b]`
    pub fn features(&self) -> [f64; 6] {
        let [x, y, z] = self.pos;
        let [r, g, b] = self.color;
        [x, y, z, r, g, b]
    }

    pub fn feature_sum(&self) -> f64 {
        self.features().iter().sum()
    }
}

/// A list of points with canonical coordinates and colors.
///
/// Construction does not check anything; call [`PointCloud::validate`] before
/// handing externally sourced data to the tokenizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    NonFinite,
    CoordinateOutOfRange,
    ColorOutOfRange,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::Empty => "N must be ≥ 1",
            ViolationKind::NonFinite => "non-finite value",
            ViolationKind::CoordinateOutOfRange => "coordinate out of range",
            ViolationKind::ColorOutOfRange => "color out of range",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub point: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.point {
            Some(i) => write!(f, "point {i}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Result of [`PointCloud::validate`]: the first violations found plus the
/// total count.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub total: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.total == 0
    }

    fn push(&mut self, point: Option<usize>, kind: ViolationKind) {
        if self.violations.len() < MAX_REPORTED_VIOLATIONS {
            self.violations.push(Violation { point, kind });
        }
        self.total += 1;
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        write!(f, "{} violation(s)", self.total)?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.points.is_empty() {
            report.push(None, ViolationKind::Empty);
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.features().iter().any(|v| !v.is_finite()) {
                report.push(Some(i), ViolationKind::NonFinite);
                continue;
            }
            if !p.pos.iter().copied().all(in_unit) {
                report.push(Some(i), ViolationKind::CoordinateOutOfRange);
            }
            if !p.color.iter().copied().all(in_unit) {
                report.push(Some(i), ViolationKind::ColorOutOfRange);
            }
        }
        report
    }

    /// Min-max rescales each coordinate axis independently to `[0, 1]`.
    /// A constant axis maps to 0.5. Colors are untouched.
    ///
    /// An axis whose span is below [`CONSTANT_AXIS_RTOL`] relative to its
    /// magnitude counts as constant, so rounding residue (e.g. `sin(pi)`) is
    /// not blown up to the full unit range.
    pub fn renormalize(&self) -> PointCloud {
        let mut out = self.clone();
        for axis in 0..3 {
            let (lo, hi) = self
                .points
                .iter()
                .map(|p| p.pos[axis])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            let span = hi - lo;
            let constant = !(span > CONSTANT_AXIS_RTOL * lo.abs().max(hi.abs()));
            for p in &mut out.points {
                p.pos[axis] = if !constant {
                    (p.pos[axis] - lo) / span
                } else {
                    0.5
                };
            }
        }
        out
    }
}
