//! State points, box charts and finite samples of compact sets.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A point of the state space in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatePoint(Vec<f64>);

impl StatePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(LabError::InvalidArgument(
                "state point needs at least one coordinate".into(),
            ));
        }
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LabError::NonFinite { index, value });
        }
        Ok(Self(coords))
    }

    /// One-dimensional point. Panics on a non-finite value.
    pub fn scalar(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite scalar state {x}");
        Self(vec![x])
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// First coordinate; the natural accessor for one-dimensional charts.
    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn distance(&self, other: &StatePoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Copy with `delta` added to one axis.
    pub fn shifted(&self, axis: usize, delta: f64) -> StatePoint {
        let mut c = self.0.clone();
        c[axis] += delta;
        StatePoint(c)
    }
}

impl From<f64> for StatePoint {
    fn from(x: f64) -> Self {
        StatePoint::scalar(x)
    }
}

/// Closed interval of one chart axis. Either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBounds {
    pub lower: f64,
    pub upper: f64,
}

/// A finite-dimensional box chart of the state space.
///
/// With `compactified` set, every axis carries the coordinate `y = x / (1 + x)`
/// of the half line `[0, ∞)`, so the chart is `[0, 1]` and the point at
/// infinity sits at `y = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainChart {
    bounds: Vec<AxisBounds>,
    compactified: bool,
}

impl DomainChart {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(LabError::InvalidArgument(
                "chart needs at least one axis".into(),
            ));
        }
        for (axis, &(lower, upper)) in bounds.iter().enumerate() {
            if lower.is_nan() || upper.is_nan() || lower > upper {
                return Err(LabError::InvalidArgument(format!(
                    "axis {axis}: invalid bounds [{lower}, {upper}]"
                )));
            }
        }
        Ok(Self {
            bounds: bounds
                .into_iter()
                .map(|(lower, upper)| AxisBounds { lower, upper })
                .collect(),
            compactified: false,
        })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![(lower, upper)])
    }

    pub fn half_line() -> Self {
        Self::interval(0.0, f64::INFINITY).expect("valid bounds")
    }

    pub fn real_line() -> Self {
        Self::interval(f64::NEG_INFINITY, f64::INFINITY).expect("valid bounds")
    }

    /// `[0, ∞]` per axis in the coordinate `y = x / (1 + x)`.
    pub fn compactified_half_line(dimension: usize) -> Self {
        Self {
            bounds: vec![
                AxisBounds {
                    lower: 0.0,
                    upper: 1.0
                };
                dimension.max(1)
            ],
            compactified: true,
        }
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[AxisBounds] {
        &self.bounds
    }

    pub fn is_compactified(&self) -> bool {
        self.compactified
    }

    pub fn contains(&self, x: &StatePoint, margin: f64) -> bool {
        self.check(x, margin).is_ok()
    }

    /// Domain-exit error for the first axis that is out of bounds by more than `margin`.
    pub fn check(&self, x: &StatePoint, margin: f64) -> Result<()> {
        if x.dim() != self.dimension() {
            return Err(LabError::DimensionMismatch {
                expected: self.dimension(),
                got: x.dim(),
            });
        }
        for (axis, (b, &v)) in self.bounds.iter().zip(x.coords()).enumerate() {
            if !v.is_finite() || v < b.lower - margin || v > b.upper + margin {
                return Err(LabError::DomainExit {
                    axis,
                    value: v,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, x: StatePoint) -> StatePoint {
        let coords =
            x.0.into_iter()
                .zip(&self.bounds)
                .map(|(v, b)| v.clamp(b.lower, b.upper))
                .collect();
        StatePoint(coords)
    }

    /// Chart bounds with infinite ends replaced by `±window` around the finite end.
    pub fn finite_window(&self, window: f64) -> Vec<(f64, f64)> {
        self.bounds
            .iter()
            .map(|b| match (b.lower.is_finite(), b.upper.is_finite()) {
                (true, true) => (b.lower, b.upper),
                (true, false) => (b.lower, b.lower + window),
                (false, true) => (b.upper - window, b.upper),
                (false, false) => (-window, window),
            })
            .collect()
    }
}

/// `x ↦ x / (1 + x)` on `[0, ∞]`, with `∞ ↦ 1`.
pub fn to_compact(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else {
        x / (1.0 + x)
    }
}

/// Inverse of [`to_compact`]; `1 ↦ ∞`.
pub fn from_compact(y: f64) -> f64 {
    if y >= 1.0 {
        f64::INFINITY
    } else {
        y / (1.0 - y)
    }
}

/// Finite point cloud standing in for a compact subset of the state space.
///
/// `mesh` is the claimed covering radius: every point of the true compact set
/// lies within `mesh` of some sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSample {
    points: Vec<StatePoint>,
    mesh: f64,
}

impl CompactSample {
    pub fn new(points: Vec<StatePoint>, mesh: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(LabError::EmptySample("compact sample has no points".into()));
        }
        if !(mesh >= 0.0) || !mesh.is_finite() {
            return Err(LabError::InvalidArgument(format!(
                "mesh must be finite and >= 0, got {mesh}"
            )));
        }
        let dim = points[0].dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(LabError::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        Ok(Self { points, mesh })
    }

    /// Scalar points with mesh 0 (an exact finite set).
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        let points = xs
            .iter()
            .map(|&x| StatePoint::new(vec![x]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, 0.0)
    }

    /// `n` equispaced points covering `[lower, upper]`; mesh is half the spacing.
    pub fn uniform(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::EmptySample("uniform sample with n = 0".into()));
        }
        if !(lower.is_finite() && upper.is_finite()) || lower > upper {
            return Err(LabError::InvalidArgument(format!(
                "uniform sample needs a finite interval, got [{lower}, {upper}]"
            )));
        }
        if n == 1 {
            let mid = 0.5 * (lower + upper);
            return Self::new(vec![StatePoint::scalar(mid)], 0.5 * (upper - lower));
        }
        let spacing = (upper - lower) / (n - 1) as f64;
        let points = (0..n)
            .map(|i| {
                let x = if i == n - 1 {
                    upper
                } else {
                    lower + i as f64 * spacing
                };
                StatePoint::scalar(x)
            })
            .collect();
        Self::new(points, 0.5 * spacing)
    }

    /// Equispaced points `lower, lower + spacing, …` up to `upper`, with mesh = spacing.
    ///
    /// This is the candidate-cloud convention: any point of the interval is
    /// within one spacing of a sample.
    pub fn with_spacing(lower: f64, upper: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(LabError::InvalidArgument(format!(
                "spacing must be > 0, got {spacing}"
            )));
        }
        let n = ((upper - lower) / spacing).round() as usize + 1;
        let mut s = Self::uniform(lower, upper, n.max(1))?;
        s.mesh = spacing;
        Ok(s)
    }

    /// Tensor grid over a box with `per_axis` points on each axis.
    pub fn grid(bounds: &[(f64, f64)], per_axis: usize) -> Result<Self> {
        if bounds.is_empty() || per_axis == 0 {
            return Err(LabError::EmptySample(
                "grid with no axes or no points".into(),
            ));
        }
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|&(a, b)| {
                Self::uniform(a, b, per_axis).map(|s| s.points.iter().map(|p| p.x()).collect())
            })
            .collect::<Result<_>>()?;
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        let mesh = bounds
            .iter()
            .map(|&(a, b)| {
                let h = if per_axis > 1 {
                    (b - a) / (per_axis - 1) as f64
                } else {
                    b - a
                };
                0.25 * h * h
            })
            .sum::<f64>()
            .sqrt();
        Self::new(points.into_iter().map(StatePoint).collect(), mesh)
    }

    pub fn points(&self) -> &[StatePoint] {
        &self.points
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn check_in(&self, chart: &DomainChart, margin: f64) -> Result<()> {
        self.points.iter().try_for_each(|p| chart.check(p, margin))
    }

    /// Distance from `x` to the nearest sample point.
    pub fn distance_to(&self, x: &StatePoint) -> f64 {
        self.points
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                d = d.max(p.distance(q));
            }
        }
        d
    }

    /// Greedy thinning: keeps a point only if it is farther than `radius` from all kept points.
    pub fn deduplicated(&self, radius: f64) -> CompactSample {
        let mut kept: Vec<StatePoint> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            if kept.iter().all(|q| q.distance(p) > radius) {
                kept.push(p.clone());
            }
        }
        CompactSample {
            points: kept,
            mesh: self.mesh,
        }
    }
}

/// Symmetric Hausdorff distance between two point clouds (max of the two max-min distances).
pub fn hausdorff(a: &CompactSample, b: &CompactSample) -> f64 {
    let directed = |from: &CompactSample, to: &CompactSample| {
        from.points()
            .iter()
            .map(|p| to.distance_to(p))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}
