//! Continuous semiflows on box charts.
//!
//! Three constructions are provided: closed-form maps, fixed-step RK4
//! integration of a vector field, and the Crandall–Liggett exponential formula
//! `φ_t(x) = lim_k (Id + (t/k) A)^{-k} x` for an accretive relation `A` given by
//! its resolvent.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::report::{DetailRow, ResidualReport};
use crate::state::{from_compact, to_compact, CompactSample, DomainChart, StatePoint};

pub type FlowMap = dyn Fn(f64, &StatePoint) -> Result<StatePoint> + Send + Sync;
pub type VectorField = dyn Fn(&StatePoint) -> Vec<f64> + Send + Sync;
pub type Resolvent = dyn Fn(f64, &StatePoint) -> Result<StatePoint> + Send + Sync;

/// How a flow is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    ClosedForm,
    Ode,
    CrandallLiggett,
}

/// Estimated accuracy of a flow evaluation.
///
/// `order` is the local order of the scheme (`None` for exact or iterative
/// evaluation); `error` is the estimated absolute error of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub order: Option<u32>,
    pub error: f64,
}

impl Accuracy {
    pub const EXACT: Accuracy = Accuracy {
        order: None,
        error: 0.0,
    };
}

/// Default tolerance for points that leave the chart by rounding.
pub const DEFAULT_MARGIN: f64 = 1e-9;

/// A semiflow `(t, x) ↦ φ_t(x)` on a chart.
///
/// Immutable after construction; evaluation is pure and may be called from
/// many threads.
#[derive(Clone)]
pub struct Semiflow {
    chart: DomainChart,
    map: Arc<FlowMap>,
    accuracy: Accuracy,
    kind: FlowKind,
    label: String,
    margin: f64,
}

impl fmt::Debug for Semiflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Semiflow")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("chart", &self.chart)
            .field("accuracy", &self.accuracy)
            .finish()
    }
}

impl Semiflow {
    /// Wraps an arbitrary evaluation map. The map is trusted to be a semiflow;
    /// use [`check_semiflow_laws`] to test that claim.
    pub fn new<F>(
        label: impl Into<String>,
        chart: DomainChart,
        kind: FlowKind,
        accuracy: Accuracy,
        map: F,
    ) -> Self
    where
        F: Fn(f64, &StatePoint) -> Result<StatePoint> + Send + Sync + 'static,
    {
        Self {
            chart,
            map: Arc::new(map),
            accuracy,
            kind,
            label: label.into(),
            margin: DEFAULT_MARGIN,
        }
    }

    /// Closed-form flow from an infallible map.
    pub fn closed_form<F>(label: impl Into<String>, chart: DomainChart, map: F) -> Self
    where
        F: Fn(f64, &StatePoint) -> StatePoint + Send + Sync + 'static,
    {
        Self::new(
            label,
            chart,
            FlowKind::ClosedForm,
            Accuracy::EXACT,
            move |t, x| Ok(map(t, x)),
        )
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn chart(&self) -> &DomainChart {
        &self.chart
    }

    pub fn accuracy(&self) -> Accuracy {
        self.accuracy
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// `φ_t(x)`. `t = 0` returns `x` unchanged for every kind of flow.
    pub fn evaluate(&self, t: f64, x: &StatePoint) -> Result<StatePoint> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(LabError::InvalidArgument(format!(
                "flow time must be finite and >= 0, got {t}"
            )));
        }
        self.chart.check(x, self.margin)?;
        if t == 0.0 {
            return Ok(x.clone());
        }
        let y = (self.map)(t, x)?;
        self.chart.check(&y, self.margin)?;
        Ok(self.chart.clamp(y))
    }

    /// Conjugates a flow on `[0, ∞)^d` by `y = x / (1 + x)` per axis, producing
    /// the flow on the one-point compactification chart `[0, 1]^d`.
    ///
    /// Points with a coordinate at `y = 1` (infinity) are fixed.
    pub fn compactified(&self) -> Result<Semiflow> {
        if self
            .chart
            .bounds()
            .iter()
            .any(|b| b.lower != 0.0 || b.upper != f64::INFINITY)
        {
            return Err(LabError::InvalidArgument(
                "compactification needs a flow on the half line [0, ∞) per axis".into(),
            ));
        }
        let inner = self.clone();
        let chart = DomainChart::compactified_half_line(self.chart.dimension());
        Ok(Semiflow {
            chart,
            map: Arc::new(move |t, y| {
                if y.coords().iter().any(|&v| v >= 1.0) {
                    return Ok(y.clone());
                }
                let x = StatePoint::new(y.coords().iter().map(|&v| from_compact(v)).collect())?;
                let xt = inner.evaluate(t, &x)?;
                Ok(StatePoint::from_vec_unchecked(
                    xt.coords().iter().map(|&v| to_compact(v)).collect(),
                ))
            }),
            accuracy: self.accuracy,
            kind: self.kind,
            label: format!("compactified {}", self.label),
            margin: self.margin,
        })
    }
}

/// `φ_t(x) = x + t` on `[0, ∞)`.
pub fn make_translation_flow() -> Semiflow {
    Semiflow::closed_form("translation", DomainChart::half_line(), |t, x| {
        StatePoint::from_vec_unchecked(vec![x.x() + t])
    })
}

/// Translation on the one-point compactification `[0, ∞]`, in the chart `y = x / (1 + x)`.
pub fn make_compactified_translation_flow() -> Semiflow {
    make_translation_flow()
        .compactified()
        .expect("translation lives on the half line")
}

/// Rigid rotation of the plane with angular speed `omega`, on the box `[-radius, radius]^2`.
///
/// Only points of the disc of that radius stay inside the chart for all times.
pub fn make_rotation_flow(omega: f64, radius: f64) -> Result<Semiflow> {
    let chart = DomainChart::new(vec![(-radius, radius), (-radius, radius)])?;
    Ok(Semiflow::closed_form("rotation", chart, move |t, x| {
        let (s, c) = (omega * t).sin_cos();
        let (a, b) = (x.coords()[0], x.coords()[1]);
        StatePoint::from_vec_unchecked(vec![c * a - s * b, s * a + c * b])
    }))
}

/// Flow of `x' = v(x)` by classical fixed-step RK4 with a final partial step.
pub fn make_ode_flow<V>(vector_field: V, chart: DomainChart, step: f64) -> Result<Semiflow>
where
    V: Fn(&StatePoint) -> Vec<f64> + Send + Sync + 'static,
{
    make_ode_flow_with_margin(vector_field, chart, step, DEFAULT_MARGIN)
}

/// As [`make_ode_flow`], with an explicit domain-exit margin.
pub fn make_ode_flow_with_margin<V>(
    vector_field: V,
    chart: DomainChart,
    step: f64,
    margin: f64,
) -> Result<Semiflow>
where
    V: Fn(&StatePoint) -> Vec<f64> + Send + Sync + 'static,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(LabError::InvalidArgument(format!(
            "ODE step must be > 0, got {step}"
        )));
    }
    let field: Arc<VectorField> = Arc::new(vector_field);
    let integrate_chart = chart.clone();
    let accuracy = Accuracy {
        order: Some(4),
        error: step.powi(4),
    };
    let flow = Semiflow::new("ode", chart, FlowKind::Ode, accuracy, move |t, x| {
        rk4_integrate(&*field, &integrate_chart, margin, step, t, x)
    });
    Ok(flow.with_margin(margin))
}

fn rk4_integrate(
    field: &VectorField,
    chart: &DomainChart,
    margin: f64,
    step: f64,
    t: f64,
    x: &StatePoint,
) -> Result<StatePoint> {
    let dim = x.dim();
    let eval = |y: &[f64]| -> Result<Vec<f64>> {
        let v = field(&StatePoint::from_vec_unchecked(y.to_vec()));
        if v.len() != dim {
            return Err(LabError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        Ok(v)
    };
    let axpy = |y: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        y.iter().zip(k).map(|(yi, ki)| yi + a * ki).collect()
    };

    let full_steps = (t / step).floor() as u64;
    let remainder = t - full_steps as f64 * step;
    let mut y = x.coords().to_vec();
    let advance = |y: &mut Vec<f64>, h: f64| -> Result<()> {
        let k1 = eval(y)?;
        let k2 = eval(&axpy(y, 0.5 * h, &k1))?;
        let k3 = eval(&axpy(y, 0.5 * h, &k2))?;
        let k4 = eval(&axpy(y, h, &k3))?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let p = StatePoint::from_vec_unchecked(std::mem::take(y));
        chart.check(&p, margin)?;
        *y = chart.clamp(p).into_coords();
        Ok(())
    };
    for _ in 0..full_steps {
        advance(&mut y, step)?;
    }
    // A remainder below rounding level of t is dropped rather than integrated.
    if remainder > 1e-12 * step {
        advance(&mut y, remainder)?;
    }
    Ok(StatePoint::from_vec_unchecked(y))
}

/// An accretive relation `A` given through its resolvent `λ ↦ (Id + λA)^{-1}`.
#[derive(Clone)]
pub struct AccretiveRelation {
    resolvent: Arc<Resolvent>,
    lipschitz_claim: f64,
    domain_closure: DomainChart,
}

impl fmt::Debug for AccretiveRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccretiveRelation")
            .field("lipschitz_claim", &self.lipschitz_claim)
            .field("domain_closure", &self.domain_closure)
            .finish()
    }
}

/// Deterministic sample used for the sampled Lipschitz check of a resolvent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSampling {
    /// Points per axis of the sample grid.
    pub points: usize,
    pub lambdas: Vec<f64>,
    /// Half-width used in place of infinite chart ends.
    pub window: f64,
}

impl Default for LipschitzSampling {
    fn default() -> Self {
        Self {
            points: 16,
            lambdas: vec![1e-3, 1e-2, 1e-1],
            window: 10.0,
        }
    }
}

impl AccretiveRelation {
    pub fn new<R>(resolvent: R, lipschitz_claim: f64, domain_closure: DomainChart) -> Self
    where
        R: Fn(f64, &StatePoint) -> Result<StatePoint> + Send + Sync + 'static,
    {
        Self {
            resolvent: Arc::new(resolvent),
            lipschitz_claim,
            domain_closure,
        }
    }

    /// `A x = a x` on the real line: resolvent `x / (1 + λa)`.
    pub fn linear(rate: f64) -> Self {
        Self::new(
            move |lambda, x| {
                Ok(StatePoint::from_vec_unchecked(
                    x.coords()
                        .iter()
                        .map(|v| v / (1.0 + lambda * rate))
                        .collect(),
                ))
            },
            1.0,
            DomainChart::real_line(),
        )
    }

    pub fn lipschitz_claim(&self) -> f64 {
        self.lipschitz_claim
    }

    pub fn domain_closure(&self) -> &DomainChart {
        &self.domain_closure
    }

    pub fn resolvent(&self, lambda: f64, x: &StatePoint) -> Result<StatePoint> {
        if !(lambda > 0.0) {
            return Err(LabError::InvalidArgument(format!(
                "resolvent parameter must be > 0, got {lambda}"
            )));
        }
        (self.resolvent)(lambda, x)
    }

    /// Largest sampled ratio `‖J_λ x − J_λ y‖ / ‖x − y‖`.
    pub fn sampled_lipschitz(&self, sampling: &LipschitzSampling) -> Result<f64> {
        let window = self.domain_closure.finite_window(sampling.window);
        let sample = CompactSample::grid(&window, sampling.points.max(2))?;
        let pts = sample.points();
        let mut worst: f64 = 0.0;
        for &lambda in &sampling.lambdas {
            let images = pts
                .iter()
                .map(|p| self.resolvent(lambda, p))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let d = pts[i].distance(&pts[j]);
                    if d > 0.0 {
                        worst = worst.max(images[i].distance(&images[j]) / d);
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Precondition error when the sampled ratio exceeds the claimed constant.
    pub fn check_lipschitz(&self, sampling: &LipschitzSampling) -> Result<f64> {
        let ratio = self.sampled_lipschitz(sampling)?;
        if ratio > self.lipschitz_claim * (1.0 + 1e-9) + 1e-12 {
            return Err(LabError::Precondition(format!(
                "resolvent is not {}-Lipschitz on samples (observed ratio {ratio})",
                self.lipschitz_claim
            )));
        }
        Ok(ratio)
    }
}

/// `(Id + (t/k) A)^{-k} x`: `k` resolvent steps of size `t/k`.
pub fn crandall_liggett_evolve(
    rel: &AccretiveRelation,
    t: f64,
    x: &StatePoint,
    k: usize,
) -> Result<StatePoint> {
    if k == 0 {
        return Err(LabError::InvalidArgument(
            "iteration count k must be >= 1".into(),
        ));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LabError::InvalidArgument(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    let lambda = t / k as f64;
    (0..k).try_fold(x.clone(), |y, _| rel.resolvent(lambda, &y))
}

/// First iteration count tried by [`crandall_liggett_flow`].
pub const CL_START_K: usize = 8;

/// Semiflow evaluating the exponential formula by doubling `k` from 8 until
/// successive iterates differ by less than `tol`.
pub fn crandall_liggett_flow(rel: AccretiveRelation, tol: f64, k_max: usize) -> Result<Semiflow> {
    crandall_liggett_flow_with(rel, tol, k_max, &LipschitzSampling::default())
}

pub fn crandall_liggett_flow_with(
    rel: AccretiveRelation,
    tol: f64,
    k_max: usize,
    sampling: &LipschitzSampling,
) -> Result<Semiflow> {
    if !(tol > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "tol must be > 0, got {tol}"
        )));
    }
    if k_max < CL_START_K {
        return Err(LabError::InvalidArgument(format!(
            "k_max must be at least {CL_START_K}, got {k_max}"
        )));
    }
    rel.check_lipschitz(sampling)?;
    let chart = rel.domain_closure.clone();
    let accuracy = Accuracy {
        order: None,
        error: tol,
    };
    Ok(Semiflow::new(
        "crandall-liggett",
        chart,
        FlowKind::CrandallLiggett,
        accuracy,
        move |t, x| {
            let mut k = CL_START_K;
            let mut prev = crandall_liggett_evolve(&rel, t, x, k)?;
            let mut residual = f64::INFINITY;
            while 2 * k <= k_max {
                k *= 2;
                let next = crandall_liggett_evolve(&rel, t, x, k)?;
                residual = next.distance(&prev);
                if residual < tol {
                    return Ok(next);
                }
                prev = next;
            }
            Err(LabError::NonConvergence {
                iterations: k,
                residual,
                tol,
            })
        },
    ))
}

/// Identity and semigroup-law residuals of a flow on a grid.
///
/// Checks `‖φ_0(x) − x‖` and `‖φ_s(φ_t(x)) − φ_{s+t}(x)‖` for all pairs `(s, t)` of `times`.
pub fn check_semiflow_laws(
    flow: &Semiflow,
    grid: &CompactSample,
    times: &[f64],
    tol: f64,
) -> Result<ResidualReport> {
    grid.check_in(flow.chart(), flow.margin())?;
    let mut report = ResidualReport::new("semiflow-laws");

    let identity: Vec<(StatePoint, f64)> = grid
        .points()
        .par_iter()
        .map(|x| flow.evaluate(0.0, x).map(|y| (x.clone(), y.distance(x))))
        .collect::<Result<_>>()?;
    let mut id_max: f64 = 0.0;
    for (x, r) in identity {
        id_max = id_max.max(r);
        report.detail(DetailRow {
            check: "identity".into(),
            witness_f: flow.label().into(),
            witness_g: "t=0".into(),
            point: x.coords().to_vec(),
            value: 0.0,
            residual: r,
        });
    }

    let pairs: Vec<(f64, f64)> = times
        .iter()
        .flat_map(|&s| times.iter().map(move |&t| (s, t)))
        .collect();
    let rows: Vec<Vec<DetailRow>> = grid
        .points()
        .par_iter()
        .map(|x| {
            pairs
                .iter()
                .map(|&(s, t)| {
                    let composed = flow.evaluate(s, &flow.evaluate(t, x)?)?;
                    let direct = flow.evaluate(s + t, x)?;
                    Ok(DetailRow {
                        check: "semigroup".into(),
                        witness_f: flow.label().into(),
                        witness_g: format!("s={s},t={t}"),
                        point: x.coords().to_vec(),
                        value: direct.coords()[0],
                        residual: composed.distance(&direct),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut sg_max: f64 = 0.0;
    for row in rows.into_iter().flatten() {
        sg_max = sg_max.max(row.residual);
        report.detail(row);
    }
    if times.is_empty() {
        report.warn("no times given; semigroup law checked vacuously");
    }
    report.check("identity", id_max, tol);
    report.check("semigroup", sg_max, tol);
    Ok(report)
}

/// Largest displacement ratios under perturbations in state and in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub probe_radius: f64,
    /// `max ‖φ_t(x + δe_i) − φ_t(x)‖ / δ`.
    pub max_ratio_x: f64,
    /// `max ‖φ_{t+δ}(x) − φ_t(x)‖ / δ`.
    pub max_ratio_t: f64,
    pub samples: usize,
}

/// Numerical continuity diagnostic for `(t, x) ↦ φ_t(x)`. Perturbed points
/// outside the chart are skipped.
pub fn continuity_modulus(
    flow: &Semiflow,
    grid: &CompactSample,
    times: &[f64],
    probe_radius: f64,
) -> Result<ContinuityReport> {
    if !(probe_radius > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "probe radius must be > 0, got {probe_radius}"
        )));
    }
    grid.check_in(flow.chart(), flow.margin())?;
    let per_point: Vec<(f64, f64, usize)> = grid
        .points()
        .par_iter()
        .map(|x| {
            let (mut rx, mut rt, mut n) = (0.0_f64, 0.0_f64, 0usize);
            for &t in times {
                let base = flow.evaluate(t, x)?;
                for axis in 0..x.dim() {
                    for sign in [-1.0, 1.0] {
                        let xp = x.shifted(axis, sign * probe_radius);
                        if !flow.chart().contains(&xp, 0.0) {
                            continue;
                        }
                        let moved = flow.evaluate(t, &xp)?;
                        rx = rx.max(moved.distance(&base) / probe_radius);
                        n += 1;
                    }
                }
                let later = flow.evaluate(t + probe_radius, x)?;
                rt = rt.max(later.distance(&base) / probe_radius);
                n += 1;
            }
            Ok((rx, rt, n))
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().fold(
        ContinuityReport {
            probe_radius,
            max_ratio_x: 0.0,
            max_ratio_t: 0.0,
            samples: 0,
        },
        |acc, (rx, rt, n)| ContinuityReport {
            max_ratio_x: acc.max_ratio_x.max(rx),
            max_ratio_t: acc.max_ratio_t.max(rt),
            samples: acc.samples + n,
            ..acc
        },
    ))
}
