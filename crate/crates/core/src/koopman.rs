//! The Koopman semigroup `T(t)f = f ∘ φ_t`, its generator, resolvent and
//! adjoint action on atomic measures.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::observables::{pair, AtomicMeasure, Observable};
use crate::report::{DetailRow, ResidualReport};
use crate::semiflow::Semiflow;
use crate::state::{CompactSample, StatePoint};

/// `T_φ(t)` for a fixed flow and time.
#[derive(Debug, Clone)]
pub struct KoopmanOperator {
    flow: Semiflow,
    t: f64,
}

impl KoopmanOperator {
    pub fn new(flow: Semiflow, t: f64) -> Result<Self> {
        check_time(t)?;
        Ok(Self { flow, t })
    }

    pub fn flow(&self) -> &Semiflow {
        &self.flow
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn apply(&self, f: &Observable) -> Observable {
        compose(&self.flow, self.t, f)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LabError::InvalidArgument(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    Ok(())
}

fn compose(flow: &Semiflow, t: f64, f: &Observable) -> Observable {
    let flow = flow.clone();
    let inner = f.clone();
    Observable::new(format!("T({t}){}", f.label()), f.bound(), move |x| {
        inner.eval(&flow.evaluate(t, x)?)
    })
}

/// `x ↦ f(φ_t(x))`. The bound is inherited from `f`.
pub fn koopman_apply(flow: &Semiflow, t: f64, f: &Observable) -> Result<Observable> {
    check_time(t)?;
    Ok(compose(flow, t, f))
}

/// Residual of `T(s)T(t)f = T(s+t)f` on a grid.
pub fn semigroup_property_check(
    flow: &Semiflow,
    f: &Observable,
    s: f64,
    t: f64,
    grid: &CompactSample,
    tol: f64,
) -> Result<ResidualReport> {
    let composed = koopman_apply(flow, s, &koopman_apply(flow, t, f)?)?;
    let direct = koopman_apply(flow, s + t, f)?;
    let mut report = ResidualReport::new("koopman-semigroup");
    let mut worst: f64 = 0.0;
    for x in grid.points() {
        let a = composed.eval(x)?;
        let b = direct.eval(x)?;
        let r = (a - b).norm();
        worst = worst.max(r);
        report.detail(DetailRow {
            check: "semigroup".into(),
            witness_f: f.label().into(),
            witness_g: format!("s={s},t={t}"),
            point: x.coords().to_vec(),
            value: b.re,
            residual: r,
        });
    }
    report.check("semigroup", worst, tol);
    Ok(report)
}

/// A generator value together with the step and error estimate that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEstimate {
    pub value: Complex64,
    pub h: f64,
    /// Order of the extrapolated difference quotient.
    pub order: u32,
    /// `|D(h/2) − D(h)|` for the forward quotients `D`.
    pub error_estimate: f64,
}

/// Right derivative at 0 of `s ↦ g(s)`: forward quotients at `h` and `h/2`
/// combined by one Richardson step, `2 D(h/2) − D(h)`.
pub fn right_derivative<G>(g: G, h: f64) -> Result<GeneratorEstimate>
where
    G: Fn(f64) -> Result<Complex64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(LabError::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    let g0 = g(0.0)?;
    let coarse = (g(h)? - g0) / h;
    let fine = (g(0.5 * h)? - g0) / (0.5 * h);
    Ok(GeneratorEstimate {
        value: 2.0 * fine - coarse,
        h,
        order: 2,
        error_estimate: (fine - coarse).norm(),
    })
}

/// Estimate of `(δ_φ f)(x) = lim_{t↓0} (f(φ_t(x)) − f(x)) / t`.
///
/// Smoothness of `f` along the orbit through `x` is assumed, not checked.
pub fn generator_fd(
    flow: &Semiflow,
    f: &Observable,
    x: &StatePoint,
    h: f64,
) -> Result<GeneratorEstimate> {
    right_derivative(|s| f.eval(&flow.evaluate(s, x)?), h)
}

/// The observable `x ↦ generator_fd(flow, f, x, h).value`, evaluated lazily.
/// No sup bound is claimed.
pub fn generator_observable(flow: &Semiflow, f: &Observable, h: f64) -> Observable {
    let (flow, f_inner) = (flow.clone(), f.clone());
    Observable::new(format!("delta({})", f.label()), f64::INFINITY, move |x| {
        Ok(generator_fd(&flow, &f_inner, x, h)?.value)
    })
}

/// Gridwise generator values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGenerator {
    pub points: Vec<StatePoint>,
    pub values: Vec<Complex64>,
    pub error_estimates: Vec<f64>,
    pub worst_error: f64,
    pub h: f64,
}

pub fn generator_on_grid(
    flow: &Semiflow,
    f: &Observable,
    grid: &CompactSample,
    h: f64,
) -> Result<GridGenerator> {
    let estimates: Vec<GeneratorEstimate> = grid
        .points()
        .par_iter()
        .map(|x| generator_fd(flow, f, x, h))
        .collect::<Result<_>>()?;
    Ok(GridGenerator {
        points: grid.points().to_vec(),
        values: estimates.iter().map(|e| e.value).collect(),
        error_estimates: estimates.iter().map(|e| e.error_estimate).collect(),
        worst_error: estimates
            .iter()
            .map(|e| e.error_estimate)
            .fold(0.0, f64::max),
        h,
    })
}

/// `∫_a^b` by composite Simpson over `values` sampled at `2·panels + 1` equispaced nodes.
pub fn simpson(values: &[Complex64], a: f64, b: f64) -> Complex64 {
    let intervals = values.len() - 1;
    debug_assert!(intervals >= 2 && intervals.is_multiple_of(2));
    let h = (b - a) / intervals as f64;
    let mut acc = values[0] + values[intervals];
    for (i, v) in values.iter().enumerate().take(intervals).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * (h / 3.0)
}

/// Truncated Laplace transform of the Koopman orbit of an observable.
#[derive(Debug, Clone)]
pub struct ResolventResult {
    /// `x ↦ ∫_0^{T_max} e^{−νt} f(φ_t(x)) dt`, Simpson with `n_quad` panels.
    pub observable: Observable,
    pub nu: f64,
    pub t_max: f64,
    pub n_quad: usize,
    /// `‖f‖·e^{−ν T_max} / ν`.
    pub truncation_error: f64,
    flow: Semiflow,
    f: Observable,
}

impl ResolventResult {
    /// Quadrature error estimate at one point from the `n_quad` and `2·n_quad`
    /// panel rules: `2·|S_n(x) − S_{2n}(x)|`. The error of `S_n` is asymptotically
    /// `(16/15)·|S_n − S_{2n}|`, so this covers it once the rule is in its asymptotic regime.
    pub fn quad_error_at(&self, x: &StatePoint) -> Result<f64> {
        let coarse = laplace_simpson(&self.flow, &self.f, self.nu, self.t_max, self.n_quad, x)?;
        let fine = laplace_simpson(&self.flow, &self.f, self.nu, self.t_max, 2 * self.n_quad, x)?;
        Ok(2.0 * (coarse - fine).norm())
    }

    /// Largest quadrature error estimate over a grid.
    pub fn quad_error(&self, grid: &CompactSample) -> Result<f64> {
        let errs: Vec<f64> = grid
            .points()
            .par_iter()
            .map(|x| self.quad_error_at(x))
            .collect::<Result<_>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    }
}

fn laplace_simpson(
    flow: &Semiflow,
    f: &Observable,
    nu: f64,
    t_max: f64,
    panels: usize,
    x: &StatePoint,
) -> Result<Complex64> {
    let nodes = 2 * panels;
    let dt = t_max / nodes as f64;
    let mut values = Vec::with_capacity(nodes + 1);
    let mut state = x.clone();
    for j in 0..=nodes {
        if j > 0 {
            // March along the orbit: φ_{t_j} = φ_dt ∘ φ_{t_{j-1}}.
            state = flow.evaluate(dt, &state)?;
        }
        let t = j as f64 * dt;
        values.push((-nu * t).exp() * f.eval(&state)?);
    }
    Ok(simpson(&values, 0.0, t_max))
}

/// `(ν − δ_φ)^{-1} f` through the truncated Laplace transform of `t ↦ T(t)f`.
pub fn resolvent_laplace(
    flow: &Semiflow,
    f: &Observable,
    nu: f64,
    t_max: f64,
    n_quad: usize,
) -> Result<ResolventResult> {
    if !(nu > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "nu must be > 0, got {nu}"
        )));
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(LabError::InvalidArgument(format!(
            "T_max must be > 0, got {t_max}"
        )));
    }
    if n_quad == 0 {
        return Err(LabError::InvalidArgument("n_quad must be >= 1".into()));
    }
    let (flow_c, f_c) = (flow.clone(), f.clone());
    let observable = Observable::new(format!("R({nu}){}", f.label()), f.bound() / nu, move |x| {
        laplace_simpson(&flow_c, &f_c, nu, t_max, n_quad, x)
    });
    Ok(ResolventResult {
        observable,
        nu,
        t_max,
        n_quad,
        truncation_error: f.bound() * (-nu * t_max).exp() / nu,
        flow: flow.clone(),
        f: f.clone(),
    })
}

/// Residual of `ν u − δ u = f` with `u` the Laplace resolvent of `f`.
#[allow(clippy::too_many_arguments)]
pub fn check_resolvent_identity(
    flow: &Semiflow,
    f: &Observable,
    nu: f64,
    t_max: f64,
    n_quad: usize,
    grid: &CompactSample,
    h: f64,
    tol: f64,
) -> Result<ResidualReport> {
    let resolvent = resolvent_laplace(flow, f, nu, t_max, n_quad)?;
    let u = &resolvent.observable;
    let rows: Vec<(StatePoint, Complex64, f64)> = grid
        .points()
        .par_iter()
        .map(|x| {
            let ux = u.eval(x)?;
            let du = generator_fd(flow, u, x, h)?.value;
            let r = (nu * ux - du - f.eval(x)?).norm();
            Ok((x.clone(), ux, r))
        })
        .collect::<Result<_>>()?;
    let mut report = ResidualReport::new("resolvent-identity");
    let mut worst: f64 = 0.0;
    for (x, ux, r) in rows {
        worst = worst.max(r);
        report.detail(DetailRow {
            check: "identity".into(),
            witness_f: f.label().into(),
            witness_g: format!("nu={nu}"),
            point: x.into_coords(),
            value: ux.re,
            residual: r,
        });
    }
    report.check("identity", worst, tol);
    report.push_check("truncation-bound", resolvent.truncation_error, tol, true);
    Ok(report)
}

/// Pushforward of the atoms along `φ_t`: the adjoint `T(t)′` on atomic measures.
pub fn adjoint_apply(flow: &Semiflow, t: f64, mu: &AtomicMeasure) -> Result<AtomicMeasure> {
    check_time(t)?;
    mu.pushforward(|x| flow.evaluate(t, x))
}

/// Estimate of `⟨f, δ′μ⟩` as the right derivative of `t ↦ ⟨f, T(t)′μ⟩` at 0.
pub fn adjoint_generator_pair(
    flow: &Semiflow,
    f: &Observable,
    mu: &AtomicMeasure,
    h: f64,
) -> Result<GeneratorEstimate> {
    right_derivative(|s| pair(f, &adjoint_apply(flow, s, mu)?), h)
}

/// `p_K(T(t)f)` and `p_L(f)` with `L = φ_t(K)` the forward image sample.
///
/// For a composition operator the two agree; a true equicontinuity check would
/// need images of the compact sets themselves, which finite samples do not give.
pub fn image_seminorms(
    flow: &Semiflow,
    t: f64,
    f: &Observable,
    k: &CompactSample,
) -> Result<(f64, f64)> {
    let tf = koopman_apply(flow, t, f)?;
    let lhs = tf.sup_on(k)?;
    let image = k
        .points()
        .iter()
        .map(|x| flow.evaluate(t, x))
        .collect::<Result<Vec<_>>>()?;
    let l = CompactSample::new(image, k.mesh())?;
    Ok((lhs, f.sup_on(&l)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelVerdict {
    /// Generator vanishes and the orbit is stationary.
    Fixed,
    /// Neither vanishes.
    NonFixed,
    /// Exactly one side vanishes.
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub report: ResidualReport,
    pub generator_max: f64,
    pub orbit_max: f64,
    pub generator_vanishes: bool,
    pub orbit_fixed: bool,
    pub verdict: KernelVerdict,
}

/// Sampled form of `ker δ = ⋂_t ker(Id − T(t))`.
///
/// With `G = max |δ̂f|` on the grid and `F = max |T(t)f − f|` over times and grid,
/// checks `G < tol ⇒ F < tol·(1 + max t)` and `F < tol ⇒ G < tol·(1 + max t)`.
pub fn kernel_fixed_check(
    flow: &Semiflow,
    f: &Observable,
    times: &[f64],
    grid: &CompactSample,
    h: f64,
    tol: f64,
) -> Result<KernelReport> {
    let gen = generator_on_grid(flow, f, grid, h)?;
    let generator_max = gen.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut orbit_max: f64 = 0.0;
    for &t in times {
        let tf = koopman_apply(flow, t, f)?;
        for x in grid.points() {
            orbit_max = orbit_max.max((tf.eval(x)? - f.eval(x)?).norm());
        }
    }
    let t_span = times.iter().copied().fold(0.0, f64::max);
    let implied_tol = tol * (1.0 + t_span);
    let generator_vanishes = generator_max < tol;
    let orbit_fixed = orbit_max < tol;

    let mut report = ResidualReport::new("kernel");
    for (x, v) in gen.points.iter().zip(&gen.values) {
        report.detail(DetailRow {
            check: "generator=>orbit".into(),
            witness_f: f.label().into(),
            witness_g: String::new(),
            point: x.coords().to_vec(),
            value: v.re,
            residual: v.norm(),
        });
    }
    report.push_check(
        "generator=>orbit",
        orbit_max,
        implied_tol,
        !generator_vanishes || orbit_max < implied_tol,
    );
    report.push_check(
        "orbit=>generator",
        generator_max,
        implied_tol,
        !orbit_fixed || generator_max < implied_tol,
    );
    if times.is_empty() {
        report.warn("no times given; orbit side is vacuous");
    }
    let verdict = match (generator_vanishes, orbit_fixed) {
        (true, true) => KernelVerdict::Fixed,
        (false, false) => KernelVerdict::NonFixed,
        _ => KernelVerdict::Inconsistent,
    };
    Ok(KernelReport {
        report,
        generator_max,
        orbit_max,
        generator_vanishes,
        orbit_fixed,
        verdict,
    })
}
