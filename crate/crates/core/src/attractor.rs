//! Attractors through the closed-set / closed-ideal correspondence.
//!
//! A compact invariant set `M` is `ℬ`-attractive iff `T(t)f → 0` uniformly on
//! every `B ∈ ℬ` for each `f` in the ideal `I_M` of observables vanishing on
//! `M`. Here `M` is approximated by forward iteration of an absorbing set and
//! then validated against that decay criterion.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::observables::{alg_product, Dictionary, Observable};
use crate::report::{fmt_f64, DetailRow, ResidualReport};
use crate::semiflow::Semiflow;
use crate::state::{hausdorff, CompactSample, DomainChart, StatePoint};

/// A finite family `ℬ` of sampled subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetFamily {
    members: Vec<CompactSample>,
    label: String,
}

impl SetFamily {
    pub fn new(label: impl Into<String>, members: Vec<CompactSample>) -> Result<Self> {
        if members.is_empty() {
            return Err(LabError::EmptySample("set family has no members".into()));
        }
        Ok(Self {
            members,
            label: label.into(),
        })
    }

    pub fn single(label: impl Into<String>, member: CompactSample) -> Self {
        Self {
            members: vec![member],
            label: label.into(),
        }
    }

    pub fn members(&self) -> &[CompactSample] {
        &self.members
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Observables vanishing on a sampled closed set `M`: a finite piece of `I_M`.
#[derive(Debug, Clone)]
pub struct IdealBasis {
    pub m: CompactSample,
    pub functions: Vec<Observable>,
    pub vanish_tol: f64,
    /// Set when the basis vanishes on the whole sampled chart, i.e. `M` covers it.
    pub degenerate: bool,
}

impl IdealBasis {
    /// Largest `|f|` on `M` over all basis functions.
    pub fn max_on_m(&self) -> Result<f64> {
        self.functions
            .iter()
            .try_fold(0.0_f64, |acc, f| Ok(acc.max(f.sup_on(&self.m)?)))
    }
}

/// Default `vanish_tol` of constructed bases.
pub const VANISH_TOL: f64 = 1e-12;

fn distance_observable(m: &CompactSample, sharpness: f64) -> Observable {
    let m = m.clone();
    let mesh = m.mesh();
    Observable::real(
        format!("min(1,{sharpness}*(dist(x,M)-mesh)+)"),
        1.0,
        move |x| (sharpness * (m.distance_to(x) - mesh).max(0.0)).min(1.0),
    )
}

/// `count` functions vanishing on the mesh-neighbourhood of `M`:
/// `f_0(x) = min(1, sharpness·(dist(x, M) − mesh(M))⁺)` and `f_i = f_0 · b_i` for Gaussian bumps `b_i` spread along the chart diagonal.
pub fn ideal_basis(
    m: &CompactSample,
    chart: &DomainChart,
    count: usize,
    sharpness: f64,
) -> Result<IdealBasis> {
    if count == 0 {
        return Err(LabError::EmptyBasis);
    }
    if !(sharpness > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "sharpness must be > 0, got {sharpness}"
        )));
    }
    let window = chart.finite_window(10.0);
    let base = distance_observable(m, sharpness);
    let mut functions = vec![base.clone()];
    let width = window
        .iter()
        .map(|(a, b)| (b - a) / count as f64)
        .fold(0.0, f64::max)
        .max(1e-12);
    for i in 1..count {
        let frac = i as f64 / (count - 1).max(1) as f64;
        let center: Vec<f64> = window.iter().map(|(a, b)| a + frac * (b - a)).collect();
        let label = format!("bump{i}");
        let bump = Observable::real(label, 1.0, move |x| {
            let d2: f64 = x
                .coords()
                .iter()
                .zip(&center)
                .map(|(v, c)| (v - c) * (v - c))
                .sum();
            (-d2 / (width * width)).exp()
        });
        functions.push(alg_product(&base, &bump));
    }

    let per_axis = match window.len() {
        1 => 401,
        2 => 41,
        _ => 9,
    };
    let probe = CompactSample::grid(&window, per_axis)?;
    let probe_max = base.sup_on(&probe)?;
    let degenerate = probe_max <= 1e-12;

    let basis = IdealBasis {
        m: m.clone(),
        functions,
        vanish_tol: VANISH_TOL,
        degenerate,
    };
    let on_m = basis.max_on_m()?;
    if on_m > basis.vanish_tol {
        return Err(LabError::Precondition(format!(
            "constructed basis does not vanish on M (max {on_m})"
        )));
    }
    Ok(basis)
}

/// `max_{t, x ∈ M} dist(φ_t(x), M)`; passes iff below `tol + mesh(M)`.
pub fn check_invariance(
    flow: &Semiflow,
    m: &CompactSample,
    times: &[f64],
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::new("invariance");
    let mut worst: f64 = 0.0;
    for &t in times {
        for x in m.points() {
            let y = flow.evaluate(t, x)?;
            let d = m.distance_to(&y);
            worst = worst.max(d);
            report.detail(DetailRow {
                check: "invariance".into(),
                witness_f: format!("t={t}"),
                witness_g: String::new(),
                point: x.coords().to_vec(),
                value: y.coords()[0],
                residual: d,
            });
        }
    }
    if times.is_empty() {
        report.warn("no times given; invariance holds vacuously");
    }
    report.check("invariance", worst, tol + m.mesh());
    Ok(report)
}

/// `max |f(φ_t(x))|` over basis functions, times and `x ∈ M`; passes iff below `tol`.
pub fn check_ideal_invariance(
    flow: &Semiflow,
    basis: &IdealBasis,
    times: &[f64],
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::new("ideal-invariance");
    let mut worst: f64 = 0.0;
    for &t in times {
        for x in basis.m.points() {
            let y = flow.evaluate(t, x)?;
            for f in &basis.functions {
                let v = f.eval(&y)?.norm();
                worst = worst.max(v);
                report.detail(DetailRow {
                    check: "ideal-invariance".into(),
                    witness_f: f.label().into(),
                    witness_g: format!("t={t}"),
                    point: x.coords().to_vec(),
                    value: v,
                    residual: v,
                });
            }
        }
    }
    if times.is_empty() {
        report.warn("no times given; ideal invariance holds vacuously");
    }
    report.check("ideal-invariance", worst, tol);
    Ok(report)
}

fn check_increasing(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(LabError::InvalidArgument("empty time grid".into()));
    }
    if t_grid[0] < 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::InvalidArgument(
            "time grid must be nonnegative and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `orbits[i][k] = φ_{t_k}(x_i)`, marching along the grid.
fn orbits(flow: &Semiflow, points: &[StatePoint], t_grid: &[f64]) -> Result<Vec<Vec<StatePoint>>> {
    points
        .par_iter()
        .map(|x| {
            let mut out = Vec::with_capacity(t_grid.len());
            let mut state = flow.evaluate(t_grid[0], x)?;
            out.push(state.clone());
            for w in t_grid.windows(2) {
                state = flow.evaluate(w[1] - w[0], &state)?;
                out.push(state.clone());
            }
            Ok(out)
        })
        .collect()
}

/// `d(t) = max_{x ∈ B} |f(φ_t(x))|` on the time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub member: usize,
    pub function: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DecayCurve {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("time grid is nonempty")
    }
}

type MemberOrbits = Vec<Vec<Vec<StatePoint>>>;

fn member_orbits(flow: &Semiflow, family: &SetFamily, t_grid: &[f64]) -> Result<MemberOrbits> {
    check_increasing(t_grid)?;
    family
        .members()
        .iter()
        .map(|b| orbits(flow, b.points(), t_grid))
        .collect()
}

fn curves_from(
    orbs: &MemberOrbits,
    functions: &[Observable],
    t_grid: &[f64],
) -> Result<Vec<DecayCurve>> {
    let mut curves = Vec::new();
    for (b_idx, member) in orbs.iter().enumerate() {
        for f in functions {
            let mut values = vec![0.0_f64; t_grid.len()];
            for orbit in member {
                for (k, y) in orbit.iter().enumerate() {
                    values[k] = values[k].max(f.eval(y)?.norm());
                }
            }
            curves.push(DecayCurve {
                member: b_idx,
                function: f.label().into(),
                times: t_grid.to_vec(),
                values,
            });
        }
    }
    Ok(curves)
}

/// Decay curves of several observables over every member of a family.
pub fn decay_curves(
    flow: &Semiflow,
    family: &SetFamily,
    functions: &[Observable],
    t_grid: &[f64],
) -> Result<Vec<DecayCurve>> {
    curves_from(&member_orbits(flow, family, t_grid)?, functions, t_grid)
}

/// Spot check of the family hypothesis: every `φ_t(B)` lies within some member.
fn family_closure_warnings(
    family: &SetFamily,
    orbs: &MemberOrbits,
    t_grid: &[f64],
    tol: f64,
) -> Vec<String> {
    let mut warnings = Vec::new();
    for (b_idx, member) in orbs.iter().enumerate() {
        for (k, &t) in t_grid.iter().enumerate() {
            let covered = family.members().iter().any(|c| {
                member
                    .iter()
                    .all(|orbit| c.distance_to(&orbit[k]) <= c.mesh() + tol)
            });
            if !covered {
                warnings.push(format!(
                    "family hypothesis: image of member {b_idx} at t={t} lies in no member"
                ));
                break;
            }
        }
    }
    warnings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractivityReport {
    pub report: ResidualReport,
    pub curves: Vec<DecayCurve>,
}

/// `ℬ`-attractivity of `basis.m` through uniform decay of the ideal basis on
/// each member; passes iff every curve ends below `decay_tol`.
pub fn check_attractive(
    flow: &Semiflow,
    family: &SetFamily,
    basis: &IdealBasis,
    t_grid: &[f64],
    decay_tol: f64,
) -> Result<AttractivityReport> {
    let on_m = basis.max_on_m()?;
    if on_m > basis.vanish_tol {
        return Err(LabError::Precondition(format!(
            "ideal basis does not vanish on M (max {on_m})"
        )));
    }
    let orbs = member_orbits(flow, family, t_grid)?;
    let curves = curves_from(&orbs, &basis.functions, t_grid)?;
    let mut report = ResidualReport::new("attractive");
    let mut worst: f64 = 0.0;
    for c in &curves {
        worst = worst.max(c.last());
        report.detail(DetailRow {
            check: "decay".into(),
            witness_f: c.function.clone(),
            witness_g: format!("B{}", c.member),
            point: Vec::new(),
            value: *c.times.last().expect("nonempty"),
            residual: c.last(),
        });
    }
    report.check("decay", worst, decay_tol);
    for w in family_closure_warnings(family, &orbs, t_grid, 1e-9) {
        report.warn(w);
    }
    if basis.degenerate {
        report.warn("ideal basis is degenerate: M covers the sampled chart");
    }
    Ok(AttractivityReport { report, curves })
}

/// Per-member smallest grid time `t₀` from which every sampled orbit stays
/// within `tol + mesh(A)` of `A`.
pub fn find_absorbing_time(
    flow: &Semiflow,
    family: &SetFamily,
    a: &CompactSample,
    t_grid: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    check_increasing(t_grid)?;
    let radius = tol + a.mesh();
    family
        .members()
        .iter()
        .enumerate()
        .map(|(b_idx, b)| {
            let orbs = orbits(flow, b.points(), t_grid)?;
            let inside: Vec<bool> = (0..t_grid.len())
                .map(|k| orbs.iter().all(|o| a.distance_to(&o[k]) < radius))
                .collect();
            let first_settled = inside
                .iter()
                .rposition(|&ok| !ok)
                .map_or(0, |last_out| last_out + 1);
            if first_settled >= t_grid.len() {
                return Err(LabError::NotAbsorbed(format!(
                    "member {b_idx} of {} is outside A at t={}",
                    family.label(),
                    t_grid[t_grid.len() - 1]
                )));
            }
            Ok(t_grid[first_settled])
        })
        .collect()
}

/// Approximation of the smallest attractor by forward iteration of an absorbing set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorResult {
    pub m: CompactSample,
    /// Hausdorff distances between successive clouds.
    pub hausdorff_history: Vec<f64>,
    pub absorbed_times: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub tau: f64,
}

impl AttractorResult {
    pub fn with_absorbed_times(mut self, times: Vec<f64>) -> Self {
        self.absorbed_times = times;
        self
    }
}

/// Iterates `A_{n+1} = φ_τ(A_n)`, thinned at the mesh of `A`, until successive
/// clouds are within `hausdorff_tol`.
pub fn smallest_attractor(
    flow: &Semiflow,
    a: &CompactSample,
    tau: f64,
    max_iter: usize,
    hausdorff_tol: f64,
) -> Result<AttractorResult> {
    if !(tau > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    let radius = a.mesh();
    let mut cloud = a.deduplicated(radius);
    let mut history = Vec::new();
    for iteration in 1..=max_iter {
        let image: Vec<StatePoint> = cloud
            .points()
            .par_iter()
            .map(|x| flow.evaluate(tau, x))
            .collect::<Result<_>>()?;
        let next = CompactSample::new(image, a.mesh())?.deduplicated(radius);
        let d = hausdorff(&cloud, &next);
        history.push(d);
        cloud = next;
        if d < hausdorff_tol {
            return Ok(AttractorResult {
                m: cloud,
                hausdorff_history: history,
                absorbed_times: Vec::new(),
                converged: true,
                iterations: iteration,
                tau,
            });
        }
    }
    Err(LabError::NonConvergence {
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        tol: hausdorff_tol,
    })
}

/// Two-sided sampled check of `I_M = {f : T(t)f → 0 uniformly on each B}`:
/// the ideal basis and every probe vanishing on `M` decay below `tol`, and every
/// probe with `max_M |f| > 10·tol` stays at or above `tol`.
pub fn ideal_of_attractor_check(
    flow: &Semiflow,
    result: &AttractorResult,
    family: &SetFamily,
    basis: &IdealBasis,
    probes: &Dictionary,
    t_grid: &[f64],
    tol: f64,
) -> Result<(ResidualReport, Vec<DecayCurve>)> {
    let mut report = ResidualReport::new("attractor-ideal");
    if basis.m != result.m {
        report.warn("ideal basis was built for a different M than the attractor result");
    }
    let orbs = member_orbits(flow, family, t_grid)?;
    let basis_curves = curves_from(&orbs, &basis.functions, t_grid)?;
    let basis_worst = basis_curves
        .iter()
        .map(DecayCurve::last)
        .fold(0.0, f64::max);

    let mut vanishing = Vec::new();
    let mut persistent = Vec::new();
    for f in probes.members() {
        let on_m = f.sup_on(&result.m)?;
        if on_m <= tol {
            vanishing.push(f.clone());
        } else if on_m > 10.0 * tol {
            persistent.push(f.clone());
        } else {
            report.warn(format!(
                "probe {} is neither vanishing nor clearly nonzero on M (max {on_m})",
                f.label()
            ));
        }
    }
    let vanishing_curves = curves_from(&orbs, &vanishing, t_grid)?;
    let persistent_curves = curves_from(&orbs, &persistent, t_grid)?;
    let vanishing_worst = vanishing_curves
        .iter()
        .map(DecayCurve::last)
        .fold(0.0, f64::max);
    let persistent_least = persistent_curves
        .iter()
        .map(DecayCurve::last)
        .fold(f64::INFINITY, f64::min);

    for (check, curves) in [
        ("basis-decays", &basis_curves),
        ("vanishing-probe-decays", &vanishing_curves),
        ("nonvanishing-probe-persists", &persistent_curves),
    ] {
        for c in curves {
            report.detail(DetailRow {
                check: check.into(),
                witness_f: c.function.clone(),
                witness_g: format!("B{}", c.member),
                point: Vec::new(),
                value: *c.times.last().expect("nonempty"),
                residual: c.last(),
            });
        }
    }
    report.check("basis-decays", basis_worst, tol);
    report.check("vanishing-probe-decays", vanishing_worst, tol);
    let persists = persistent_curves.is_empty() || persistent_least >= tol;
    report.push_check(
        "nonvanishing-probe-persists",
        if persistent_curves.is_empty() {
            0.0
        } else {
            persistent_least
        },
        tol,
        persists,
    );

    let mut curves = basis_curves;
    curves.extend(vanishing_curves);
    curves.extend(persistent_curves);
    Ok((report, curves))
}

/// Writes decay curves as CSV with columns `member,function,t,value`.
pub fn write_decay_csv<W: Write>(curves: &[DecayCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["member", "function", "t", "value"])?;
    for c in curves {
        for (t, v) in c.times.iter().zip(&c.values) {
            w.write_record([
                c.member.to_string(),
                c.function.clone(),
                fmt_f64(*t),
                fmt_f64(*v),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
