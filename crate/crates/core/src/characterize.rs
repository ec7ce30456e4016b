//! Residual suites that tell Koopman semigroups apart from other operator
//! semigroups.
//!
//! Operator level: a strongly continuous semigroup on bounded continuous
//! functions is a Koopman semigroup iff each `T(t)` is a unital algebra
//! homomorphism, iff each is a unital lattice homomorphism. Generator level:
//! the generator is a derivation, and satisfies Kato's equality
//! `⟨Re(hsign(f̄)(δf)), μ⟩ = ⟨|f|, δ′μ⟩`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::koopman::{adjoint_generator_pair, generator_fd, koopman_apply, GeneratorEstimate};
use crate::observables::{alg_product, modulus, AtomicMeasure, Dictionary, Observable};
use crate::report::{DetailRow, ResidualReport};
use crate::semiflow::Semiflow;
use crate::state::{CompactSample, StatePoint};

pub type OperatorFn = dyn Fn(f64, &Observable) -> Result<Observable> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    FromFlow,
    BlackBox,
}

/// A family `t ↦ T(t)` of operators on observables, possibly not of Koopman type.
#[derive(Clone)]
pub struct OperatorUnderTest {
    apply: Arc<OperatorFn>,
    label: String,
    kind: OperatorKind,
}

impl fmt::Debug for OperatorUnderTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorUnderTest")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .finish()
    }
}

impl OperatorUnderTest {
    pub fn black_box<F>(label: impl Into<String>, apply: F) -> Self
    where
        F: Fn(f64, &Observable) -> Result<Observable> + Send + Sync + 'static,
    {
        Self {
            apply: Arc::new(apply),
            label: label.into(),
            kind: OperatorKind::BlackBox,
        }
    }

    /// The Koopman semigroup of a flow.
    pub fn from_flow(flow: &Semiflow) -> Self {
        let flow = flow.clone();
        Self {
            label: format!("koopman({})", flow.label()),
            apply: Arc::new(move |t, f| koopman_apply(&flow, t, f)),
            kind: OperatorKind::FromFlow,
        }
    }

    pub fn identity() -> Self {
        Self {
            apply: Arc::new(|_, f| Ok(f.clone())),
            label: "identity".into(),
            kind: OperatorKind::FromFlow,
        }
    }

    /// `S(t)f = (f + T(t)f) / 2`: unital, linear, positive, not multiplicative.
    pub fn averaging(flow: &Semiflow) -> Self {
        let flow = flow.clone();
        Self::black_box(format!("averaging({})", flow.label()), move |t, f| {
            let tf = koopman_apply(&flow, t, f)?;
            Ok(f.add(&tf).scale(Complex64::new(0.5, 0.0)))
        })
    }

    /// `c · T(t)f`.
    pub fn scaled(flow: &Semiflow, c: f64) -> Self {
        let flow = flow.clone();
        Self::black_box(format!("{c}*koopman({})", flow.label()), move |t, f| {
            Ok(koopman_apply(&flow, t, f)?.scale(Complex64::new(c, 0.0)))
        })
    }

    /// `conj(T(t)f)`: preserves products and moduli but is only real-linear.
    pub fn conjugating(flow: &Semiflow) -> Self {
        let flow = flow.clone();
        Self::black_box(format!("conj-koopman({})", flow.label()), move |t, f| {
            Ok(koopman_apply(&flow, t, f)?.conj())
        })
    }

    pub fn apply(&self, t: f64, f: &Observable) -> Result<Observable> {
        (self.apply)(t, f)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }
}

/// `hsign(w)(z)`: `(w/|w|)·z` when `|w| > eps`, `|z|` otherwise.
pub fn hsign(w: Complex64, z: Complex64, eps: f64) -> Complex64 {
    let r = w.norm();
    if r > eps {
        (w / r) * z
    } else {
        Complex64::new(z.norm(), 0.0)
    }
}

/// Inputs and output of one [`hsign`] evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsignValue {
    pub w: Complex64,
    pub z: Complex64,
    pub result: Complex64,
}

impl HsignValue {
    pub fn new(w: Complex64, z: Complex64, eps: f64) -> Self {
        Self {
            w,
            z,
            result: hsign(w, z, eps),
        }
    }
}

/// Zero band of the hsign case split for an observable: `1e-9·(1 + ‖f‖)`.
pub fn default_hsign_eps(f: &Observable) -> f64 {
    let b = if f.bound().is_finite() {
        f.bound()
    } else {
        0.0
    };
    1e-9 * (1.0 + b)
}

struct OperatorValues {
    /// `values[i][p] = op(t, dict_i)(grid_p)`.
    values: Vec<Vec<Complex64>>,
    /// `plain[i][p] = dict_i(grid_p)`.
    plain: Vec<Vec<Complex64>>,
}

fn tabulate(
    op: &OperatorUnderTest,
    t: f64,
    dict: &Dictionary,
    grid: &CompactSample,
) -> Result<OperatorValues> {
    let mut values = Vec::with_capacity(dict.len());
    let mut plain = Vec::with_capacity(dict.len());
    for f in dict.members() {
        values.push(op.apply(t, f)?.values_on(grid)?);
        plain.push(f.values_on(grid)?);
    }
    Ok(OperatorValues { values, plain })
}

fn unitality(
    op: &OperatorUnderTest,
    t: f64,
    grid: &CompactSample,
    report: &mut ResidualReport,
) -> Result<f64> {
    let one = op.apply(t, &Observable::unit())?;
    let mut worst: f64 = 0.0;
    for x in grid.points() {
        let v = one.eval(x)?;
        let r = (v - 1.0).norm();
        worst = worst.max(r);
        report.detail(DetailRow {
            check: "unital".into(),
            witness_f: "1".into(),
            witness_g: String::new(),
            point: x.coords().to_vec(),
            value: v.re,
            residual: r,
        });
    }
    Ok(worst)
}

const LINEARITY_A: Complex64 = Complex64::new(0.6, 0.8);
const LINEARITY_B: Complex64 = Complex64::new(-1.3, 0.4);

/// Complex linearity pre-check `op(af + bg) = a·op(f) + b·op(g)` over
/// dictionary pairs, with fixed non-real scalars.
pub fn check_linearity(
    op: &OperatorUnderTest,
    t: f64,
    dict: &Dictionary,
    grid: &CompactSample,
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::new("linearity");
    let members = dict.members();
    let mut worst: f64 = 0.0;
    for (i, f) in members.iter().enumerate() {
        for g in &members[i..] {
            let combo = f.scale(LINEARITY_A).add(&g.scale(LINEARITY_B));
            let lhs = op.apply(t, &combo)?;
            let (of, og) = (op.apply(t, f)?, op.apply(t, g)?);
            for x in grid.points() {
                let l = lhs.eval(x)?;
                let r = (l - LINEARITY_A * of.eval(x)? - LINEARITY_B * og.eval(x)?).norm();
                worst = worst.max(r);
                report.detail(DetailRow {
                    check: "linear".into(),
                    witness_f: f.label().into(),
                    witness_g: g.label().into(),
                    point: x.coords().to_vec(),
                    value: l.re,
                    residual: r,
                });
            }
        }
    }
    report.check("linear", worst, tol);
    Ok(report)
}

/// `|op(t, fg) − op(t,f)·op(t,g)|` over dictionary pairs, plus `|op(t,𝟙) − 𝟙|`.
pub fn check_algebra_homomorphism(
    op: &OperatorUnderTest,
    t: f64,
    dict: &Dictionary,
    grid: &CompactSample,
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::new("algebra");
    let tab = tabulate(op, t, dict, grid)?;
    let members = dict.members();
    let mut worst: f64 = 0.0;
    for i in 0..members.len() {
        for j in i..members.len() {
            let product = op.apply(t, &alg_product(&members[i], &members[j]))?;
            for (p, x) in grid.points().iter().enumerate() {
                let lhs = product.eval(x)?;
                let r = (lhs - tab.values[i][p] * tab.values[j][p]).norm();
                worst = worst.max(r);
                report.detail(DetailRow {
                    check: "multiplicative".into(),
                    witness_f: members[i].label().into(),
                    witness_g: members[j].label().into(),
                    point: x.coords().to_vec(),
                    value: lhs.re,
                    residual: r,
                });
            }
        }
    }
    let unit = unitality(op, t, grid, &mut report)?;
    report.check("multiplicative", worst, tol);
    report.check("unital", unit, tol);
    report.assume(format!(
        "{} is assumed strongly continuous (spot-checked only)",
        op.label()
    ));
    Ok(report)
}

/// `||op(t,f)| − op(t,|f|)|` over the dictionary, plus unitality.
pub fn check_lattice_homomorphism(
    op: &OperatorUnderTest,
    t: f64,
    dict: &Dictionary,
    grid: &CompactSample,
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::new("lattice");
    let tab = tabulate(op, t, dict, grid)?;
    let mut worst: f64 = 0.0;
    for (i, f) in dict.members().iter().enumerate() {
        let of_abs = op.apply(t, &modulus(f))?;
        for (p, x) in grid.points().iter().enumerate() {
            let rhs = of_abs.eval(x)?;
            let lhs = tab.values[i][p].norm();
            let r = (lhs - rhs).norm();
            worst = worst.max(r);
            report.detail(DetailRow {
                check: "modulus".into(),
                witness_f: f.label().into(),
                witness_g: String::new(),
                point: x.coords().to_vec(),
                value: lhs,
                residual: r,
            });
        }
    }
    let unit = unitality(op, t, grid, &mut report)?;
    report.check("modulus", worst, tol);
    report.check("unital", unit, tol);
    Ok(report)
}

/// Spot check of strong continuity: `p_K(op(t+s, f) − op(t, f))` for the given
/// offsets `s`; passes iff the value at the smallest offset is below `tol`.
pub fn strong_continuity_spot_check(
    op: &OperatorUnderTest,
    f: &Observable,
    t: f64,
    k: &CompactSample,
    offsets: &[f64],
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::new("strong-continuity");
    let base = op.apply(t, f)?;
    let mut smallest = (f64::INFINITY, f64::NAN);
    for &s in offsets {
        let moved = op.apply(t + s, f)?;
        let r = moved.sub(&base).sup_on(k)?;
        report.detail(DetailRow {
            check: "continuity".into(),
            witness_f: f.label().into(),
            witness_g: format!("s={s}"),
            point: Vec::new(),
            value: s,
            residual: r,
        });
        if s < smallest.0 {
            smallest = (s, r);
        }
    }
    if offsets.is_empty() {
        report.warn("no offsets given");
        smallest.1 = 0.0;
    }
    report.check("continuity", smallest.1, tol);
    Ok(report)
}

/// Product-rule residual `|δ(fg) − δ(f)·g − f·δ(g)|` for an arbitrary
/// candidate derivation `delta`. A point passes when its residual is below
/// `tol` plus the propagated error estimates.
pub fn check_derivation_with<D>(
    delta: D,
    f: &Observable,
    g: &Observable,
    grid: &CompactSample,
    tol: f64,
) -> Result<ResidualReport>
where
    D: Fn(&Observable, &StatePoint) -> Result<GeneratorEstimate>,
{
    let fg = alg_product(f, g);
    let mut report = ResidualReport::new("derivation");
    let (mut worst, mut worst_err, mut pass) = (0.0_f64, 0.0_f64, true);
    for x in grid.points() {
        let d_fg = delta(&fg, x)?;
        let d_f = delta(f, x)?;
        let d_g = delta(g, x)?;
        let (fx, gx) = (f.eval(x)?, g.eval(x)?);
        let r = (d_fg.value - d_f.value * gx - fx * d_g.value).norm();
        let err =
            d_fg.error_estimate + d_f.error_estimate * gx.norm() + fx.norm() * d_g.error_estimate;
        pass &= r < tol + err;
        worst = worst.max(r);
        worst_err = worst_err.max(err);
        report.detail(DetailRow {
            check: "product-rule".into(),
            witness_f: f.label().into(),
            witness_g: g.label().into(),
            point: x.coords().to_vec(),
            value: d_fg.value.re,
            residual: r,
        });
    }
    report.push_check("product-rule", worst, tol + worst_err, pass);
    Ok(report)
}

/// Product rule for the finite-difference generator of a flow.
pub fn check_derivation(
    flow: &Semiflow,
    f: &Observable,
    g: &Observable,
    grid: &CompactSample,
    h: f64,
    tol: f64,
) -> Result<ResidualReport> {
    let mut report = check_derivation_with(|u, x| generator_fd(flow, u, x, h), f, g, grid, tol)?;
    report.assume("f and g are smooth along orbits near the grid");
    Ok(report)
}

/// Both sides of Kato's equality with their error estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KatoSides {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub error_estimate: f64,
}

/// `⟨Re(hsign(f̄)(δf)), μ⟩` and `⟨|f|, δ′μ⟩`, the latter by one-sided
/// differences of `t ↦ ⟨|f|, T(t)′μ⟩`.
pub fn kato_sides(
    flow: &Semiflow,
    f: &Observable,
    mu: &AtomicMeasure,
    h: f64,
    eps: f64,
) -> Result<KatoSides> {
    let mut lhs = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    for atom in mu.atoms() {
        let fx = f.eval(&atom.point)?;
        let d = generator_fd(flow, f, &atom.point, h)?;
        lhs += atom.weight * hsign(fx.conj(), d.value, eps).re;
        err += atom.weight.norm() * d.error_estimate;
    }
    let rhs = adjoint_generator_pair(flow, &modulus(f), mu, h)?;
    Ok(KatoSides {
        lhs,
        rhs: rhs.value,
        error_estimate: err + rhs.error_estimate,
    })
}

/// Kato's equality on an atomic measure; passes iff `|LHS − RHS| < tol + error estimates`.
pub fn check_kato(
    flow: &Semiflow,
    f: &Observable,
    mu: &AtomicMeasure,
    h: f64,
    eps: f64,
    tol: f64,
) -> Result<ResidualReport> {
    mu.check_in(flow.chart(), flow.margin())?;
    let sides = kato_sides(flow, f, mu, h, eps)?;
    let r = (sides.lhs - sides.rhs).norm();
    let mut report = ResidualReport::new("kato");
    for atom in mu.atoms() {
        report.detail(DetailRow {
            check: "kato".into(),
            witness_f: f.label().into(),
            witness_g: format!("w={}", atom.weight),
            point: atom.point.coords().to_vec(),
            value: sides.lhs.re,
            residual: r,
        });
    }
    report.push_check(
        "kato",
        r,
        tol + sides.error_estimate,
        r < tol + sides.error_estimate,
    );
    report.assume("the generator is assumed to generate a locally equicontinuous semigroup");
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    KoopmanLike,
    NotLinear,
    NotUnital,
    NotMultiplicative,
    NotLattice,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::KoopmanLike => "koopman-like",
            Verdict::NotLinear => "not-linear",
            Verdict::NotUnital => "not-unital",
            Verdict::NotMultiplicative => "not-multiplicative",
            Verdict::NotLattice => "not-lattice",
        })
    }
}

/// Recovered image `ψ(x)` of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub point: StatePoint,
    pub image: StatePoint,
    /// Max over the dictionary of `|op(t,f)(x) − f(ψ(x))|`.
    pub feature_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub reports: Vec<ResidualReport>,
    pub point_map: Option<Vec<PointMatch>>,
}

/// Runs the linearity, unitality, algebra and lattice suites and, if all pass,
/// recovers the point map `ψ` with `op(t,f)(x) = f(ψ(x))` by matching the
/// functional `f ↦ op(t,f)(x)` against point evaluations at `candidates`.
///
/// The dictionary must separate the grid points and candidates; a second
/// candidate farther than two meshes from the best one but matching within
/// `tol` of it is an ambiguity error.
pub fn classify_operator(
    op: &OperatorUnderTest,
    t: f64,
    dict: &Dictionary,
    grid: &CompactSample,
    candidates: &CompactSample,
    tol: f64,
) -> Result<Classification> {
    let linear = check_linearity(op, t, dict, grid, tol)?;
    let algebra = check_algebra_homomorphism(op, t, dict, grid, tol)?;
    let lattice = check_lattice_homomorphism(op, t, dict, grid, tol)?;
    let verdict = if !linear.passed() {
        Verdict::NotLinear
    } else if !algebra.get("unital").is_some_and(|c| c.pass) {
        Verdict::NotUnital
    } else if !algebra.passed() {
        Verdict::NotMultiplicative
    } else if !lattice.passed() {
        Verdict::NotLattice
    } else {
        Verdict::KoopmanLike
    };
    let reports = vec![linear, algebra, lattice];
    if verdict != Verdict::KoopmanLike {
        return Ok(Classification {
            verdict,
            reports,
            point_map: None,
        });
    }

    let tab = tabulate(op, t, dict, grid)?;
    check_separation(&tab.plain, grid, tol)?;
    let cand_features: Vec<Vec<Complex64>> = candidates
        .points()
        .iter()
        .map(|y| dict.members().iter().map(|f| f.eval(y)).collect())
        .collect::<Result<_>>()?;
    let feature_distance = |p: usize, c: usize| {
        tab.values
            .iter()
            .zip(&cand_features[c])
            .map(|(vals, g)| (vals[p] - g).norm())
            .fold(0.0, f64::max)
    };

    let mut matches = Vec::with_capacity(grid.len());
    for (p, x) in grid.points().iter().enumerate() {
        let distances: Vec<f64> = (0..candidates.len())
            .map(|c| feature_distance(p, c))
            .collect();
        let (best, best_d) = distances
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("candidate sample is nonempty");
        let best_point = &candidates.points()[best];
        let rival = distances.iter().enumerate().find(|&(c, &d)| {
            c != best
                && d <= best_d + tol
                && candidates.points()[c].distance(best_point) > 2.0 * candidates.mesh()
        });
        if let Some((c, _)) = rival {
            return Err(LabError::Ambiguous {
                point: x.coords().to_vec(),
                first: best_point.coords().to_vec(),
                second: candidates.points()[c].coords().to_vec(),
            });
        }
        matches.push(PointMatch {
            point: x.clone(),
            image: best_point.clone(),
            feature_residual: best_d,
        });
    }
    Ok(Classification {
        verdict,
        reports,
        point_map: Some(matches),
    })
}

fn check_separation(plain: &[Vec<Complex64>], grid: &CompactSample, tol: f64) -> Result<()> {
    let n = grid.len();
    for p in 0..n {
        for q in p + 1..n {
            let sep = plain
                .iter()
                .map(|vals| (vals[p] - vals[q]).norm())
                .fold(0.0, f64::max);
            if sep <= tol {
                return Err(LabError::Precondition(format!(
                    "dictionary does not separate grid points {:?} and {:?}",
                    grid.points()[p].coords(),
                    grid.points()[q].coords()
                )));
            }
        }
    }
    Ok(())
}
