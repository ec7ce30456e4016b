//! TOML scenario files: a flow, named observables, grids and measures, and one
//! optional table per suite.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::observables::{catalog, AtomicMeasure, Dictionary, Observable};
use crate::semiflow::{
    crandall_liggett_flow, make_compactified_translation_flow, make_ode_flow, make_rotation_flow,
    make_translation_flow, AccretiveRelation, Semiflow,
};
use crate::state::{CompactSample, DomainChart, StatePoint};
use crate::Complex64;

/// Schema version understood by this build.
pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub spec_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub flow: FlowSpec,
    #[serde(default)]
    pub observables: BTreeMap<String, ObservableSpec>,
    #[serde(default)]
    pub grids: BTreeMap<String, GridSpec>,
    #[serde(default)]
    pub measures: BTreeMap<String, MeasureSpec>,
    pub simulate: Option<SimulateSuite>,
    #[serde(rename = "check-laws")]
    pub check_laws: Option<LawsSuite>,
    pub generator: Option<GeneratorSuite>,
    pub resolvent: Option<ResolventSuite>,
    pub characterize: Option<CharacterizeSuite>,
    pub attractor: Option<AttractorSuite>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlowSpec {
    /// `x + t` on `[0, ∞)`.
    Translation,
    /// Translation on `[0, ∞]` in the chart `y = x/(1+x)`.
    CompactifiedTranslation,
    /// RK4 flow of `x' = x(1 − x)` on `[lower, upper]`.
    Logistic {
        #[serde(default = "default_step")]
        step: f64,
        lower: f64,
        upper: f64,
    },
    /// `e^{−rate·t} x` on the real line.
    Linear { rate: f64 },
    /// Rotation of the plane on the box `[−radius, radius]²`.
    Rotation { omega: f64, radius: f64 },
    /// Crandall–Liggett limit for the relation `A x = rate·x` on `[0, ∞)`.
    CrandallLiggettLinear {
        rate: f64,
        tol: f64,
        #[serde(default = "default_k_max")]
        k_max: usize,
    },
    /// `x + t²`: not a semiflow, a negative control for the law checks.
    Broken,
}

fn default_step() -> f64 {
    1e-3
}

fn default_k_max() -> usize {
    1 << 16
}

impl FlowSpec {
    pub fn build(&self) -> Result<Semiflow> {
        Ok(match *self {
            FlowSpec::Translation => make_translation_flow(),
            FlowSpec::CompactifiedTranslation => make_compactified_translation_flow(),
            FlowSpec::Logistic { step, lower, upper } => make_ode_flow(
                |x| vec![x.x() * (1.0 - x.x())],
                DomainChart::interval(lower, upper)?,
                step,
            )?,
            FlowSpec::Linear { rate } => {
                Semiflow::closed_form("linear", DomainChart::real_line(), move |t, x| {
                    let c = (-rate * t).exp();
                    StatePoint::new(x.coords().iter().map(|v| c * v).collect()).expect("finite")
                })
            }
            FlowSpec::Rotation { omega, radius } => make_rotation_flow(omega, radius)?,
            FlowSpec::CrandallLiggettLinear { rate, tol, k_max } => {
                crandall_liggett_flow(AccretiveRelation::linear(rate), tol, k_max)?
            }
            FlowSpec::Broken => {
                Semiflow::closed_form("broken", DomainChart::half_line(), |t, x| {
                    StatePoint::new(vec![x.x() + t * t]).expect("finite")
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableSpec {
    Unit,
    /// `e^{−rate·‖x‖}`.
    Exp {
        rate: f64,
    },
    Sin,
    Cos,
    /// `e^{i·freq·x}`.
    ExpI {
        #[serde(default = "one")]
        freq: f64,
    },
    /// `amplitude·e^{−‖x − center‖²/width²}`.
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Coordinate `x_axis + shift` clipped to `[lower, upper]`.
    Coordinate {
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        shift: f64,
        lower: f64,
        upper: f64,
    },
    /// `(x − center)²` clipped at `cap`.
    SquareClipped {
        center: f64,
        cap: f64,
    },
    /// Smooth bump `exp(1 − 1/(1 − r²))`, `r = ‖x − center‖/radius`, supported in the ball.
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    /// `‖x‖` clipped at `cap`.
    Radius {
        cap: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ObservableSpec {
    pub fn build(&self, name: &str) -> Result<Observable> {
        let positive = |what: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LabError::Scenario(format!(
                    "observable {name}: {what} must be > 0, got {v}"
                )))
            }
        };
        let obs = match self {
            ObservableSpec::Unit => Observable::unit(),
            ObservableSpec::Exp { rate } => {
                let rate = *rate;
                if rate < 0.0 {
                    return Err(LabError::Scenario(format!(
                        "observable {name}: rate must be >= 0"
                    )));
                }
                Observable::real(name, 1.0, move |x| (-rate * x.norm()).exp())
            }
            ObservableSpec::Sin => catalog::sin(),
            ObservableSpec::Cos => catalog::cos(),
            ObservableSpec::ExpI { freq } => {
                let freq = *freq;
                Observable::complex(name, 1.0, move |x| Complex64::from_polar(1.0, freq * x.x()))
            }
            ObservableSpec::Gaussian {
                center,
                width,
                amplitude,
            } => {
                positive("width", *width)?;
                let (center, width, amplitude) = (center.clone(), *width, *amplitude);
                Observable::real(name, amplitude.abs(), move |x| {
                    amplitude * (-sq_dist(x, &center) / (width * width)).exp()
                })
            }
            ObservableSpec::Coordinate {
                axis,
                shift,
                lower,
                upper,
            } => {
                if !(lower <= upper) {
                    return Err(LabError::Scenario(format!(
                        "observable {name}: lower > upper"
                    )));
                }
                let (axis, shift, lower, upper) = (*axis, *shift, *lower, *upper);
                Observable::new(name, lower.abs().max(upper.abs()), move |x| {
                    let v = x.coords().get(axis).ok_or(LabError::DimensionMismatch {
                        expected: axis + 1,
                        got: x.dim(),
                    })?;
                    Ok(Complex64::new((v + shift).clamp(lower, upper), 0.0))
                })
            }
            ObservableSpec::SquareClipped { center, cap } => {
                positive("cap", *cap)?;
                catalog::square_clipped(*center, *cap)
            }
            ObservableSpec::Bump { center, radius } => {
                positive("radius", *radius)?;
                let (center, radius) = (center.clone(), *radius);
                Observable::real(name, 1.0, move |x| {
                    let r2 = sq_dist(x, &center) / (radius * radius);
                    if r2 < 1.0 {
                        (1.0 - 1.0 / (1.0 - r2)).exp()
                    } else {
                        0.0
                    }
                })
            }
            ObservableSpec::Radius { cap } => {
                positive("cap", *cap)?;
                catalog::radius(*cap)
            }
        };
        Ok(match self {
            ObservableSpec::Unit => obs,
            _ => obs.relabel(name),
        })
    }
}

fn sq_dist(x: &StatePoint, center: &[f64]) -> f64 {
    x.coords()
        .iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// Explicit scalar points.
    Values {
        values: Vec<f64>,
        #[serde(default)]
        mesh: f64,
    },
    /// Explicit points of any dimension.
    Points {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        mesh: f64,
    },
    /// `n` equispaced points on `[lower, upper]`.
    Uniform { lower: f64, upper: f64, n: usize },
    /// Points `lower, lower + spacing, …` up to `upper`; mesh equals the spacing.
    Spacing {
        lower: f64,
        upper: f64,
        spacing: f64,
    },
    /// Tensor grid on a box with `per_axis` points per axis.
    Box {
        bounds: Vec<[f64; 2]>,
        per_axis: usize,
    },
}

impl GridSpec {
    pub fn build(&self) -> Result<CompactSample> {
        match self {
            GridSpec::Values { values, mesh } => {
                let pts = values
                    .iter()
                    .map(|&v| StatePoint::new(vec![v]))
                    .collect::<Result<_>>()?;
                CompactSample::new(pts, *mesh)
            }
            GridSpec::Points { points, mesh } => {
                let pts = points
                    .iter()
                    .map(|p| StatePoint::new(p.clone()))
                    .collect::<Result<_>>()?;
                CompactSample::new(pts, *mesh)
            }
            GridSpec::Uniform { lower, upper, n } => CompactSample::uniform(*lower, *upper, *n),
            GridSpec::Spacing {
                lower,
                upper,
                spacing,
            } => CompactSample::with_spacing(*lower, *upper, *spacing),
            GridSpec::Box { bounds, per_axis } => {
                let b: Vec<(f64, f64)> = bounds.iter().map(|[a, b]| (*a, *b)).collect();
                CompactSample::grid(&b, *per_axis)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub point: Vec<f64>,
    pub weight: f64,
    #[serde(default)]
    pub weight_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub atoms: Vec<AtomSpec>,
}

impl MeasureSpec {
    pub fn build(&self) -> Result<AtomicMeasure> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                Ok((
                    StatePoint::new(a.point.clone())?,
                    Complex64::new(a.weight, a.weight_im),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AtomicMeasure::new(atoms))
    }
}

/// Either an explicit list of times or `steps + 1` equispaced times on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeGrid {
    List(Vec<f64>),
    Range {
        #[serde(default)]
        start: f64,
        end: f64,
        steps: usize,
    },
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        match *self {
            TimeGrid::List(ref v) => v.clone(),
            TimeGrid::Range { start, end, steps } => (0..=steps)
                .map(|k| start + (end - start) * k as f64 / steps.max(1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSuite {
    pub grid: String,
    pub times: TimeGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawsSuite {
    pub grid: String,
    pub times: TimeGrid,
    pub tol: f64,
    /// Radius of the perturbations in the continuity diagnostic; off when absent.
    pub continuity_probe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSuite {
    pub grid: String,
    pub observables: Vec<String>,
    pub h: f64,
    /// Bound on the worst Richardson error estimate.
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSuite {
    pub observable: String,
    pub grid: String,
    pub nu: f64,
    pub t_max: f64,
    pub n_quad: usize,
    pub h: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Koopman,
    Identity,
    /// `(f + T(t)f)/2`.
    Averaging,
    /// `c·T(t)f`.
    Scaled {
        c: f64,
    },
    /// `conj(T(t) conj f)`.
    Conjugating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivationSpec {
    pub f: String,
    pub g: String,
    pub grid: String,
    pub h: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KatoSpec {
    pub f: String,
    pub measure: String,
    pub h: f64,
    pub tol: f64,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub observables: Vec<String>,
    pub grid: String,
    pub times: TimeGrid,
    pub h: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeSuite {
    pub operator: OperatorSpec,
    pub t: f64,
    pub dictionary: Vec<String>,
    #[serde(default)]
    pub closure_depth: usize,
    pub grid: String,
    pub candidates: String,
    pub tol: f64,
    pub derivation: Option<DerivationSpec>,
    #[serde(default)]
    pub kato: Vec<KatoSpec>,
    pub kernel: Option<KernelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorSuite {
    /// Grid name of the absorbing set `A`.
    pub absorbing: String,
    /// Grid names of the members of `ℬ`.
    pub family: Vec<String>,
    pub absorb_times: TimeGrid,
    pub absorb_tol: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub hausdorff_tol: f64,
    pub decay_times: TimeGrid,
    pub decay_tol: f64,
    pub basis_count: usize,
    pub sharpness: f64,
    #[serde(default)]
    pub probes: Vec<String>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| LabError::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn observable(&self, name: &str) -> Result<Observable> {
        if name == "1" {
            return Ok(Observable::unit());
        }
        self.observables
            .get(name)
            .ok_or_else(|| LabError::Scenario(format!("unknown observable {name:?}")))?
            .build(name)
    }

    pub fn observables_named(&self, names: &[String]) -> Result<Vec<Observable>> {
        names.iter().map(|n| self.observable(n)).collect()
    }

    pub fn grid(&self, name: &str) -> Result<CompactSample> {
        self.grids
            .get(name)
            .ok_or_else(|| LabError::Scenario(format!("unknown grid {name:?}")))?
            .build()
    }

    pub fn measure(&self, name: &str) -> Result<AtomicMeasure> {
        self.measures
            .get(name)
            .ok_or_else(|| LabError::Scenario(format!("unknown measure {name:?}")))?
            .build()
    }

    pub fn dictionary(&self, names: &[String], depth: usize) -> Result<Dictionary> {
        let base: Vec<Observable> = self
            .observables_named(names)?
            .into_iter()
            .filter(|f| f.label() != "1")
            .collect();
        Ok(if depth == 0 {
            Dictionary::new(base)
        } else {
            Dictionary::closure(base, depth)
        })
    }

    /// Resolves every referenced name and checks knobs; flows and observables are built once.
    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(LabError::Scenario(format!(
                "unsupported spec_version {} (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        self.flow.build().map_err(as_scenario)?;
        for (name, spec) in &self.observables {
            spec.build(name).map_err(as_scenario)?;
        }
        for name in self.grids.keys() {
            self.grid(name).map_err(as_scenario)?;
        }
        for name in self.measures.keys() {
            self.measure(name).map_err(as_scenario)?;
        }
        if let Some(s) = &self.simulate {
            self.grid(&s.grid)?;
            times_nonneg("simulate.times", &s.times.times())?;
        }
        if let Some(s) = &self.check_laws {
            self.grid(&s.grid)?;
            times_nonneg("check-laws.times", &s.times.times())?;
            positive("check-laws.tol", s.tol)?;
            if let Some(p) = s.continuity_probe {
                positive("check-laws.continuity_probe", p)?;
            }
        }
        if let Some(s) = &self.generator {
            self.grid(&s.grid)?;
            self.observables_named(&s.observables)?;
            positive("generator.h", s.h)?;
            positive("generator.tol", s.tol)?;
        }
        if let Some(s) = &self.resolvent {
            self.grid(&s.grid)?;
            self.observable(&s.observable)?;
            for (what, v) in [("nu", s.nu), ("t_max", s.t_max), ("h", s.h), ("tol", s.tol)] {
                positive(&format!("resolvent.{what}"), v)?;
            }
            if s.n_quad < 2 {
                return Err(LabError::Scenario("resolvent.n_quad must be >= 2".into()));
            }
        }
        if let Some(s) = &self.characterize {
            self.grid(&s.grid)?;
            self.grid(&s.candidates)?;
            self.observables_named(&s.dictionary)?;
            times_nonneg("characterize.t", &[s.t])?;
            positive("characterize.tol", s.tol)?;
            if let Some(d) = &s.derivation {
                self.observable(&d.f)?;
                self.observable(&d.g)?;
                self.grid(&d.grid)?;
                positive("derivation.h", d.h)?;
                positive("derivation.tol", d.tol)?;
            }
            for k in &s.kato {
                self.observable(&k.f)?;
                self.measure(&k.measure)?;
                positive("kato.h", k.h)?;
                positive("kato.tol", k.tol)?;
            }
            if let Some(k) = &s.kernel {
                self.observables_named(&k.observables)?;
                self.grid(&k.grid)?;
                times_nonneg("kernel.times", &k.times.times())?;
                positive("kernel.h", k.h)?;
                positive("kernel.tol", k.tol)?;
            }
        }
        if let Some(s) = &self.attractor {
            self.grid(&s.absorbing)?;
            if s.family.is_empty() {
                return Err(LabError::Scenario("attractor.family is empty".into()));
            }
            for b in &s.family {
                self.grid(b)?;
            }
            self.observables_named(&s.probes)?;
            for (what, v) in [
                ("absorb_tol", s.absorb_tol),
                ("tau", s.tau),
                ("hausdorff_tol", s.hausdorff_tol),
                ("decay_tol", s.decay_tol),
                ("sharpness", s.sharpness),
            ] {
                positive(&format!("attractor.{what}"), v)?;
            }
            if s.max_iter == 0 || s.basis_count == 0 {
                return Err(LabError::Scenario(
                    "attractor.max_iter and basis_count must be >= 1".into(),
                ));
            }
            times_nonneg("attractor.absorb_times", &s.absorb_times.times())?;
            times_nonneg("attractor.decay_times", &s.decay_times.times())?;
        }
        Ok(())
    }

    /// Multiplies every tolerance by `factor`.
    pub fn scale_tolerances(&mut self, factor: f64) {
        if let Some(s) = &mut self.check_laws {
            s.tol *= factor;
        }
        if let Some(s) = &mut self.generator {
            s.tol *= factor;
        }
        if let Some(s) = &mut self.resolvent {
            s.tol *= factor;
        }
        if let Some(s) = &mut self.characterize {
            s.tol *= factor;
            if let Some(d) = &mut s.derivation {
                d.tol *= factor;
            }
            for k in &mut s.kato {
                k.tol *= factor;
            }
            if let Some(k) = &mut s.kernel {
                k.tol *= factor;
            }
        }
        if let Some(s) = &mut self.attractor {
            s.absorb_tol *= factor;
            s.hausdorff_tol *= factor;
            s.decay_tol *= factor;
        }
    }
}

fn as_scenario(e: LabError) -> LabError {
    match e {
        LabError::Scenario(_) => e,
        other => LabError::Scenario(other.to_string()),
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LabError::Scenario(format!("{what} must be > 0, got {v}")))
    }
}

fn times_nonneg(what: &str, times: &[f64]) -> Result<()> {
    if times.iter().all(|t| *t >= 0.0 && t.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Scenario(format!(
            "{what} must be finite and >= 0"
        )))
    }
}
