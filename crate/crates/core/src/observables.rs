//! Bounded continuous observables, their algebra and lattice operations,
//! the seminorms of the mixed topology, and atomic measures.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::state::{CompactSample, DomainChart, StatePoint};

pub type ObservableFn = dyn Fn(&StatePoint) -> Result<Complex64> + Send + Sync;

/// A bounded continuous complex-valued function with a claimed sup-norm bound.
///
/// Evaluation is fallible so that composed observables (for example `f ∘ φ_t`)
/// can propagate flow errors.
#[derive(Clone)]
pub struct Observable {
    eval: Arc<ObservableFn>,
    bound: f64,
    label: String,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("label", &self.label)
            .field("bound", &self.bound)
            .finish()
    }
}

impl Observable {
    pub fn new<F>(label: impl Into<String>, bound: f64, eval: F) -> Self
    where
        F: Fn(&StatePoint) -> Result<Complex64> + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            bound,
            label: label.into(),
        }
    }

    pub fn real<F>(label: impl Into<String>, bound: f64, eval: F) -> Self
    where
        F: Fn(&StatePoint) -> f64 + Send + Sync + 'static,
    {
        Self::new(label, bound, move |x| Ok(Complex64::new(eval(x), 0.0)))
    }

    pub fn complex<F>(label: impl Into<String>, bound: f64, eval: F) -> Self
    where
        F: Fn(&StatePoint) -> Complex64 + Send + Sync + 'static,
    {
        Self::new(label, bound, move |x| Ok(eval(x)))
    }

    /// The unit `𝟙`.
    pub fn unit() -> Self {
        Self::constant(Complex64::new(1.0, 0.0)).relabel("1")
    }

    pub fn zero() -> Self {
        Self::constant(Complex64::new(0.0, 0.0)).relabel("0")
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(format!("const({c})"), c.norm(), move |_| Ok(c))
    }

    pub fn eval(&self, x: &StatePoint) -> Result<Complex64> {
        (self.eval)(x)
    }

    /// Real part of the value; convenience for real observables.
    pub fn eval_re(&self, x: &StatePoint) -> Result<f64> {
        self.eval(x).map(|v| v.re)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    /// Applies `h` to every value.
    pub fn map_values<H>(&self, label: impl Into<String>, bound: f64, h: H) -> Observable
    where
        H: Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    {
        let f = self.eval.clone();
        Observable::new(label, bound, move |x| f(x).map(&h))
    }

    pub fn scale(&self, c: Complex64) -> Observable {
        self.map_values(
            format!("{c}*{}", self.label),
            c.norm() * self.bound,
            move |v| c * v,
        )
    }

    pub fn add(&self, other: &Observable) -> Observable {
        let (f, g) = (self.eval.clone(), other.eval.clone());
        Observable::new(
            format!("({}+{})", self.label, other.label),
            self.bound + other.bound,
            move |x| Ok(f(x)? + g(x)?),
        )
    }

    pub fn sub(&self, other: &Observable) -> Observable {
        let (f, g) = (self.eval.clone(), other.eval.clone());
        Observable::new(
            format!("({}-{})", self.label, other.label),
            self.bound + other.bound,
            move |x| Ok(f(x)? - g(x)?),
        )
    }

    pub fn conj(&self) -> Observable {
        self.map_values(format!("conj({})", self.label), self.bound, |v| v.conj())
    }

    /// Largest `|f|` on the sample.
    pub fn sup_on(&self, sample: &CompactSample) -> Result<f64> {
        sample
            .points()
            .iter()
            .try_fold(0.0_f64, |m, x| Ok(m.max(self.eval(x)?.norm())))
    }

    /// Spot-check of the claimed bound on a sample; returns the sampled sup.
    pub fn check_bound(&self, sample: &CompactSample) -> Result<f64> {
        let sup = self.sup_on(sample)?;
        if sup > self.bound * (1.0 + 1e-12) + 1e-15 {
            return Err(LabError::Precondition(format!(
                "observable {} exceeds its bound {} (sampled sup {sup})",
                self.label, self.bound
            )));
        }
        Ok(sup)
    }

    /// Values on every point of a sample.
    pub fn values_on(&self, sample: &CompactSample) -> Result<Vec<Complex64>> {
        sample.points().iter().map(|x| self.eval(x)).collect()
    }
}

/// Pointwise product. The bound is the product of the bounds.
pub fn alg_product(f: &Observable, g: &Observable) -> Observable {
    let (fe, ge) = (f.eval.clone(), g.eval.clone());
    Observable::new(
        format!("({}*{})", f.label, g.label),
        f.bound * g.bound,
        move |x| Ok(fe(x)? * ge(x)?),
    )
}

/// Pointwise modulus `|f|`. The bound is preserved.
pub fn modulus(f: &Observable) -> Observable {
    f.map_values(format!("|{}|", f.label), f.bound, |v| {
        Complex64::new(v.norm(), 0.0)
    })
}

/// Standard observables used by examples, scenarios and tests.
pub mod catalog {
    use super::*;

    /// `x ↦ e^{-rate·x}` on the half line.
    pub fn exp_neg(rate: f64) -> Observable {
        let label = if rate == 1.0 {
            "exp(-x)".to_string()
        } else {
            format!("exp(-{rate}x)")
        };
        Observable::real(label, 1.0, move |x| (-rate * x.x()).exp())
    }

    pub fn sin() -> Observable {
        Observable::real("sin(x)", 1.0, |x| x.x().sin())
    }

    pub fn cos() -> Observable {
        Observable::real("cos(x)", 1.0, |x| x.x().cos())
    }

    /// `x ↦ e^{ix}`.
    pub fn exp_i() -> Observable {
        Observable::complex("exp(ix)", 1.0, |x| Complex64::from_polar(1.0, x.x()))
    }

    /// `x ↦ x + shift` clipped to `[lower, upper]`.
    pub fn affine_clipped(shift: f64, lower: f64, upper: f64) -> Observable {
        let label = if shift == 0.0 {
            "x".to_string()
        } else {
            format!("x{shift:+}")
        };
        Observable::real(
            format!("clip({label},{lower},{upper})"),
            lower.abs().max(upper.abs()),
            move |x| (x.x() + shift).clamp(lower, upper),
        )
    }

    /// `x ↦ (x − center)²` clipped above at `cap`.
    pub fn square_clipped(center: f64, cap: f64) -> Observable {
        Observable::real(format!("min((x-{center})^2,{cap})"), cap, move |x| {
            let d = x.x() - center;
            (d * d).min(cap)
        })
    }

    /// Euclidean norm clipped at `cap`.
    pub fn radius(cap: f64) -> Observable {
        Observable::real("radius", cap, move |x| x.norm().min(cap))
    }
}

/// Upper bound `p_K(f) = sup_{x ∈ K} |f(x)|`, computed as a finite max over the sample.
pub fn seminorm_k(f: &Observable, k: &CompactSample) -> Result<f64> {
    if k.is_empty() {
        return Err(LabError::EmptySample("seminorm over empty compact".into()));
    }
    f.sup_on(k)
}

/// A nonnegative weight vanishing at infinity, with decay witnesses:
/// for each listed `ε`, a compact sample outside of which the weight is `≤ ε`.
#[derive(Clone)]
pub struct VanishingWeight {
    eval: Arc<dyn Fn(&StatePoint) -> f64 + Send + Sync>,
    witnesses: Vec<(f64, CompactSample)>,
    label: String,
}

impl fmt::Debug for VanishingWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VanishingWeight")
            .field("label", &self.label)
            .field("witnesses", &self.witnesses.len())
            .finish()
    }
}

impl VanishingWeight {
    pub fn new<G>(label: impl Into<String>, eval: G, witnesses: Vec<(f64, CompactSample)>) -> Self
    where
        G: Fn(&StatePoint) -> f64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            witnesses,
            label: label.into(),
        }
    }

    pub fn zero() -> Self {
        Self::new("0", |_| 0.0, Vec::new())
    }

    /// `e^{-x}` on the half line, witnessed by `[0, ln(1/ε)]`.
    pub fn exp_decay(epsilons: &[f64]) -> Result<Self> {
        let witnesses = epsilons
            .iter()
            .map(|&eps| {
                Ok((
                    eps,
                    CompactSample::uniform(0.0, (1.0 / eps).ln().max(0.0), 64)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self::new("exp(-x)", |x| (-x.x()).exp(), witnesses))
    }

    /// `1 / (1 + x²)`, witnessed by `[0, sqrt(1/ε − 1)]`.
    pub fn inverse_square(epsilons: &[f64]) -> Result<Self> {
        let witnesses = epsilons
            .iter()
            .map(|&eps| {
                let r = (1.0 / eps - 1.0).max(0.0).sqrt();
                Ok((eps, CompactSample::uniform(0.0, r, 64)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(
            "1/(1+x^2)",
            |x| 1.0 / (1.0 + x.x() * x.x()),
            witnesses,
        ))
    }

    pub fn eval(&self, x: &StatePoint) -> f64 {
        (self.eval)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn witnesses(&self) -> &[(f64, CompactSample)] {
        &self.witnesses
    }

    /// Spot-checks nonnegativity and every decay witness on `probe` points.
    /// A probe point counts as exterior to a witness when it is farther than
    /// the witness mesh from all of its points.
    pub fn check_decay(&self, probe: &CompactSample) -> Result<()> {
        for x in probe.points() {
            let w = self.eval(x);
            if !(w >= 0.0) {
                return Err(LabError::Precondition(format!(
                    "weight {} is negative at {:?}: {w}",
                    self.label,
                    x.coords()
                )));
            }
            for (eps, k) in &self.witnesses {
                if k.distance_to(x) > k.mesh() && w > *eps {
                    return Err(LabError::Precondition(format!(
                        "weight {} is {w} > {eps} at {:?}, outside its witness compact",
                        self.label,
                        x.coords()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `max_{x ∈ grid} |f(x)| g(x)`: a lower bound of `p_g(f) = ‖fg‖_∞`.
///
/// The gap to the true seminorm is controlled by the grid mesh and the moduli
/// of continuity of `f` and `g`, and is not bounded here.
pub fn strict_seminorm(f: &Observable, g: &VanishingWeight, grid: &CompactSample) -> Result<f64> {
    if grid.is_empty() {
        return Err(LabError::EmptySample(
            "strict seminorm over empty grid".into(),
        ));
    }
    grid.points()
        .iter()
        .try_fold(0.0_f64, |m, x| Ok(m.max(f.eval(x)?.norm() * g.eval(x))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: StatePoint,
    pub weight: Complex64,
}

/// Finite complex combination of point masses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(StatePoint, Complex64)>) -> Self {
        Self {
            atoms: atoms
                .into_iter()
                .map(|(point, weight)| Atom { point, weight })
                .collect(),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn dirac(x: StatePoint) -> Self {
        Self::new(vec![(x, Complex64::new(1.0, 0.0))])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.norm()).sum()
    }

    pub fn add(&self, other: &AtomicMeasure) -> AtomicMeasure {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        AtomicMeasure { atoms }
    }

    pub fn scale(&self, c: Complex64) -> AtomicMeasure {
        AtomicMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    point: a.point.clone(),
                    weight: c * a.weight,
                })
                .collect(),
        }
    }

    /// Moves every atom by `push`, keeping weights.
    pub fn pushforward<P>(&self, push: P) -> Result<AtomicMeasure>
    where
        P: Fn(&StatePoint) -> Result<StatePoint>,
    {
        Ok(AtomicMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| {
                    Ok(Atom {
                        point: push(&a.point)?,
                        weight: a.weight,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    pub fn check_in(&self, chart: &DomainChart, margin: f64) -> Result<()> {
        self.atoms
            .iter()
            .try_for_each(|a| chart.check(&a.point, margin))
    }
}

/// `⟨f, μ⟩ = Σ_i w_i f(x_i)`.
pub fn pair(f: &Observable, mu: &AtomicMeasure) -> Result<Complex64> {
    mu.atoms
        .iter()
        .try_fold(Complex64::new(0.0, 0.0), |acc, a| {
            Ok(acc + a.weight * f.eval(&a.point)?)
        })
}

/// Outcome of [`mixed_convergence_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedConvergenceReport {
    /// Indices of sequence members whose declared or sampled sup exceeds the uniform bound.
    pub bound_violations: Vec<usize>,
    /// `residuals[k][n] = p_K(f_n − f)` for compact `k`.
    pub residuals: Vec<Vec<f64>>,
    /// First index from which all residuals on compact `k` stay below tolerance.
    pub settled_from: Vec<Option<usize>>,
    pub converged: Vec<bool>,
    pub tol: f64,
    pub pass: bool,
}

/// Sequential criterion for convergence in the mixed topology: the sequence is
/// uniformly bounded and converges uniformly on every sampled compact.
///
/// A compact counts as converged when the residual sequence is eventually below
/// `tol` (in particular its last member is).
pub fn mixed_convergence_check(
    seq: &[Observable],
    f: &Observable,
    ks: &[CompactSample],
    bound: f64,
    tol: f64,
) -> Result<MixedConvergenceReport> {
    if seq.is_empty() {
        return Err(LabError::InvalidArgument("empty sequence".into()));
    }
    let mut bound_violations = Vec::new();
    for (n, fn_) in seq.iter().enumerate() {
        let mut sup = fn_.bound();
        for k in ks {
            sup = sup.max(fn_.sup_on(k)?);
        }
        if sup > bound {
            bound_violations.push(n);
        }
    }
    let mut residuals = Vec::with_capacity(ks.len());
    let mut settled_from = Vec::with_capacity(ks.len());
    for k in ks {
        let r = seq
            .iter()
            .map(|fn_| seminorm_k(&fn_.sub(f), k))
            .collect::<Result<Vec<_>>>()?;
        let settled = r
            .iter()
            .rposition(|&v| v >= tol)
            .map_or(Some(0), |last_bad| {
                (last_bad + 1 < r.len()).then_some(last_bad + 1)
            });
        residuals.push(r);
        settled_from.push(settled);
    }
    let converged: Vec<bool> = settled_from.iter().map(Option::is_some).collect();
    let pass = bound_violations.is_empty() && converged.iter().all(|&c| c);
    Ok(MixedConvergenceReport {
        bound_violations,
        residuals,
        settled_from,
        converged,
        tol,
        pass,
    })
}

/// A finite family of test observables containing the unit.
#[derive(Debug, Clone)]
pub struct Dictionary {
    members: Vec<Observable>,
}

impl Dictionary {
    /// Adds `𝟙` in front unless a member is already labelled `"1"`.
    pub fn new(members: Vec<Observable>) -> Self {
        let mut members = members;
        if !members.iter().any(|m| m.label() == "1") {
            members.insert(0, Observable::unit());
        }
        Self { members }
    }

    /// Closes `base` under pairwise products and moduli, `depth` rounds deep.
    pub fn closure(base: Vec<Observable>, depth: usize) -> Self {
        let mut dict = Self::new(base);
        for _ in 0..depth {
            let current = dict.members.clone();
            let mut seen: std::collections::HashSet<String> =
                current.iter().map(|m| m.label().to_string()).collect();
            let mut next = current.clone();
            let mut push = |o: Observable, next: &mut Vec<Observable>| {
                if seen.insert(o.label().to_string()) {
                    next.push(o);
                }
            };
            for (i, f) in current.iter().enumerate() {
                if f.label() != "1" {
                    push(modulus(f), &mut next);
                }
                for g in &current[i..] {
                    if f.label() != "1" && g.label() != "1" {
                        push(alg_product(f, g), &mut next);
                    }
                }
            }
            dict.members = next;
        }
        dict
    }

    pub fn members(&self) -> &[Observable] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn product_examples() {
        let g = sin();
        let p = alg_product(&Observable::unit(), &g);
        for x in [0.0, 0.3, 2.0] {
            assert_eq!(p.eval(&x.into()).unwrap(), g.eval(&x.into()).unwrap());
        }
        let ff = alg_product(&exp_neg(1.0), &exp_neg(1.0));
        assert_eq!(ff.eval_re(&0.0.into()).unwrap(), 1.0);
        assert!((ff.eval_re(&1.0.into()).unwrap() - 0.135335283236613).abs() < 1e-12);
        let a = Observable::constant(c(2.0));
        let b = Observable::constant(c(3.0));
        assert_eq!(alg_product(&a, &b).bound(), 6.0);
    }

    #[test]
    fn modulus_examples() {
        let m = modulus(&exp_neg(1.0));
        assert_eq!(m.eval_re(&0.7.into()).unwrap(), (-0.7_f64).exp());
        let m = modulus(&exp_i());
        for x in [0.0, 1.0, 2.5] {
            assert!((m.eval(&x.into()).unwrap() - c(1.0)).norm() < 1e-15);
        }
        let m = modulus(&Observable::constant(c(-2.0)));
        assert_eq!(m.eval(&0.0.into()).unwrap(), c(2.0));
        assert_eq!(m.bound(), 2.0);
    }

    #[test]
    fn seminorm_examples() {
        let k = CompactSample::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(seminorm_k(&Observable::unit(), &k).unwrap(), 1.0);
        assert_eq!(seminorm_k(&exp_neg(1.0), &k).unwrap(), 1.0);
        let k = CompactSample::from_scalars(&[0.5, 0.25]).unwrap();
        assert_eq!(
            seminorm_k(&affine_clipped(0.0, 0.0, 10.0), &k).unwrap(),
            0.5
        );
        assert!(CompactSample::from_scalars(&[]).is_err());
    }

    #[test]
    fn strict_seminorm_examples() {
        let grid = CompactSample::from_scalars(&[0.0, 1.0]).unwrap();
        assert_eq!(
            strict_seminorm(&sin(), &VanishingWeight::zero(), &grid).unwrap(),
            0.0
        );
        let w = VanishingWeight::exp_decay(&[1e-2]).unwrap();
        assert_eq!(
            strict_seminorm(&Observable::unit(), &w, &grid).unwrap(),
            1.0
        );

        let w = VanishingWeight::inverse_square(&[1e-2]).unwrap();
        let dense = CompactSample::uniform(0.0, 10.0, 10_001).unwrap();
        let v = strict_seminorm(&affine_clipped(0.0, 0.0, 100.0), &w, &dense).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn weights_pass_their_own_witnesses() {
        let probe = CompactSample::uniform(0.0, 50.0, 501).unwrap();
        VanishingWeight::exp_decay(&[0.1, 1e-3])
            .unwrap()
            .check_decay(&probe)
            .unwrap();
        VanishingWeight::inverse_square(&[0.1, 1e-3])
            .unwrap()
            .check_decay(&probe)
            .unwrap();
        let liar = VanishingWeight::new(
            "liar",
            |_| 1.0,
            vec![(0.5, CompactSample::uniform(0.0, 1.0, 8).unwrap())],
        );
        assert!(liar.check_decay(&probe).is_err());
    }

    #[test]
    fn pairing_examples() {
        let f = exp_neg(1.0);
        let x0 = StatePoint::scalar(0.7);
        assert_eq!(
            pair(&f, &AtomicMeasure::dirac(x0.clone())).unwrap(),
            f.eval(&x0).unwrap()
        );
        let mu = AtomicMeasure::new(vec![(0.0.into(), c(1.0)), (1.0.into(), c(-1.0))]);
        assert!((pair(&f, &mu).unwrap().re - 0.632120558828558).abs() < 1e-12);
        assert_eq!(pair(&f, &AtomicMeasure::zero()).unwrap(), c(0.0));
        assert_eq!(mu.total_variation(), 2.0);
    }

    #[test]
    fn mixed_convergence_examples() {
        let ks: Vec<CompactSample> = [1.0, 5.0, 10.0]
            .iter()
            .map(|&r| CompactSample::uniform(0.0, r, 50).unwrap())
            .collect();
        let seq: Vec<Observable> = (1..=2000).map(|n| exp_neg(1.0 / n as f64)).collect();
        let r = mixed_convergence_check(&seq, &Observable::unit(), &ks, 1.0, 1e-2).unwrap();
        assert!(r.pass, "{:?}", r.settled_from);
        // 1 − e^{−c/n} ≤ c/n on [0, c].
        for (res, c) in r.residuals.iter().zip([1.0, 5.0, 10.0]) {
            for (n, v) in res.iter().enumerate() {
                assert!(*v <= c / (n + 1) as f64 + 1e-15);
            }
        }

        let growing: Vec<Observable> = (1..=5).map(|n| Observable::constant(c(n as f64))).collect();
        let r = mixed_convergence_check(&growing, &Observable::unit(), &ks, 1.0, 1e-2).unwrap();
        assert!(!r.pass);
        assert_eq!(r.bound_violations, vec![1, 2, 3, 4]);

        let f = sin();
        let constant = vec![f.clone(); 4];
        let r = mixed_convergence_check(&constant, &f, &ks, 1.0, 1e-12).unwrap();
        assert!(r.pass);
        assert!(r.residuals.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn dictionary_contains_unit_and_closes() {
        let d = Dictionary::new(vec![sin()]);
        assert_eq!(d.members()[0].label(), "1");
        let d = Dictionary::closure(vec![sin(), exp_i()], 1);
        let labels: Vec<&str> = d.members().iter().map(|m| m.label()).collect();
        assert!(labels.contains(&"|sin(x)|"));
        assert!(labels.contains(&"(sin(x)*exp(ix))"));
        assert!(labels.contains(&"(exp(ix)*exp(ix))"));
    }

    #[test]
    fn bound_spot_check() {
        let grid = CompactSample::uniform(0.0, 5.0, 20).unwrap();
        assert!(sin().check_bound(&grid).is_ok());
        assert!(sin().with_bound(0.5).check_bound(&grid).is_err());
    }
}
