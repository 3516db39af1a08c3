//! Branch-length laws `μ_{τ,α}` and offspring laws `ν_{τ,α,ℓ}`.
//!
//! A [`Kernel`] is built from a JSON-serializable [`KernelConfig`] and
//! answers density, survival, pgf and sampling queries. Rate-based
//! kernels (birth-death or a bare hazard) evaluate their rates at
//! `(τ+ℓ, α+ℓ)` along the branch.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma as GammaDist, Weibull as WeibullDist};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma as GammaLaw};

use crate::error::{Error, Result};

/// Which coordinate a rate depends on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateArgument {
    #[default]
    Time,
    Age,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateShape {
    Constant { value: f64 },
    /// `(x, value)` knots, linear in between, flat outside.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
    /// `a · e^{-b x}`.
    ExpDecay { a: f64, b: f64 },
}

/// A nonnegative rate per unit time, a function of either global time
/// or age.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    #[serde(flatten)]
    pub shape: RateShape,
    #[serde(default)]
    pub argument: RateArgument,
}

impl RateFunction {
    pub fn constant(value: f64) -> Self {
        RateFunction { shape: RateShape::Constant { value }, argument: RateArgument::Time }
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>, argument: RateArgument) -> Self {
        RateFunction { shape: RateShape::PiecewiseLinear { knots }, argument }
    }

    pub fn exp_decay(a: f64, b: f64, argument: RateArgument) -> Self {
        RateFunction { shape: RateShape::ExpDecay { a, b }, argument }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.shape {
            RateShape::Constant { value } if !(*value >= 0.0 && value.is_finite()) => {
                Err(Error::InvalidKernel(format!("constant rate {value} must be finite and nonnegative")))
            }
            RateShape::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return Err(Error::InvalidKernel("piecewise-linear rate needs knots".into()));
                }
                if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::InvalidKernel("knots must be strictly increasing".into()));
                }
                if knots.iter().any(|k| !(k.1 >= 0.0 && k.1.is_finite() && k.0.is_finite())) {
                    return Err(Error::InvalidKernel("knot values must be finite and nonnegative".into()));
                }
                Ok(())
            }
            RateShape::ExpDecay { a, b } if !(*a >= 0.0 && *b >= 0.0 && a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidKernel("exp_decay needs a, b >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Value at argument `x` (time or age, per [`RateArgument`]).
    pub fn value_at(&self, x: f64) -> f64 {
        match &self.shape {
            RateShape::Constant { value } => *value,
            RateShape::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                let j = knots.partition_point(|k| k.0 <= x);
                let (x0, v0) = knots[j - 1];
                let (x1, v1) = knots[j];
                v0 + (v1 - v0) * (x - x0) / (x1 - x0)
            }
            RateShape::ExpDecay { a, b } => a * (-b * x).exp(),
        }
    }

    pub fn eval(&self, t: f64, a: f64) -> f64 {
        self.value_at(self.pick(t, a))
    }

    fn pick(&self, t: f64, a: f64) -> f64 {
        match self.argument {
            RateArgument::Time => t,
            RateArgument::Age => a,
        }
    }

    /// Antiderivative from 0.
    fn primitive(&self, x: f64) -> f64 {
        match &self.shape {
            RateShape::Constant { value } => value * x,
            RateShape::PiecewiseLinear { knots } => {
                let first = knots[0];
                if x <= first.0 {
                    return first.1 * x;
                }
                let mut acc = first.1 * first.0;
                for w in knots.windows(2) {
                    let (x0, v0) = w[0];
                    let (x1, v1) = w[1];
                    if x <= x1 {
                        let v = v0 + (v1 - v0) * (x - x0) / (x1 - x0);
                        return acc + 0.5 * (v0 + v) * (x - x0);
                    }
                    acc += 0.5 * (v0 + v1) * (x1 - x0);
                }
                let last = knots[knots.len() - 1];
                acc + last.1 * (x - last.0)
            }
            RateShape::ExpDecay { a, b } => {
                if *b == 0.0 {
                    a * x
                } else {
                    a / b * (1.0 - (-b * x).exp())
                }
            }
        }
    }

    /// `∫_0^len f(x0 + u) du`.
    pub fn integral_along(&self, x0: f64, len: f64) -> f64 {
        match &self.shape {
            RateShape::Constant { value } => value * len,
            RateShape::ExpDecay { a, b } if *b > 0.0 => a / b * (-b * x0).exp() * (1.0 - (-b * len).exp()),
            _ => self.primitive(x0 + len) - self.primitive(x0),
        }
    }

    /// `∫_0^len f` along a branch born at `(τ, α)`.
    pub fn integral_on_branch(&self, tau: f64, alpha: f64, len: f64) -> f64 {
        self.integral_along(self.pick(tau, alpha), len)
    }

    pub fn infimum(&self) -> f64 {
        match &self.shape {
            RateShape::Constant { value } => *value,
            RateShape::PiecewiseLinear { knots } => knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min),
            RateShape::ExpDecay { a, b } => {
                if *b == 0.0 {
                    *a
                } else {
                    0.0
                }
            }
        }
    }

    pub fn supremum(&self) -> f64 {
        match &self.shape {
            RateShape::Constant { value } => *value,
            RateShape::PiecewiseLinear { knots } => knots.iter().map(|k| k.1).fold(0.0, f64::max),
            RateShape::ExpDecay { a, .. } => *a,
        }
    }

    /// Limit of the rate as its argument grows.
    pub fn asymptote(&self) -> f64 {
        match &self.shape {
            RateShape::Constant { value } => *value,
            RateShape::PiecewiseLinear { knots } => knots[knots.len() - 1].1,
            RateShape::ExpDecay { a, b } => {
                if *b == 0.0 {
                    *a
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match &self.shape {
            RateShape::Constant { .. } => true,
            RateShape::PiecewiseLinear { knots } => knots.iter().all(|k| k.1 == knots[0].1),
            RateShape::ExpDecay { a, b } => *a == 0.0 || *b == 0.0,
        }
    }

    pub fn depends_on_age(&self) -> bool {
        self.argument == RateArgument::Age && !self.is_constant()
    }

    pub fn depends_on_time(&self) -> bool {
        self.argument == RateArgument::Time && !self.is_constant()
    }
}

/// Branch-length family of table kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LengthLaw {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Every branch has the same length (no density; simulation only).
    Deterministic { value: f64 },
    /// `P(L = span·(k+1)) = probs[k]` (no density; simulation only).
    Lattice { span: f64, probs: Vec<f64> },
    /// Length is the first event of a point process with this hazard.
    Hazard { rate: RateFunction },
}

/// JSON kernel configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelConfig {
    /// Competing risks: length is the first birth or death event; a birth
    /// yields two offspring (mother continuation plus newborn).
    BirthDeath { beta: RateFunction, delta: RateFunction },
    /// Length family and an offspring law independent of `(τ, α, ℓ)`.
    Table { lengths: LengthLaw, offspring: Vec<f64> },
}

/// Declared regularity bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularity {
    /// Bound on the length density (or atom mass).
    pub density_bound: f64,
    /// Bound on the offspring mean.
    pub mean_bound: f64,
    pub max_offspring: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityCheck {
    pub c_hat: f64,
    pub m_hat: f64,
    pub ok: bool,
}

/// Value of `h̃(r, s)` with its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgfValue {
    pub value: f64,
    pub d_r: f64,
    pub d_s: f64,
}

#[derive(Clone, Debug)]
pub struct Kernel {
    config: KernelConfig,
    regularity: Regularity,
    id: String,
}

const CHECK_TOL: f64 = 1e-9;

impl Kernel {
    pub fn new(config: KernelConfig) -> Result<Self> {
        let regularity = match &config {
            KernelConfig::BirthDeath { beta, delta } => {
                beta.validate()?;
                delta.validate()?;
                if beta.infimum() + delta.infimum() <= 0.0 {
                    return Err(Error::ZeroTotalRate);
                }
                if beta.asymptote() + delta.asymptote() <= 0.0 {
                    return Err(Error::DefectiveLength);
                }
                let mean_bound = if beta.is_constant() && delta.is_constant() {
                    let b = beta.supremum();
                    2.0 * b / (b + delta.supremum())
                } else {
                    2.0
                };
                Regularity { density_bound: beta.supremum() + delta.supremum(), mean_bound, max_offspring: 2 }
            }
            KernelConfig::Table { lengths, offspring } => {
                if offspring.is_empty() || offspring.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(Error::InvalidKernel("offspring probabilities must be nonnegative".into()));
                }
                let total: f64 = offspring.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidKernel(format!("offspring probabilities sum to {total}")));
                }
                let density_bound = length_density_bound(lengths)?;
                let mean_bound = offspring.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
                let max_offspring = offspring.iter().rposition(|p| *p > 0.0).unwrap_or(0);
                Regularity { density_bound, mean_bound, max_offspring }
            }
        };
        let json = serde_json::to_string(&config)?;
        let id = hex::encode(Sha256::digest(json.as_bytes()));
        Ok(Kernel { config, regularity, id })
    }

    pub fn birth_death(beta: RateFunction, delta: RateFunction) -> Result<Self> {
        Kernel::new(KernelConfig::BirthDeath { beta, delta })
    }

    pub fn birth_death_constant(beta: f64, delta: f64) -> Result<Self> {
        Kernel::birth_death(RateFunction::constant(beta), RateFunction::constant(delta))
    }

    pub fn yule(beta: f64) -> Result<Self> {
        Kernel::birth_death_constant(beta, 0.0)
    }

    pub fn table(lengths: LengthLaw, offspring: Vec<f64>) -> Result<Self> {
        Kernel::new(KernelConfig::Table { lengths, offspring })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    /// Content hash of the configuration.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn max_offspring(&self) -> usize {
        self.regularity.max_offspring
    }

    /// True if the length law has a Lebesgue density.
    pub fn has_density(&self) -> bool {
        !matches!(
            self.config,
            KernelConfig::Table { lengths: LengthLaw::Deterministic { .. } | LengthLaw::Lattice { .. }, .. }
        )
    }

    pub fn is_age_dependent(&self) -> bool {
        match &self.config {
            KernelConfig::BirthDeath { beta, delta } => beta.depends_on_age() || delta.depends_on_age(),
            KernelConfig::Table { lengths: LengthLaw::Hazard { rate }, .. } => rate.depends_on_age(),
            KernelConfig::Table { .. } => false,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        match &self.config {
            KernelConfig::BirthDeath { beta, delta } => beta.depends_on_time() || delta.depends_on_time(),
            KernelConfig::Table { lengths: LengthLaw::Hazard { rate }, .. } => rate.depends_on_time(),
            KernelConfig::Table { .. } => false,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        !self.is_age_dependent() && !self.is_time_dependent()
    }

    /// Cumulative hazard `R_{τ,α}(ℓ)` for rate-based laws.
    pub fn cumulative_hazard(&self, tau: f64, alpha: f64, len: f64) -> Option<f64> {
        match &self.config {
            KernelConfig::BirthDeath { beta, delta } => {
                Some(beta.integral_on_branch(tau, alpha, len) + delta.integral_on_branch(tau, alpha, len))
            }
            KernelConfig::Table { lengths: LengthLaw::Hazard { rate }, .. } => Some(rate.integral_on_branch(tau, alpha, len)),
            KernelConfig::Table { lengths: LengthLaw::Exponential { rate }, .. } => Some(rate * len),
            _ => None,
        }
    }

    fn hazard_rate(&self, tau: f64, alpha: f64, len: f64) -> Option<f64> {
        let (t, a) = (tau + len, alpha + len);
        match &self.config {
            KernelConfig::BirthDeath { beta, delta } => Some(beta.eval(t, a) + delta.eval(t, a)),
            KernelConfig::Table { lengths: LengthLaw::Hazard { rate }, .. } => Some(rate.eval(t, a)),
            KernelConfig::Table { lengths: LengthLaw::Exponential { rate }, .. } => Some(*rate),
            _ => None,
        }
    }

    /// Length density `g_{τ,α}(ℓ)`, `None` for atomic laws.
    pub fn density(&self, tau: f64, alpha: f64, len: f64) -> Option<f64> {
        if len < 0.0 {
            return Some(0.0);
        }
        if let (Some(rho), Some(r)) = (self.hazard_rate(tau, alpha, len), self.cumulative_hazard(tau, alpha, len)) {
            return Some(rho * (-r).exp());
        }
        match &self.config {
            KernelConfig::Table { lengths: LengthLaw::Weibull { shape, scale }, .. } => {
                if len == 0.0 {
                    return Some(match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    });
                }
                let z = len / scale;
                Some(shape / scale * z.powf(shape - 1.0) * (-z.powf(*shape)).exp())
            }
            KernelConfig::Table { lengths: LengthLaw::Gamma { shape, scale }, .. } => {
                Some(gamma_law(*shape, *scale).pdf(len))
            }
            _ => None,
        }
    }

    /// `μ_{τ,α}([ℓ, ∞))`.
    pub fn survival(&self, tau: f64, alpha: f64, len: f64) -> f64 {
        if len <= 0.0 {
            return 1.0;
        }
        if let Some(r) = self.cumulative_hazard(tau, alpha, len) {
            return (-r).exp();
        }
        match &self.config {
            KernelConfig::Table { lengths, .. } => match lengths {
                LengthLaw::Weibull { shape, scale } => (-(len / scale).powf(*shape)).exp(),
                LengthLaw::Gamma { shape, scale } => gamma_law(*shape, *scale).sf(len),
                LengthLaw::Deterministic { value } => {
                    if len <= *value {
                        1.0
                    } else {
                        0.0
                    }
                }
                LengthLaw::Lattice { span, probs } => probs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| span * (*k as f64 + 1.0) >= len)
                    .map(|(_, p)| p)
                    .sum(),
                _ => unreachable!("rate-based handled above"),
            },
            KernelConfig::BirthDeath { .. } => unreachable!(),
        }
    }

    /// Writes `ν_{τ,α,ℓ}(n)` for `n = 0..=max_offspring` into `out`.
    pub fn offspring_pmf_into(&self, tau: f64, alpha: f64, len: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        match &self.config {
            KernelConfig::BirthDeath { beta, delta } => {
                let (t, a) = (tau + len, alpha + len);
                let b = beta.eval(t, a);
                let d = delta.eval(t, a);
                out[0] = d / (b + d);
                out[2] = b / (b + d);
            }
            KernelConfig::Table { offspring, .. } => {
                let n = out.len().min(offspring.len());
                out[..n].copy_from_slice(&offspring[..n]);
            }
        }
    }

    pub fn offspring_pmf(&self, tau: f64, alpha: f64, len: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.max_offspring().max(2) + 1];
        self.offspring_pmf_into(tau, alpha, len, &mut out);
        out.truncate(self.max_offspring() + 1);
        out
    }

    pub fn mean_offspring(&self, tau: f64, alpha: f64, len: f64) -> f64 {
        self.offspring_pmf(tau, alpha, len).iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// `h_{τ,α,ℓ}(s)`.
    pub fn pgf(&self, tau: f64, alpha: f64, len: f64, s: f64) -> f64 {
        pgf_of(&self.offspring_pmf(tau, alpha, len), s)
    }

    /// `h̃_{τ,α,ℓ}(r, s)` with exact partial derivatives.
    pub fn asym_pgf(&self, tau: f64, alpha: f64, len: f64, r: f64, s: f64) -> PgfValue {
        asym_pgf_of(&self.offspring_pmf(tau, alpha, len), r, s)
    }

    /// Draws `L ~ μ_{τ,α}`.
    pub fn sample_length<R: Rng + ?Sized>(&self, tau: f64, alpha: f64, rng: &mut R) -> Result<f64> {
        match &self.config {
            KernelConfig::Table { lengths, .. } => match lengths {
                LengthLaw::Exponential { rate } => {
                    let e: f64 = Exp1.sample(rng);
                    Ok(e / rate)
                }
                LengthLaw::Weibull { shape, scale } => Ok(WeibullDist::new(*scale, *shape)
                    .map_err(|e| Error::InvalidKernel(e.to_string()))?
                    .sample(rng)),
                LengthLaw::Gamma { shape, scale } => Ok(GammaDist::new(*shape, *scale)
                    .map_err(|e| Error::InvalidKernel(e.to_string()))?
                    .sample(rng)),
                LengthLaw::Deterministic { value } => Ok(*value),
                LengthLaw::Lattice { span, probs } => {
                    let k = sample_index(probs, rng);
                    Ok(span * (k as f64 + 1.0))
                }
                LengthLaw::Hazard { .. } => self.sample_by_hazard(tau, alpha, rng),
            },
            KernelConfig::BirthDeath { .. } => self.sample_by_hazard(tau, alpha, rng),
        }
    }

    /// Inverse transform on the cumulative hazard: solve `R(ℓ) = E`,
    /// `E ~ Exp(1)`, by safeguarded Newton iteration.
    fn sample_by_hazard<R: Rng + ?Sized>(&self, tau: f64, alpha: f64, rng: &mut R) -> Result<f64> {
        let target: f64 = Exp1.sample(rng);
        let r = |l: f64| self.cumulative_hazard(tau, alpha, l).expect("rate-based");
        let rate = |l: f64| self.hazard_rate(tau, alpha, l).expect("rate-based");
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut guard = 0;
        while r(hi) < target {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::SamplingFailure { tau, alpha });
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = r(x) - target;
            if f.abs() <= 1e-14 * target.max(1.0) {
                break;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo <= 1e-12 * hi.max(1.0) {
                x = 0.5 * (lo + hi);
                break;
            }
            let d = rate(x);
            let newton = if d > 0.0 { x - f / d } else { f64::NAN };
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        if x > 0.0 {
            Ok(x)
        } else {
            // exact zero has probability zero; keep lengths strictly positive
            Ok(f64::MIN_POSITIVE)
        }
    }

    /// Draws `N ~ ν_{τ,α,ℓ}`.
    pub fn sample_offspring<R: Rng + ?Sized>(&self, tau: f64, alpha: f64, len: f64, rng: &mut R) -> usize {
        match &self.config {
            KernelConfig::BirthDeath { beta, delta } => {
                let (t, a) = (tau + len, alpha + len);
                let b = beta.eval(t, a);
                let d = delta.eval(t, a);
                if rng.random::<f64>() * (b + d) < b {
                    2
                } else {
                    0
                }
            }
            KernelConfig::Table { offspring, .. } => sample_index(offspring, rng),
        }
    }

    /// Scans density and offspring mean over `[0, τ_max] × [0, α_max] × [0, ℓ_max]`.
    pub fn check_regularity(&self, tau_max: f64, alpha_max: f64, len_max: f64, step: f64) -> RegularityCheck {
        let pts = |max: f64| -> Vec<f64> {
            let n = (max / step).ceil().max(0.0) as usize;
            (0..=n).map(|i| (i as f64 * step).min(max)).collect()
        };
        let (taus, alphas, lens) = (pts(tau_max), pts(alpha_max), pts(len_max));
        let alphas = if self.is_age_dependent() { alphas } else { vec![0.0] };
        let mut c_hat: f64 = 0.0;
        let mut m_hat: f64 = 0.0;
        for &tau in &taus {
            for &alpha in &alphas {
                for &len in &lens {
                    let g = match self.density(tau, alpha, len) {
                        Some(g) => g,
                        None => self.atom_mass(len),
                    };
                    c_hat = c_hat.max(g);
                    m_hat = m_hat.max(self.mean_offspring(tau, alpha, len));
                }
            }
        }
        let r = self.regularity;
        let ok = c_hat.is_finite()
            && r.density_bound.is_finite()
            && c_hat <= r.density_bound + CHECK_TOL
            && m_hat <= r.mean_bound + CHECK_TOL;
        RegularityCheck { c_hat, m_hat, ok }
    }

    fn atom_mass(&self, len: f64) -> f64 {
        match &self.config {
            KernelConfig::Table { lengths: LengthLaw::Deterministic { value }, .. } => {
                if len == *value {
                    1.0
                } else {
                    0.0
                }
            }
            KernelConfig::Table { lengths: LengthLaw::Lattice { probs, .. }, .. } => {
                probs.iter().copied().fold(0.0, f64::max)
            }
            _ => 0.0,
        }
    }
}

fn gamma_law(shape: f64, scale: f64) -> GammaLaw {
    GammaLaw::new(shape, 1.0 / scale).expect("validated gamma parameters")
}

fn length_density_bound(law: &LengthLaw) -> Result<f64> {
    let positive = |v: f64, what: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!("{what} must be positive, got {v}")))
        }
    };
    Ok(match law {
        LengthLaw::Exponential { rate } => {
            positive(*rate, "rate")?;
            *rate
        }
        LengthLaw::Weibull { shape, scale } => {
            positive(*shape, "shape")?;
            positive(*scale, "scale")?;
            if *shape < 1.0 {
                f64::INFINITY
            } else if *shape == 1.0 {
                1.0 / scale
            } else {
                let mode = scale * ((shape - 1.0) / shape).powf(1.0 / shape);
                let z = mode / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(*shape)).exp()
            }
        }
        LengthLaw::Gamma { shape, scale } => {
            positive(*shape, "shape")?;
            positive(*scale, "scale")?;
            if *shape < 1.0 {
                f64::INFINITY
            } else if *shape == 1.0 {
                1.0 / scale
            } else {
                gamma_law(*shape, *scale).pdf((shape - 1.0) * scale)
            }
        }
        LengthLaw::Deterministic { value } => {
            positive(*value, "value")?;
            1.0
        }
        LengthLaw::Lattice { span, probs } => {
            positive(*span, "span")?;
            let total: f64 = probs.iter().sum();
            if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidKernel("lattice probabilities must form a distribution".into()));
            }
            probs.iter().copied().fold(0.0, f64::max)
        }
        LengthLaw::Hazard { rate } => {
            rate.validate()?;
            if rate.infimum() <= 0.0 {
                return Err(Error::ZeroTotalRate);
            }
            rate.supremum()
        }
    })
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// `Σ s^n p_n` by Horner's rule.
pub fn pgf_of(pmf: &[f64], s: f64) -> f64 {
    pmf.iter().rev().fold(0.0, |acc, p| acc * s + p)
}

/// `h̃(r, s) = p_0 + r Σ_{n≥1} s^{n-1} p_n` with derivatives.
pub fn asym_pgf_of(pmf: &[f64], r: f64, s: f64) -> PgfValue {
    let tail = &pmf[1.min(pmf.len())..];
    let mut poly = 0.0;
    let mut dpoly = 0.0;
    for p in tail.iter().rev() {
        dpoly = dpoly * s + poly;
        poly = poly * s + p;
    }
    let p0 = pmf.first().copied().unwrap_or(0.0);
    PgfValue { value: p0 + r * poly, d_r: poly, d_s: r * dpoly }
}
