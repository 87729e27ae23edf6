//! Martingale families built pathwise, and Monte Carlo checks of their
//! martingale, orthogonality and optional-stopping properties.
//!
//! All pathwise functionals read the normalised local time `L`, for which
//! `R^{2μ} − L` is a martingale.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{domain, LabError, Result};
use crate::laws::{conditional_h_integral, hitting_probability, z_supermartingale};
use crate::pathsim::{Monitor, PathGrid};
use crate::quad::{integrate, integrate_power_weighted, integrate_to_infinity, QuadOptions};
use crate::randomtimes::last_zero_before;
use crate::specfun::{gamma_unchecked, transition_density_unchecked, BesselParams};
use crate::stats::{
    ks_from_distance, ks_statistic, mean_and_se, moment_from_estimate, moment_report, StatReport,
};

/// Real function shared between threads.
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Test points for the antiderivative check.
const SPEC_TEST_POINTS: [f64; 6] = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0];

/// A pair `(F, f)` with `F' = f`, driving `F(L_t) − f(L_t) R_t^{2μ}`.
#[derive(Clone)]
pub struct BalayageSpec {
    big_f: RealFn,
    f: RealFn,
    pub description: String,
}

impl fmt::Debug for BalayageSpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("BalayageSpec")
            .field("description", &self.description)
            .finish()
    }
}

impl BalayageSpec {
    /// Validates `F(x) − F(0) = ∫_0^x f` at a handful of test points (≤ 1e−8).
    pub fn new(
        big_f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        description: impl Into<String>,
    ) -> Result<Self> {
        let spec = Self {
            big_f: Arc::new(big_f),
            f: Arc::new(f),
            description: description.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let f0 = (self.big_f)(0.0);
        for &x in &SPEC_TEST_POINTS {
            let lhs = (self.big_f)(x) - f0;
            let rhs = integrate(|y| (self.f)(y), 0.0, x, QuadOptions::abs(1e-12))?.value;
            if !((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs())) {
                return Err(LabError::Config(format!(
                    "balayage spec '{}': F({x}) − F(0) = {lhs} but ∫f = {rhs}",
                    self.description
                )));
            }
        }
        Ok(())
    }

    /// `F(x) = x`, `f ≡ 1`: the martingale `L − R^{2μ}`.
    pub fn identity() -> Self {
        Self {
            big_f: Arc::new(|x| x),
            f: Arc::new(|_| 1.0),
            description: "F(x)=x, f=1".into(),
        }
    }

    /// `F(x) = 1 − e^{−θx}`, `f(x) = θe^{−θx}`: `1 − e^{−θL}(1 + θR^{2μ})`.
    pub fn exponential(theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return domain(
                "BalayageSpec::exponential",
                format!("theta must be positive, got {theta}"),
            );
        }
        Self::new(
            move |x| -(-theta * x).exp_m1(),
            move |x| theta * (-theta * x).exp(),
            format!("F(x)=1-exp(-{theta}x)"),
        )
    }

    /// Positive martingale vanishing at `τ_u` for a constant barrier `c`:
    /// `F(x) = 1 − exp(−(u − x)/c^{2μ})` for `x ≤ u`, so that
    /// `M = 1 − e^{−(u−L)/c^{2μ}}(1 − R^{2μ}/c^{2μ})`, `M_0 = 1 − e^{−u/c^{2μ}}`.
    pub fn doob_constant_barrier(params: &BesselParams, level: f64, u: f64) -> Result<Self> {
        if !(level > 0.0 && u > 0.0) {
            return domain(
                "BalayageSpec::doob_constant_barrier",
                format!("need positive level and u, got ({level}, {u})"),
            );
        }
        let k = level.powf(-2.0 * params.mu());
        Self::new(
            move |x| 1.0 - (-(u - x.min(u)) * k).exp(),
            move |x| {
                if x < u {
                    -k * (-(u - x) * k).exp()
                } else {
                    0.0
                }
            },
            format!("doob barrier c={level}, u={u}"),
        )
    }

    pub fn big_f(&self, x: f64) -> f64 {
        (self.big_f)(x)
    }

    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// `F(l) − f(l) r^{2μ}`.
    pub fn value(&self, mu: f64, r: f64, l: f64) -> f64 {
        (self.big_f)(l) - (self.f)(l) * r.powf(2.0 * mu)
    }
}

/// `M_t = F(L_t) − f(L_t) R_t^{2μ}` on the path grid.
pub fn balayage_martingale(path: &PathGrid, spec: &BalayageSpec) -> Vec<f64> {
    let mu = path.params.mu();
    path.r
        .iter()
        .zip(&path.l)
        .map(|(&r, &l)| spec.value(mu, r, l))
        .collect()
}

/// `Λ_t = 2^μ Γ(1+μ) f(L_t)(t − g(t))^μ − F(L_t)` on the path grid.
pub fn azema_projection(path: &PathGrid, spec: &BalayageSpec) -> Result<Vec<f64>> {
    let mu = path.params.mu();
    let k = 2f64.powf(mu) * gamma_unchecked(1.0 + mu);
    path.times
        .iter()
        .zip(&path.l)
        .map(|(&t, &l)| {
            let g = if t > 0.0 {
                last_zero_before(path, t)?
            } else {
                0.0
            };
            Ok(k * spec.f(l) * (t - g).max(0.0).powf(mu) - spec.big_f(l))
        })
        .collect()
}

/// Value of `Λ` at one time `t` of the path.
pub fn azema_projection_at(path: &PathGrid, spec: &BalayageSpec, t: f64) -> Result<f64> {
    let mu = path.params.mu();
    let g = if t > 0.0 {
        last_zero_before(path, t)?
    } else {
        0.0
    };
    let l = path.l_at(t);
    Ok(
        2f64.powf(mu) * gamma_unchecked(1.0 + mu) * spec.f(l) * (t - g).max(0.0).powf(mu)
            - spec.big_f(l),
    )
}

/// Stops a path at `τ_u` (first grid point with `L > u`) or once the
/// balayage martingale exceeds `cap`; steps are refined near the level set
/// `{M = running maximum}` so that the supremum is resolved.
pub struct DoobMonitor {
    spec: BalayageSpec,
    mu: f64,
    u: f64,
    cap: f64,
    sup: f64,
}

impl DoobMonitor {
    pub fn new(params: &BesselParams, spec: BalayageSpec, u: f64, cap: f64) -> Self {
        Self {
            spec,
            mu: params.mu(),
            u,
            cap,
            sup: f64::NEG_INFINITY,
        }
    }
}

impl Monitor for DoobMonitor {
    fn observe(&mut self, _t: f64, r: f64, l: f64) -> bool {
        let m = self.spec.value(self.mu, r, l);
        self.sup = self.sup.max(m);
        l > self.u || m > self.cap
    }

    fn level_distance(&self, r: f64, l: f64) -> Option<f64> {
        let slope = self.spec.f(l);
        if !(slope < 0.0) || !self.sup.is_finite() {
            return None;
        }
        // R at which M would reach the running maximum, given L = l.
        let power = (self.spec.big_f(l) - self.sup) / slope;
        (power > 0.0).then(|| (power.powf(0.5 / self.mu) - r).abs())
    }
}

/// Supremum of the balayage martingale along a path stopped by [`DoobMonitor`].
/// Errors when the martingale is not positive before `τ_u`.
pub fn doob_supremum(path: &PathGrid, spec: &BalayageSpec, u: f64) -> Result<f64> {
    let mu = path.params.mu();
    let mut sup = f64::NEG_INFINITY;
    for (&r, &l) in path.r.iter().zip(&path.l) {
        if l > u {
            break;
        }
        let m = spec.value(mu, r, l);
        if !(m > 0.0) && l < u {
            return Err(LabError::Config(format!(
                "balayage spec '{}' is not positive: M = {m} at L = {l}",
                spec.description
            )));
        }
        sup = sup.max(m);
    }
    Ok(sup)
}

/// One point of the tail comparison `P(S > a)` vs `(x/a) ∧ 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TailPoint {
    pub level: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Result of the maximal-identity check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DoobMaximalCheck {
    /// `P(S > 2x)` against 1/2.
    pub tail_at_twice: StatReport,
    /// `x/S` against Uniform(0,1).
    pub uniformity: StatReport,
    pub grid: Vec<TailPoint>,
}

impl DoobMaximalCheck {
    pub fn pass(&self) -> bool {
        self.tail_at_twice.pass && self.uniformity.pass
    }
}

/// Compare suprema of a positive martingale started at `x` with
/// `P(S > a) = (x/a) ∧ 1`. Suprema that were capped (stopped above the
/// cap) only need to be correct as "large", which the checks respect.
pub fn doob_maximal_from_suprema(
    suprema: &[f64],
    x: f64,
    ks_threshold: f64,
    experiment_id: &str,
    seed: u64,
) -> Result<DoobMaximalCheck> {
    if suprema.len() < 2 {
        return domain("doob_maximal_check", "need at least two suprema");
    }
    if !(x > 0.0) {
        return domain(
            "doob_maximal_check",
            format!("M_0 must be positive, got {x}"),
        );
    }
    let n = suprema.len();
    let above: Vec<f64> = suprema
        .iter()
        .map(|&s| if s > 2.0 * x { 1.0 } else { 0.0 })
        .collect();
    let tail_at_twice = moment_report(&above, 0.5, experiment_id, seed)?.with_label("P(S > 2x)");
    let ratio: Vec<f64> = suprema.iter().map(|&s| (x / s).min(1.0)).collect();
    let d = ks_statistic(&ratio, |v| v.clamp(0.0, 1.0))?;
    let (m, se) = mean_and_se(&ratio)?;
    let uniformity =
        ks_from_distance(d, ks_threshold, m, se, n, experiment_id, seed).with_label("x/S uniform");
    let grid = [0.5, 1.0, 1.5, 2.0, 4.0, 10.0]
        .iter()
        .map(|&k| {
            let level = k * x;
            TailPoint {
                level,
                empirical: suprema.iter().filter(|&&s| s > level).count() as f64 / n as f64,
                theoretical: (x / level).min(1.0),
            }
        })
        .collect();
    Ok(DoobMaximalCheck {
        tail_at_twice,
        uniformity,
        grid,
    })
}

/// Maximal-identity check on paths stopped at `τ_u`.
pub fn doob_maximal_check(
    paths: &[PathGrid],
    spec: &BalayageSpec,
    u: f64,
    seed: u64,
) -> Result<DoobMaximalCheck> {
    let first = paths
        .first()
        .ok_or_else(|| LabError::Config("no paths".into()))?;
    let x = spec.value(first.params.mu(), 0.0, 0.0);
    let sups = paths
        .iter()
        .map(|p| doob_supremum(p, spec, u))
        .collect::<Result<Vec<_>>>()?;
    doob_maximal_from_suprema(&sups, x, 0.02, "doob-maximal", seed)
}

/// Gap of optional stopping at the last zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StoppingGap {
    pub gap_estimate: f64,
    pub std_error: f64,
    pub closed_form_gap: f64,
    pub n_samples: usize,
}

/// `M^h_g − h(g)` for one last zero `g` of `[0, 1]`, where
/// `M^h_t = E[h(g) | F_t]` is evaluated at `t = g` (there `R = 0`).
/// At `g = 1` the gap is its limit 0 (the conditional law collapses onto 1).
pub fn stopping_gap_value<H: Fn(f64) -> f64>(params: &BesselParams, h: &H, g: f64) -> Result<f64> {
    if !(g >= 0.0 && g <= 1.0) {
        return domain(
            "optional_stopping_gap",
            format!("last zero must lie in [0,1], got {g}"),
        );
    }
    if g == 1.0 {
        return Ok(0.0);
    }
    Ok(conditional_h_integral(params, h, 0.0, g, 1.0)? - h(g))
}

/// Mean optional-stopping gap over simulated last zeros of `[0, 1]`, and the
/// same quantity integrated against the Beta(μ, 1−μ) law.
pub fn optional_stopping_gap<H: Fn(f64) -> f64>(
    params: &BesselParams,
    last_zeros: &[f64],
    h: H,
) -> Result<StoppingGap> {
    let gaps = last_zeros
        .iter()
        .map(|&g| stopping_gap_value(params, &h, g))
        .collect::<Result<Vec<_>>>()?;
    let (gap_estimate, std_error) = mean_and_se(&gaps)?;
    let mu = params.mu();
    let inner = |g: f64| {
        if g <= 0.0 || g >= 1.0 {
            return 0.0;
        }
        stopping_gap_value(params, &h, g).unwrap_or(f64::NAN)
    };
    let closed = integrate_power_weighted(inner, mu - 1.0, -mu, QuadOptions::abs(1e-9))?.value
        * (PI * mu).sin()
        / PI;
    Ok(StoppingGap {
        gap_estimate,
        std_error,
        closed_form_gap: closed,
        n_samples: gaps.len(),
    })
}

/// `X^f = f(R_1) − f(0) − R_1 f'(R_1) + (1 − g) f''(R_1)`.
pub fn xf_value<F, D1, D2>(f: &F, df: &D1, d2f: &D2, r1: f64, g: f64) -> f64
where
    F: Fn(f64) -> f64,
    D1: Fn(f64) -> f64,
    D2: Fn(f64) -> f64,
{
    f(r1) - f(0.0) - r1 * df(r1) + (1.0 - g) * d2f(r1)
}

/// Monte Carlo estimate of `E[X^f · w(g, L_1)]` from samples `(g, L_1, R_1)`; target 0.
pub fn xf_orthogonality<F, D1, D2, W>(
    samples: &[(f64, f64, f64)],
    f: F,
    df: D1,
    d2f: D2,
    w: W,
    experiment_id: &str,
    seed: u64,
) -> Result<StatReport>
where
    F: Fn(f64) -> f64,
    D1: Fn(f64) -> f64,
    D2: Fn(f64) -> f64,
    W: Fn(f64, f64) -> f64,
{
    let vals: Vec<f64> = samples
        .iter()
        .map(|&(g, l, r)| xf_value(&f, &df, &d2f, r, g) * w(g, l))
        .collect();
    moment_report(&vals, 0.0, experiment_id, seed)
}

/// The three terms of `M̂ = M̂¹ − M̂² − M̂³` and their combination.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MhatTerms {
    pub first: f64,
    pub second: f64,
    pub third: f64,
    pub value: f64,
}

fn mhat_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-11,
        rel_tol: 1e-10,
        max_intervals: 4000,
    }
}

/// `Φ_f(s) = ∫_0^∞ z e^{−z²/2} f(s z) dz = E[f(s·m)]` for Rayleigh `m`.
fn rayleigh_mean<F: Fn(f64) -> f64>(f: &F, s: f64) -> Result<f64> {
    Ok(integrate_to_infinity(|z| z * (-0.5 * z * z).exp() * f(s * z), 0.0, mhat_opts())?.value)
}

/// `E[f(R_T) | R_t = r] = ∫ m(dz) f(z) p(T−t; r, z)`.
fn transition_expectation<F: Fn(f64) -> f64>(mu: f64, f: &F, r: f64, d: f64) -> Result<f64> {
    // Speed weight z^{1−2μ} is absorbed on [0, A]; the Gaussian tail is smooth.
    let a = r + 10.0 * d.sqrt();
    let g = |z: f64| f(z) * transition_density_unchecked(mu, d, r, z) / mu;
    let alpha = 1.0 - 2.0 * mu;
    let head = integrate_power_weighted(|s| g(a * s), alpha, 0.0, mhat_opts())?.value
        * a.powf(alpha + 1.0);
    let tail = integrate_to_infinity(|z| z.powf(alpha) * g(z), a, mhat_opts())?.value;
    Ok(head + tail)
}

/// Decomposition of `M̂_t` at `(R_t, t, g(t))` for horizon `T`.
///
/// The default form carries weights `1 − θ` on the second term and
/// `(1−w)^{−μ} w^{μ−1}` on the third, which makes `M̂ ≡ 0` for `f ≡ 1`;
/// `as_printed` swaps in `θ` and `(1−w)^{−μ} w^{−μ}` for comparison.
pub fn mhat_decomposition<F: Fn(f64) -> f64>(
    params: &BesselParams,
    f: F,
    r: f64,
    t: f64,
    g_t: f64,
    horizon: f64,
    as_printed: bool,
) -> Result<MhatTerms> {
    if !(g_t >= 0.0 && g_t <= t && t < horizon) {
        return domain(
            "mhat_decomposition",
            format!("need 0 ≤ g_t ≤ t < T, got g_t = {g_t}, t = {t}, T = {horizon}"),
        );
    }
    if !(r >= 0.0) {
        return domain(
            "mhat_decomposition",
            format!("level must be nonnegative, got {r}"),
        );
    }
    let mu = params.mu();
    let d = horizon - t;
    let first = transition_expectation(mu, &f, r, d)?;
    let theta = z_supermartingale(params, r, t, horizon)?;
    let weight = if as_printed { theta } else { 1.0 - theta };
    let second = if weight == 0.0 {
        0.0
    } else {
        weight * rayleigh_mean(&f, (horizon - g_t).sqrt())?
    };
    let c = r * r / (2.0 * d);
    let mut failure = None;
    let inner = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        let e = (-c / w).exp();
        if e == 0.0 {
            return 0.0;
        }
        match rayleigh_mean(&f, (d * (1.0 - w)).max(0.0).sqrt()) {
            Ok(v) => e * v,
            Err(_) => f64::NAN,
        }
    };
    let alpha = if as_printed { -mu } else { mu - 1.0 };
    let integral = integrate_power_weighted(inner, alpha, -mu, mhat_opts());
    let third = match integral {
        Ok(est) => est.value * (PI * mu).sin() / PI,
        Err(e) => {
            failure = Some(e);
            f64::NAN
        }
    };
    if let Some(e) = failure {
        return Err(e);
    }
    if !third.is_finite() {
        return Err(LabError::Numeric {
            op: "mhat_decomposition",
            msg: "inner Rayleigh integral failed".into(),
            achieved: f64::NAN,
        });
    }
    Ok(MhatTerms {
        first,
        second,
        third,
        value: first - second - third,
    })
}

/// Stops at `τ_u` or at the first crossing `R > φ(L)`, refining steps near
/// the barrier.
pub struct BarrierMonitor<P> {
    phi: P,
    u: f64,
}

impl<P: Fn(f64) -> f64> BarrierMonitor<P> {
    pub fn new(phi: P, u: f64) -> Self {
        Self { phi, u }
    }
}

impl<P: Fn(f64) -> f64> Monitor for BarrierMonitor<P> {
    fn observe(&mut self, _t: f64, r: f64, l: f64) -> bool {
        l > self.u || r > (self.phi)(l)
    }

    fn level_distance(&self, r: f64, l: f64) -> Option<f64> {
        Some(((self.phi)(l) - r).abs())
    }
}

/// Whether the path crosses `R > φ(L)` before `τ_u`; `None` when the path
/// ends before either event.
pub fn barrier_outcome<P: Fn(f64) -> f64>(path: &PathGrid, phi: &P, u: f64) -> Option<bool> {
    for (&r, &l) in path.r.iter().zip(&path.l) {
        if l > u {
            return Some(false);
        }
        if r > phi(l) {
            return Some(true);
        }
    }
    None
}

/// Crossing frequency against `1 − exp(−∫_0^u φ^{−2μ})` from per-path
/// outcomes (`None` = path did not reach `τ_u`).
pub fn barrier_crossing_report<P: Fn(f64) -> f64>(
    params: &BesselParams,
    outcomes: &[Option<bool>],
    phi: P,
    u: f64,
    experiment_id: &str,
    seed: u64,
) -> Result<StatReport> {
    let missing: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.is_none().then_some(i))
        .collect();
    if !missing.is_empty() {
        return Err(LabError::InsufficientHorizon {
            count: missing.len(),
            first: missing.into_iter().take(10).collect(),
        });
    }
    let hits: Vec<f64> = outcomes
        .iter()
        .map(|o| if *o == Some(true) { 1.0 } else { 0.0 })
        .collect();
    let target = hitting_probability(params, phi, u)?;
    let (p, se) = mean_and_se(&hits)?;
    Ok(moment_from_estimate(
        p,
        se,
        target,
        hits.len(),
        experiment_id,
        seed,
    ))
}

/// Crossing check on stored paths.
pub fn barrier_crossing_check<P: Fn(f64) -> f64>(
    paths: &[PathGrid],
    phi: P,
    u: f64,
    seed: u64,
) -> Result<StatReport> {
    let first = paths
        .first()
        .ok_or_else(|| LabError::Config("no paths".into()))?;
    let params = first.params;
    let outcomes: Vec<Option<bool>> = paths.iter().map(|p| barrier_outcome(p, &phi, u)).collect();
    barrier_crossing_report(&params, &outcomes, phi, u, "hitting-barrier", seed)
}
