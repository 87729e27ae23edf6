//! Closed-form laws, conditional laws and martingale kernels.
//!
//! Everything here is a pure function of [`BesselParams`] and numeric
//! arguments; integrals with endpoint power singularities go through
//! [`integrate_power_weighted`], which absorbs the powers exactly.

use std::f64::consts::PI;

use crate::error::{domain, LabError, Result};
use crate::quad::{integrate, integrate_power_weighted, QuadOptions};
use crate::specfun::{gamma_unchecked, reg_inc_beta, reg_upper_gamma, BesselParams};

/// Cap beyond which `∫ φ^{−2μ}` is treated as divergent.
const HITTING_INTEGRAL_CAP: f64 = 1e6;

fn check_times(op: &'static str, t: f64, horizon: f64) -> Result<()> {
    if !(t >= 0.0 && t < horizon) {
        return domain(op, format!("need 0 ≤ t < T, got t = {t}, T = {horizon}"));
    }
    Ok(())
}

fn check_level(op: &'static str, r: f64) -> Result<()> {
    if !(r >= 0.0) {
        return domain(op, format!("level must be nonnegative, got {r}"));
    }
    Ok(())
}

/// `P(g(T) > t | R_t = r) = Q(μ, r²/(2(T−t)))`.
pub fn z_supermartingale(params: &BesselParams, r: f64, t: f64, horizon: f64) -> Result<f64> {
    check_times("z_supermartingale", t, horizon)?;
    check_level("z_supermartingale", r)?;
    reg_upper_gamma(params.mu(), r * r / (2.0 * (horizon - t)))
}

/// Density of the last zero `g(1)`: Beta(μ, 1−μ), `sin(πμ)/π · t^{μ−1}(1−t)^{−μ}`.
pub fn gmu_density(params: &BesselParams, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return domain("gmu_density", format!("t must lie in (0,1), got {t}"));
    }
    let mu = params.mu();
    Ok((PI * mu).sin() / PI * t.powf(mu - 1.0) * (1.0 - t).powf(-mu))
}

/// CDF of the last zero `g(1)`, the regularised incomplete beta `I_t(μ, 1−μ)`.
pub fn gmu_cdf(params: &BesselParams, t: f64) -> f64 {
    let mu = params.mu();
    reg_inc_beta(mu, 1.0 - mu, t.clamp(0.0, 1.0)).expect("shapes lie in (0,1)")
}

/// Law of `g(T)` given the present `(R_t, g(t))`: an atom at `g(t)` (no
/// further zero before `T`) plus a density on `(t, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalGLaw {
    pub atom_weight: f64,
    pub atom_location: f64,
    mu: f64,
    r: f64,
    t: f64,
    horizon: f64,
}

impl ConditionalGLaw {
    /// `sin(πμ)/π · e^{−r²/(2(z−t))} (T−z)^{−μ} (z−t)^{μ−1}` for `z ∈ (t, T)`, else 0.
    pub fn density(&self, z: f64) -> f64 {
        if !(z > self.t && z < self.horizon) {
            return 0.0;
        }
        let (a, b) = (z - self.t, self.horizon - z);
        (PI * self.mu).sin() / PI
            * (-self.r * self.r / (2.0 * a)).exp()
            * b.powf(-self.mu)
            * a.powf(self.mu - 1.0)
    }

    /// Atom weight plus the integral of the density.
    pub fn total_mass(&self) -> Result<f64> {
        let params = BesselParams::new(self.mu)?;
        Ok(self.atom_weight
            + conditional_h_integral(&params, |_| 1.0, self.r, self.t, self.horizon)?)
    }
}

/// Conditional law of `g(T)` given `R_t = r` and `g(t) = g_t`.
pub fn conditional_g_law(
    params: &BesselParams,
    r: f64,
    t: f64,
    horizon: f64,
    g_t: f64,
) -> Result<ConditionalGLaw> {
    let z = z_supermartingale(params, r, t, horizon)?;
    Ok(ConditionalGLaw {
        atom_weight: 1.0 - z,
        atom_location: g_t,
        mu: params.mu(),
        r,
        t,
        horizon,
    })
}

/// `E[h(g(T)) 1{g(T) > t} | R_t = r]`:
/// `sin(πμ)/π ∫_0^1 h(t + z(T−t)) (1−z)^{−μ} z^{μ−1} e^{−r²/(2z(T−t))} dz`.
pub fn conditional_h_integral<H: Fn(f64) -> f64>(
    params: &BesselParams,
    h: H,
    r: f64,
    t: f64,
    horizon: f64,
) -> Result<f64> {
    check_times("conditional_h_integral", t, horizon)?;
    check_level("conditional_h_integral", r)?;
    let mu = params.mu();
    let d = horizon - t;
    let c = r * r / (2.0 * d);
    let f = |z: f64| {
        if z <= 0.0 {
            return 0.0;
        }
        let e = (-c / z).exp();
        if e == 0.0 {
            0.0
        } else {
            h(t + z * d) * e
        }
    };
    let opts = QuadOptions {
        abs_tol: 1e-10,
        rel_tol: 0.0,
        max_intervals: 4000,
    };
    let v = integrate_power_weighted(f, mu - 1.0, -mu, opts)?.value;
    Ok((PI * mu).sin() / PI * v)
}

/// Rayleigh law of the meander: `(x e^{−x²/2}, 1 − e^{−x²/2})`.
pub fn meander_law(x: f64) -> Result<(f64, f64)> {
    check_level("meander_law", x)?;
    let e = (-0.5 * x * x).exp();
    Ok((x * e, 1.0 - e))
}

/// Tail of the excursion-length Lévy measure, `n_μ([x,∞)) = x^{−μ}/(2^μ Γ(1+μ))`.
pub fn levy_tail(params: &BesselParams, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return domain("levy_tail", format!("length must be positive, got {x}"));
    }
    Ok(params.c_mu() * x.powf(-params.mu()))
}

/// `P(R crosses φ(L) before τ_u) = 1 − exp(−∫_0^u φ(x)^{−2μ} dx)`; `u` may be infinite.
///
/// A numerically divergent integral (beyond 1e6) gives exactly 1.
pub fn hitting_probability<P: Fn(f64) -> f64>(
    params: &BesselParams,
    phi: P,
    u: f64,
) -> Result<f64> {
    if !(u >= 0.0) {
        return domain(
            "hitting_probability",
            format!("local-time horizon must be nonnegative, got {u}"),
        );
    }
    let two_mu = 2.0 * params.mu();
    let g = |x: f64| {
        let p = phi(x);
        if p.is_infinite() {
            0.0
        } else {
            p.powf(-two_mu)
        }
    };
    let opts = QuadOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-12,
        max_intervals: 20_000,
    };
    let total = if u.is_finite() {
        integrate(g, 0.0, u, opts)?.value
    } else {
        // Doubling blocks [2^k, 2^{k+1}] until the tail is negligible or the cap is passed.
        let mut total = integrate(g, 0.0, 1.0, opts)?.value;
        let mut a = 1.0f64;
        for _ in 0..64 {
            let block = integrate(g, a, 2.0 * a, opts)?.value;
            total += block;
            if total > HITTING_INTEGRAL_CAP {
                return Ok(1.0);
            }
            if block <= 1e-14 * total.max(1e-300) || (total == 0.0 && a > 1e6) {
                break;
            }
            a *= 2.0;
        }
        total
    };
    if !total.is_finite() {
        return Err(LabError::Numeric {
            op: "hitting_probability",
            msg: "integral of φ^{−2μ} is not finite".into(),
            achieved: f64::INFINITY,
        });
    }
    if total > HITTING_INTEGRAL_CAP {
        return Ok(1.0);
    }
    Ok(-(-total).exp_m1())
}

/// `X_t = E[L_T | R_t = r, L_t = l] = l + ∫_t^T p(u−t; r, 0) du` in closed form:
/// `l + 2^μ D^μ e^{−x}/Γ(1−μ) − r^{2μ} Q(1−μ, x)` with `D = T−t`, `x = r²/(2D)`.
pub fn martingale_x_closed_form(
    params: &BesselParams,
    r: f64,
    l: f64,
    t: f64,
    horizon: f64,
) -> Result<f64> {
    check_level("martingale_x_closed_form", r)?;
    if !(t >= 0.0 && t <= horizon) {
        return domain(
            "martingale_x_closed_form",
            format!("need 0 ≤ t ≤ T, got t = {t}, T = {horizon}"),
        );
    }
    let d = horizon - t;
    if d == 0.0 {
        return Ok(l);
    }
    let mu = params.mu();
    let x = r * r / (2.0 * d);
    let front = 2f64.powf(mu) * d.powf(mu) * (-x).exp() / gamma_unchecked(1.0 - mu);
    let back = if r > 0.0 {
        r.powf(2.0 * mu) * reg_upper_gamma(1.0 - mu, x)?
    } else {
        0.0
    };
    Ok(l + front - back)
}

/// `E[(t − g(t))^μ] = t^μ sin(πμ)/(πμ)`.
pub fn mean_age_power(params: &BesselParams, t: f64) -> f64 {
    let mu = params.mu();
    t.powf(mu) * (PI * mu).sin() / (PI * mu)
}

/// CDF of the unit exponential law.
pub fn exp1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// CDF of `R_t²` started at 0, i.e. `2t · Gamma(1−μ)`.
pub fn squared_level_cdf(params: &BesselParams, t: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    1.0 - reg_upper_gamma(1.0 - params.mu(), y / (2.0 * t)).expect("shape in (0,1)")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_to_infinity;
    use crate::specfun::transition_density;
    use proptest::prelude::*;

    fn params(mu: f64) -> BesselParams {
        BesselParams::new(mu).unwrap()
    }

    /// Raw-integral oracle for `Q(μ, x)`: `∫_x^∞ z^{μ−1} e^{−z} dz / Γ(μ)`.
    fn z_oracle(mu: f64, x: f64) -> f64 {
        let v = integrate_to_infinity(
            |z| z.powf(mu - 1.0) * (-z).exp(),
            x,
            QuadOptions::abs(1e-13),
        )
        .unwrap()
        .value;
        v / gamma_unchecked(mu)
    }

    #[test]
    fn z_examples() {
        let p = params(0.5);
        assert_eq!(z_supermartingale(&p, 0.0, 0.3, 1.0).unwrap(), 1.0);
        // r/√(T−t) = 1: two-sided normal tail P(|N| > 1).
        let v = z_supermartingale(&p, 0.5, 0.75, 1.0).unwrap();
        assert!((v - 0.317_310_507_862_914_1).abs() < 1e-12);
        assert!(z_supermartingale(&p, 50.0, 0.0, 1.0).unwrap() < 1e-300);
        assert!(z_supermartingale(&p, 0.1, 1.0, 1.0).is_err());
        for &mu in &[0.25, 0.75] {
            for &(r, t) in &[(0.3, 0.2), (1.0, 0.5), (2.0, 0.9)] {
                let x = r * r / (2.0 * (1.0 - t));
                let z = z_supermartingale(&params(mu), r, t, 1.0).unwrap();
                assert!((z - z_oracle(mu, x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gmu_density_examples() {
        let p = params(0.5);
        assert!((gmu_density(&p, 0.5).unwrap() - 2.0 / PI).abs() < 1e-15);
        assert!(gmu_density(&p, 0.0).is_err());
        assert!(gmu_density(&p, 1.0).is_err());
        for &mu in &[0.25, 0.5, 0.75] {
            let q = params(mu);
            let k = (PI * mu).sin() / PI;
            let mass = integrate_power_weighted(|_| k, mu - 1.0, -mu, QuadOptions::abs(1e-13))
                .unwrap()
                .value;
            let mean = integrate_power_weighted(|t| k * t, mu - 1.0, -mu, QuadOptions::abs(1e-13))
                .unwrap()
                .value;
            assert!((mass - 1.0).abs() < 1e-10);
            assert!((mean - mu).abs() < 1e-8);
            // The density is what the power-weighted integrand assumes.
            assert!(
                (gmu_density(&q, 0.3).unwrap() - k * 0.3f64.powf(mu - 1.0) * 0.7f64.powf(-mu))
                    .abs()
                    < 1e-14
            );
            // CDF at 1/2 with t = s/2: 2^{−μ} ∫_0^1 k s^{μ−1} (1 − s/2)^{−μ} ds.
            let half = integrate_power_weighted(
                |s| k * (1.0 - 0.5 * s).powf(-mu),
                mu - 1.0,
                0.0,
                QuadOptions::abs(1e-13),
            )
            .unwrap()
            .value
                * 0.5f64.powf(mu);
            assert!((gmu_cdf(&q, 0.5) - half).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_law_mass_grid() {
        for &mu in &[0.25, 0.5, 0.75] {
            for &r in &[0.0, 0.4, 1.5] {
                for &t in &[0.0, 0.3, 0.8] {
                    let law = conditional_g_law(&params(mu), r, t, 1.0, 0.5 * t).unwrap();
                    assert!(
                        (law.total_mass().unwrap() - 1.0).abs() < 1e-6,
                        "mu={mu} r={r} t={t}"
                    );
                    assert!(
                        (law.atom_weight
                            - (1.0 - z_supermartingale(&params(mu), r, t, 1.0).unwrap()))
                        .abs()
                            < 1e-15
                    );
                }
            }
        }
        // t = 0, r = 0: no atom, the density is the generalised arc sine law.
        let p = params(0.3);
        let law = conditional_g_law(&p, 0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(law.atom_weight, 0.0);
        assert!((law.density(0.42) - gmu_density(&p, 0.42).unwrap()).abs() < 1e-13);
        assert!(
            conditional_g_law(&p, 80.0, 0.0, 1.0, 0.0)
                .unwrap()
                .atom_weight
                > 1.0 - 1e-12
        );
    }

    #[test]
    fn h_integral_identities() {
        for &mu in &[0.2, 0.5, 0.8] {
            let p = params(mu);
            for &(r, t) in &[(0.0, 0.0), (0.5, 0.25), (1.2, 0.6), (3.0, 0.1)] {
                let one = conditional_h_integral(&p, |_| 1.0, r, t, 1.0).unwrap();
                assert!((one - z_supermartingale(&p, r, t, 1.0).unwrap()).abs() < 1e-6);
                assert_eq!(conditional_h_integral(&p, |_| 0.0, r, t, 1.0).unwrap(), 0.0);
            }
            for &t in &[0.0, 0.4] {
                let m = conditional_h_integral(&p, |x| x, 0.0, t, 1.0).unwrap();
                assert!((m - (t + mu * (1.0 - t))).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn meander_and_levy() {
        let (d, c) = meander_law(1.0).unwrap();
        assert!((d - (-0.5f64).exp()).abs() < 1e-15 && (c - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        let median = (2.0 * 2f64.ln()).sqrt();
        assert!((meander_law(median).unwrap().1 - 0.5).abs() < 1e-15);
        // Mode at 1: derivative of the density vanishes.
        let h = 1e-6;
        assert!((meander_law(1.0 + h).unwrap().0 - meander_law(1.0 - h).unwrap().0).abs() < 1e-11);
        for &mu in &[0.25, 0.5, 0.75] {
            let m = integrate_to_infinity(
                |z| z.powf(2.0 * mu) * meander_law(z).unwrap().0,
                0.0,
                QuadOptions::abs(1e-12),
            )
            .unwrap()
            .value;
            assert!((m - 2f64.powf(mu) * gamma_unchecked(1.0 + mu)).abs() < 1e-8);
            let p = params(mu);
            for &x in &[0.01, 0.5, 3.0] {
                let tail = levy_tail(&p, x).unwrap();
                assert!(
                    (tail * 2f64.powf(mu) * gamma_unchecked(1.0 + mu) * x.powf(mu) - 1.0).abs()
                        < 1e-14
                );
                assert!(levy_tail(&p, 1.1 * x).unwrap() < tail);
                // Tail of the density dx/(2^μ Γ(μ) x^{1+μ}), integrated in y = x e^s.
                let k = 1.0 / (2f64.powf(mu) * gamma_unchecked(mu));
                let num = integrate_to_infinity(
                    |s| k * (x * s.exp()).powf(-mu),
                    0.0,
                    QuadOptions::abs(1e-12),
                )
                .unwrap()
                .value;
                assert!((num - tail).abs() < 1e-7 * tail);
            }
        }
        assert!((levy_tail(&params(0.5), 1.0).unwrap() - (2.0 / PI).sqrt()).abs() < 1e-14);
        assert!(levy_tail(&params(0.5), 0.0).is_err());
        assert!(meander_law(-1.0).is_err());
    }

    #[test]
    fn hitting_probability_cases() {
        let p = params(0.5);
        assert!(
            (hitting_probability(&p, |_| 1.0, 1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs()
                < 1e-12
        );
        assert_eq!(
            hitting_probability(&p, |_| 1.0, f64::INFINITY).unwrap(),
            1.0
        );
        assert!(hitting_probability(&p, |_| 1e12, 1.0).unwrap() < 1e-5);
        // Convergent infinite-horizon integral at μ = 0.75: φ(x) = 1 + x.
        let q = params(0.75);
        let v = hitting_probability(&q, |x| 1.0 + x, f64::INFINITY).unwrap();
        // ∫_0^∞ (1+x)^{−1.5} dx = 2.
        assert!((v - (1.0 - (-2.0f64).exp())).abs() < 1e-8);
        // Two-level staircase.
        let stair = |x: f64| if x < 0.4 { 0.5 } else { 2.0 };
        let expect = 1.0 - (-(0.4 / 0.5 + 0.6 / 2.0f64)).exp();
        assert!((hitting_probability(&p, stair, 1.0).unwrap() - expect).abs() < 1e-9);
        // Truncation above the horizon changes nothing.
        let trunc = |x: f64| if x >= 1.0 { f64::INFINITY } else { stair(x) };
        assert_eq!(
            hitting_probability(&p, stair, 1.0).unwrap(),
            hitting_probability(&p, trunc, 1.0).unwrap()
        );
        assert!(hitting_probability(&p, stair, -1.0).is_err());
    }

    #[test]
    fn x_closed_form_matches_quadrature() {
        for &mu in &[0.25, 0.5, 0.75] {
            let p = params(mu);
            let k = mu * 2f64.powf(mu) / gamma_unchecked(1.0 - mu);
            for &(r, l, t) in &[
                (0.0, 0.0, 0.0),
                (0.3, 0.2, 0.1),
                (1.1, 0.5, 0.5),
                (2.5, 0.0, 0.2),
            ] {
                let d = 1.0 - t;
                let c = r * r / 2.0;
                let q = integrate_power_weighted(
                    |s| (-c / (s * d)).exp() * d.powf(mu),
                    mu - 1.0,
                    0.0,
                    QuadOptions::abs(1e-13),
                )
                .unwrap()
                .value;
                let x = martingale_x_closed_form(&p, r, l, t, 1.0).unwrap();
                assert!((x - (l + k * q)).abs() < 1e-9, "mu={mu} r={r}");
                // The kernel is the transition density into 0.
                if r > 0.0 {
                    let dens = transition_density(&p, 0.37, r, 0.0).unwrap();
                    let kern = k * 0.37f64.powf(mu - 1.0) * (-c / 0.37).exp();
                    assert!((dens - kern).abs() < 1e-12 * kern.max(1.0));
                }
            }
            assert_eq!(
                martingale_x_closed_form(&p, 0.7, 0.3, 1.0, 1.0).unwrap(),
                0.3
            );
            let r0 = martingale_x_closed_form(&p, 0.0, 0.4, 0.36, 1.0).unwrap();
            assert!(
                (r0 - (0.4 + 2f64.powf(mu) * 0.64f64.powf(mu) / gamma_unchecked(1.0 - mu))).abs()
                    < 1e-10
            );
        }
        let half = martingale_x_closed_form(&params(0.5), 0.0, 0.0, 0.0, 1.0).unwrap();
        assert!((half - (2.0 / PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn mean_age_power_by_beta_integration() {
        for &mu in &[0.25, 0.5, 0.75] {
            let k = (PI * mu).sin() / PI;
            // E[(1−g)^μ] under Beta(μ,1−μ), rescaled by t^μ.
            let e = integrate_power_weighted(|_| k, mu - 1.0, 0.0, QuadOptions::abs(1e-13))
                .unwrap()
                .value;
            let t = 0.25f64;
            assert!((mean_age_power(&params(mu), t) - t.powf(mu) * e).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn z_is_decreasing_in_r(mu in 0.05f64..0.95, r in 0.0f64..3.0, dr in 0.001f64..1.0, t in 0.0f64..0.95) {
            let p = params(mu);
            let a = z_supermartingale(&p, r, t, 1.0).unwrap();
            let b = z_supermartingale(&p, r + dr, t, 1.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
        }

        #[test]
        fn h1_equals_z(mu in 0.05f64..0.95, r in 0.0f64..4.0, t in 0.0f64..0.95) {
            let p = params(mu);
            let one = conditional_h_integral(&p, |_| 1.0, r, t, 1.0).unwrap();
            prop_assert!((one - z_supermartingale(&p, r, t, 1.0).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn hitting_monotone_in_u(u in 0.0f64..5.0, du in 0.0f64..2.0, c in 0.2f64..5.0) {
            let p = params(0.4);
            let a = hitting_probability(&p, |x| c + x.sin().abs(), u).unwrap();
            let b = hitting_probability(&p, |x| c + x.sin().abs(), u + du).unwrap();
            prop_assert!((0.0..=1.0).contains(&a) && b >= a - 1e-12);
        }
    }
}
