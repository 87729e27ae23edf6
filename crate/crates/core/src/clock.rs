//! Conditional expectation of the time-change clock over one Brownian cell.
//!
//! In the time-change construction the Bessel clock advances by
//! `∫ (2μγ_v)^p dv` (`p = 1/μ − 2`) over a cell of the reflected motion
//! `γ = S − β`. Given the endpoints `γ_0 = a√Δ`, `γ_Δ = b√Δ` and whether the
//! cell touches zero, that integral has an explicit conditional mean:
//!
//! * touching zero, the marginal of γ at `s` is `|N(a(1−s) − bs, s(1−s))|`
//!   (reflection of the bridge from `a` to `−b`), so the mean is `J(a, −b)`;
//! * avoiding zero, the killed bridge gives
//!   `(J(a, b) − e^{−2ab} J(a, −b)) / (1 − e^{−2ab})`,
//!
//! with `J(a, c) = ∫_0^1 E|N(a(1−s) + cs, s(1−s))|^p ds` on the unit cell.
//! The unit-cell values are tabulated on a square grid per μ.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::Result;
use crate::quad::{integrate, integrate_power_weighted, QuadOptions};
use crate::specfun::gamma_unchecked;

const TABLE_MAX: f64 = 8.0;
const TABLE_STEP: f64 = 0.05;
/// Below this endpoint distance the asymptotic far-field form is not used.
const FAR_MIN: f64 = 6.0;

/// Above this `θ²/2` the moment uses the large-θ expansion.
const MOMENT_SERIES_MAX_X: f64 = 40.0;

/// `E|θ + Z|^p` for standard normal `Z` and `p > −1`.
pub(crate) fn abs_normal_moment(p: f64, theta: f64) -> f64 {
    let theta = theta.abs();
    let x = 0.5 * theta * theta;
    if x <= MOMENT_SERIES_MAX_X {
        // 2^{p/2} Γ((p+1)/2)/√π · e^{−x} ₁F₁((1+p)/2; 1/2; x)  (Kummer-transformed, positive terms).
        let alpha = 0.5 * (1.0 + p);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..2000 {
            let kf = k as f64;
            term *= (alpha + kf) / (0.5 + kf) * x / (kf + 1.0);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        2f64.powf(0.5 * p) * gamma_unchecked(alpha) / PI.sqrt() * (-x).exp() * sum
    } else {
        // θ^p Σ_k C(p, 2k) (2k−1)!! θ^{−2k}, truncated at the smallest term.
        let inv = 1.0 / (theta * theta);
        let mut term: f64 = 1.0;
        let mut sum: f64 = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..30 {
            let kf = k as f64;
            term *= (p - 2.0 * kf + 2.0) * (p - 2.0 * kf + 1.0) / (2.0 * kf * (2.0 * kf - 1.0))
                * (2.0 * kf - 1.0)
                * inv;
            if term.abs() >= prev || term.abs() < 1e-17 * sum.abs() {
                break;
            }
            sum += term;
            prev = term.abs();
        }
        theta.powf(p) * sum
    }
}

fn unit_theta(a: f64, c: f64, s: f64) -> f64 {
    (a * (1.0 - s) + c * s) / (s * (1.0 - s)).sqrt()
}

/// `J(a, c) = ∫_0^1 E|N(a(1−s)+cs, s(1−s))|^p ds` by adaptive quadrature.
pub(crate) fn clock_j(p: f64, a: f64, c: f64) -> Result<f64> {
    let opts = QuadOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-10,
        max_intervals: 4000,
    };
    if p < 0.0 {
        // v^{p/2} is absorbed by the power weights; the moment factor is bounded.
        let f = |s: f64| {
            if s <= 0.0 || s >= 1.0 {
                // Never sampled by the Gauss–Kronrod rule.
                return 0.0;
            }
            abs_normal_moment(p, unit_theta(a, c, s))
        };
        Ok(integrate_power_weighted(f, 0.5 * p, 0.5 * p, opts)?.value)
    } else {
        let g = |s: f64| {
            if s <= 0.0 {
                return a.abs().powf(p);
            }
            if s >= 1.0 {
                return c.abs().powf(p);
            }
            let v = s * (1.0 - s);
            v.powf(0.5 * p) * abs_normal_moment(p, unit_theta(a, c, s))
        };
        Ok(integrate(g, 0.0, 1.0, opts)?.value)
    }
}

/// 16-point Gauss–Legendre nodes and weights on [−1, 1] (positive half).
const GL_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

/// `J(a, b)` for endpoints bounded well away from zero, where the integrand is smooth.
fn clock_j_far(p: f64, a: f64, b: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..8 {
        for sign in [-1.0, 1.0] {
            let s = 0.5 * (1.0 + sign * GL_X[k]);
            let v = s * (1.0 - s);
            acc += GL_W[k] * v.powf(0.5 * p) * abs_normal_moment(p, unit_theta(a, b, s));
        }
    }
    0.5 * acc
}

/// `J(a, b)` far from zero via the large-mean expansion of the absolute moment:
/// `v^{p/2} E|θ + Z|^p = m^p Σ_k C(p, 2k)(2k−1)!! (v/m²)^k` with `m = a(1−s)+bs`.
/// One power evaluation per node instead of two plus a series in θ.
fn clock_j_asymptotic(p: f64, a: f64, b: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..8 {
        for sign in [-1.0, 1.0] {
            let s = 0.5 * (1.0 + sign * GL_X[k]);
            let m = a * (1.0 - s) + b * s;
            let q = s * (1.0 - s) / (m * m);
            // Three correction terms suffice for q ≤ 1/144.
            let c1 = 0.5 * p * (p - 1.0);
            let c2 = c1 * (p - 2.0) * (p - 3.0) / 4.0;
            let c3 = c2 * (p - 4.0) * (p - 5.0) / 6.0;
            acc += GL_W[k] * m.powf(p) * (1.0 + q * (c1 + q * (c2 + q * c3)));
        }
    }
    0.5 * acc
}

fn nohit_combination(j_same: f64, j_reflected: f64, a: f64, b: f64) -> f64 {
    let e = (-2.0 * a * b).exp();
    let denom = -(-2.0 * a * b).exp_m1();
    if denom < 1e-12 {
        return j_same;
    }
    (j_same - e * j_reflected) / denom
}

/// Unit-cell clock means for one exponent `p = 1/μ − 2`.
#[derive(Debug)]
pub(crate) struct ClockTable {
    p: f64,
    n: usize,
    hit: Vec<f64>,
    nohit: Vec<f64>,
    /// Largest tabulated mean (bounds cells near zero when `p < 0`).
    sup: f64,
}

impl ClockTable {
    pub(crate) fn new(p: f64) -> Result<Self> {
        if p == 0.0 {
            // The clock is the identity; nothing to tabulate.
            return Ok(Self {
                p,
                n: 0,
                hit: Vec::new(),
                nohit: Vec::new(),
                sup: 1.0,
            });
        }
        let n = (TABLE_MAX / TABLE_STEP).round() as usize + 1;
        let mut hit = vec![0.0; n * n];
        let mut nohit = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let a = i as f64 * TABLE_STEP;
                let b = j as f64 * TABLE_STEP;
                let jr = clock_j(p, a, -b)?;
                // Avoiding zero is impossible with an endpoint at 0; use the
                // limit from a nearby interior point so interpolation stays smooth.
                let (an, bn) = (a.max(1e-3), b.max(1e-3));
                let js = clock_j(p, an, bn)?;
                let jrn = if a == an && b == bn {
                    jr
                } else {
                    clock_j(p, an, -bn)?
                };
                let nh = nohit_combination(js, jrn, an, bn);
                for (x, y) in [(i, j), (j, i)] {
                    hit[x * n + y] = jr;
                    nohit[x * n + y] = nh;
                }
            }
        }
        let sup = hit
            .iter()
            .chain(nohit.iter())
            .fold(0.0f64, |m, &v| m.max(v));
        Ok(Self {
            p,
            n,
            hit,
            nohit,
            sup,
        })
    }

    fn interpolate(&self, table: &[f64], a: f64, b: f64) -> f64 {
        let fa = a / TABLE_STEP;
        let fb = b / TABLE_STEP;
        let i = (fa.floor() as usize).min(self.n - 2);
        let j = (fb.floor() as usize).min(self.n - 2);
        let (wa, wb) = (fa - i as f64, fb - j as f64);
        let at = |i: usize, j: usize| table[i * self.n + j];
        (1.0 - wa) * ((1.0 - wb) * at(i, j) + wb * at(i, j + 1))
            + wa * ((1.0 - wb) * at(i + 1, j) + wb * at(i + 1, j + 1))
    }

    /// A generous upper bound on `unit_mean(a, b, ·)` over the likely
    /// endpoints `b` (used to approach checkpoints without overshooting).
    pub(crate) fn step_bound(&self, a: f64) -> f64 {
        if self.p == 0.0 {
            1.0
        } else if self.p < 0.0 {
            if a > 7.0 {
                self.sup.min(1.2 * (a - 6.0).powf(self.p))
            } else {
                self.sup
            }
        } else {
            1.2 * (a + 6.0).powf(self.p)
        }
    }

    /// Mean of `∫_0^1 γ_s^p ds` over a unit cell from `a` to `b`.
    pub(crate) fn unit_mean(&self, a: f64, b: f64, hit: bool) -> f64 {
        if self.p == 0.0 {
            return 1.0;
        }
        if self.p == 2.0 {
            // Second moments of the bridge are polynomial.
            let j = |a: f64, c: f64| (a * a + a * c + c * c) / 3.0 + 1.0 / 6.0;
            let jr = j(a, -b);
            return if hit {
                jr
            } else {
                nohit_combination(j(a, b), jr, a, b)
            };
        }
        let max = TABLE_MAX - 1e-9;
        if a < max && b < max {
            let t = if hit { &self.hit } else { &self.nohit };
            return self.interpolate(t, a, b);
        }
        if !hit && a.min(b) >= FAR_MIN {
            return clock_j_asymptotic(self.p, a, b);
        }
        if !hit && a.min(b) >= 4.5 && 2.0 * a * b > 50.0 {
            return clock_j_far(self.p, a, b);
        }
        let jr = clock_j(self.p, a, -b).unwrap_or_else(|_| clock_j_far(self.p, a, b));
        if hit {
            return jr;
        }
        let js = clock_j(self.p, a, b).unwrap_or_else(|_| clock_j_far(self.p, a, b));
        nohit_combination(js, jr, a, b)
    }
}

static CLOCK_TABLES: OnceLock<Mutex<HashMap<u64, Arc<ClockTable>>>> = OnceLock::new();

/// Shared clock table for exponent `p` (built once per process).
pub(crate) fn clock_table(p: f64) -> Result<Arc<ClockTable>> {
    let cache = CLOCK_TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache
        .lock()
        .expect("clock cache poisoned")
        .get(&p.to_bits())
    {
        return Ok(Arc::clone(t));
    }
    let table = Arc::new(ClockTable::new(p)?);
    cache
        .lock()
        .expect("clock cache poisoned")
        .entry(p.to_bits())
        .or_insert_with(|| Arc::clone(&table));
    Ok(table)
}
