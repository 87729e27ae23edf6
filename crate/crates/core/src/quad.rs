//! Adaptive Gauss–Kronrod quadrature with helpers for endpoint power-law
//! singularities and semi-infinite ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{domain, LabError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances and budget of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl QuadOptions {
    pub fn abs(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol: 0.0,
            max_intervals: 4000,
        }
    }
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

/// Value of an integral together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive GK15 integration of `f` over the finite interval `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the total
/// error meets `max(abs_tol, rel_tol·|value|)`. Failure to converge within the
/// interval budget is reported with the achieved estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Estimate> {
    if !(a.is_finite() && b.is_finite()) {
        return domain(
            "integrate",
            format!("finite limits required, got [{a}, {b}]"),
        );
    }
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    if a > b {
        let e = integrate(f, b, a, opts)?;
        return Ok(Estimate {
            value: -e.value,
            error: e.error,
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut total = v;
    let mut total_err = e;
    let mut heap = BinaryHeap::new();
    heap.push(Piece {
        a,
        b,
        value: v,
        error: e,
    });
    while total_err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if !total.is_finite() {
            return Err(LabError::Numeric {
                op: "integrate",
                msg: "non-finite integrand value".into(),
                achieved: total_err,
            });
        }
        if heap.len() >= opts.max_intervals {
            return Err(LabError::Numeric {
                op: "integrate",
                msg: format!("no convergence within {} intervals", opts.max_intervals),
                achieved: total_err,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(LabError::Numeric {
                op: "integrate",
                msg: "interval became too small to bisect".into(),
                achieved: total_err,
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Piece {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let mut value = 0.0;
    let mut error = 0.0;
    for p in heap.iter() {
        value += p.value;
        error += p.error;
    }
    Ok(Estimate { value, error })
}

/// `∫_a^∞ f(x) dx` via the map `x = a + s/(1−s)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    opts: QuadOptions,
) -> Result<Estimate> {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - s;
        let x = a + s / one_minus;
        let v = f(x) / (one_minus * one_minus);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, opts)
}

/// `∫_0^1 z^α (1−z)^β f(z) dz` for α, β > −1 and bounded `f`.
///
/// Each endpoint power is absorbed exactly by a change of variables
/// (`z = w^{1/(α+1)}` near 0, mirrored near 1), so the adaptive rule only
/// sees a bounded integrand.
pub fn integrate_power_weighted<F: Fn(f64) -> f64>(
    f: F,
    alpha: f64,
    beta: f64,
    opts: QuadOptions,
) -> Result<Estimate> {
    if !(alpha > -1.0 && beta > -1.0) {
        return domain(
            "integrate_power_weighted",
            format!("exponents must exceed -1, got ({alpha}, {beta})"),
        );
    }
    let half_opts = QuadOptions {
        abs_tol: 0.5 * opts.abs_tol,
        ..opts
    };
    let a1 = alpha + 1.0;
    let b1 = beta + 1.0;
    // Left half: z = w^{1/(α+1)}, z^α dz = dw/(α+1), w ∈ [0, 2^{−(α+1)}].
    let left = integrate(
        |w: f64| {
            let z = w.powf(1.0 / a1);
            (1.0 - z).powf(beta) * f(z) / a1
        },
        0.0,
        0.5f64.powf(a1),
        half_opts,
    )?;
    // Right half: 1 − z = v^{1/(β+1)}.
    let right = integrate(
        |v: f64| {
            let y = v.powf(1.0 / b1);
            (1.0 - y).powf(alpha) * f(1.0 - y) / b1
        },
        0.0,
        0.5f64.powf(b1),
        half_opts,
    )?;
    Ok(Estimate {
        value: left.value + right.value,
        error: left.error + right.error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::gamma_fn;
    use proptest::prelude::*;

    #[test]
    fn polynomials_are_exact() {
        let e = integrate(
            |x| x.powi(5) - 3.0 * x * x,
            0.0,
            2.0,
            QuadOptions::default(),
        )
        .unwrap();
        assert!((e.value - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn reversed_and_empty_limits() {
        let e = integrate(|x| x, 1.0, 0.0, QuadOptions::default()).unwrap();
        assert!((e.value + 0.5).abs() < 1e-15);
        assert_eq!(
            integrate(|x| x, 1.0, 1.0, QuadOptions::default())
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn semi_infinite_gaussian() {
        let e = integrate_to_infinity(|x| (-x * x).exp(), 0.0, QuadOptions::default()).unwrap();
        assert!((e.value - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-10);
    }

    #[test]
    fn beta_integrals_with_singular_ends() {
        for &(a, b) in &[(0.25, 0.75), (0.5, 0.5), (0.75, 0.25), (0.05, 0.9)] {
            let e =
                integrate_power_weighted(|_| 1.0, a - 1.0, -b, QuadOptions::abs(1e-12)).unwrap();
            let exact =
                gamma_fn(a).unwrap() * gamma_fn(1.0 - b).unwrap() / gamma_fn(a + 1.0 - b).unwrap();
            assert!(
                (e.value - exact).abs() < 1e-10,
                "({a},{b}): {} vs {exact}",
                e.value
            );
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let opts = QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_intervals: 4,
        };
        match integrate(|x: f64| x.sin() / x.sqrt(), 1e-9, 50.0, opts) {
            Err(LabError::Numeric { achieved, .. }) => assert!(achieved > 0.0),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn power_weighted_matches_beta_function(alpha in -0.95f64..2.0, beta in -0.95f64..2.0) {
            let e = integrate_power_weighted(|_| 1.0, alpha, beta, QuadOptions::abs(1e-11)).unwrap();
            let exact = gamma_fn(alpha + 1.0).unwrap() * gamma_fn(beta + 1.0).unwrap()
                / gamma_fn(alpha + beta + 2.0).unwrap();
            prop_assert!((e.value - exact).abs() < 1e-9 * exact.max(1.0));
        }
    }
}
