//! Random times and excursion functionals extracted from a single path.
//!
//! Zero visits are known per grid interval (`PathGrid::zero_cells`). Where a
//! time inside such an interval is needed (the last zero before `T`), it is
//! drawn from the exact bridge law of the last-zero position using the
//! path's auxiliary stream, so extraction is deterministic per path.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{domain, Result};
use crate::pathsim::{last_zero_fraction, PathGrid};

/// Purpose tag of the auxiliary uniforms used for last-zero refinement.
const TAG_LAST_ZERO: u64 = 1;

/// Slack when comparing requested times with grid times.
const TIME_SLACK: f64 = 1e-12;

/// Functionals of one path; see [`RandomTimesRecord::from_path`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomTimesRecord {
    /// Terminal time the record refers to.
    pub horizon: f64,
    /// Last zero `g(T)` before the horizon.
    pub g_last_zero: f64,
    /// Meander value `R_T / √(T − g)`.
    pub meander: f64,
    /// First hitting times `T_a` keyed by level (as printed with `{}`).
    pub hitting: BTreeMap<String, Option<f64>>,
    /// Inverse local times `τ_u` keyed by local-time level.
    pub tau: BTreeMap<String, Option<f64>>,
    /// Pseudo-stopping time ρ (requires `T = 1`, otherwise computed with `T` in place of 1).
    pub rho: f64,
    /// Lengths of the completed excursions.
    pub excursion_lengths: Vec<f64>,
    /// Terminal value of the compensator of `1{g ≤ t}`.
    pub compensator_terminal: f64,
}

impl RandomTimesRecord {
    /// Extract every functional at horizon `t_end`.
    pub fn from_path(
        path: &PathGrid,
        t_end: f64,
        levels: &[f64],
        tau_levels: &[f64],
    ) -> Result<Self> {
        let g = last_zero_before(path, t_end)?;
        let mut hitting = BTreeMap::new();
        for &a in levels {
            hitting.insert(format!("{a}"), first_hitting(path, a)?);
        }
        let mut tau = BTreeMap::new();
        for &u in tau_levels {
            tau.insert(format!("{u}"), inverse_local_time(path, u)?);
        }
        let rho_index = argmax_before(path, g, t_end);
        Ok(Self {
            horizon: t_end,
            g_last_zero: g,
            meander: meander_value(path, t_end, g),
            hitting,
            tau,
            rho: path.times[rho_index],
            excursion_lengths: extract_excursions(path),
            compensator_terminal: compensator_terminal(path, t_end)?,
        })
    }
}

fn check_time(op: &'static str, path: &PathGrid, t: f64) -> Result<()> {
    if path.is_empty() {
        return domain(op, "empty path");
    }
    if !(t >= 0.0) || t > path.end_time() + TIME_SLACK {
        return domain(
            op,
            format!(
                "time {t} outside the simulated range [0, {}]",
                path.end_time()
            ),
        );
    }
    Ok(())
}

/// Position of the last zero inside zero interval `i`.
fn last_zero_in_cell(path: &PathGrid, i: usize) -> f64 {
    let (t0, t1) = (path.times[i], path.times[i + 1]);
    let dt = t1 - t0;
    let s = dt.sqrt();
    let v = last_zero_fraction(
        path.params.mu(),
        path.r[i] / s,
        path.r[i + 1] / s,
        path.cell_uniform(i, TAG_LAST_ZERO),
    );
    (t0 + v * dt).clamp(t0, t1)
}

/// Last zero `g(T) = sup{t ≤ T : R_t = 0}`.
///
/// The last interval before `T` that visits zero is located on the grid and
/// the zero position inside it is drawn from the bridge law. Returns 0 when
/// no interval visits zero.
pub fn last_zero_before(path: &PathGrid, t_end: f64) -> Result<f64> {
    check_time("last_zero_before", path, t_end)?;
    for &i in path.zero_cells.iter().rev() {
        if path.times[i] >= t_end {
            continue;
        }
        let g = last_zero_in_cell(path, i);
        if g <= t_end {
            return Ok(g);
        }
        // The interval straddles T and its last zero lies beyond T: the last
        // zero before T is at most the cell start; use the previous cell.
    }
    Ok(0.0)
}

/// Meander value `R_T / √(T − g)` (0 when `g = T`).
pub fn meander_value(path: &PathGrid, t_end: f64, g: f64) -> f64 {
    let gap = t_end - g;
    if gap <= 0.0 {
        return 0.0;
    }
    path.r_at(t_end + TIME_SLACK) / gap.sqrt()
}

/// First hitting time of level `a > 0`, located by linear interpolation
/// within the first interval that ends at or above `a`.
pub fn first_hitting(path: &PathGrid, a: f64) -> Result<Option<f64>> {
    Ok(first_hitting_index(path, a)?.map(|(_, t)| t))
}

/// Interval index and interpolated time of the first crossing of `a`.
pub fn first_hitting_index(path: &PathGrid, a: f64) -> Result<Option<(usize, f64)>> {
    if !(a > 0.0) {
        return domain("first_hitting", format!("level must be positive, got {a}"));
    }
    for i in 0..path.len().saturating_sub(1) {
        let (x, y) = (path.r[i], path.r[i + 1]);
        if y >= a {
            let (t0, t1) = (path.times[i], path.times[i + 1]);
            let frac = if y > x {
                ((a - x) / (y - x)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            return Ok(Some((i, t0 + frac * (t1 - t0))));
        }
    }
    Ok(None)
}

/// Local time accumulated up to the first passage at `a`.
pub fn local_time_at_hitting(path: &PathGrid, a: f64) -> Result<Option<f64>> {
    Ok(first_hitting_index(path, a)?.map(|(i, _)| path.l[i + 1]))
}

/// Right-continuous inverse local time `τ_u = inf{t : L_t > u}` on the grid.
pub fn inverse_local_time(path: &PathGrid, u: f64) -> Result<Option<f64>> {
    if !(u >= 0.0) {
        return domain(
            "inverse_local_time",
            format!("level must be nonnegative, got {u}"),
        );
    }
    let k = path.l.partition_point(|&l| l <= u);
    Ok(path.times.get(k).copied())
}

fn argmax_before(path: &PathGrid, g: f64, t_end: f64) -> usize {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..path.len() {
        let t = path.times[i];
        if t >= g || t >= t_end {
            break;
        }
        let v = path.r[i] / (t_end - t).sqrt();
        if v >= best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Grid index of ρ: the last grid time strictly before `g(1)` at which
/// `R_t/√(1−t)` attains its maximum over the grid points before `g(1)`.
/// Returns index 0 when no grid point precedes `g`.
pub fn pseudo_stopping_index(path: &PathGrid) -> Result<usize> {
    let g = last_zero_before(path, 1.0)?;
    Ok(argmax_before(path, g, 1.0))
}

/// Pseudo-stopping time ρ (horizon 1).
pub fn pseudo_stopping_time(path: &PathGrid) -> Result<f64> {
    Ok(path.times[pseudo_stopping_index(path)?])
}

/// One excursion away from zero between consecutive zero intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Excursion {
    pub start: f64,
    /// End time; for the excursion still running at the end of the path this
    /// is the final grid time.
    pub end: f64,
    pub complete: bool,
}

impl Excursion {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

fn cell_mid(path: &PathGrid, i: usize) -> f64 {
    0.5 * (path.times[i] + path.times[i + 1])
}

/// All excursions, including the final incomplete one. Excursion ends are
/// the midpoints of the zero intervals that bracket them; zero intervals that
/// are adjacent on the grid bracket no excursion.
pub fn excursions(path: &PathGrid) -> Vec<Excursion> {
    let mut out = Vec::new();
    for w in path.zero_cells.windows(2) {
        if w[1] > w[0] + 1 {
            out.push(Excursion {
                start: cell_mid(path, w[0]),
                end: cell_mid(path, w[1]),
                complete: true,
            });
        }
    }
    if let Some(&last) = path.zero_cells.last() {
        if last + 2 < path.len() {
            out.push(Excursion {
                start: cell_mid(path, last),
                end: path.end_time(),
                complete: false,
            });
        }
    }
    out
}

/// Lengths of the completed excursions (the one running at the horizon is dropped).
pub fn extract_excursions(path: &PathGrid) -> Vec<f64> {
    excursions(path)
        .into_iter()
        .filter(|e| e.complete)
        .map(|e| e.length())
        .collect()
}

/// Number of excursions starting before `t_end` whose length exceeds `x`;
/// an unfinished excursion counts once it has lasted longer than `x`.
pub fn count_long_excursions(path: &PathGrid, t_end: f64, x: f64) -> usize {
    excursions(path)
        .iter()
        .filter(|e| e.start < t_end && e.length() > x)
        .count()
}

/// Terminal compensator `c_μ ∫_0^T (T−u)^{−μ} dL_u`.
///
/// Each interval's local-time increment is spread uniformly over the
/// interval and the kernel is integrated exactly against it, which keeps the
/// endpoint singularity at `u = T` finite.
pub fn compensator_terminal(path: &PathGrid, t_end: f64) -> Result<f64> {
    check_time("compensator_terminal", path, t_end)?;
    let mu = path.params.mu();
    let one_m = 1.0 - mu;
    let mut acc = 0.0;
    for &i in &path.zero_cells {
        let (t0, t1) = (path.times[i], path.times[i + 1].min(t_end));
        if t0 >= t_end {
            break;
        }
        let dl = path.l[i + 1] - path.l[i];
        if dl <= 0.0 {
            continue;
        }
        let dt = t1 - t0;
        let avg = if dt > 0.0 {
            ((t_end - t0).powf(one_m) - (t_end - t1).max(0.0).powf(one_m)) / (one_m * dt)
        } else {
            (t_end - t0).powf(-mu)
        };
        acc += dl * avg;
    }
    Ok(path.params.c_mu() * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathsim::{simulate_path, Construction, SimConfig, StopRule};
    use crate::specfun::BesselParams;
    use proptest::prelude::*;

    fn manual_path(times: Vec<f64>, r: Vec<f64>, l: Vec<f64>, zero_cells: Vec<usize>) -> PathGrid {
        PathGrid {
            params: BesselParams::new(0.5).unwrap(),
            times,
            r,
            l,
            clock: None,
            construction: Construction::Direct,
            zero_threshold: 1e-3,
            zero_cells,
            aux_seed: 9,
            stopped: false,
        }
    }

    fn sim(mu: f64, construction: Construction, seed: u64, index: u64) -> PathGrid {
        let cfg = SimConfig::new(2000, 1.0, seed, 1).with_checkpoints(&[0.5]);
        simulate_path(
            &BesselParams::new(mu).unwrap(),
            &cfg,
            construction,
            index,
            &mut StopRule::Never,
        )
        .unwrap()
    }

    #[test]
    fn last_zero_of_hand_built_path() {
        // Visits zero only in the first interval.
        let p = manual_path(
            vec![0.0, 0.1, 0.5, 1.0],
            vec![0.0, 0.5, 0.8, 0.3],
            vec![0.0, 0.1, 0.1, 0.1],
            vec![0],
        );
        let g = last_zero_before(&p, 1.0).unwrap();
        assert!(g > 0.0 && g <= 0.1);
        assert!(last_zero_before(&p, 1.5).is_err());
        let m = meander_value(&p, 1.0, g);
        assert!((m - 0.3 / (1.0 - g).sqrt()).abs() < 1e-15);
        // No zero cell at all: g = 0.
        let q = manual_path(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0], vec![]);
        assert_eq!(last_zero_before(&q, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn hitting_by_interpolation() {
        let p = manual_path(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 0.5, 1.5],
            vec![0.0; 3],
            vec![0],
        );
        assert_eq!(first_hitting(&p, 1.0).unwrap(), Some(1.5));
        assert!(first_hitting(&p, 0.1).unwrap().unwrap() > 0.0);
        assert_eq!(first_hitting(&p, 2.0).unwrap(), None);
        assert!(first_hitting(&p, 0.0).is_err());
    }

    #[test]
    fn inverse_local_time_cases() {
        let p = manual_path(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0; 4],
            vec![0.0, 0.0, 0.4, 0.9],
            vec![0, 1, 2],
        );
        assert_eq!(inverse_local_time(&p, 0.0).unwrap(), Some(2.0));
        assert_eq!(inverse_local_time(&p, 0.4).unwrap(), Some(3.0));
        assert_eq!(inverse_local_time(&p, 0.9).unwrap(), None);
        assert!(inverse_local_time(&p, -1.0).is_err());
    }

    #[test]
    fn excursions_and_compensator_by_hand() {
        let p = manual_path(
            vec![0.0, 0.1, 0.2, 0.5, 0.6, 1.0],
            vec![0.0, 0.2, 0.3, 0.0, 0.4, 0.7],
            vec![0.0, 0.1, 0.1, 0.1, 0.3, 0.3],
            vec![0, 3],
        );
        let ex = excursions(&p);
        assert_eq!(ex.len(), 2);
        assert!((ex[0].length() - 0.5).abs() < 1e-15 && ex[0].complete);
        assert!(!ex[1].complete);
        assert_eq!(extract_excursions(&p).len(), 1);
        assert_eq!(count_long_excursions(&p, 1.0, 0.3), 2);
        // Closed-form cell averages of (1−u)^{−1/2}.
        let c = BesselParams::new(0.5).unwrap().c_mu();
        let avg = |a: f64, b: f64| ((1.0 - a).sqrt() - (1.0 - b).sqrt()) / (0.5 * (b - a));
        let expect = c * (0.1 * avg(0.0, 0.1) + 0.2 * avg(0.5, 0.6));
        assert!((compensator_terminal(&p, 1.0).unwrap() - expect).abs() < 1e-14);
        let flat = manual_path(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0], vec![0]);
        assert_eq!(compensator_terminal(&flat, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn rho_is_peak_of_single_excursion() {
        let p = manual_path(
            vec![0.0, 0.1, 0.3, 0.5, 0.6, 1.0],
            vec![0.0, 0.3, 0.6, 0.2, 0.1, 0.5],
            vec![0.0, 0.1, 0.1, 0.1, 0.2, 0.2],
            vec![0, 3],
        );
        let g = last_zero_before(&p, 1.0).unwrap();
        assert!(g >= 0.5 && g <= 0.6);
        assert_eq!(pseudo_stopping_time(&p).unwrap(), 0.3);
    }

    #[test]
    fn record_on_simulated_paths() {
        for (mu, c) in [
            (0.25, Construction::TimeChange),
            (0.75, Construction::Direct),
            (0.5, Construction::TimeChange),
        ] {
            for k in 0..20 {
                let p = sim(mu, c, 17, k);
                let rec = RandomTimesRecord::from_path(&p, 1.0, &[0.5, 1.0], &[0.0, 0.5]).unwrap();
                assert!(0.0 <= rec.rho && rec.rho <= rec.g_last_zero && rec.g_last_zero <= 1.0);
                assert!(rec.meander >= 0.0);
                assert!(rec.excursion_lengths.iter().sum::<f64>() <= 1.0 + 1e-12);
                assert!(rec.compensator_terminal >= 0.0);
                // L does not grow after the last zero.
                let k = (p.index_at(rec.g_last_zero) + 1).min(p.len() - 1);
                assert_eq!(p.l[k], p.l_at(1.0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ordering_invariants(seed in 0u64..1000, mu in 0.1f64..0.9) {
            let c = if mu <= 0.5 { Construction::TimeChange } else { Construction::Direct };
            let p = sim(mu, c, seed, 0);
            let g = last_zero_before(&p, 1.0).unwrap();
            let rho = pseudo_stopping_time(&p).unwrap();
            prop_assert!(0.0 <= rho && rho <= g && g <= 1.0);
            let g_half = last_zero_before(&p, 0.5).unwrap();
            prop_assert!(g_half <= g);
            let ex = extract_excursions(&p);
            prop_assert!(ex.iter().all(|&x| x > 0.0));
            prop_assert!(ex.iter().sum::<f64>() <= 1.0 + 1e-12);
            if let Some(t) = first_hitting(&p, 0.3).unwrap() {
                prop_assert!(t > 0.0);
            }
        }
    }
}
