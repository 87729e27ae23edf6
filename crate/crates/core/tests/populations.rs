//! Simulated populations: cross-construction agreement, closed-form laws,
//! scaling and reproducibility.

use bessel_lab::laws::gmu_cdf;
use bessel_lab::pathsim::{map_paths, simulate_path, Construction, SimConfig, StopRule};
use bessel_lab::randomtimes::last_zero_before;
use bessel_lab::stats::{ks_statistic, ks_two_sample, mean_and_se};
use bessel_lab::{BesselParams, Executor};

fn last_zeros(mu: f64, construction: Construction, n: usize, seed: u64) -> Vec<f64> {
    let p = BesselParams::new(mu).unwrap();
    let mut cfg = SimConfig::new(1_000, 1.0, seed, n);
    cfg.record_clock = false;
    let mut g = map_paths(&p, &cfg, construction, Executor::Parallel, |_, path| {
        last_zero_before(&path, 1.0)
    })
    .unwrap();
    g.sort_by(f64::total_cmp);
    g
}

#[test]
fn constructions_agree_on_the_last_zero_law() {
    for mu in [0.5, 0.75] {
        let direct = last_zeros(mu, Construction::Direct, 3_000, 11);
        let tc = last_zeros(mu, Construction::TimeChange, 3_000, 12);
        let d = ks_two_sample(&direct, &tc).unwrap();
        // 99.9% two-sample KS quantile at n = m = 3000 is about 0.050.
        assert!(d < 0.05, "mu={mu}: two-sample KS {d}");
        let p = BesselParams::new(mu).unwrap();
        for (name, g) in [("direct", &direct), ("time change", &tc)] {
            let d = ks_statistic(g, |x| gmu_cdf(&p, x)).unwrap();
            assert!(d < 0.036, "mu={mu} {name}: KS vs Beta {d}");
        }
    }
}

#[test]
fn paths_satisfy_structural_invariants() {
    for (mu, c) in [
        (0.25, Construction::TimeChange),
        (0.5, Construction::TimeChange),
        (0.75, Construction::Direct),
        (0.3, Construction::Direct),
    ] {
        let p = BesselParams::new(mu).unwrap();
        let cfg = SimConfig::new(500, 1.0, 3, 8).with_checkpoints(&[0.25, 0.5]);
        for i in 0..8 {
            let path = simulate_path(&p, &cfg, c, i, &mut StopRule::Never).unwrap();
            path.check_invariants().unwrap();
            for t in [0.25, 0.5, 1.0] {
                assert!(path.times.iter().any(|&s| s == t), "checkpoint {t} missing");
            }
        }
    }
}

#[test]
fn local_time_mean_and_scaling() {
    let mu = 0.5;
    let p = BesselParams::new(mu).unwrap();
    let mut cfg = SimConfig::new(1_000, 1.0, 5, 4_000).with_checkpoints(&[0.25]);
    cfg.record_clock = false;
    let rows = map_paths(
        &p,
        &cfg,
        Construction::TimeChange,
        Executor::Parallel,
        |_, path| Ok((path.l_at(0.25), path.l_at(1.0))),
    )
    .unwrap();
    let l1: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (m, se) = mean_and_se(&l1).unwrap();
    assert!(
        (m - p.mean_local_time_at_one()).abs() < 4.0 * se,
        "{m} ± {se}"
    );
    let mut early: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut scaled: Vec<f64> = rows.iter().map(|r| 0.25f64.powf(mu) * r.1).collect();
    early.sort_by(f64::total_cmp);
    scaled.sort_by(f64::total_cmp);
    let d = ks_two_sample(&early, &scaled).unwrap();
    assert!(d < 0.045, "scaling KS {d}");
}

#[test]
fn populations_do_not_depend_on_the_executor() {
    let p = BesselParams::new(0.4).unwrap();
    let cfg = SimConfig::new(300, 1.0, 77, 24);
    for c in [Construction::Direct, Construction::TimeChange] {
        let run = |exec| {
            map_paths(&p, &cfg, c, exec, |_, path| {
                Ok((path.r.clone(), path.l.clone()))
            })
            .unwrap()
        };
        let seq = run(Executor::Sequential);
        assert_eq!(seq, run(Executor::Parallel));
        assert_eq!(seq, run(Executor::Workers(3)));
    }
}
