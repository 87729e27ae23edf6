//! Acceptance run: every registered experiment at its default scale for
//! μ ∈ {0.25, 0.5, 0.75}. Prints one PASS/FAIL line per criterion (a
//! criterion passes when it passes at every μ) and fails if any does.
//!
//! This is the long-running target (tens of minutes on one core); run it
//! alone with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use bessel_lab_cli::{registry, run_experiment, ExperimentConfig};

const MUS: [f64; 3] = [0.25, 0.5, 0.75];

#[test]
fn acceptance_criteria() {
    let mut verdicts = Vec::new();
    for info in registry() {
        // The identity suite loops over the three μ values itself.
        let mus: &[f64] = if info.id == "identity-suite" {
            &[0.5]
        } else {
            &MUS
        };
        let mut pass = true;
        let mut detail = Vec::new();
        for &mu in mus {
            let mut cfg = ExperimentConfig::defaults(info.id).expect("registered id");
            cfg.mu = mu;
            let start = Instant::now();
            match run_experiment(&cfg) {
                Ok(outcome) => {
                    for r in &outcome.reports {
                        println!("    mu={mu} {}", r.summary());
                    }
                    for (k, v) in &outcome.info {
                        println!("    mu={mu} info {k} = {v}");
                    }
                    println!(
                        "    mu={mu} {} in {:.1}s",
                        info.id,
                        start.elapsed().as_secs_f64()
                    );
                    pass &= outcome.pass;
                    if !outcome.pass {
                        detail.push(format!("fails at mu={mu}"));
                    }
                }
                Err(e) => {
                    println!("    mu={mu} {} error: {e:#}", info.id);
                    pass = false;
                    detail.push(format!("error at mu={mu}"));
                }
            }
        }
        verdicts.push((info.id, pass, detail.join("; ")));
    }
    println!();
    for (id, pass, detail) in &verdicts {
        println!("{} {id} {detail}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.1).map(|v| v.0).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
