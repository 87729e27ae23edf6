//! Registry of named experiments, one per verified property, and their runners.
//!
//! Most experiments read the same "standard population" of paths on
//! `[0, 1.1]`: each path is reduced on the fly to a [`StandardRecord`] and
//! discarded, and the records are cached per configuration so that several
//! experiments in one process share a single simulation.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use anyhow::{Context, Result};
use bessel_lab::laws::{
    conditional_g_law, conditional_h_integral, exp1_cdf, gmu_cdf, levy_tail,
    martingale_x_closed_form, mean_age_power, meander_law, z_supermartingale,
};
use bessel_lab::martlab::{
    barrier_crossing_report, barrier_outcome, doob_maximal_from_suprema, mhat_decomposition,
    optional_stopping_gap, BalayageSpec, BarrierMonitor, DoobMonitor,
};
use bessel_lab::pathsim::{
    estimate_local_time_occupation, map_paths, map_paths_monitored, rescaled_occupation,
    Construction, SimConfig, StopRule,
};
use bessel_lab::quad::{integrate_power_weighted, integrate_to_infinity, QuadOptions};
use bessel_lab::randomtimes::{
    compensator_terminal, count_long_excursions, last_zero_before, local_time_at_hitting,
    meander_value, pseudo_stopping_index,
};
use bessel_lab::specfun::{
    bessel_i_scaled, gamma_fn, reg_upper_gamma, scale_fn, speed_density, transition_density,
};
use bessel_lab::stats::{
    correlation, histogram, ks_from_distance, ks_report, ks_two_sample, mean_and_se,
    moment_from_estimate, moment_report, ratio_of_means, relative_report, HistogramBin, StatReport,
};
use bessel_lab::{BesselParams, Executor, LabError};
use serde::Serialize;

use crate::config::{ExperimentConfig, UsageError};

/// Default knobs of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Defaults {
    pub mu: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub epsilon: f64,
}

type Runner = fn(&ExperimentConfig) -> Result<ExperimentOutcome>;

/// One registered experiment.
pub struct ExperimentInfo {
    pub id: &'static str,
    /// The property of the process the experiment verifies.
    pub anchor: &'static str,
    pub defaults: Defaults,
    runner: Runner,
}

/// Histogram artefact of a distribution check.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedHistogram {
    /// Suffix of the CSV file name (empty for the main histogram).
    pub name: String,
    pub bins: Vec<HistogramBin>,
}

/// Everything an experiment produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub experiment_id: String,
    pub pass: bool,
    pub reports: Vec<StatReport>,
    /// Informational quantities that do not enter the verdict.
    pub info: BTreeMap<String, f64>,
    #[serde(skip)]
    pub histograms: Vec<NamedHistogram>,
}

impl ExperimentOutcome {
    fn new(id: &str, reports: Vec<StatReport>) -> Self {
        let pass = !reports.is_empty() && reports.iter().all(|r| r.pass);
        Self {
            experiment_id: id.to_string(),
            pass,
            reports,
            info: BTreeMap::new(),
            histograms: Vec::new(),
        }
    }

    fn with_histogram(mut self, name: &str, bins: Vec<HistogramBin>) -> Self {
        self.histograms.push(NamedHistogram {
            name: name.to_string(),
            bins,
        });
        self
    }

    fn with_info(mut self, key: &str, value: f64) -> Self {
        self.info.insert(key.to_string(), value);
        self
    }
}

const STD: Defaults = Defaults {
    mu: 0.5,
    n_paths: 50_000,
    n_steps: 11_000,
    horizon: 1.1,
    epsilon: 0.02,
};

static REGISTRY: [ExperimentInfo; 15] = [
    ExperimentInfo {
        id: "beta-law",
        anchor: "last zero before 1 follows Beta(mu, 1-mu) (generalised arc sine law)",
        defaults: STD,
        runner: run_beta_law,
    },
    ExperimentInfo {
        id: "compensator-exp1",
        anchor: "terminal compensator of the last zero is exponential with mean 1",
        defaults: STD,
        runner: run_compensator,
    },
    ExperimentInfo {
        id: "doob-maximal",
        anchor: "Doob maximal identity P(S > a) = (x/a) ^ 1 for a balayage martingale vanishing at tau_u",
        defaults: Defaults {
            mu: 0.5,
            n_paths: 10_000,
            n_steps: 1_000,
            horizon: 1e12,
            epsilon: 0.02,
        },
        runner: run_doob,
    },
    ExperimentInfo {
        id: "equilibrium-martingale",
        anchor: "E[(t - g(t))^mu] = t^mu sin(pi mu)/(pi mu), the equilibrium combination of the local time",
        defaults: STD,
        runner: run_equilibrium,
    },
    ExperimentInfo {
        id: "excursion-levy",
        anchor: "excursions per unit local time longer than x follow the tail x^-mu/(2^mu Gamma(1+mu))",
        defaults: STD,
        runner: run_excursion_levy,
    },
    ExperimentInfo {
        id: "hitting-barrier",
        anchor: "P(R crosses phi(L) before tau_u) = 1 - exp(-int_0^u phi^(-2mu))",
        defaults: Defaults {
            mu: 0.5,
            n_paths: 10_000,
            n_steps: 1_000_000,
            horizon: 1e6,
            epsilon: 0.02,
        },
        runner: run_barrier,
    },
    ExperimentInfo {
        id: "hitting-local-time",
        anchor: "local time at the first hitting of a is exponential with mean a^(2mu)",
        defaults: Defaults {
            mu: 0.5,
            n_paths: 10_000,
            n_steps: 100_000,
            horizon: 1e3,
            epsilon: 0.02,
        },
        runner: run_hitting_local_time,
    },
    ExperimentInfo {
        id: "identity-suite",
        anchor: "deterministic identities of the kernels (no simulation)",
        defaults: Defaults {
            mu: 0.5,
            n_paths: 1,
            n_steps: 1,
            horizon: 1.0,
            epsilon: 0.02,
        },
        runner: run_identity_suite,
    },
    ExperimentInfo {
        id: "local-time-mean",
        anchor: "E[L_1] = E[R_1^(2mu)] = 2^mu/Gamma(1-mu)",
        defaults: STD,
        runner: run_local_time_mean,
    },
    ExperimentInfo {
        id: "meander-rayleigh",
        anchor: "meander R_1/sqrt(1-g) is Rayleigh and independent of the last zero",
        defaults: STD,
        runner: run_meander,
    },
    ExperimentInfo {
        id: "occupation-limit",
        anchor: "n^delta int_0^t f(n R_u) du converges to (int f dm) L_t",
        defaults: Defaults {
            mu: 0.5,
            n_paths: 2_000,
            n_steps: 100_000,
            horizon: 1.0,
            epsilon: 0.02,
        },
        runner: run_occupation_limit,
    },
    ExperimentInfo {
        id: "pseudo-stopping",
        anchor: "rho (argmax of R_t/sqrt(1-t) before g) is a pseudo-stopping time: E[R_rho^(2mu) - L_rho] = 0",
        defaults: STD,
        runner: run_pseudo_stopping,
    },
    ExperimentInfo {
        id: "scaling-law",
        anchor: "L_t is distributed as t^mu L_1 (Brownian scaling)",
        defaults: STD,
        runner: run_scaling,
    },
    ExperimentInfo {
        id: "stopping-gap",
        anchor: "optional stopping fails at the last zero: E[M^h_g - h(g)] for h(x) = x equals mu(1-mu)",
        defaults: STD,
        runner: run_stopping_gap,
    },
    ExperimentInfo {
        id: "z-tower",
        anchor: "Z(R_t, t) = P(g > t | F_t) (tower property against bounded test functions)",
        defaults: STD,
        runner: run_z_tower,
    },
];

/// All experiments in alphabetical order.
pub fn registry() -> &'static [ExperimentInfo] {
    &REGISTRY
}

pub fn find_experiment(id: &str) -> Option<&'static ExperimentInfo> {
    REGISTRY.iter().find(|e| e.id == id)
}

/// Text table of the registry: id, anchor and default configuration.
pub fn list_experiments() -> String {
    let mut out = String::from(
        "experiment               mu    paths      steps       horizon   eps   property\n",
    );
    for e in registry() {
        let d = e.defaults;
        out.push_str(&format!(
            "{:<24} {:<5} {:<10} {:<11} {:<9} {:<5} {}\n",
            e.id, d.mu, d.n_paths, d.n_steps, d.horizon, d.epsilon, e.anchor
        ));
    }
    out
}

/// Execute one experiment end to end (no files are written here).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let info = find_experiment(&cfg.experiment_id)
        .ok_or_else(|| UsageError(format!("unknown experiment '{}'", cfg.experiment_id)))?;
    let outcome =
        (info.runner)(cfg).with_context(|| format!("experiment {}", cfg.experiment_id))?;
    Ok(outcome)
}

fn params(cfg: &ExperimentConfig) -> Result<BesselParams> {
    Ok(BesselParams::new(cfg.mu)?)
}

fn executor(cfg: &ExperimentConfig) -> Executor {
    Executor::from_workers(cfg.workers)
}

/// Stopped runs need an adaptive step near zero; the time change has none
/// for μ ≤ 1/2, so `auto` means the direct construction here.
fn stopped_construction(cfg: &ExperimentConfig) -> Construction {
    match cfg.construction {
        bessel_lab::pathsim::ConstructionChoice::TimeChange => Construction::TimeChange,
        _ => Construction::Direct,
    }
}

/// Simulation settings shared by the stopped runs (hitting, barrier, Doob):
/// `steps` only bounds the largest step, the level hints of the monitors
/// refine it near the levels that matter.
fn stopped_sim_config(cfg: &ExperimentConfig, horizon: f64) -> SimConfig {
    let mut sim = SimConfig::new(cfg.n_steps, horizon, cfg.seed, cfg.n_paths);
    sim.record_clock = false;
    sim.zero_threshold = cfg.zero_threshold_rule.threshold(sim.dt_max());
    // Zero cells of at least 1e-9 keep small μ affordable over long runs
    // (a cell still carries local time of order 1e-9^μ).
    sim.zero_step = Some(bessel_lab::pathsim::default_zero_step(cfg.mu, sim.dt_max()).max(1e-9));
    sim
}

/// Bound check `|estimate − target| ≤ tolerance` (no standard error involved).
fn bound_report(
    id: &str,
    label: &str,
    estimate: f64,
    target: f64,
    tolerance: f64,
    n: usize,
    seed: u64,
) -> StatReport {
    StatReport {
        experiment_id: id.to_string(),
        label: label.to_string(),
        estimate,
        std_error: 0.0,
        ks_distance: None,
        ks_threshold: None,
        target,
        tolerance,
        pass: (estimate - target).abs() <= tolerance,
        n_samples: n,
        seed,
    }
}

fn empirical_cdf(sample: &[f64]) -> impl Fn(f64) -> f64 + '_ {
    move |x| sample.partition_point(|&v| v <= x) as f64 / sample.len() as f64
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

// ---------------------------------------------------------------------------
// Standard population

/// Times at which the standard population is observed.
pub const STANDARD_TIMES: [f64; 3] = [0.25, 0.5, 1.0];
/// Excursion lengths counted per path.
pub const EXCURSION_LENGTHS: [f64; 3] = [0.01, 0.03, 0.1];

/// Per-path summary of the standard population (observation window `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardRecord {
    /// Last zeros `g(t)` at [`STANDARD_TIMES`].
    pub g: [f64; 3],
    pub l: [f64; 3],
    pub r: [f64; 3],
    pub compensator: f64,
    pub meander: f64,
    /// `R_ρ^{2μ} − L_ρ`.
    pub pseudo: f64,
    /// Excursions starting before 1 longer than [`EXCURSION_LENGTHS`].
    pub long_excursions: [usize; 3],
}

type PopulationKey = String;
static POPULATIONS: OnceLock<Mutex<HashMap<PopulationKey, Arc<Vec<StandardRecord>>>>> =
    OnceLock::new();

fn standard_sim_config(cfg: &ExperimentConfig) -> Result<SimConfig> {
    if cfg.horizon < 1.1 - 1e-12 {
        return Err(UsageError(format!(
            "{} observes the window [0,1] and counts excursions up to length 0.1: horizon must be at least 1.1, got {}",
            cfg.experiment_id, cfg.horizon
        ))
        .into());
    }
    let mut sim = SimConfig::new(cfg.n_steps, cfg.horizon, cfg.seed, cfg.n_paths)
        .with_checkpoints(&STANDARD_TIMES);
    sim.zero_threshold = cfg.zero_threshold_rule.threshold(sim.dt_max());
    sim.record_clock = false;
    Ok(sim)
}

/// Reduce one path of the standard population.
pub fn standard_record(path: &bessel_lab::pathsim::PathGrid) -> bessel_lab::Result<StandardRecord> {
    let mu = path.params.mu();
    let mut g = [0.0; 3];
    let mut l = [0.0; 3];
    let mut r = [0.0; 3];
    for (k, &t) in STANDARD_TIMES.iter().enumerate() {
        g[k] = last_zero_before(path, t)?;
        l[k] = path.l_at(t);
        r[k] = path.r_at(t);
    }
    let rho = pseudo_stopping_index(path)?;
    let mut long_excursions = [0usize; 3];
    for (k, &x) in EXCURSION_LENGTHS.iter().enumerate() {
        long_excursions[k] = count_long_excursions(path, 1.0, x);
    }
    Ok(StandardRecord {
        g,
        l,
        r,
        compensator: compensator_terminal(path, 1.0)?,
        meander: meander_value(path, 1.0, g[2]),
        pseudo: path.r[rho].powf(2.0 * mu) - path.l[rho],
        long_excursions,
    })
}

/// Records of the standard population for `cfg` (simulated once per process).
pub fn standard_population(cfg: &ExperimentConfig) -> Result<Arc<Vec<StandardRecord>>> {
    let p = params(cfg)?;
    let sim = standard_sim_config(cfg)?;
    let construction = cfg.construction.resolve(cfg.mu);
    let key = format!(
        "{}|{}|{}|{}|{}|{:?}|{}",
        cfg.mu,
        cfg.n_paths,
        cfg.n_steps,
        cfg.horizon,
        cfg.seed,
        construction,
        cfg.zero_threshold_rule
    );
    let cache = POPULATIONS.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(pop) = cache.lock().expect("population cache poisoned").get(&key) {
        return Ok(Arc::clone(pop));
    }
    log::info!("simulating standard population: {key}");
    let records = map_paths(&p, &sim, construction, executor(cfg), |_, path| {
        standard_record(&path)
    })?;
    let pop = Arc::new(records);
    cache
        .lock()
        .expect("population cache poisoned")
        .insert(key, Arc::clone(&pop));
    Ok(pop)
}

fn column(pop: &[StandardRecord], f: impl Fn(&StandardRecord) -> f64) -> Vec<f64> {
    pop.iter().map(f).collect()
}

fn with_construction_info(o: ExperimentOutcome, cfg: &ExperimentConfig) -> ExperimentOutcome {
    let c = match cfg.construction.resolve(cfg.mu) {
        Construction::Direct => 0.0,
        Construction::TimeChange => 1.0,
    };
    o.with_info("construction_time_change", c)
}

fn run_beta_law(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let pop = standard_population(cfg)?;
    let g = column(&pop, |r| r.g[2]);
    let report = ks_report(&g, |x| gmu_cdf(&p, x), 0.015, &cfg.experiment_id, cfg.seed)?
        .with_label("g(1) vs Beta(mu,1-mu)");
    let bins = histogram(&g, 0.0, 1.0, 50, |x| gmu_cdf(&p, x));
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report]).with_histogram("", bins),
        cfg,
    ))
}

fn run_local_time_mean(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let pop = standard_population(cfg)?;
    let l1 = column(&pop, |r| r.l[2]);
    let report = moment_report(
        &l1,
        p.mean_local_time_at_one(),
        &cfg.experiment_id,
        cfg.seed,
    )?
    .with_label("E[L_1]");
    let r2mu = column(&pop, |r| r.r[2].powf(2.0 * cfg.mu));
    let (m, _) = mean_and_se(&r2mu)?;
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report]).with_info("mean_R1_pow_2mu", m),
        cfg,
    ))
}

fn run_compensator(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let pop = standard_population(cfg)?;
    let a = column(&pop, |r| r.compensator);
    let report =
        ks_report(&a, exp1_cdf, 0.02, &cfg.experiment_id, cfg.seed)?.with_label("A vs Exp(1)");
    let bins = histogram(&a, 0.0, 5.0, 50, exp1_cdf);
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report]).with_histogram("", bins),
        cfg,
    ))
}

fn rayleigh_cdf(x: f64) -> f64 {
    meander_law(x.max(0.0)).map(|v| v.1).unwrap_or(0.0)
}

fn run_meander(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let pop = standard_population(cfg)?;
    let m = column(&pop, |r| r.meander);
    let g = column(&pop, |r| r.g[2]);
    let ks = ks_report(&m, rayleigh_cdf, 0.015, &cfg.experiment_id, cfg.seed)?
        .with_label("meander vs Rayleigh");
    let corr = correlation(&m, &g)?;
    let indep = bound_report(
        &cfg.experiment_id,
        "corr(meander, g)",
        corr,
        0.0,
        0.02,
        m.len(),
        cfg.seed,
    );
    let bins = histogram(&m, 0.0, 4.0, 40, rayleigh_cdf);
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![ks, indep]).with_histogram("", bins),
        cfg,
    ))
}

fn run_equilibrium(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let pop = standard_population(cfg)?;
    let mut reports = Vec::new();
    for (k, &t) in STANDARD_TIMES.iter().enumerate() {
        let age = column(&pop, |r| (t - r.g[k]).max(0.0).powf(cfg.mu));
        reports.push(
            moment_report(&age, mean_age_power(&p, t), &cfg.experiment_id, cfg.seed)?
                .with_label(format!("t={t}")),
        );
    }
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, reports),
        cfg,
    ))
}

fn run_pseudo_stopping(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let pop = standard_population(cfg)?;
    let v = column(&pop, |r| r.pseudo);
    let report =
        moment_report(&v, 0.0, &cfg.experiment_id, cfg.seed)?.with_label("E[R_rho^(2mu) - L_rho]");
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report]),
        cfg,
    ))
}

fn run_stopping_gap(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let pop = standard_population(cfg)?;
    let g = column(&pop, |r| r.g[2]);
    let gap = optional_stopping_gap(&p, &g, |x| x)?;
    let report = moment_from_estimate(
        gap.gap_estimate,
        gap.std_error,
        gap.closed_form_gap,
        gap.n_samples,
        &cfg.experiment_id,
        cfg.seed,
    )
    .with_label("h(x)=x");
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report])
            .with_info("mu_times_one_minus_mu", cfg.mu * (1.0 - cfg.mu)),
        cfg,
    ))
}

fn run_excursion_levy(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let pop = standard_population(cfg)?;
    let l1 = column(&pop, |r| r.l[2]);
    let mut reports = Vec::new();
    for (k, &x) in EXCURSION_LENGTHS.iter().enumerate() {
        let counts = column(&pop, |r| r.long_excursions[k] as f64);
        let (ratio, se) = ratio_of_means(&counts, &l1)?;
        reports.push(
            relative_report(
                ratio,
                se,
                levy_tail(&p, x)?,
                0.1,
                counts.len(),
                &cfg.experiment_id,
                cfg.seed,
            )
            .with_label(format!("x={x}")),
        );
    }
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, reports),
        cfg,
    ))
}

fn run_scaling(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let pop = standard_population(cfg)?;
    let early = sorted(column(&pop, |r| r.l[0]));
    let scaled = sorted(column(&pop, |r| 0.25f64.powf(cfg.mu) * r.l[2]));
    let d = ks_two_sample(&early, &scaled)?;
    let (m, se) = mean_and_se(&early)?;
    let report = ks_from_distance(d, 0.02, m, se, early.len(), &cfg.experiment_id, cfg.seed)
        .with_label("L_0.25 vs 0.25^mu L_1");
    let hi = scaled
        .last()
        .copied()
        .unwrap_or(1.0)
        .max(early.last().copied().unwrap_or(1.0));
    let bins = histogram(&early, 0.0, hi, 40, empirical_cdf(&scaled));
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report]).with_histogram("", bins),
        cfg,
    ))
}

fn run_z_tower(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let pop = standard_population(cfg)?;
    let tests: [(&str, fn(f64) -> f64); 3] =
        [("1", |_| 1.0), ("x", |x| x), ("exp(-x)", |x| (-x).exp())];
    let mut reports = Vec::new();
    for (k, &t) in STANDARD_TIMES[..2].iter().enumerate() {
        let z: Vec<f64> = pop
            .iter()
            .map(|r| z_supermartingale(&p, r.r[k], t, 1.0))
            .collect::<bessel_lab::Result<_>>()?;
        for (name, w) in tests {
            let d: Vec<f64> = pop
                .iter()
                .zip(&z)
                .map(|(r, &zv)| {
                    let wv = w(r.r[k]);
                    let ind = if r.g[2] > t { 1.0 } else { 0.0 };
                    ind * wv - zv * wv
                })
                .collect();
            reports.push(
                moment_report(&d, 0.0, &cfg.experiment_id, cfg.seed)?
                    .with_label(format!("t={t}, w={name}")),
            );
        }
    }
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, reports),
        cfg,
    ))
}

// ---------------------------------------------------------------------------
// Stopped and dedicated populations

fn insufficient(missing: &[usize]) -> LabError {
    LabError::InsufficientHorizon {
        count: missing.len(),
        first: missing.iter().copied().take(10).collect(),
    }
}

fn run_hitting_local_time(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let construction = stopped_construction(cfg);
    let mut outcome_reports = Vec::new();
    let mut hists = Vec::new();
    for a in [0.5, 1.0] {
        // Everything scales with a²: the horizon and the largest step.
        let sim = stopped_sim_config(cfg, cfg.horizon * a * a);
        let vals = map_paths_monitored(
            &p,
            &sim,
            construction,
            executor(cfg),
            |_| StopRule::HitLevel(a),
            |_, path, _| local_time_at_hitting(&path, a),
        )?;
        let missing: Vec<usize> = vals
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i))
            .collect();
        if !missing.is_empty() {
            return Err(insufficient(&missing).into());
        }
        let scale = a.powf(2.0 * cfg.mu);
        let sample: Vec<f64> = vals.iter().map(|v| v.unwrap_or(0.0) / scale).collect();
        outcome_reports.push(
            ks_report(&sample, exp1_cdf, 0.02, &cfg.experiment_id, cfg.seed)?
                .with_label(format!("a={a}")),
        );
        hists.push((format!("a{a}"), histogram(&sample, 0.0, 5.0, 50, exp1_cdf)));
    }
    let mut o = ExperimentOutcome::new(&cfg.experiment_id, outcome_reports);
    for (name, bins) in hists {
        o = o.with_histogram(&name, bins);
    }
    Ok(o)
}

/// Barrier shapes of the crossing experiment.
fn barrier_cases() -> Vec<(&'static str, fn(f64) -> f64)> {
    vec![
        ("phi=1", |_| 1.0),
        ("phi=10", |_| 10.0),
        ("phi=0.5 on [0,0.4), 2 after", |l| {
            if l < 0.4 {
                0.5
            } else {
                2.0
            }
        }),
    ]
}

fn run_barrier(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let construction = stopped_construction(cfg);
    let u = 1.0;
    let mut reports = Vec::new();
    for (label, phi) in barrier_cases() {
        let sim = stopped_sim_config(cfg, cfg.horizon);
        let outcomes = map_paths_monitored(
            &p,
            &sim,
            construction,
            executor(cfg),
            |_| BarrierMonitor::new(phi, u),
            |_, path, _| Ok(barrier_outcome(&path, &phi, u)),
        )?;
        reports.push(
            barrier_crossing_report(&p, &outcomes, phi, u, &cfg.experiment_id, cfg.seed)?
                .with_label(label),
        );
    }
    Ok(ExperimentOutcome::new(&cfg.experiment_id, reports))
}

fn run_doob(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let construction = stopped_construction(cfg);
    let u = 1.0;
    let spec = BalayageSpec::doob_constant_barrier(&p, 1.0, u)?;
    let x = spec.value(cfg.mu, 0.0, 0.0);
    // Suprema beyond x/0.005 are only needed as "large".
    let cap = x / 0.005;
    let mut sim = stopped_sim_config(cfg, cfg.horizon);
    // The supremum is attained away from zero: resolve it to ~1% of the level.
    sim.level_floor = 1e-4;
    let sups = map_paths_monitored(
        &p,
        &sim,
        construction,
        executor(cfg),
        |_| DoobMonitor::new(&p, spec.clone(), u, cap),
        |_, path, _| {
            let done = path.l.last().is_some_and(|&l| l > u) || path.stopped;
            if !done {
                return Ok(None);
            }
            Ok(Some(bessel_lab::martlab::doob_supremum(&path, &spec, u)?))
        },
    )?;
    let missing: Vec<usize> = sups
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.is_none().then_some(i))
        .collect();
    if !missing.is_empty() {
        return Err(insufficient(&missing).into());
    }
    let sups: Vec<f64> = sups.into_iter().flatten().collect();
    let check = doob_maximal_from_suprema(&sups, x, 0.02, &cfg.experiment_id, cfg.seed)?;
    let ratio: Vec<f64> = sups.iter().map(|&s| (x / s).min(1.0)).collect();
    let bins = histogram(&ratio, 0.0, 1.0, 50, |v| v.clamp(0.0, 1.0));
    let mut o = ExperimentOutcome::new(
        &cfg.experiment_id,
        vec![check.tail_at_twice.clone(), check.uniformity.clone()],
    )
    .with_histogram("", bins)
    .with_info("M0", x);
    for pt in &check.grid {
        o = o.with_info(&format!("P(S>{:.4})", pt.level), pt.empirical);
    }
    Ok(o)
}

fn run_occupation_limit(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let p = params(cfg)?;
    let mut sim = SimConfig::new(cfg.n_steps, cfg.horizon, cfg.seed, cfg.n_paths);
    sim.record_clock = false;
    sim.zero_threshold = cfg.zero_threshold_rule.threshold(sim.dt_max());
    let construction = cfg.construction.resolve(cfg.mu);
    let n = 32.0;
    let eps = cfg.epsilon;
    let rows = map_paths(&p, &sim, construction, executor(cfg), |_, path| {
        let occ = rescaled_occupation(&path, |x| if x <= 1.0 { 1.0 } else { 0.0 }, n);
        let est = *estimate_local_time_occupation(&path, eps)?
            .last()
            .expect("nonempty");
        Ok((occ, est, *path.l.last().expect("nonempty")))
    })?;
    let occ: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let est: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let lc: Vec<f64> = rows.iter().map(|r| r.2).collect();
    // ∫_0^1 m(dx) = 1/(μ(2−2μ)).
    let constant = 1.0 / (cfg.mu * (2.0 - 2.0 * cfg.mu));
    let (m_occ, se_occ) = mean_and_se(&occ)?;
    let (m_est, _) = mean_and_se(&est)?;
    let (m_l, _) = mean_and_se(&lc)?;
    let report = relative_report(
        m_occ,
        se_occ,
        constant * m_est,
        0.1,
        occ.len(),
        &cfg.experiment_id,
        cfg.seed,
    )
    .with_label(format!("n=32 vs C * L_est(eps={eps})"));
    Ok(with_construction_info(
        ExperimentOutcome::new(&cfg.experiment_id, vec![report])
            .with_info("limit_constant", constant)
            .with_info("mean_L_construction", m_l)
            .with_info("ratio_vs_construction_L", m_occ / (constant * m_l)),
        cfg,
    ))
}

// ---------------------------------------------------------------------------
// Deterministic identities

/// Accumulates maximal errors of one identity family.
struct Identity {
    label: &'static str,
    tolerance: f64,
    worst: f64,
    count: usize,
}

impl Identity {
    fn new(label: &'static str, tolerance: f64) -> Self {
        Self {
            label,
            tolerance,
            worst: 0.0,
            count: 0,
        }
    }

    fn check(&mut self, value: f64, expected: f64) {
        let err = (value - expected).abs();
        self.worst = if err.is_nan() {
            f64::INFINITY
        } else {
            self.worst.max(err)
        };
        self.count += 1;
    }

    fn report(&self, id: &str, seed: u64) -> StatReport {
        bound_report(
            id,
            self.label,
            self.worst,
            0.0,
            self.tolerance,
            self.count,
            seed,
        )
    }
}

const IDENTITY_MUS: [f64; 3] = [0.25, 0.5, 0.75];

/// `∫ p(s;x,z) p(t;z,y) m(dz)`.
fn chapman_kolmogorov(p: &BesselParams, s: f64, t: f64, x: f64, y: f64) -> bessel_lab::Result<f64> {
    let mu = p.mu();
    let opts = QuadOptions::abs(1e-12);
    let g = |z: f64| {
        transition_density(p, s, x, z).unwrap_or(f64::NAN)
            * transition_density(p, t, z, y).unwrap_or(f64::NAN)
            / mu
    };
    let a = x.max(y) + 12.0 * s.max(t).sqrt();
    let alpha = 1.0 - 2.0 * mu;
    let head =
        integrate_power_weighted(|v| g(a * v), alpha, 0.0, opts)?.value * a.powf(alpha + 1.0);
    let tail = integrate_to_infinity(|z| z.powf(alpha) * g(z), a, opts)?.value;
    Ok(head + tail)
}

fn run_identity_suite(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let id = cfg.experiment_id.as_str();
    let mut h_one = Identity::new("conditional_h_integral(h=1) = Z", 1e-6);
    let mut mass = Identity::new("conditional g law total mass = 1", 1e-6);
    let mut ck = Identity::new("Chapman-Kolmogorov", 1e-6);
    let mut mhat_one = Identity::new("mhat(f=1) = 0", 1e-6);
    let mut mhat_zero = Identity::new("mhat at r=0 = 0 for f in {1,x,x^2}", 1e-6);
    let mut x_zero = Identity::new("X(r=0) = l + 2^mu (T-t)^mu / Gamma(1-mu)", 1e-10);
    let mut points = Identity::new("specfun point values", 1e-7);
    let grid = [(0.0, 0.0), (0.3, 0.2), (1.0, 0.5), (0.05, 0.9), (2.0, 0.75)];
    for &mu in &IDENTITY_MUS {
        let p = BesselParams::new(mu)?;
        for &(r, t) in &grid {
            h_one.check(
                conditional_h_integral(&p, |_| 1.0, r, t, 1.0)?,
                z_supermartingale(&p, r, t, 1.0)?,
            );
            for g_t in [0.0, 0.5 * t] {
                let law = conditional_g_law(&p, r, t, 1.0, g_t)?;
                mass.check(law.total_mass()?, 1.0);
            }
            let g_t = 0.5 * t;
            let m = mhat_decomposition(&p, |_| 1.0, r, t, g_t, 1.0, cfg.as_printed)?;
            mhat_one.check(m.value, 0.0);
            for l in [0.0, 0.7] {
                let x = martingale_x_closed_form(&p, 0.0, l, t, 1.0)?;
                x_zero.check(
                    x,
                    l + 2f64.powf(mu) * (1.0 - t).powf(mu) / gamma_fn(1.0 - mu)?,
                );
            }
        }
        for t in [0.0, 0.4, 0.9] {
            let fs: [fn(f64) -> f64; 3] = [|_| 1.0, |x| x, |x| x * x];
            for f in fs {
                mhat_zero.check(
                    mhat_decomposition(&p, f, 0.0, t, t, 1.0, cfg.as_printed)?.value,
                    0.0,
                );
            }
        }
        for &x in &[0.1, 0.7, 1.5] {
            for &y in &[0.2, 0.9, 1.6] {
                let lhs = chapman_kolmogorov(&p, 0.4, 0.6, x, y)?;
                ck.check(lhs, transition_density(&p, 1.0, x, y)?);
            }
        }
    }
    // Point values of the special functions.
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let two_over_pi_sqrt = (2.0 / std::f64::consts::PI).sqrt();
    points.check(gamma_fn(0.5)?, sqrt_pi);
    points.check(gamma_fn(1.0)?, 1.0);
    points.check(gamma_fn(1.5)?, 0.5 * sqrt_pi);
    points.check(reg_upper_gamma(0.5, 0.0)?, 1.0);
    points.check(reg_upper_gamma(1.0, 2.0)?, (-2.0f64).exp());
    points.check(reg_upper_gamma(0.5, 0.5)?, 0.317_310_5);
    points.check(bessel_i_scaled(-0.5, 0.0)?, two_over_pi_sqrt);
    points.check(bessel_i_scaled(-0.5, 1.0)?, two_over_pi_sqrt * 1f64.cosh());
    let half = BesselParams::new(0.5)?;
    points.check(
        transition_density(&half, 1.0, 0.0, 1.0)?,
        (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt(),
    );
    points.check(speed_density(&half, 1.0)?, 2.0);
    points.check(scale_fn(&half, 1.0)?, 1.0);
    points.check(scale_fn(&BesselParams::new(0.25)?, 4.0)?, 2.0);
    points.check(speed_density(&BesselParams::new(0.75)?, 2.0)?, 0.942_809_0);
    points.check(half.c_mu(), two_over_pi_sqrt);
    let reports = [h_one, mass, ck, mhat_one, mhat_zero, x_zero, points]
        .iter()
        .map(|i| i.report(id, cfg.seed))
        .collect();
    Ok(ExperimentOutcome::new(id, reports)
        .with_info("as_printed", if cfg.as_printed { 1.0 } else { 0.0 }))
}
