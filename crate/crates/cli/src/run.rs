use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use stochint::bounds::{chaining_schedule, induction_levels, ChainingSchedule};
use stochint::chaos::{chaos_moment_bound, chaos_s, chaos_tail_bound, ChaosCoefficients, ChaosDistribution};
use stochint::decomposition::canonical_part;
use stochint::experiments::{
    counterexample_experiment, decoupling_experiment, exponent_fit, mc_sup_tail,
    symmetrization_experiment, CounterexampleReport, ExponentFit, McSettings,
    SymmetrizationReport, TailCurve,
};
use stochint::kernels::{box_restriction_family, interval_family, DenseBudget, FunctionFamily, KernelFunction};
use stochint::measure_space::{stream_rng, ProbabilitySpace};
use stochint::statistics::{
    derive_expansion_coefficients, expansion_trial, j_from_expansion, multiple_integral_j,
    random_kernel, ExpansionCoefficients, StatisticKind, EXPANSION_TOLERANCE,
};

use crate::config::{ExperimentConfig, ExperimentKind, FamilySpec, SpaceSpec, WeightsSpec};
use crate::overlay::{overlay_bounds, overlay_csv, BoundSpec, OverlayRow};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    Table,
    Report,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    /// The resolved configuration; re-running it reproduces `payload`.
    pub config: ExperimentConfig,
    pub config_toml: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum Payload {
    SupTail {
        statistic: StatisticKind,
        members: usize,
        curve: TailCurve,
        overlay: Vec<OverlayRow>,
        fit: Option<ExponentFit>,
    },
    Symmetrization {
        members: usize,
        rows: Vec<SymmetrizationReport>,
    },
    Decoupling {
        members: usize,
        plain: Vec<OverlayRow>,
        decoupled: Vec<OverlayRow>,
        ratios: Vec<Option<f64>>,
    },
    Counterexample {
        result: CounterexampleReport,
        overlay: Vec<OverlayRow>,
    },
    ChaosAudit {
        sets: Vec<ChaosSetAudit>,
        tail_violations: usize,
        moment_violations: usize,
    },
    ExpansionAudit {
        coefficients: ExpansionCoefficients,
        held_out: usize,
        max_relative_error: f64,
    },
    ScheduleAudit {
        rows: Vec<ScheduleRow>,
        induction_levels: Vec<f64>,
        failures: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosTailRow {
    pub x: f64,
    pub exact: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosMomentRow {
    pub p: f64,
    pub q: f64,
    pub moment_q: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosSetAudit {
    pub s: f64,
    pub max_abs: f64,
    pub tail: Vec<ChaosTailRow>,
    pub moments: Vec<ChaosMomentRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub x: f64,
    pub schedule: Option<ChainingSchedule>,
    pub invariants: Option<[bool; 3]>,
}

/// Files to write, and whether a numerical self-check failed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<(String, String)>,
    pub check_failure: Option<String>,
}

fn build_space(spec: &SpaceSpec) -> Result<ProbabilitySpace, CliError> {
    let space = match &spec.weights {
        WeightsSpec::Named(_) => ProbabilitySpace::uniform(spec.points),
        WeightsSpec::Explicit(w) => ProbabilitySpace::finite(w),
    };
    space.map_err(|e| CliError::field("space", e))
}

fn config_space(config: &ExperimentConfig) -> Result<ProbabilitySpace, CliError> {
    build_space(
        config
            .space
            .as_ref()
            .ok_or_else(|| CliError::field("space", "required for this experiment"))?,
    )
}

fn build_family(config: &ExperimentConfig) -> Result<FunctionFamily, CliError> {
    let k = config.k;
    let family = match config.family()? {
        FamilySpec::Interval { grid } => interval_family(config.sigma()?, *grid)
            .map_err(|e| CliError::field("family.grid", e))?,
        FamilySpec::Box { table, grid_per_axis } => {
            let space = config_space(config)?;
            let f = KernelFunction::from_table(k, space.points(), table.clone())
                .map_err(|e| CliError::field("family.table", e))?;
            box_restriction_family(&f, &space, *grid_per_axis)
                .map_err(|e| CliError::field("family", e))?
        }
        FamilySpec::Singleton { table } => {
            let space = config_space(config)?;
            let f = KernelFunction::from_table(k, space.points(), table.clone())
                .map_err(|e| CliError::field("family.table", e))?;
            FunctionFamily::singleton(f, space).map_err(|e| CliError::field("family.table", e))?
        }
        FamilySpec::RandomCanonical { members, seed } => {
            let space = config_space(config)?;
            let kernels = (0..*members as u64)
                .map(|i| {
                    let g = canonical_part(&random_kernel(k, space.points(), *seed, i), &space)?;
                    let sup = g.sup_norm();
                    Ok(if sup > 1.0 { g.scaled(1.0 / sup) } else { g })
                })
                .collect::<stochint::Result<Vec<_>>>()?;
            let sigma = kernels
                .iter()
                .map(|g| g.l2_norm(&space))
                .collect::<stochint::Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max)
                .min(1.0);
            FunctionFamily::new(kernels, DenseBudget::new(*members as f64, 0.0), sigma, space)
                .map_err(|e| CliError::field("family", e))?
        }
    };
    if family.arity() != k {
        return Err(CliError::field("k", format!("family has arity {}", family.arity())));
    }
    Ok(family)
}

fn bound_spec(config: &ExperimentConfig, family: &FunctionFamily, n: usize) -> BoundSpec {
    BoundSpec {
        n,
        k: family.arity(),
        sigma: family.sigma().min(1.0),
        budget: family.budget(),
        constants: config.bound_constants(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Runs the configured experiment in the ambient rayon pool.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    config.validate()?;
    let started = Instant::now();
    let settings = McSettings::new(config.reps, config.seed);
    let mut tables = Vec::new();
    let mut check_failure = None;

    let payload = match config.experiment {
        ExperimentKind::SupTail => {
            let family = build_family(config)?;
            let n = config.n()?;
            let statistic = config.statistic.unwrap_or(StatisticKind::J);
            let curve = mc_sup_tail(&family, n, statistic, &config.grid()?, &settings)?;
            let overlay = overlay_bounds(&curve, &bound_spec(config, &family, n))?;
            tables.push(("curve.csv".to_string(), overlay_csv(&overlay)));
            Payload::SupTail {
                statistic,
                members: family.len(),
                fit: exponent_fit(&curve).ok(),
                curve,
                overlay,
            }
        }
        ExperimentKind::Symmetrization => {
            let family = build_family(config)?;
            let n = config.n()?;
            let rows = config
                .grid()?
                .iter()
                .map(|x| symmetrization_experiment(&family, n, *x, &settings))
                .collect::<stochint::Result<Vec<_>>>()?;
            let mut csv = String::from("x,lhs,lhs_lo,lhs_hi,rhs,rhs_lo,rhs_hi,violated\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.x, r.lhs, r.lhs_ci.0, r.lhs_ci.1, r.rhs, r.rhs_ci.0, r.rhs_ci.1, r.violated
                ));
            }
            tables.push(("symmetrization.csv".to_string(), csv));
            let violated: Vec<String> = rows.iter().filter(|r| r.violated).map(|r| r.x.to_string()).collect();
            if !violated.is_empty() {
                check_failure = Some(format!("symmetrization separated at x = {}", violated.join(", ")));
            }
            Payload::Symmetrization {
                members: family.len(),
                rows,
            }
        }
        ExperimentKind::Decoupling => {
            let family = build_family(config)?;
            let n = config.n()?;
            let report = decoupling_experiment(&family, n, &config.grid()?, &settings)?;
            let spec = bound_spec(config, &family, n);
            let plain = overlay_bounds(&report.plain, &spec)?;
            let decoupled = overlay_bounds(&report.decoupled, &spec)?;
            tables.push(("curve.csv".to_string(), overlay_csv(&plain)));
            tables.push(("curve_decoupled.csv".to_string(), overlay_csv(&decoupled)));
            let mut ratio_csv = String::from("x,ratio\n");
            for (x, r) in report.plain.x_grid.iter().zip(&report.ratios) {
                ratio_csv.push_str(&format!("{x},{}\n", fmt_opt(*r)));
            }
            tables.push(("ratios.csv".to_string(), ratio_csv));
            Payload::Decoupling {
                members: family.len(),
                plain,
                decoupled,
                ratios: report.ratios,
            }
        }
        ExperimentKind::Counterexample => {
            let sigma = config.sigma()?;
            let n = config.n()?;
            let epsilon = config.epsilon.expect("validated");
            let result = counterexample_experiment(sigma, n, epsilon, &settings)?;
            let family = interval_family(sigma, result.grid)?;
            let curve = TailCurve {
                x_grid: vec![result.x_low, result.x_high],
                probs: vec![result.p_low, result.p_high],
                replications: config.reps,
                ci_lo: vec![result.p_low_ci.0, result.p_high_ci.0],
                ci_hi: vec![result.p_low_ci.1, result.p_high_ci.1],
                wilson_halfwidths: vec![
                    (result.p_low_ci.1 - result.p_low_ci.0) / 2.0,
                    (result.p_high_ci.1 - result.p_high_ci.0) / 2.0,
                ],
            };
            let overlay = overlay_bounds(&curve, &bound_spec(config, &family, n))?;
            tables.push(("curve.csv".to_string(), overlay_csv(&overlay)));
            Payload::Counterexample { result, overlay }
        }
        ExperimentKind::ChaosAudit => {
            let (sets, tail_violations, moment_violations, csv) = chaos_audit(config)?;
            tables.push(("chaos_tail.csv".to_string(), csv));
            if tail_violations + moment_violations > 0 {
                check_failure = Some(format!(
                    "{tail_violations} tail and {moment_violations} moment bound violations"
                ));
            }
            Payload::ChaosAudit {
                sets,
                tail_violations,
                moment_violations,
            }
        }
        ExperimentKind::ExpansionAudit => {
            let n = config.n()?;
            let k = config.k;
            let space = config_space(config)?;
            let trials = config.trials.unwrap_or(30.max(3 * (k + 1)));
            let held_out = config.held_out.unwrap_or(20);
            let coefficients = derive_expansion_coefficients(n, k, &space, trials, config.seed)?;
            let mut max_relative_error: f64 = 0.0;
            for i in 0..held_out as u64 {
                let (f, sample) = expansion_trial(n, k, &space, config.seed, trials as u64 + i)?;
                let direct = multiple_integral_j(&f, &sample, &space)?;
                let expanded = j_from_expansion(&f, &sample, &space, &coefficients)?;
                let error = (direct - expanded).abs() / direct.abs().max(1e-12);
                max_relative_error = max_relative_error.max(error);
            }
            let mut csv = String::from("r,coefficient\n");
            for (r, c) in coefficients.values.iter().enumerate() {
                csv.push_str(&format!("{r},{c}\n"));
            }
            tables.push(("expansion.csv".to_string(), csv));
            if !(max_relative_error < EXPANSION_TOLERANCE) {
                check_failure = Some(format!(
                    "held-out relative error {max_relative_error:e} exceeds {EXPANSION_TOLERANCE:e}"
                ));
            }
            Payload::ExpansionAudit {
                coefficients,
                held_out,
                max_relative_error,
            }
        }
        ExperimentKind::ScheduleAudit => {
            let n = config.n()?;
            let k = config.k;
            let sigma = config.sigma()?;
            let dense = config.dense.expect("validated");
            let a_bar = config.a_bar.unwrap_or((k as f64).exp2());
            let mut rows = Vec::new();
            let mut csv = String::from("x,applicable,r,sigma_bar,largest_net,sigma_exact,net_sizes_ok,sandwich_ok\n");
            for x in config.grid()? {
                match chaining_schedule(n, k, sigma, x, a_bar, dense.d, dense.l) {
                    Ok(schedule) => {
                        let inv = schedule.invariants(n, k, sigma, x, dense.d, dense.l);
                        csv.push_str(&format!(
                            "{x},true,{},{},{},{},{},{}\n",
                            schedule.r,
                            schedule.sigma_bar,
                            schedule.net_sizes.last().copied().unwrap_or(0.0),
                            inv[0],
                            inv[1],
                            inv[2]
                        ));
                        rows.push(ScheduleRow {
                            x,
                            schedule: Some(schedule),
                            invariants: Some(inv),
                        });
                    }
                    Err(stochint::Error::NotApplicable) => {
                        csv.push_str(&format!("{x},false,,,,,,\n"));
                        rows.push(ScheduleRow {
                            x,
                            schedule: None,
                            invariants: None,
                        });
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let failures = rows
                .iter()
                .filter(|r| r.invariants.is_some_and(|inv| inv.contains(&false)))
                .count();
            if failures > 0 {
                check_failure = Some(format!("{failures} schedules violate an invariant"));
            }
            tables.push(("schedule.csv".to_string(), csv));
            Payload::ScheduleAudit {
                rows,
                induction_levels: induction_levels(n, k, config.bound_constants().a0)?,
                failures,
            }
        }
    };

    Ok(RunOutput {
        report: RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            config: config.clone(),
            config_toml: config.to_toml(),
            payload,
        },
        tables,
        check_failure,
    })
}

type ChaosAuditResult = (Vec<ChaosSetAudit>, usize, usize, String);

fn chaos_audit(config: &ExperimentConfig) -> Result<ChaosAuditResult, CliError> {
    let spec = config.chaos.as_ref().expect("validated");
    let k = config.k;
    let n = spec.variables;
    let mut sets = Vec::new();
    if !spec.entries.is_empty() {
        let entries = spec.entries.iter().map(|e| (e.tuple.clone(), e.value));
        sets.push(ChaosCoefficients::new(k, n, entries).map_err(|e| CliError::field("chaos.entries", e))?);
    }
    for i in 0..spec.random_sets as u64 {
        let mut rng = stream_rng(config.seed, i);
        sets.push(ChaosCoefficients::from_fn(k, n, |_| rng.random_range(-1.0..1.0))?);
    }

    let mut audits = Vec::new();
    let mut tail_violations = 0;
    let mut moment_violations = 0;
    let mut csv = String::from("set,x,exact,bound\n");
    for (index, coeffs) in sets.iter().enumerate() {
        let law = ChaosDistribution::enumerate(coeffs)?;
        let s = chaos_s(coeffs);
        let grid = match &config.x_grid {
            Some(g) => g.expand()?,
            None => {
                let top = law.max_abs();
                (0..25).map(|i| top * i as f64 / 24.0).collect::<Vec<_>>()
            }
        };
        let mut tail = Vec::new();
        for x in grid.into_iter().filter(|x| *x >= 0.0) {
            let exact = law.tail(x);
            let bound = chaos_tail_bound(x, s, k)?;
            if exact > bound {
                tail_violations += 1;
            }
            csv.push_str(&format!("{index},{x},{exact},{bound}\n"));
            tail.push(ChaosTailRow { x, exact, bound });
        }
        let mut moments = Vec::new();
        for (p, q) in &spec.moment_pairs {
            let moment_q = law.moment(*q);
            let bound = chaos_moment_bound(*p, *q, k, law.moment(*p))?;
            let holds = moment_q <= bound * (1.0 + 1e-12);
            if !holds {
                moment_violations += 1;
            }
            moments.push(ChaosMomentRow {
                p: *p,
                q: *q,
                moment_q,
                bound,
                holds,
            });
        }
        audits.push(ChaosSetAudit {
            s,
            max_abs: law.max_abs(),
            tail,
            moments,
        });
    }
    Ok((audits, tail_violations, moment_violations, csv))
}

/// Writes the tables and/or the JSON report into `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput, format: OutputFormat) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("cannot write to {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    if format != OutputFormat::Report {
        for (name, content) in &output.tables {
            std::fs::write(dir.join(name), content).map_err(io)?;
        }
    }
    if format != OutputFormat::Table {
        let json = serde_json::to_string_pretty(&output.report)
            .map_err(|e| CliError::Io(format!("cannot serialize report: {e}")))?;
        std::fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
    }
    Ok(())
}
