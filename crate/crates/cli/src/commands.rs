//! The four subcommands. Each one consumes a mutable config (so resolved
//! defaults end up in the report echo) and returns an ordered list of
//! named results plus, where the output is naturally tabular, a csv table.

use std::f64::consts::TAU;
use std::sync::Arc;

use qest_core::estimate::{
    local_minimax_risk, simulate_mse, two_step_mse, unbiasedness_diagnostics, StageOne,
    TwoStepSpec,
};
use qest_core::fisher::{
    additivity_residual, condition_c, max_rld_channel, optimize_sld_input, FisherReport,
    CONDITION_C_TOL,
};
use qest_core::linalg::Keep;
use qest_core::phase::{covariant_minimax_risk, noon_outcome_prob, phase_bounds_report};
use qest_core::{CMatrix, Error};

use crate::config::{
    build_family, build_input, build_povm, build_stage_two, build_strategy, to_cmatrix,
    ExperimentConfig, SweepSpec, ThetaSpec,
};
use crate::report::{CsvTable, Entry, Value};

/// Failure classes, one per nonzero exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, malformed, or incomplete configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Structurally valid input that fails a mathematical precondition.
    #[error("validation failure: {0}")]
    Validation(String),
    /// Computation produced inconsistent numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericalFailure(_) => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug)]
pub struct CommandOutput {
    pub results: Vec<Entry>,
    pub csv: Option<CsvTable>,
}

pub fn run_command(name: &str, cfg: &mut ExperimentConfig) -> Result<CommandOutput, CliError> {
    match name {
        "choi" => cmd_choi(cfg),
        "fisher" => cmd_fisher(cfg),
        "phase" => cmd_phase(cfg),
        "simulate" => cmd_simulate(cfg),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}

/// Choi pair of the family at one parameter value, with the structure
/// residuals a valid differentiable channel family must satisfy.
fn cmd_choi(cfg: &mut ExperimentConfig) -> Result<CommandOutput, CliError> {
    let f = build_family(cfg.family()?)?;
    let theta = cfg.theta()?.scalar("choi")?;
    let pair = f.choi_pair(theta, cfg.fd_step)?;

    let marginal = pair
        .rho
        .partial_trace(pair.dim_out, pair.dim_in, Keep::Second)?;
    let tp_residual = (&marginal - &CMatrix::identity(pair.dim_in)).op_norm();
    let deriv_marginal_residual = pair
        .deriv
        .partial_trace(pair.dim_out, pair.dim_in, Keep::Second)?
        .op_norm();
    let hermiticity_residual = (&pair.rho - &pair.rho.adjoint()).op_norm();
    let min_eigenvalue = pair
        .rho
        .herm_eig()?
        .eigenvalues
        .first()
        .copied()
        .unwrap_or(0.0);
    let cond = condition_c(&pair, CONDITION_C_TOL)?;

    let results = vec![
        Entry::new("theta", Value::Number(theta), "config"),
        Entry::new("choi", Value::matrix(&pair.rho), "ChannelFamily::choi_pair"),
        Entry::new(
            "choi_derivative",
            Value::matrix(&pair.deriv),
            "ChannelFamily::choi_pair",
        ),
        Entry::new(
            "derivative_source",
            Value::Text(pair.source.clone()),
            "ChannelFamily::choi_pair",
        ),
        Entry::new(
            "trace_preservation_residual",
            Value::Number(tp_residual),
            "CMatrix::partial_trace",
        ),
        Entry::new(
            "derivative_marginal_residual",
            Value::Number(deriv_marginal_residual),
            "CMatrix::partial_trace",
        ),
        Entry::new(
            "hermiticity_residual",
            Value::Number(hermiticity_residual),
            "CMatrix::op_norm",
        ),
        Entry::new(
            "min_eigenvalue",
            Value::Number(min_eigenvalue),
            "CMatrix::herm_eig",
        ),
        Entry::new("condition_c", Value::Flag(cond), "condition_c"),
    ];
    Ok(CommandOutput {
        results,
        csv: None,
    })
}

/// Channel Fisher information: the exact inverse-derivative maximum, a
/// randomized lower bound on the symmetric-derivative maximum, optional
/// per-input values, and the two-copy additivity residual.
fn cmd_fisher(cfg: &mut ExperimentConfig) -> Result<CommandOutput, CliError> {
    let f = build_family(cfg.family()?)?;
    let theta = cfg.theta()?.scalar("fisher")?;
    let seed = cfg.seed()?;
    let fd_step = cfg.fd_step;
    let opts = cfg.fisher.get_or_insert_with(Default::default);
    let restarts = *opts.restarts.get_or_insert(12);
    let steps = *opts.steps.get_or_insert(300);
    let tolerance = *opts.tolerance.get_or_insert(CONDITION_C_TOL);

    let pair = f.choi_pair(theta, fd_step)?;
    let rld = max_rld_channel(&pair, tolerance)?;

    let mut results = vec![
        Entry::new("theta", Value::Number(theta), "config"),
        Entry::new("j_rld_max", Value::fisher(&rld.value), "max_rld_channel"),
        Entry::new(
            "condition_c",
            Value::Flag(rld.condition_c),
            "max_rld_channel",
        ),
    ];
    if !rld.note.is_empty() {
        results.push(Entry::new(
            "j_rld_note",
            Value::Text(rld.note.clone()),
            "max_rld_channel",
        ));
    }
    if let Some(w) = &rld.witness_direction {
        results.push(Entry::new(
            "rld_witness_direction",
            Value::matrix(w),
            "max_rld_channel",
        ));
    }
    if let Some(a) = &rld.witness_input {
        results.push(Entry::new(
            "rld_witness_input",
            Value::matrix(a),
            "max_rld_channel",
        ));
    }

    let (j_sld, best_input) = optimize_sld_input(&pair, restarts, steps, seed)?;
    results.push(Entry::new(
        "j_sld_best",
        Value::Number(j_sld),
        "optimize_sld_input (randomized lower bound)",
    ));
    results.push(Entry::new(
        "sld_witness_input",
        Value::matrix(&best_input),
        "optimize_sld_input (randomized lower bound)",
    ));

    if let Some(inputs) = &opts.inputs {
        for (i, data) in inputs.iter().enumerate() {
            let a = to_cmatrix(data, &format!("fisher.inputs[{i}]"))?;
            let rep = FisherReport::for_channel_input(&pair, &a)?;
            if let Some(j) = rep.j_sld {
                results.push(Entry::new(
                    &format!("input_{i}_j_sld"),
                    Value::Number(j),
                    "FisherReport::for_channel_input",
                ));
            }
            if let Some(j) = &rep.j_rld {
                results.push(Entry::new(
                    &format!("input_{i}_j_rld"),
                    Value::fisher(j),
                    "FisherReport::for_channel_input",
                ));
            }
        }
    }

    if let Some(copies) = opts.tensor_copies {
        if copies != 2 {
            return Err(CliError::Config(format!(
                "tensor_copies supports only the value 2, got {copies}"
            )));
        }
        let residual = additivity_residual(&f, &f, theta)?;
        results.push(Entry::new(
            "additivity_residual",
            Value::Number(residual),
            "additivity_residual",
        ));
    }

    Ok(CommandOutput {
        results,
        csv: None,
    })
}

/// Phase estimation benchmarks: the covariant worst-case risk against the
/// inverse Fisher information, a risk table over probe sizes, and the
/// binary readout probability curve.
fn cmd_phase(cfg: &mut ExperimentConfig) -> Result<CommandOutput, CliError> {
    let opts = cfg
        .phase
        .clone()
        .ok_or_else(|| CliError::Config("`phase` needs a `phase` options block".into()))?;
    if opts.n.is_none() && opts.sweep.is_none() {
        return Err(CliError::Config(
            "the `phase` block needs `n`, `sweep`, or both".into(),
        ));
    }

    let mut results = Vec::new();
    let mut curve_csv = None;
    let mut table_csv = None;

    if let Some(n) = opts.n {
        if n == 0 {
            // Zero uses carry no signal; the best guess is the domain
            // midpoint and the risk is the plain variance of the
            // circular cost.
            let r = covariant_minimax_risk(0)?;
            results.push(Entry::new(
                "covariant_risk",
                Value::Number(r.risk),
                "covariant_minimax_risk",
            ));
        } else {
            let rep = phase_bounds_report(n)?;
            results.push(Entry::new(
                "n",
                Value::Count(n as u64),
                "config",
            ));
            results.push(Entry::new(
                "cramer_rao_risk",
                Value::Number(rep.cramer_rao),
                "phase_bounds_report",
            ));
            results.push(Entry::new(
                "covariant_risk",
                Value::Number(rep.covariant),
                "phase_bounds_report",
            ));
            results.push(Entry::new(
                "risk_ratio",
                Value::Number(rep.ratio),
                "phase_bounds_report",
            ));

            // Readout probability curve over one period by default.
            let sweep = cfg.theta.get_or_insert(ThetaSpec::Sweep(SweepSpec {
                lo: 0.0,
                hi: TAU,
                points: 512,
            }));
            let grid = sweep.grid("phase")?;
            let rows: Vec<Vec<f64>> = grid
                .iter()
                .map(|&t| vec![t, noon_outcome_prob(n, t)])
                .collect();
            results.push(Entry::new(
                "probe_probability_curve",
                Value::series(&["x", "y"], rows.clone()),
                "noon_outcome_prob",
            ));
            curve_csv = Some(CsvTable::new(&["x", "y"], rows));
        }
    }

    if let Some(ns) = &opts.sweep {
        let mut rows = Vec::with_capacity(ns.len());
        for &n in ns {
            let rep = phase_bounds_report(n)?;
            rows.push(vec![n as f64, rep.covariant, rep.ratio]);
        }
        results.push(Entry::new(
            "risk_table",
            Value::series(&["n", "value", "scaled_value"], rows.clone()),
            "phase_bounds_report",
        ));
        table_csv = Some(CsvTable::new(&["n", "value", "scaled_value"], rows));
    }

    Ok(CommandOutput {
        results,
        // The risk table wins when both tabular outputs exist.
        csv: table_csv.or(curve_csv),
    })
}

/// Monte Carlo runs: plain mean squared error, the local worst-case risk
/// over a neighborhood grid, the two-step adaptive estimator, and
/// bias/variance diagnostics with slope checks.
fn cmd_simulate(cfg: &mut ExperimentConfig) -> Result<CommandOutput, CliError> {
    let f = build_family(cfg.family()?)?;
    let seed = cfg.seed()?;
    let fd_step = cfg.fd_step;
    let theta = cfg.theta;
    let opts = cfg
        .simulate
        .as_mut()
        .ok_or_else(|| CliError::Config("`simulate` needs a `simulate` options block".into()))?;
    let mode = opts.mode.clone();

    let need = |field: Option<usize>, name: &str| {
        field.ok_or_else(|| CliError::Config(format!("mode `{mode}` needs `{name}`")))
    };
    let need_theta = || -> Result<ThetaSpec, CliError> {
        theta.ok_or_else(|| CliError::Config("this command needs a `theta` value".into()))
    };

    match mode.as_str() {
        "mse" => {
            let theta = need_theta()?.scalar("simulate")?;
            let trials = need(opts.trials, "trials")?;
            let sc = opts
                .strategy
                .as_mut()
                .ok_or_else(|| CliError::Config("mode `mse` needs a `strategy` block".into()))?;
            let built = build_strategy(sc, &f, fd_step)?;
            let est = simulate_mse(&f, theta, built.strategy.as_ref(), trials, seed)?;
            let labels = built.strategy.labels();
            let label_rows: Vec<Vec<f64>> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| vec![i as f64, l])
                .collect();
            let results = vec![
                Entry::new("theta", Value::Number(theta), "config"),
                Entry::new("n_uses", Value::Count(built.strategy.n_uses() as u64), "config"),
                Entry::new("mse", Value::Number(est.mean), "simulate_mse"),
                Entry::new("mse_std_error", Value::Number(est.std_error), "simulate_mse"),
                Entry::new("trials", Value::Count(est.trials as u64), "simulate_mse"),
                Entry::new(
                    "estimate_labels",
                    Value::series(&["outcome", "label"], label_rows),
                    built.labels_provenance,
                ),
                Entry::new(
                    "clamped_labels",
                    Value::Count(built.clamped_labels as u64),
                    "Estimator::new",
                ),
            ];
            Ok(CommandOutput {
                results,
                csv: None,
            })
        }
        "local_minimax" => {
            let theta0 = need_theta()?.scalar("simulate")?;
            let trials = need(opts.trials, "trials")?;
            let epsilon = opts
                .epsilon
                .ok_or_else(|| CliError::Config("mode `local_minimax` needs `epsilon`".into()))?;
            let grid_points = *opts.grid_points.get_or_insert(9);
            let alpha = *opts.alpha.get_or_insert(2.0);
            let sc = opts.strategy.as_mut().ok_or_else(|| {
                CliError::Config("mode `local_minimax` needs a `strategy` block".into())
            })?;
            let built = build_strategy(sc, &f, fd_step)?;
            let rep = local_minimax_risk(
                &f,
                built.strategy.as_ref(),
                theta0,
                epsilon,
                grid_points,
                trials,
                seed,
                alpha,
            )?;
            let rows: Vec<Vec<f64>> = rep
                .points
                .iter()
                .map(|p| vec![p.theta, p.mean, p.std_error])
                .collect();
            let results = vec![
                Entry::new("theta0", Value::Number(theta0), "config"),
                Entry::new("epsilon", Value::Number(epsilon), "config"),
                Entry::new("alpha", Value::Number(alpha), "config"),
                Entry::new("n_uses", Value::Count(rep.n_uses as u64), "config"),
                Entry::new("local_risk", Value::Number(rep.risk), "local_minimax_risk"),
                Entry::new(
                    "worst_theta",
                    Value::Number(rep.worst_theta),
                    "local_minimax_risk",
                ),
                Entry::new(
                    "risk_curve",
                    Value::series(&["x", "y", "stderr"], rows.clone()),
                    "local_minimax_risk",
                ),
                Entry::new(
                    "clamped_labels",
                    Value::Count(built.clamped_labels as u64),
                    "Estimator::new",
                ),
            ];
            Ok(CommandOutput {
                results,
                csv: Some(CsvTable::new(&["x", "y", "stderr"], rows)),
            })
        }
        "two_step" => {
            let theta = need_theta()?.scalar("simulate")?;
            let n_total = need(opts.n_total, "n_total")?;
            let replicas = need(opts.replicas, "replicas")?;
            let stage1 = opts
                .stage1
                .as_ref()
                .ok_or_else(|| CliError::Config("mode `two_step` needs a `stage1` block".into()))?;
            let stage1 = StageOne {
                input: build_input(&stage1.input)?,
                povm: build_povm(&stage1.povm)?,
            };
            let stage2_cfg = opts
                .stage2
                .as_mut()
                .ok_or_else(|| CliError::Config("mode `two_step` needs a `stage2` block".into()))?;
            let stage2 = build_stage_two(stage2_cfg)?;
            let spec = TwoStepSpec {
                n_total,
                stage1,
                stage2: Arc::new(move |_center| Ok(stage2.clone())),
            };
            let rep = two_step_mse(&f, &spec, theta, replicas, seed)?;
            let results = vec![
                Entry::new("theta", Value::Number(theta), "config"),
                Entry::new("n_total", Value::Count(n_total as u64), "config"),
                Entry::new("replicas", Value::Count(replicas as u64), "config"),
                Entry::new("mse", Value::Number(rep.mse.mean), "two_step_mse"),
                Entry::new(
                    "mse_std_error",
                    Value::Number(rep.mse.std_error),
                    "two_step_mse",
                ),
                Entry::new(
                    "scaled_mse",
                    Value::Number(n_total as f64 * rep.mse.mean),
                    "two_step_mse (n_total * mse)",
                ),
                Entry::new(
                    "localization_failures",
                    Value::Count(rep.localization_failures as u64),
                    "two_step_mse",
                ),
                Entry::new(
                    "uses_stage1",
                    Value::Count(rep.uses_stage1 as u64),
                    "two_step_mse",
                ),
                Entry::new(
                    "uses_stage2",
                    Value::Count(rep.uses_stage2 as u64),
                    "two_step_mse",
                ),
                Entry::new(
                    "uses_discarded",
                    Value::Count(rep.uses_discarded as u64),
                    "two_step_mse",
                ),
            ];
            Ok(CommandOutput {
                results,
                csv: None,
            })
        }
        "diagnostics" => {
            let grid = need_theta()?.grid("simulate")?;
            let trials = need(opts.trials, "trials")?;
            let sc = opts.strategy.as_mut().ok_or_else(|| {
                CliError::Config("mode `diagnostics` needs a `strategy` block".into())
            })?;
            let built = build_strategy(sc, &f, fd_step)?;
            let rep = unbiasedness_diagnostics(&f, built.strategy.as_ref(), &grid, trials, seed)?;

            let mean_rows: Vec<Vec<f64>> = rep
                .points
                .iter()
                .map(|p| vec![p.theta, p.eta, (p.variance / trials as f64).sqrt()])
                .collect();
            let point_rows: Vec<Vec<f64>> = rep
                .points
                .iter()
                .map(|p| vec![p.theta, p.eta, p.variance, p.mse, p.variance_std_error])
                .collect();
            let check_rows: Vec<Vec<f64>> = rep
                .checks
                .iter()
                .map(|c| {
                    vec![
                        c.theta_mid,
                        c.slope,
                        c.slope_std_error,
                        c.fisher,
                        c.variance_mid,
                        c.variance_bound,
                        c.tolerance,
                        if c.holds { 1.0 } else { 0.0 },
                    ]
                })
                .collect();
            let all_hold = rep.checks.iter().all(|c| c.holds);

            let results = vec![
                Entry::new(
                    "mean_curve",
                    Value::series(&["x", "y", "stderr"], mean_rows.clone()),
                    "unbiasedness_diagnostics",
                ),
                Entry::new(
                    "points",
                    Value::series(
                        &["theta", "eta", "variance", "mse", "variance_std_error"],
                        point_rows,
                    ),
                    "unbiasedness_diagnostics",
                ),
                Entry::new(
                    "slope_checks",
                    Value::series(
                        &[
                            "theta_mid",
                            "slope",
                            "slope_std_error",
                            "fisher",
                            "variance_mid",
                            "variance_bound",
                            "tolerance",
                            "holds",
                        ],
                        check_rows,
                    ),
                    "unbiasedness_diagnostics",
                ),
                Entry::new(
                    "all_checks_hold",
                    Value::Flag(all_hold),
                    "unbiasedness_diagnostics",
                ),
                Entry::new(
                    "clamped_labels",
                    Value::Count(built.clamped_labels as u64),
                    "Estimator::new",
                ),
            ];
            Ok(CommandOutput {
                results,
                csv: Some(CsvTable::new(&["x", "y", "stderr"], mean_rows)),
            })
        }
        other => Err(CliError::Config(format!(
            "unknown simulate mode `{other}` (expected mse, local_minimax, two_step, or diagnostics)"
        ))),
    }
}
