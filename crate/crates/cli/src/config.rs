//! Experiment configuration: JSON schema types, strict validation, and
//! builders that turn declarative blocks into core objects.
//!
//! Every struct rejects unknown keys. Tagged blocks (family, strategy,
//! stage two) are parsed as flat structs with a `kind` discriminator and
//! then checked so that fields belonging to a different kind are rejected
//! with a pointed message instead of being silently ignored.

use std::fs;
use std::path::Path;

use qest_core::channel::{
    exponential_decay_coeffs, make_depolarizing_family, make_phase_damping_family,
    make_shift_mixture_family, make_unitary_family, ChannelFamily, ParamSpace,
};
use qest_core::estimate::{
    locally_unbiased_labels, CovariantStrategy, Estimator, EstimatorInput, NoonStrategy, Strategy,
};
use qest_core::phase::{noon_classical_fisher, noon_outcome_prob};
use qest_core::{CMatrix, Complex64};
use serde::{Deserialize, Serialize};

use crate::commands::CliError;

/// Complex matrix as nested rows of `[re, im]` pairs.
pub type MatrixData = Vec<Vec<[f64; 2]>>;

const SUPPORTED_SCHEMA: u32 = 1;

/// Top level experiment description, one file per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Config format version; this tool understands version 1 only.
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Relative step for finite-difference derivatives, where one is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

impl ExperimentConfig {
    pub fn family(&self) -> Result<&FamilyConfig, CliError> {
        self.family
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a `family` block".into()))
    }

    pub fn theta(&self) -> Result<ThetaSpec, CliError> {
        self.theta
            .ok_or_else(|| CliError::Config("this command needs a `theta` value".into()))
    }

    /// Stochastic commands refuse to run without an explicit seed so that
    /// every published number can be reproduced.
    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("stochastic commands need an explicit `seed`".into()))
    }
}

/// Parses and schema-checks a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if cfg.schema != SUPPORTED_SCHEMA {
        return Err(CliError::Config(format!(
            "unsupported schema version {}, expected {SUPPORTED_SCHEMA}",
            cfg.schema
        )));
    }
    Ok(cfg)
}

/// Parameter domain; a `period` makes it circular.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl SpaceConfig {
    pub fn build(&self) -> Result<ParamSpace, CliError> {
        match self.period {
            Some(p) => ParamSpace::circular(self.lo, self.hi, p),
            None => ParamSpace::new(self.lo, self.hi),
        }
        .map_err(CliError::from)
    }
}

/// One parameter value or an inclusive uniform sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Value(f64),
    Sweep(SweepSpec),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl ThetaSpec {
    pub fn scalar(&self, command: &str) -> Result<f64, CliError> {
        match self {
            ThetaSpec::Value(v) if v.is_finite() => Ok(*v),
            ThetaSpec::Value(v) => Err(CliError::Config(format!("theta {v} is not finite"))),
            ThetaSpec::Sweep(_) => Err(CliError::Config(format!(
                "`{command}` needs a single theta, not a sweep"
            ))),
        }
    }

    pub fn grid(&self, command: &str) -> Result<Vec<f64>, CliError> {
        match self {
            ThetaSpec::Value(_) => Err(CliError::Config(format!(
                "`{command}` needs a theta sweep {{lo, hi, points}}"
            ))),
            ThetaSpec::Sweep(s) => s.grid(),
        }
    }
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(CliError::Config(format!(
                "invalid sweep interval [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.points < 2 {
            return Err(CliError::Config("a sweep needs at least two points".into()));
        }
        let span = self.hi - self.lo;
        Ok((0..self.points)
            .map(|i| self.lo + span * i as f64 / (self.points - 1) as f64)
            .collect())
    }
}

/// Channel family selector. `kind` decides which of the optional fields
/// apply; fields belonging to another kind are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: String,
    /// Hermitian generator of the `unitary` family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<MatrixData>,
    /// Symmetric decay-rate matrix of the `phase_damping` family; the
    /// off-diagonal coefficients are `exp(-rate * theta)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<Vec<f64>>>,
    /// Hilbert space dimension of the `depolarizing` family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Mixture weights of the `shift_mixture` family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Diagonal generator entries of the `shift_mixture` family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_diag: Option<Vec<f64>>,
    pub param_space: SpaceConfig,
}

fn reject_foreign_fields(
    kind: &str,
    present: &[(&str, bool)],
    allowed: &[&str],
) -> Result<(), CliError> {
    let stray: Vec<&str> = present
        .iter()
        .filter(|(name, is_set)| *is_set && !allowed.contains(name))
        .map(|(name, _)| *name)
        .collect();
    if stray.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "fields not used by kind `{kind}`: {}",
            stray.join(", ")
        )))
    }
}

fn require<'a, T>(field: &'a Option<T>, kind: &str, name: &str) -> Result<&'a T, CliError> {
    field
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("kind `{kind}` needs the `{name}` field")))
}

/// Converts a config matrix to a dense complex matrix, rejecting ragged
/// or empty data with a config error.
pub fn to_cmatrix(data: &MatrixData, what: &str) -> Result<CMatrix, CliError> {
    if data.is_empty() || data[0].is_empty() {
        return Err(CliError::Config(format!("{what}: matrix is empty")));
    }
    let cols = data[0].len();
    if data.iter().any(|row| row.len() != cols) {
        return Err(CliError::Config(format!("{what}: ragged matrix rows")));
    }
    let rows: Vec<Vec<Complex64>> = data
        .iter()
        .map(|row| row.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
        .collect();
    CMatrix::from_rows(&rows).map_err(CliError::from)
}

pub fn build_family(fc: &FamilyConfig) -> Result<ChannelFamily, CliError> {
    let space = fc.param_space.build()?;
    let present = [
        ("hamiltonian", fc.hamiltonian.is_some()),
        ("rates", fc.rates.is_some()),
        ("dim", fc.dim.is_some()),
        ("probs", fc.probs.is_some()),
        ("h_diag", fc.h_diag.is_some()),
    ];
    match fc.kind.as_str() {
        "unitary" => {
            reject_foreign_fields("unitary", &present, &["hamiltonian"])?;
            let h = to_cmatrix(require(&fc.hamiltonian, "unitary", "hamiltonian")?, "hamiltonian")?;
            make_unitary_family(&h, space).map_err(CliError::from)
        }
        "phase_damping" => {
            reject_foreign_fields("phase_damping", &present, &["rates"])?;
            let rates = require(&fc.rates, "phase_damping", "rates")?;
            let dim = rates.len();
            let (coeff, coeff_deriv) = exponential_decay_coeffs(rates)?;
            make_phase_damping_family(dim, coeff, Some(coeff_deriv), space).map_err(CliError::from)
        }
        "depolarizing" => {
            reject_foreign_fields("depolarizing", &present, &["dim"])?;
            let dim = fc.dim.unwrap_or(2);
            make_depolarizing_family(dim, space).map_err(CliError::from)
        }
        "shift_mixture" => {
            reject_foreign_fields("shift_mixture", &present, &["probs", "h_diag"])?;
            let probs = require(&fc.probs, "shift_mixture", "probs")?;
            let h_diag = require(&fc.h_diag, "shift_mixture", "h_diag")?;
            make_shift_mixture_family(probs, h_diag, space).map_err(CliError::from)
        }
        other => Err(CliError::Config(format!(
            "unknown family kind `{other}` (expected unitary, phase_damping, depolarizing, or shift_mixture)"
        ))),
    }
}

/// Options of the `fisher` command.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherOptions {
    /// Random restarts of the input optimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    /// Ascent steps per restart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Support tolerance of the inverse-derivative bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Extra input matrices to evaluate individually.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<MatrixData>>,
    /// Set to 2 to also report the additivity residual of two parallel
    /// copies of the family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_copies: Option<usize>,
}

/// Options of the `phase` command.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseOptions {
    /// Probe size for the single-point report and the probability curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Probe sizes for the risk table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<usize>>,
}

/// Options of the `simulate` command. `mode` decides which fields apply.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    /// One of `mse`, `local_minimax`, `two_step`, `diagnostics`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    /// Neighborhood half width of the local worst-case risk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Scaling exponent of the local risk, `n^alpha * worst MSE`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<MeasurementConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<StageTwoConfig>,
}

/// Input state of a matrix-backed estimator: exactly one of `pure`
/// (a matrix with unit Frobenius norm on system plus reference) or
/// `density` (an explicit density matrix).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pure: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<MatrixData>,
}

pub fn build_input(ic: &InputConfig) -> Result<EstimatorInput, CliError> {
    match (&ic.pure, &ic.density) {
        (Some(a), None) => Ok(EstimatorInput::PureKet(to_cmatrix(a, "input.pure")?)),
        (None, Some(r)) => Ok(EstimatorInput::Density(to_cmatrix(r, "input.density")?)),
        _ => Err(CliError::Config(
            "input needs exactly one of `pure` or `density`".into(),
        )),
    }
}

/// Input plus POVM of one measurement stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub input: InputConfig,
    pub povm: Vec<MatrixData>,
}

pub fn build_povm(data: &[MatrixData]) -> Result<Vec<CMatrix>, CliError> {
    data.iter()
        .enumerate()
        .map(|(i, m)| to_cmatrix(m, &format!("povm[{i}]")))
        .collect()
}

/// Second stage of the two-step estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTwoConfig {
    /// One of `plug_in`, `per_copy`, `covariant_phase`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub povm: Option<Vec<MatrixData>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uses_per_block: Option<usize>,
    /// Candidate window half width around the stage-1 center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
}

pub fn build_stage_two(sc: &mut StageTwoConfig) -> Result<qest_core::estimate::StageTwo, CliError> {
    use qest_core::estimate::StageTwo;
    let present = [
        ("input", sc.input.is_some()),
        ("povm", sc.povm.is_some()),
        ("uses_per_block", sc.uses_per_block.is_some()),
        ("halfwidth", sc.halfwidth.is_some()),
        ("grid_step", sc.grid_step.is_some()),
        ("grid_size", sc.grid_size.is_some()),
    ];
    match sc.kind.as_str() {
        "plug_in" => {
            reject_foreign_fields("plug_in", &present, &[])?;
            Ok(StageTwo::PlugIn)
        }
        "per_copy" => {
            reject_foreign_fields(
                "per_copy",
                &present,
                &["input", "povm", "uses_per_block", "halfwidth", "grid_step"],
            )?;
            let input = build_input(require(&sc.input, "per_copy", "input")?)?;
            let povm = build_povm(require(&sc.povm, "per_copy", "povm")?)?;
            let uses_per_block = *sc.uses_per_block.get_or_insert(1);
            let halfwidth = *require(&sc.halfwidth, "per_copy", "halfwidth")?;
            let grid_step = *require(&sc.grid_step, "per_copy", "grid_step")?;
            Ok(StageTwo::PerCopy {
                input,
                povm,
                uses_per_block,
                halfwidth,
                grid_step,
            })
        }
        "covariant_phase" => {
            reject_foreign_fields("covariant_phase", &present, &["grid_size"])?;
            let grid_size = *require(&sc.grid_size, "covariant_phase", "grid_size")?;
            Ok(StageTwo::CovariantPhase { grid_size })
        }
        other => Err(CliError::Config(format!(
            "unknown stage-2 kind `{other}` (expected plug_in, per_copy, or covariant_phase)"
        ))),
    }
}

/// Measurement strategy selector for the simulation modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// One of `matrix`, `noon`, `covariant`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_uses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub povm: Option<Vec<MatrixData>>,
    /// Explicit estimate labels, one per POVM element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
    /// Derive the labels so the estimator is locally unbiased here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locally_unbiased_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_minus: Option<f64>,
    /// Probe size of the `noon` and `covariant` kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
}

/// A built strategy plus bookkeeping the report wants to surface.
pub struct BuiltStrategy {
    pub strategy: Box<dyn Strategy>,
    /// Labels that had to be clamped into a linear domain.
    pub clamped_labels: usize,
    /// Which operation produced the labels.
    pub labels_provenance: &'static str,
}

pub fn build_strategy(
    sc: &mut StrategyConfig,
    f: &ChannelFamily,
    fd_step: Option<f64>,
) -> Result<BuiltStrategy, CliError> {
    let present = [
        ("n_uses", sc.n_uses.is_some()),
        ("input", sc.input.is_some()),
        ("povm", sc.povm.is_some()),
        ("labels", sc.labels.is_some()),
        ("locally_unbiased_at", sc.locally_unbiased_at.is_some()),
        ("label_plus", sc.label_plus.is_some()),
        ("label_minus", sc.label_minus.is_some()),
        ("n", sc.n.is_some()),
        ("grid_size", sc.grid_size.is_some()),
    ];
    match sc.kind.as_str() {
        "matrix" => {
            reject_foreign_fields(
                "matrix",
                &present,
                &["n_uses", "input", "povm", "labels", "locally_unbiased_at"],
            )?;
            let n_uses = *sc.n_uses.get_or_insert(1);
            let input = build_input(require(&sc.input, "matrix", "input")?)?;
            let povm = build_povm(require(&sc.povm, "matrix", "povm")?)?;
            let (labels, labels_provenance) = match (&sc.labels, sc.locally_unbiased_at) {
                (Some(l), None) => (l.clone(), "config"),
                (None, Some(theta0)) => (
                    locally_unbiased_labels(f, theta0, n_uses, &input, &povm, fd_step)?,
                    "locally_unbiased_labels",
                ),
                _ => {
                    return Err(CliError::Config(
                        "kind `matrix` needs exactly one of `labels` or `locally_unbiased_at`"
                            .into(),
                    ))
                }
            };
            let space = f.param_space();
            let est = Estimator::new(n_uses, input, povm, labels, &space)?;
            Ok(BuiltStrategy {
                clamped_labels: est.clamped_labels(),
                strategy: Box::new(est),
                labels_provenance,
            })
        }
        "noon" => {
            reject_foreign_fields(
                "noon",
                &present,
                &["n", "label_plus", "label_minus", "locally_unbiased_at"],
            )?;
            let n = *require(&sc.n, "noon", "n")?;
            let (plus, minus, labels_provenance) = match (
                sc.label_plus,
                sc.label_minus,
                sc.locally_unbiased_at,
            ) {
                (Some(p), Some(m), None) => (p, m, "config"),
                (None, None, Some(theta0)) => {
                    // Closed-form locally unbiased labels of the binary
                    // readout: l = theta0 + p'/(p J) per outcome.
                    let j = noon_classical_fisher(n, theta0)?;
                    let p = noon_outcome_prob(n, theta0);
                    let dp = -(n as f64 / 2.0) * (n as f64 * theta0).sin();
                    (
                        theta0 + dp / (p * j),
                        theta0 - dp / ((1.0 - p) * j),
                        "locally_unbiased_labels",
                    )
                }
                _ => {
                    return Err(CliError::Config(
                        "kind `noon` needs either both `label_plus` and `label_minus` or `locally_unbiased_at`"
                            .into(),
                    ))
                }
            };
            Ok(BuiltStrategy {
                strategy: Box::new(NoonStrategy::new(n, plus, minus)?),
                clamped_labels: 0,
                labels_provenance,
            })
        }
        "covariant" => {
            reject_foreign_fields("covariant", &present, &["n", "grid_size"])?;
            let n = *require(&sc.n, "covariant", "n")?;
            let grid_size = *sc.grid_size.get_or_insert((16 * (n + 1)).max(64));
            Ok(BuiltStrategy {
                strategy: Box::new(CovariantStrategy::new(n, grid_size)?),
                clamped_labels: 0,
                labels_provenance: "covariant grid",
            })
        }
        other => Err(CliError::Config(format!(
            "unknown strategy kind `{other}` (expected matrix, noon, or covariant)"
        ))),
    }
}

/// Output routing; command line flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// `json` or `csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}
