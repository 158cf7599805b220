//! Monte Carlo evaluation of estimation strategies: generic
//! (input, POVM, labels) estimators, analytic phase-model strategies, the
//! two-step localize-then-refine estimator, empirical MSE and local
//! worst-case risk, and bias/variance diagnostics.
//!
//! Randomness contract: every simulation derives one counter-based stream
//! per trial from `(master seed, trial index)` (ChaCha12 with
//! `set_stream`), and aggregation first collects per-trial values in index
//! order, so results are a pure function of `(inputs, seed, trials)`
//! independent of thread scheduling.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::channel::{tensor_power, ChannelFamily, ParamSpace};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::phase::{covariant_minimax_risk, covariant_outcome_probs, noon_outcome_prob};

/// Default central-difference step for distribution derivatives.
pub const DEFAULT_PROB_FD_STEP: f64 = 1e-5;

/// Outcomes with probability below this are excluded from Fisher sums.
pub const PROB_FLOOR: f64 = 1e-12;

/// An estimation strategy on `n_uses` channel uses: something that induces
/// an outcome distribution and maps outcomes to estimates.
///
/// The matrix-backed [`Estimator`] covers arbitrary inputs and POVMs but
/// needs the full `n_uses`-fold Choi matrix; [`NoonStrategy`] and
/// [`CovariantStrategy`] evaluate the qubit phase model analytically so
/// large `n_uses` stay tractable.
pub trait Strategy: Send + Sync {
    fn n_uses(&self) -> usize;
    /// Estimate assigned to each outcome, aligned with `distribution`.
    fn labels(&self) -> &[f64];
    /// Outcome probabilities at parameter value `theta`.
    fn distribution(&self, f: &ChannelFamily, theta: f64) -> Result<Vec<f64>>;
}

/// Input state of a matrix-backed estimator.
#[derive(Debug, Clone)]
pub enum EstimatorInput {
    /// Pure input `|A>><<A|` on system plus reference, given by the matrix
    /// `A` with unit Frobenius norm.
    PureKet(CMatrix),
    /// Explicit density matrix on system plus reference.
    Density(CMatrix),
}

impl EstimatorInput {
    fn validate(&self, dim_in: usize) -> Result<()> {
        match self {
            EstimatorInput::PureKet(a) => {
                if a.rows() != dim_in || a.cols() != dim_in {
                    return Err(Error::DimensionMismatch(format!(
                        "input matrix is {}x{}, expected {dim_in}x{dim_in}",
                        a.rows(),
                        a.cols()
                    )));
                }
                let n2 = a.frobenius_norm().powi(2);
                if (n2 - 1.0).abs() > 1e-9 {
                    return Err(Error::NotDensity(format!(
                        "input squared norm is {n2}, expected 1"
                    )));
                }
            }
            EstimatorInput::Density(rho) => {
                let want = dim_in * dim_in;
                if rho.rows() != want || rho.cols() != want {
                    return Err(Error::DimensionMismatch(format!(
                        "input density is {}x{}, expected {want}x{want}",
                        rho.rows(),
                        rho.cols()
                    )));
                }
                let tr = rho.trace();
                if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
                    return Err(Error::NotDensity(format!("trace is {tr}, expected 1")));
                }
                let eig = rho.herm_eig()?;
                if eig.eigenvalues[0] < -1e-9 {
                    return Err(Error::NotPsd(eig.eigenvalues[0]));
                }
            }
        }
        Ok(())
    }
}

/// Checks POVM completeness (within 1e-8) and element positivity (floor
/// -1e-10); returns the element dimension.
pub fn validate_povm(povm: &[CMatrix]) -> Result<usize> {
    if povm.is_empty() {
        return Err(Error::InvalidArgument("empty POVM".into()));
    }
    let dim = povm[0].rows();
    let mut sum = CMatrix::zeros(dim, dim);
    for e in povm {
        if e.rows() != dim || e.cols() != dim {
            return Err(Error::DimensionMismatch(
                "POVM elements have mixed dimensions".into(),
            ));
        }
        let eig = e.herm_eig()?;
        let top = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if eig.eigenvalues[0] < -1e-10 * top.max(1.0) {
            return Err(Error::NotPsd(eig.eigenvalues[0]));
        }
        sum = &sum + e;
    }
    let res = (&sum - &CMatrix::identity(dim)).frobenius_norm();
    if res > 1e-8 * (dim as f64).sqrt() {
        return Err(Error::PovmIncomplete(res));
    }
    Ok(dim)
}

fn fold_label(label: f64, space: &ParamSpace) -> (f64, bool) {
    match space.period {
        Some(p) => {
            let folded = label - p * ((label - space.lo) / p).floor();
            (folded, false)
        }
        None => {
            let clamped = space.clamp(label);
            (clamped, clamped != label)
        }
    }
}

/// Matrix-backed estimation strategy: an input on system plus reference for
/// `n_uses` parallel channel uses, a POVM on the joint output, and one
/// estimate per outcome.
#[derive(Debug, Clone)]
pub struct Estimator {
    n_uses: usize,
    input: EstimatorInput,
    povm: Vec<CMatrix>,
    labels: Vec<f64>,
    clamped_labels: usize,
}

impl Estimator {
    /// Validates the POVM, the input normalization, and the labels; labels
    /// are folded by the period (circular domains) or clamped into the
    /// domain (linear domains, with the count recorded).
    pub fn new(
        n_uses: usize,
        input: EstimatorInput,
        povm: Vec<CMatrix>,
        labels: Vec<f64>,
        space: &ParamSpace,
    ) -> Result<Self> {
        if n_uses == 0 {
            return Err(Error::InvalidArgument("need at least one use".into()));
        }
        validate_povm(&povm)?;
        if labels.len() != povm.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} POVM elements",
                labels.len(),
                povm.len()
            )));
        }
        if labels.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("non-finite estimate label".into()));
        }
        let mut clamped = 0;
        let folded: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let (v, was_clamped) = fold_label(l, space);
                if was_clamped {
                    clamped += 1;
                }
                v
            })
            .collect();
        Ok(Self {
            n_uses,
            input,
            povm,
            labels: folded,
            clamped_labels: clamped,
        })
    }

    pub fn povm(&self) -> &[CMatrix] {
        &self.povm
    }

    pub fn input(&self) -> &EstimatorInput {
        &self.input
    }

    /// How many labels were clamped into a linear parameter domain.
    pub fn clamped_labels(&self) -> usize {
        self.clamped_labels
    }
}

impl Strategy for Estimator {
    fn n_uses(&self) -> usize {
        self.n_uses
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn distribution(&self, f: &ChannelFamily, theta: f64) -> Result<Vec<f64>> {
        born_distribution(f, theta, self.n_uses, &self.input, &self.povm)
    }
}

/// Born-rule outcome distribution for an input and POVM on `n_uses`
/// parallel uses. Probabilities in `[-1e-10, 0)` are clipped to zero and
/// the vector renormalized; larger negativity or a total far from 1 is an
/// error.
fn born_distribution(
    f: &ChannelFamily,
    theta: f64,
    n_uses: usize,
    input: &EstimatorInput,
    povm: &[CMatrix],
) -> Result<Vec<f64>> {
    let fam = if n_uses == 1 {
        f.clone()
    } else {
        tensor_power(f, n_uses)?
    };
    input.validate(fam.dim_in())?;
    let out_dim = fam.dim_out() * fam.dim_in();
    if povm.is_empty() || povm[0].rows() != out_dim {
        return Err(Error::DimensionMismatch(format!(
            "POVM acts on dimension {}, output needs {out_dim}",
            povm.first().map_or(0, |e| e.rows())
        )));
    }
    let rho_out = match input {
        EstimatorInput::PureKet(a) => {
            let rho = fam.choi_state(theta)?;
            let sandwich = CMatrix::identity(fam.dim_out()).kron(&a.transpose());
            &(&sandwich * &rho) * &sandwich.adjoint()
        }
        EstimatorInput::Density(rho_in) => {
            let ops = fam.kraus_at(theta)?;
            let id_ref = CMatrix::identity(fam.dim_in());
            let mut out = CMatrix::zeros(out_dim, out_dim);
            for k in &ops {
                let big = k.kron(&id_ref);
                out = &out + &(&(&big * rho_in) * &big.adjoint());
            }
            out
        }
    };
    let mut probs: Vec<f64> = Vec::with_capacity(povm.len());
    for e in povm {
        let p = (&rho_out * e).trace().re;
        if p < -1e-10 {
            return Err(Error::NumericalFailure(format!(
                "outcome probability {p} below the clipping floor"
            )));
        }
        probs.push(p.max(0.0));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::PovmIncomplete((total - 1.0).abs()));
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}

/// Outcome distribution of a strategy (Born rule for matrix estimators,
/// closed form for the analytic phase strategies).
pub fn outcome_distribution(
    f: &ChannelFamily,
    theta: f64,
    strategy: &dyn Strategy,
) -> Result<Vec<f64>> {
    strategy.distribution(f, theta)
}

/// Estimate labels making a strategy locally unbiased at `theta0`:
/// `l_i = theta0 + p_i'/(p_i J)` with `J` the classical Fisher information.
/// Outcomes below the probability floor keep the label `theta0`.
pub fn locally_unbiased_labels(
    f: &ChannelFamily,
    theta0: f64,
    n_uses: usize,
    input: &EstimatorInput,
    povm: &[CMatrix],
    fd_step: Option<f64>,
) -> Result<Vec<f64>> {
    validate_povm(povm)?;
    let h = fd_step.unwrap_or(DEFAULT_PROB_FD_STEP) * theta0.abs().max(1.0);
    let p0 = born_distribution(f, theta0, n_uses, input, povm)?;
    let pp = born_distribution(f, theta0 + h, n_uses, input, povm)?;
    let pm = born_distribution(f, theta0 - h, n_uses, input, povm)?;
    let dp: Vec<f64> = pp
        .iter()
        .zip(&pm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let j: f64 = p0
        .iter()
        .zip(&dp)
        .filter(|(p, _)| **p >= PROB_FLOOR)
        .map(|(p, d)| d * d / p)
        .sum();
    if j <= 0.0 {
        return Err(Error::DegenerateDistribution(
            "distribution carries no local information; labels undefined".into(),
        ));
    }
    Ok(p0
        .iter()
        .zip(&dp)
        .map(|(p, d)| {
            if *p >= PROB_FLOOR {
                theta0 + d / (p * j)
            } else {
                theta0
            }
        })
        .collect())
}

/// Classical Fisher information of a strategy's outcome distribution by
/// central differences, excluding outcomes below the probability floor.
pub fn classical_fisher(
    f: &ChannelFamily,
    theta: f64,
    strategy: &dyn Strategy,
    fd_step: Option<f64>,
) -> Result<f64> {
    let h = fd_step.unwrap_or(DEFAULT_PROB_FD_STEP) * theta.abs().max(1.0);
    let space = f.param_space();
    if !(space.contains(theta - h) && space.contains(theta + h)) {
        return Err(Error::OutOfDomain {
            value: theta,
            lo: space.lo + h,
            hi: space.hi - h,
        });
    }
    let p0 = strategy.distribution(f, theta)?;
    let pp = strategy.distribution(f, theta + h)?;
    let pm = strategy.distribution(f, theta - h)?;
    let mut j = 0.0;
    for i in 0..p0.len() {
        let dp = (pp[i] - pm[i]) / (2.0 * h);
        if p0[i] >= PROB_FLOOR {
            j += dp * dp / p0[i];
        } else if dp.abs() > 1e-6 {
            return Err(Error::DegenerateDistribution(format!(
                "outcome {i} has vanishing probability but derivative {dp}"
            )));
        }
    }
    Ok(j)
}

/// Binary readout of the `n`-qubit superposition probe for the phase model:
/// outcome probabilities `(cos^2(n theta/2), sin^2(n theta/2))` with two
/// caller-chosen estimate labels. Valid for the qubit rotation family with
/// unit level splitting; the closed form is cross-checked against the Born
/// rule in tests.
#[derive(Debug, Clone)]
pub struct NoonStrategy {
    n: usize,
    labels: [f64; 2],
}

impl NoonStrategy {
    pub fn new(n: usize, label_plus: f64, label_minus: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one use".into()));
        }
        if !(label_plus.is_finite() && label_minus.is_finite()) {
            return Err(Error::InvalidArgument("non-finite estimate label".into()));
        }
        Ok(Self {
            n,
            labels: [label_plus, label_minus],
        })
    }
}

impl Strategy for NoonStrategy {
    fn n_uses(&self) -> usize {
        self.n
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn distribution(&self, f: &ChannelFamily, theta: f64) -> Result<Vec<f64>> {
        if f.dim_in() != 2 || f.dim_out() != 2 {
            return Err(Error::DimensionMismatch(
                "the superposition-probe strategy needs a qubit family".into(),
            ));
        }
        let p = noon_outcome_prob(self.n, theta);
        Ok(vec![p, 1.0 - p])
    }
}

/// Discretized optimal covariant phase estimator on `n` uses, working in
/// the `(n+1)`-dimensional Fourier-mode space. Labels are the grid
/// estimates `2 pi g / grid_size`.
#[derive(Debug, Clone)]
pub struct CovariantStrategy {
    n: usize,
    grid_size: usize,
    amplitudes: Vec<f64>,
    labels: Vec<f64>,
}

impl CovariantStrategy {
    pub fn new(n: usize, grid_size: usize) -> Result<Self> {
        let scheme = covariant_minimax_risk(n)?;
        if grid_size < 8 * (n + 1) {
            return Err(Error::InvalidArgument(format!(
                "grid of {grid_size} outcomes is too coarse (need >= {})",
                8 * (n + 1)
            )));
        }
        let labels = (0..grid_size)
            .map(|g| std::f64::consts::TAU * g as f64 / grid_size as f64)
            .collect();
        Ok(Self {
            n,
            grid_size,
            amplitudes: scheme.amplitudes,
            labels,
        })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
}

impl Strategy for CovariantStrategy {
    fn n_uses(&self) -> usize {
        self.n
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn distribution(&self, _f: &ChannelFamily, theta: f64) -> Result<Vec<f64>> {
        covariant_outcome_probs(&self.amplitudes, theta, self.grid_size)
    }
}

/// Empirical mean squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub theta: f64,
    pub seed: u64,
}

fn squared_error(estimate: f64, truth: f64, period: Option<f64>) -> f64 {
    let e = estimate - truth;
    match period {
        Some(p) => {
            let w = e - p * (e / p).round();
            w * w
        }
        None => e * e,
    }
}

fn cdf_from(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect()
}

fn sample_outcome(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn simulate_mse_streamed(
    f: &ChannelFamily,
    theta: f64,
    strategy: &dyn Strategy,
    trials: usize,
    seed: u64,
    stream_base: u64,
) -> Result<MseEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let probs = strategy.distribution(f, theta)?;
    let cdf = cdf_from(&probs);
    let labels = strategy.labels();
    if labels.len() != probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} outcomes",
            labels.len(),
            probs.len()
        )));
    }
    let period = f.param_space().period;
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(stream_base + t as u64);
            let g = sample_outcome(&cdf, rng.gen::<f64>());
            squared_error(labels[g], theta, period)
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / trials as f64;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / trials as f64;
    Ok(MseEstimate {
        mean,
        std_error: (var / trials as f64).sqrt(),
        trials,
        theta,
        seed,
    })
}

/// Simulates i.i.d. runs of a strategy at `theta` and reports the mean
/// squared (circular, when the domain has a period) error of its labels.
pub fn simulate_mse(
    f: &ChannelFamily,
    theta: f64,
    strategy: &dyn Strategy,
    trials: usize,
    seed: u64,
) -> Result<MseEstimate> {
    simulate_mse_streamed(f, theta, strategy, trials, seed, 0)
}

/// Worst simulated risk over a neighborhood grid, scaled by a power of the
/// copy count.
#[derive(Debug, Clone)]
pub struct LocalMinimaxReport {
    pub n_uses: usize,
    pub alpha: f64,
    pub theta0: f64,
    pub epsilon: f64,
    /// `n^alpha` times the largest grid MSE.
    pub risk: f64,
    pub worst_theta: f64,
    pub points: Vec<MseEstimate>,
}

/// Finite-n surrogate of the local asymptotic worst-case risk:
/// `n^alpha max_theta MSE(theta)` over a uniform grid of `grid_points`
/// values in `[theta0 - epsilon, theta0 + epsilon]`. Both `n` and `epsilon`
/// are reported so sweeps can display the double limit; the order of the
/// two limits cannot be realized numerically.
pub fn local_minimax_risk(
    f: &ChannelFamily,
    strategy: &dyn Strategy,
    theta0: f64,
    epsilon: f64,
    grid_points: usize,
    trials: usize,
    seed: u64,
    alpha: f64,
) -> Result<LocalMinimaxReport> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument("need a positive neighborhood".into()));
    }
    if grid_points < 5 {
        return Err(Error::InvalidArgument(
            "need at least five grid points".into(),
        ));
    }
    let mut points = Vec::with_capacity(grid_points);
    for g in 0..grid_points {
        let frac = g as f64 / (grid_points - 1) as f64;
        let theta = theta0 - epsilon + 2.0 * epsilon * frac;
        let est = simulate_mse_streamed(f, theta, strategy, trials, seed, (g as u64) << 32)?;
        points.push(est);
    }
    let worst = points
        .iter()
        .max_by(|a, b| a.mean.total_cmp(&b.mean))
        .expect("grid is nonempty");
    let nf = strategy.n_uses() as f64;
    Ok(LocalMinimaxReport {
        n_uses: strategy.n_uses(),
        alpha,
        theta0,
        epsilon,
        risk: nf.powf(alpha) * worst.mean,
        worst_theta: worst.theta,
        points,
    })
}

/// Stage-1 specification of the two-step estimator: a per-copy input and
/// POVM used purely for maximum-likelihood localization.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub input: EstimatorInput,
    pub povm: Vec<CMatrix>,
}

/// What the second stage does with the remaining uses, chosen after seeing
/// the stage-1 center.
#[derive(Debug, Clone)]
pub enum StageTwo {
    /// Report the stage-1 center itself (remaining uses are discarded).
    PlugIn,
    /// Measure blocks of `uses_per_block` uses with the given input and
    /// POVM, then maximize the likelihood over a grid of candidates within
    /// `halfwidth` of the stage-1 center (grid spacing `grid_step`).
    PerCopy {
        input: EstimatorInput,
        povm: Vec<CMatrix>,
        uses_per_block: usize,
        halfwidth: f64,
        grid_step: f64,
    },
    /// Run the discretized optimal covariant phase estimator on all
    /// remaining uses (ignores the stage-1 center by covariance).
    CovariantPhase { grid_size: usize },
}

pub type StageTwoBuilder = Arc<dyn Fn(f64) -> Result<StageTwo> + Send + Sync>;

/// Two-step estimation strategy: localize with roughly `sqrt(n)` single
/// uses, then spend the rest on a measurement adapted to the localization.
#[derive(Clone)]
pub struct TwoStepSpec {
    pub n_total: usize,
    pub stage1: StageOne,
    pub stage2: StageTwoBuilder,
}

impl std::fmt::Debug for TwoStepSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwoStepSpec")
            .field("n_total", &self.n_total)
            .finish()
    }
}

/// One execution of the two-step estimator.
#[derive(Debug, Clone, Copy)]
pub struct TwoStepOutcome {
    pub theta_hat: f64,
    pub theta_stage1: f64,
    /// The stage-1 likelihood was flat; the center is a domain-middle
    /// fallback rather than data-driven.
    pub localization_failed: bool,
    pub uses_stage1: usize,
    pub uses_stage2: usize,
    pub uses_discarded: usize,
}

enum Stage2Plan {
    PlugIn {
        discarded: usize,
    },
    Grid {
        candidates: Vec<f64>,
        log_table: Vec<Vec<f64>>,
        cdf_true: Vec<f64>,
        blocks: usize,
        uses: usize,
        discarded: usize,
    },
    Covariant {
        cdf_true: Vec<f64>,
        grid_size: usize,
        uses: usize,
    },
}

struct TwoStepContext {
    n1: usize,
    n2_raw: usize,
    cells: Vec<f64>,
    /// log outcome probabilities per stage-1 cell
    cell_log_table: Vec<Vec<f64>>,
    stage1_cdf: Vec<f64>,
    plans: Mutex<HashMap<u64, Arc<Stage2Plan>>>,
}

fn log_clamped(p: f64) -> f64 {
    p.max(1e-300).ln()
}

impl TwoStepContext {
    fn new(f: &ChannelFamily, spec: &TwoStepSpec, theta_true: f64) -> Result<Self> {
        if spec.n_total < 4 {
            return Err(Error::InvalidArgument(
                "two-step estimation needs at least four uses".into(),
            ));
        }
        validate_povm(&spec.stage1.povm)?;
        let n1 = (spec.n_total as f64).sqrt().ceil() as usize;
        let space = f.param_space();
        // Stage-1 candidate cells of width about pi / ceil(sqrt(n)).
        let target_width = std::f64::consts::PI / n1 as f64;
        let cell_count = (space.width() / target_width).ceil().max(1.0) as usize;
        let width = space.width() / cell_count as f64;
        let cells: Vec<f64> = (0..cell_count)
            .map(|i| space.lo + (i as f64 + 0.5) * width)
            .collect();
        let mut cell_log_table = Vec::with_capacity(cell_count);
        for &c in &cells {
            let p = born_distribution(f, c, 1, &spec.stage1.input, &spec.stage1.povm)?;
            cell_log_table.push(p.iter().map(|&x| log_clamped(x)).collect());
        }
        let p_true = born_distribution(f, theta_true, 1, &spec.stage1.input, &spec.stage1.povm)?;
        Ok(Self {
            n1,
            n2_raw: spec.n_total - n1,
            cells,
            cell_log_table,
            stage1_cdf: cdf_from(&p_true),
            plans: Mutex::new(HashMap::new()),
        })
    }

    fn stage2_plan(
        &self,
        f: &ChannelFamily,
        spec: &TwoStepSpec,
        theta_true: f64,
        theta1: f64,
    ) -> Result<Arc<Stage2Plan>> {
        if let Some(plan) = self.plans.lock().unwrap().get(&theta1.to_bits()) {
            return Ok(Arc::clone(plan));
        }
        let space = f.param_space();
        let plan = match (spec.stage2)(theta1)? {
            StageTwo::PlugIn => Stage2Plan::PlugIn {
                discarded: self.n2_raw,
            },
            StageTwo::PerCopy {
                input,
                povm,
                uses_per_block,
                halfwidth,
                grid_step,
            } => {
                if uses_per_block == 0 || grid_step <= 0.0 || halfwidth <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "stage-2 block size, half width, and grid step must be positive".into(),
                    ));
                }
                let lo = space.clamp(theta1 - halfwidth);
                let hi = space.clamp(theta1 + halfwidth);
                let count = ((hi - lo) / grid_step).floor() as usize + 1;
                if count < 2 {
                    return Err(Error::InvalidArgument(
                        "stage-2 candidate grid has fewer than two points".into(),
                    ));
                }
                let candidates: Vec<f64> =
                    (0..count).map(|i| lo + i as f64 * grid_step).collect();
                let mut log_table = Vec::with_capacity(count);
                for &c in &candidates {
                    let p = born_distribution(f, c, uses_per_block, &input, &povm)?;
                    log_table.push(p.iter().map(|&x| log_clamped(x)).collect());
                }
                let p_true = born_distribution(f, theta_true, uses_per_block, &input, &povm)?;
                let blocks = self.n2_raw / uses_per_block;
                if blocks == 0 {
                    return Err(Error::InvalidArgument(
                        "stage-2 block size exceeds the remaining uses".into(),
                    ));
                }
                Stage2Plan::Grid {
                    candidates,
                    log_table,
                    cdf_true: cdf_from(&p_true),
                    blocks,
                    uses: blocks * uses_per_block,
                    discarded: self.n2_raw - blocks * uses_per_block,
                }
            }
            StageTwo::CovariantPhase { grid_size } => {
                let scheme = covariant_minimax_risk(self.n2_raw)?;
                let probs = covariant_outcome_probs(&scheme.amplitudes, theta_true, grid_size)?;
                Stage2Plan::Covariant {
                    cdf_true: cdf_from(&probs),
                    grid_size,
                    uses: self.n2_raw,
                }
            }
        };
        let plan = Arc::new(plan);
        self.plans
            .lock()
            .unwrap()
            .insert(theta1.to_bits(), Arc::clone(&plan));
        Ok(plan)
    }

    fn replicate(
        &self,
        f: &ChannelFamily,
        spec: &TwoStepSpec,
        theta_true: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<TwoStepOutcome> {
        // Stage 1: sample single-copy outcomes, localize by grid MLE.
        let n_outcomes = self.cell_log_table[0].len();
        let mut counts = vec![0usize; n_outcomes];
        for _ in 0..self.n1 {
            counts[sample_outcome(&self.stage1_cdf, rng.gen::<f64>())] += 1;
        }
        let mut best = f64::NEG_INFINITY;
        let mut worst = f64::INFINITY;
        let mut best_cell = 0;
        for (c, row) in self.cell_log_table.iter().enumerate() {
            let ll: f64 = row
                .iter()
                .zip(&counts)
                .map(|(lp, &k)| k as f64 * lp)
                .sum();
            if ll > best {
                best = ll;
                best_cell = c;
            }
            if ll < worst {
                worst = ll;
            }
        }
        let localization_failed = best - worst <= 1e-12 * best.abs().max(1.0);
        let theta1 = if localization_failed {
            self.cells[self.cells.len() / 2]
        } else {
            self.cells[best_cell]
        };

        let plan = self.stage2_plan(f, spec, theta_true, theta1)?;
        let (theta_hat, uses2, discarded) = match plan.as_ref() {
            Stage2Plan::PlugIn { discarded } => (theta1, 0, *discarded),
            Stage2Plan::Grid {
                candidates,
                log_table,
                cdf_true,
                blocks,
                uses,
                discarded,
            } => {
                let mut counts = vec![0usize; cdf_true.len()];
                for _ in 0..*blocks {
                    counts[sample_outcome(cdf_true, rng.gen::<f64>())] += 1;
                }
                let mut best = f64::NEG_INFINITY;
                let mut best_c = 0;
                for (c, row) in log_table.iter().enumerate() {
                    let ll: f64 = row
                        .iter()
                        .zip(&counts)
                        .map(|(lp, &k)| k as f64 * lp)
                        .sum();
                    if ll > best {
                        best = ll;
                        best_c = c;
                    }
                }
                (candidates[best_c], *uses, *discarded)
            }
            Stage2Plan::Covariant {
                cdf_true,
                grid_size,
                uses,
            } => {
                let g = sample_outcome(cdf_true, rng.gen::<f64>());
                let theta_g = std::f64::consts::TAU * g as f64 / *grid_size as f64;
                (theta_g, *uses, 0)
            }
        };
        Ok(TwoStepOutcome {
            theta_hat,
            theta_stage1: theta1,
            localization_failed,
            uses_stage1: self.n1,
            uses_stage2: uses2,
            uses_discarded: discarded,
        })
    }
}

/// Runs a single execution of the two-step estimator.
pub fn run_two_step(
    f: &ChannelFamily,
    spec: &TwoStepSpec,
    theta_true: f64,
    seed: u64,
) -> Result<TwoStepOutcome> {
    let ctx = TwoStepContext::new(f, spec, theta_true)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    ctx.replicate(f, spec, theta_true, &mut rng)
}

/// Monte Carlo summary of a two-step estimator.
#[derive(Debug, Clone)]
pub struct TwoStepReport {
    pub mse: MseEstimate,
    pub localization_failures: usize,
    pub uses_stage1: usize,
    pub uses_stage2: usize,
    pub uses_discarded: usize,
}

/// Replicates the two-step estimator and reports the empirical MSE (with
/// circular folding when the domain has a period), the number of flat
/// stage-1 likelihoods, and the use accounting of the first replica.
pub fn two_step_mse(
    f: &ChannelFamily,
    spec: &TwoStepSpec,
    theta_true: f64,
    replicas: usize,
    seed: u64,
) -> Result<TwoStepReport> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let ctx = TwoStepContext::new(f, spec, theta_true)?;
    let period = f.param_space().period;
    let outcomes: Vec<TwoStepOutcome> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            ctx.replicate(f, spec, theta_true, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = outcomes
        .iter()
        .map(|o| squared_error(o.theta_hat, theta_true, period))
        .collect();
    let mean = errors.iter().sum::<f64>() / replicas as f64;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / replicas as f64;
    Ok(TwoStepReport {
        mse: MseEstimate {
            mean,
            std_error: (var / replicas as f64).sqrt(),
            trials: replicas,
            theta: theta_true,
            seed,
        },
        localization_failures: outcomes.iter().filter(|o| o.localization_failed).count(),
        uses_stage1: outcomes[0].uses_stage1,
        uses_stage2: outcomes[0].uses_stage2,
        uses_discarded: outcomes[0].uses_discarded,
    })
}

/// Per-grid-point empirical moments of an estimator.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsPoint {
    pub theta: f64,
    /// Empirical mean of the estimate.
    pub eta: f64,
    /// Empirical (population) variance of the estimate.
    pub variance: f64,
    /// Empirical mean squared error; equals
    /// `variance + (eta - theta)^2` exactly on the same sample.
    pub mse: f64,
    /// Standard error of the variance estimate.
    pub variance_std_error: f64,
}

/// Classical Cramer-Rao check on one grid window: the variance must
/// dominate `slope^2 / J` up to Monte Carlo tolerance.
///
/// The Fisher information is averaged over the window endpoints. For the
/// window average this makes the inequality exact, not merely a midpoint
/// approximation: by Cauchy-Schwarz,
/// `(avg eta')^2 <= avg(eta'^2/J) avg(J) <= avg(v) avg(J)`,
/// and the central-difference slope is exactly the window average of
/// `eta'`. The tolerance covers the sampling error of both the variance
/// and the slope (three standard errors each).
#[derive(Debug, Clone, Copy)]
pub struct SlopeCheck {
    pub theta_mid: f64,
    /// Central-difference slope of the mean curve over the window.
    pub slope: f64,
    pub slope_std_error: f64,
    /// Endpoint-averaged classical Fisher information.
    pub fisher: f64,
    /// Endpoint-averaged empirical variance.
    pub variance_mid: f64,
    /// `slope^2 / fisher`.
    pub variance_bound: f64,
    /// Monte Carlo allowance for the comparison.
    pub tolerance: f64,
    /// `variance_mid + tolerance >= variance_bound`.
    pub holds: bool,
}

/// Bias/variance diagnostics of a strategy over a parameter grid.
///
/// Uses plain (unfolded) errors: the mean/slope calculus behind the
/// classical Cramer-Rao inequality lives on the line, not the circle.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub points: Vec<DiagnosticsPoint>,
    pub checks: Vec<SlopeCheck>,
}

/// Estimates the mean curve `eta(theta)`, the variance curve, and the
/// mean-curve slopes at grid midpoints, and checks the classical
/// Cramer-Rao inequality `variance >= slope^2 / J` within Monte Carlo
/// tolerance at every midpoint.
pub fn unbiasedness_diagnostics(
    f: &ChannelFamily,
    strategy: &dyn Strategy,
    thetas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<DiagnosticsReport> {
    if thetas.len() < 3 {
        return Err(Error::InvalidArgument(
            "need at least three grid points".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let labels = strategy.labels();
    let mut points = Vec::with_capacity(thetas.len());
    for (g, &theta) in thetas.iter().enumerate() {
        let probs = strategy.distribution(f, theta)?;
        let cdf = cdf_from(&probs);
        let estimates: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                rng.set_stream(((g as u64) << 32) + t as u64);
                labels[sample_outcome(&cdf, rng.gen::<f64>())]
            })
            .collect();
        let eta = estimates.iter().sum::<f64>() / trials as f64;
        let variance =
            estimates.iter().map(|x| (x - eta) * (x - eta)).sum::<f64>() / trials as f64;
        let mse = estimates
            .iter()
            .map(|x| (x - theta) * (x - theta))
            .sum::<f64>()
            / trials as f64;
        let decomposition = variance + (eta - theta) * (eta - theta);
        if (mse - decomposition).abs() > 1e-9 * mse.abs().max(1.0) {
            return Err(Error::NumericalFailure(format!(
                "MSE {mse} fails to decompose into variance plus squared bias {decomposition}"
            )));
        }
        let m4 = estimates
            .iter()
            .map(|x| {
                let d = (x - eta) * (x - eta);
                (d - variance) * (d - variance)
            })
            .sum::<f64>()
            / trials as f64;
        points.push(DiagnosticsPoint {
            theta,
            eta,
            variance,
            mse,
            variance_std_error: (m4 / trials as f64).sqrt(),
        });
    }
    let fisher_at: Vec<f64> = thetas
        .iter()
        .map(|&t| classical_fisher(f, t, strategy, None))
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Vec::with_capacity(thetas.len() - 1);
    for (w, jw) in points.windows(2).zip(fisher_at.windows(2)) {
        let (a, b) = (w[0], w[1]);
        let dt = b.theta - a.theta;
        if dt.abs() < 1e-15 {
            return Err(Error::InvalidArgument("repeated grid points".into()));
        }
        let slope = (b.eta - a.eta) / dt;
        let slope_se = ((a.variance + b.variance) / trials as f64).sqrt() / dt.abs();
        let fisher = 0.5 * (jw[0] + jw[1]);
        let v_mid = 0.5 * (a.variance + b.variance);
        let (bound, bound_se) = if fisher > 0.0 {
            (
                slope * slope / fisher,
                2.0 * slope.abs() * slope_se / fisher,
            )
        } else {
            (0.0, 0.0)
        };
        let v_se = 0.5 * (a.variance_std_error + b.variance_std_error);
        let tolerance = 3.0 * (v_se + bound_se);
        checks.push(SlopeCheck {
            theta_mid: 0.5 * (a.theta + b.theta),
            slope,
            slope_std_error: slope_se,
            fisher,
            variance_mid: v_mid,
            variance_bound: bound,
            tolerance,
            holds: v_mid + tolerance >= bound,
        });
    }
    Ok(DiagnosticsReport { points, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        exponential_decay_coeffs, make_phase_damping_family, make_unitary_family, DerivSpec,
        KrausFn,
    };
    use crate::linalg::{c, cr};
    use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

    fn decay_qubit() -> ChannelFamily {
        let (coeff, deriv) =
            exponential_decay_coeffs(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        make_phase_damping_family(2, coeff, Some(deriv), ParamSpace::new(0.05, 3.0).unwrap())
            .unwrap()
    }

    fn phase_family() -> ChannelFamily {
        let h = CMatrix::from_real_diag(&[0.5, -0.5]);
        make_unitary_family(&h, ParamSpace::circular(0.0, TAU, TAU).unwrap()).unwrap()
    }

    /// Classical coin family: |0> -> diag((1+t)/2, (1-t)/2).
    fn coin_family() -> ChannelFamily {
        let kraus: KrausFn = Arc::new(|t: f64| {
            let a = ((1.0 + t) / 2.0).sqrt();
            let b = ((1.0 - t) / 2.0).sqrt();
            Ok(vec![
                CMatrix::from_rows(&[vec![cr(a), cr(0.0)], vec![cr(0.0), cr(0.0)]]).unwrap(),
                CMatrix::from_rows(&[vec![cr(0.0), cr(0.0)], vec![cr(b), cr(0.0)]]).unwrap(),
                CMatrix::from_rows(&[vec![cr(0.0), cr(1.0)], vec![cr(0.0), cr(0.0)]]).unwrap(),
            ])
        });
        ChannelFamily::from_parts(
            "coin",
            2,
            2,
            kraus,
            DerivSpec::FiniteDifference,
            ParamSpace::new(-1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn plus_input() -> EstimatorInput {
        let u = CMatrix::col_vector(&[cr(FRAC_1_SQRT_2), cr(FRAC_1_SQRT_2)]);
        let v = CMatrix::basis_ket(2, 0);
        EstimatorInput::PureKet(&u * &v.transpose())
    }

    fn basis_zero_input() -> EstimatorInput {
        let e0 = CMatrix::basis_ket(2, 0);
        EstimatorInput::PureKet(&e0 * &e0.transpose())
    }

    /// sigma_x eigenbasis measurement on the system, reference ignored.
    fn sigma_x_povm() -> Vec<CMatrix> {
        let s = FRAC_1_SQRT_2;
        let plus = CMatrix::col_vector(&[cr(s), cr(s)]);
        let minus = CMatrix::col_vector(&[cr(s), cr(-s)]);
        vec![
            (&plus * &plus.adjoint()).kron(&CMatrix::identity(2)),
            (&minus * &minus.adjoint()).kron(&CMatrix::identity(2)),
        ]
    }

    fn bell_basis_povm() -> Vec<CMatrix> {
        let s = FRAC_1_SQRT_2;
        let vecs = [
            vec![cr(s), cr(0.0), cr(0.0), cr(s)],
            vec![cr(s), cr(0.0), cr(0.0), cr(-s)],
            vec![cr(0.0), cr(s), cr(s), cr(0.0)],
            vec![cr(0.0), cr(s), cr(-s), cr(0.0)],
        ];
        vecs.iter()
            .map(|v| {
                let k = CMatrix::col_vector(v);
                &k * &k.adjoint()
            })
            .collect()
    }

    fn bell_input() -> EstimatorInput {
        EstimatorInput::PureKet(CMatrix::identity(2).scale_re(FRAC_1_SQRT_2))
    }

    #[test]
    fn trivial_povm_gives_a_deterministic_outcome() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(
            1,
            bell_input(),
            vec![CMatrix::identity(4)],
            vec![0.8],
            &space,
        )
        .unwrap();
        let p = outcome_distribution(&f, 0.7, &e).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn bell_basis_probabilities_match_the_coefficient_block() {
        let f = decay_qubit();
        let space = f.param_space();
        let theta = 2f64.ln();
        let e = Estimator::new(
            1,
            bell_input(),
            bell_basis_povm(),
            vec![0.1, 0.2, 0.3, 0.4],
            &space,
        )
        .unwrap();
        let p = outcome_distribution(&f, theta, &e).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
        assert!(p[2].abs() < 1e-12 && p[3].abs() < 1e-12);
    }

    #[test]
    fn coin_family_measurement_reads_out_classical_probabilities() {
        let f = coin_family();
        let space = f.param_space();
        let e0 = CMatrix::basis_ket(2, 0);
        let e1 = CMatrix::basis_ket(2, 1);
        let povm = vec![
            (&e0 * &e0.adjoint()).kron(&CMatrix::identity(2)),
            (&e1 * &e1.adjoint()).kron(&CMatrix::identity(2)),
        ];
        let e = Estimator::new(1, basis_zero_input(), povm, vec![0.5, -0.5], &space).unwrap();
        let p = outcome_distribution(&f, 0.3, &e).unwrap();
        assert!((p[0] - 0.65).abs() < 1e-10);
        assert!((p[1] - 0.35).abs() < 1e-10);
    }

    #[test]
    fn superposition_probe_distribution_is_the_half_angle_law() {
        let f = phase_family();
        let s = NoonStrategy::new(4, 0.0, 1.0).unwrap();
        let p = s.distribution(&f, 0.4).unwrap();
        assert!((p[0] - (0.8f64).cos().powi(2)).abs() < 1e-14);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn classical_fisher_of_the_probe_is_quadratic() {
        let f = phase_family();
        let s = NoonStrategy::new(4, 0.0, 1.0).unwrap();
        let j = classical_fisher(&f, 0.9, &s, None).unwrap();
        assert!((j - 16.0).abs() < 1e-5, "got {j}");
    }

    #[test]
    fn classical_fisher_of_bell_readout_matches_the_channel_maximum() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(
            1,
            bell_input(),
            bell_basis_povm(),
            vec![0.1, 0.2, 0.3, 0.4],
            &space,
        )
        .unwrap();
        let j = classical_fisher(&f, 2f64.ln(), &e, None).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-6, "got {j}");
    }

    #[test]
    fn single_outcome_povm_carries_no_information() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(
            1,
            bell_input(),
            vec![CMatrix::identity(4)],
            vec![1.0],
            &space,
        )
        .unwrap();
        assert_eq!(classical_fisher(&f, 0.8, &e, None).unwrap(), 0.0);
    }

    #[test]
    fn per_copy_bitflip_readout_attains_one_third() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(1, plus_input(), sigma_x_povm(), vec![0.5, 1.0], &space).unwrap();
        let j = classical_fisher(&f, 2f64.ln(), &e, None).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-6, "got {j}");
    }

    #[test]
    fn deterministic_estimator_mse_is_the_squared_bias() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(
            1,
            bell_input(),
            vec![CMatrix::identity(4)],
            vec![0.9],
            &space,
        )
        .unwrap();
        let mse = simulate_mse(&f, 0.4, &e, 500, 3).unwrap();
        assert!((mse.mean - 0.25).abs() < 1e-12);
        assert_eq!(mse.std_error, 0.0);
    }

    #[test]
    fn probe_mse_matches_the_exact_two_outcome_expectation() {
        let f = phase_family();
        let theta = 0.8;
        let s = NoonStrategy::new(3, 0.7, 1.1).unwrap();
        let p = noon_outcome_prob(3, theta);
        let exact = p * squared_error(0.7, theta, Some(TAU))
            + (1.0 - p) * squared_error(1.1, theta, Some(TAU));
        let mse = simulate_mse(&f, theta, &s, 40_000, 12).unwrap();
        assert!(
            (mse.mean - exact).abs() <= 3.0 * mse.std_error,
            "empirical {} vs exact {exact}",
            mse.mean
        );
    }

    #[test]
    fn simulation_is_deterministic_and_error_is_circular() {
        let f = phase_family();
        let s = NoonStrategy::new(2, 6.2, 6.2).unwrap();
        let a = simulate_mse(&f, 0.05, &s, 200, 5).unwrap();
        let b = simulate_mse(&f, 0.05, &s, 200, 5).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        // 6.2 is within 2 pi of 0.05 the short way around.
        let direct: f64 = 6.2 - 0.05;
        let folded = direct - TAU;
        assert!((a.mean - folded * folded).abs() < 1e-12);
    }

    #[test]
    fn deterministic_local_risk_is_the_boundary_square() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(
            1,
            bell_input(),
            vec![CMatrix::identity(4)],
            vec![1.0],
            &space,
        )
        .unwrap();
        let report = local_minimax_risk(&f, &e, 1.0, 0.2, 9, 50, 2, 0.0).unwrap();
        assert!((report.risk - 0.04).abs() < 1e-12);
        assert!((report.worst_theta - 0.8).abs() < 1e-12 || (report.worst_theta - 1.2).abs() < 1e-12);
    }

    #[test]
    fn covariant_local_risk_matches_the_eigenvalue_risk() {
        let f = phase_family();
        let s = CovariantStrategy::new(3, 128).unwrap();
        let report = local_minimax_risk(&f, &s, 1.0, 0.3, 5, 20_000, 7, 2.0).unwrap();
        let reference = covariant_minimax_risk(3).unwrap().risk;
        let allowance = 4.0 * PI * PI / (128.0 * 128.0);
        for pt in &report.points {
            assert!(
                (pt.mean - reference).abs() <= 3.0 * pt.std_error + allowance,
                "{pt:?} vs {reference}"
            );
        }
        assert!(report.risk >= 9.0 * (reference - allowance));
    }

    #[test]
    fn relative_frequency_readout_is_unbiased_and_saturating() {
        // For the classical coin family the locally unbiased labels are the
        // relative-frequency estimates +-1, which are globally unbiased and
        // saturate the classical Cramer-Rao bound at every parameter.
        let f = coin_family();
        let space = f.param_space();
        let t0 = 0.3;
        let e0 = CMatrix::basis_ket(2, 0);
        let e1 = CMatrix::basis_ket(2, 1);
        let povm = vec![
            (&e0 * &e0.adjoint()).kron(&CMatrix::identity(2)),
            (&e1 * &e1.adjoint()).kron(&CMatrix::identity(2)),
        ];
        let labels =
            locally_unbiased_labels(&f, t0, 1, &basis_zero_input(), &povm, None).unwrap();
        assert!((labels[0] - 1.0).abs() < 1e-6 && (labels[1] + 1.0).abs() < 1e-6);
        let e = Estimator::new(1, basis_zero_input(), povm, labels, &space).unwrap();
        let grid = [0.2, 0.3, 0.4];
        let report = unbiasedness_diagnostics(&f, &e, &grid, 4_000_000, 31).unwrap();
        for p in &report.points {
            assert!((p.eta - p.theta).abs() < 0.005, "eta {} at {}", p.eta, p.theta);
        }
        for check in &report.checks {
            assert!((check.slope - 1.0).abs() < 0.06, "slope {}", check.slope);
            assert!(check.holds, "{check:?}");
            // Saturation: variance times Fisher information near slope^2.
            let ratio = check.variance_mid * check.fisher / (check.slope * check.slope);
            assert!((ratio - 1.0).abs() < 0.05, "{check:?}");
        }
    }

    #[test]
    fn deterministic_estimator_has_zero_variance_and_slope() {
        let f = decay_qubit();
        let space = f.param_space();
        let e = Estimator::new(
            1,
            bell_input(),
            vec![CMatrix::identity(4)],
            vec![1.0],
            &space,
        )
        .unwrap();
        let report =
            unbiasedness_diagnostics(&f, &e, &[0.5, 0.7, 0.9], 200, 4).unwrap();
        for p in &report.points {
            assert_eq!(p.variance, 0.0);
        }
        for c in &report.checks {
            assert_eq!(c.slope, 0.0);
            assert!(c.holds);
        }
    }

    #[test]
    fn probe_mean_curve_flattens_at_reflection_points() {
        // d eta / d theta = p'(theta) (l+ - l-) vanishes where sin(n theta)
        // does; the readout is locally useless there whatever the labels.
        let f = phase_family();
        let s = NoonStrategy::new(4, 0.7, 0.9).unwrap();
        let refl = PI / 4.0;
        let grid = [refl - 0.004, refl, refl + 0.004];
        let report = unbiasedness_diagnostics(&f, &s, &grid, 120_000, 8).unwrap();
        for check in &report.checks {
            assert!(check.slope.abs() < 0.2, "slope {}", check.slope);
        }
    }

    #[test]
    fn two_step_on_a_constant_family_returns_the_localization_output() {
        let constant = make_unitary_family(
            &CMatrix::zeros(2, 2),
            ParamSpace::new(0.0, 2.0).unwrap(),
        )
        .unwrap();
        let spec = TwoStepSpec {
            n_total: 16,
            stage1: StageOne {
                input: basis_zero_input(),
                povm: vec![CMatrix::identity(4)],
            },
            stage2: Arc::new(|_| Ok(StageTwo::PlugIn)),
        };
        let out = run_two_step(&constant, &spec, 0.7, 5).unwrap();
        assert!(out.localization_failed);
        assert_eq!(out.theta_hat, out.theta_stage1);
        assert_eq!(out.uses_stage2, 0);
        assert_eq!(out.uses_stage1 + out.uses_discarded, 16);
        let report = two_step_mse(&constant, &spec, 0.7, 50, 5).unwrap();
        assert_eq!(report.localization_failures, 50);
        let expected = (out.theta_stage1 - 0.7) * (out.theta_stage1 - 0.7);
        assert!((report.mse.mean - expected).abs() < 1e-12);
    }

    #[test]
    fn two_step_dephasing_reaches_the_fisher_rate() {
        let f = decay_qubit();
        let n_total = 256usize;
        let spec = TwoStepSpec {
            n_total,
            stage1: StageOne {
                input: plus_input(),
                povm: sigma_x_povm(),
            },
            stage2: Arc::new(|_theta1| {
                let s = FRAC_1_SQRT_2;
                let plus = CMatrix::col_vector(&[cr(s), cr(s)]);
                let minus = CMatrix::col_vector(&[cr(s), cr(-s)]);
                Ok(StageTwo::PerCopy {
                    input: {
                        let u = CMatrix::col_vector(&[cr(s), cr(s)]);
                        let v = CMatrix::basis_ket(2, 0);
                        EstimatorInput::PureKet(&u * &v.transpose())
                    },
                    povm: vec![
                        (&plus * &plus.adjoint()).kron(&CMatrix::identity(2)),
                        (&minus * &minus.adjoint()).kron(&CMatrix::identity(2)),
                    ],
                    uses_per_block: 1,
                    halfwidth: 2.5,
                    grid_step: 2e-3,
                })
            }),
        };
        let theta = 2f64.ln();
        let report = two_step_mse(&f, &spec, theta, 400, 77).unwrap();
        assert_eq!(report.localization_failures, 0);
        assert_eq!(report.uses_stage1, 16);
        assert_eq!(report.uses_stage2, 240);
        // Per-copy Fisher information is 1/3 at ln 2, so the stage-2 MLE on
        // 240 uses should have MSE near 3/240.
        let scaled = n_total as f64 * report.mse.mean;
        let predict = 3.0 * n_total as f64 / 240.0;
        assert!(
            (scaled - predict).abs() < 0.4 * predict,
            "n*MSE = {scaled}, predicted {predict}"
        );
    }

    #[test]
    fn two_step_phase_covariant_tracks_the_reduced_use_count() {
        let f = phase_family();
        let spec = TwoStepSpec {
            n_total: 16,
            stage1: StageOne {
                input: plus_input(),
                povm: sigma_x_povm(),
            },
            stage2: Arc::new(|_| Ok(StageTwo::CovariantPhase { grid_size: 256 })),
        };
        let report = two_step_mse(&f, &spec, 1.1, 600, 19).unwrap();
        assert_eq!(report.uses_stage1, 4);
        assert_eq!(report.uses_stage2, 12);
        let reference = covariant_minimax_risk(12).unwrap().risk;
        let allowance = 4.0 * PI * PI / (256.0 * 256.0);
        assert!(
            (report.mse.mean - reference).abs() <= 3.0 * report.mse.std_error + allowance,
            "{report:?} vs {reference}"
        );
    }

    #[test]
    fn estimator_validates_povm_and_labels() {
        let f = decay_qubit();
        let space = f.param_space();
        // Incomplete POVM.
        let half = vec![CMatrix::identity(4).scale_re(0.5)];
        assert!(matches!(
            Estimator::new(1, bell_input(), half, vec![0.5], &space),
            Err(Error::PovmIncomplete(_))
        ));
        // Label clamped into the linear domain.
        let e = Estimator::new(
            1,
            bell_input(),
            vec![CMatrix::identity(4)],
            vec![7.0],
            &space,
        )
        .unwrap();
        assert_eq!(e.clamped_labels(), 1);
        assert_eq!(e.labels()[0], 3.0);
        // Non-Hermitian-PSD element.
        let mut bad = CMatrix::identity(4);
        bad.set(0, 0, c(-1.0, 0.0));
        let rest = &CMatrix::identity(4) - &bad;
        assert!(Estimator::new(1, bell_input(), vec![bad, rest], vec![0.5, 0.6], &space).is_err());
    }

    #[test]
    fn circular_labels_are_folded_by_the_period() {
        let f = phase_family();
        let space = f.param_space();
        let povm = vec![CMatrix::identity(4)];
        let e = Estimator::new(1, bell_input(), povm, vec![-1.0], &space).unwrap();
        assert!((e.labels()[0] - (TAU - 1.0)).abs() < 1e-12);
        assert_eq!(e.clamped_labels(), 0);
    }

    #[test]
    fn density_input_matches_the_equivalent_pure_input() {
        let f = decay_qubit();
        let space = f.param_space();
        let a = CMatrix::identity(2).scale_re(FRAC_1_SQRT_2);
        let ket = a.vec_ket();
        let rho = &ket * &ket.adjoint();
        let povm = bell_basis_povm();
        let e_pure = Estimator::new(
            1,
            EstimatorInput::PureKet(a),
            povm.clone(),
            vec![0.1, 0.2, 0.3, 0.4],
            &space,
        )
        .unwrap();
        let e_dense = Estimator::new(
            1,
            EstimatorInput::Density(rho),
            povm,
            vec![0.1, 0.2, 0.3, 0.4],
            &space,
        )
        .unwrap();
        let p1 = outcome_distribution(&f, 0.9, &e_pure).unwrap();
        let p2 = outcome_distribution(&f, 0.9, &e_dense).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
