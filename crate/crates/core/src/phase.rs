//! Phase estimation for the qubit rotation family: number-correlated probe
//! states, the binary parity-type readout, and the exact finite-n covariant
//! mini-max risk under the circular squared-error cost.
//!
//! The estimation model treats `n` uses of `rho -> e^{i theta h} rho
//! e^{-i theta h}` with `h = diag(1/2, -1/2)`. The probe
//! `(|0..0> + |1..1>)/sqrt(2)` turns the `n` uses into a single relative
//! phase `n theta`, which a binary measurement converts into a coin with
//! success probability `cos^2(n theta / 2)`. Covariant estimation works on
//! the `(n+1)`-dimensional Fourier-mode space instead of the exponentially
//! large state space.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::{cr, CMatrix, Complex64};

/// Periodicity of the phase parameter.
pub const PHASE_PERIOD: f64 = TAU;

/// Circular squared error `min_k (u + 2 pi k)^2`; even, `2 pi`-periodic,
/// zero at the origin, maximal value `pi^2`.
pub fn circular_cost(u: f64) -> f64 {
    let w = u - TAU * (u / TAU).round();
    w * w
}

/// Fourier coefficient of the circular cost in the expansion
/// `c(u) = sum_m a_m e^{i m u}`: `a_0 = pi^2 / 3`, `a_m = 2 (-1)^m / m^2`.
pub fn cost_fourier_coefficient(m: i64) -> f64 {
    if m == 0 {
        PI * PI / 3.0
    } else {
        let mf = m.unsigned_abs() as f64;
        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        2.0 * sign / (mf * mf)
    }
}

/// Composite-Simpson estimate of `(1/2pi) Int_{-pi}^{pi} c(u) cos(mu) du`.
fn quadrature_fourier_coefficient(m: i64, intervals: usize) -> f64 {
    let n = if intervals % 2 == 0 {
        intervals
    } else {
        intervals + 1
    };
    let h = TAU / n as f64;
    let f = |u: f64| circular_cost(u) * (m as f64 * u).cos();
    let mut sum = f(-PI) + f(PI);
    for i in 1..n {
        let u = -PI + h * i as f64;
        sum += if i % 2 == 1 { 4.0 * f(u) } else { 2.0 * f(u) };
    }
    sum * h / (3.0 * TAU)
}

/// Checks the closed-form Fourier coefficients of the circular cost against
/// numerical quadrature for `|m| <= max_m`.
pub fn verify_cost_fourier(max_m: usize, intervals: usize, tol: f64) -> Result<()> {
    for m in 0..=max_m as i64 {
        let exact = cost_fourier_coefficient(m);
        let numeric = quadrature_fourier_coefficient(m, intervals);
        if (exact - numeric).abs() > tol {
            return Err(Error::NumericalFailure(format!(
                "cost Fourier coefficient {m}: formula {exact} vs quadrature {numeric}"
            )));
        }
    }
    Ok(())
}

static FOURIER_CHECK: OnceLock<std::result::Result<(), String>> = OnceLock::new();

fn ensure_fourier_verified() -> Result<()> {
    FOURIER_CHECK
        .get_or_init(|| verify_cost_fourier(64, 1 << 17, 1e-10).map_err(|e| e.to_string()))
        .clone()
        .map_err(Error::NumericalFailure)
}

/// The `n`-use phase-estimation model.
#[derive(Debug, Clone, Copy)]
pub struct PhaseModel {
    pub n: usize,
}

impl PhaseModel {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one use".into()));
        }
        Ok(Self { n })
    }

    pub fn cost(&self, u: f64) -> f64 {
        circular_cost(u)
    }

    pub fn outcome_prob(&self, theta: f64) -> f64 {
        noon_outcome_prob(self.n, theta)
    }
}

/// The balanced superposition of the two extreme product states on `n`
/// qubits, `(|0..0> + |1..1>)/sqrt(2)`, as a state vector.
pub fn noon_state(n: usize) -> Result<CMatrix> {
    if !(1..=20).contains(&n) {
        return Err(Error::OutOfDomain {
            value: n as f64,
            lo: 1.0,
            hi: 20.0,
        });
    }
    let dim = 1usize << n;
    let mut entries = vec![cr(0.0); dim];
    entries[0] = cr(std::f64::consts::FRAC_1_SQRT_2);
    entries[dim - 1] = cr(std::f64::consts::FRAC_1_SQRT_2);
    Ok(CMatrix::col_vector(&entries))
}

/// Success probability of the binary readout `(|0..0> +- |1..1>)/sqrt(2)`
/// after `n` rotated uses: `cos^2(n theta / 2)`.
pub fn noon_outcome_prob(n: usize, theta: f64) -> f64 {
    let c = (n as f64 * theta / 2.0).cos();
    c * c
}

/// Classical Fisher information of the binary readout,
/// `(dp/dtheta)^2 / (p (1-p))`; equals `n^2` wherever defined.
pub fn noon_classical_fisher(n: usize, theta: f64) -> Result<f64> {
    let p = noon_outcome_prob(n, theta);
    let denom = p * (1.0 - p);
    if denom < 1e-12 {
        return Err(Error::DegenerateDistribution(format!(
            "binary outcome at probability {p} carries no local information"
        )));
    }
    let nf = n as f64;
    let dp = -(nf / 2.0) * (nf * theta).sin();
    Ok(dp * dp / denom)
}

/// Optimal covariant scheme for `n` uses.
#[derive(Debug, Clone)]
pub struct CovariantRiskResult {
    pub n: usize,
    /// Worst-case (equivalently Bayes) circular squared-error risk.
    pub risk: f64,
    /// Optimal input weights over Fourier modes `0..=n`, unit 2-norm, sign
    /// fixed so the largest-magnitude entry is positive.
    pub amplitudes: Vec<f64>,
}

/// Exact mini-max risk over covariant schemes with `n` uses: the smallest
/// eigenvalue of the `(n+1) x (n+1)` Toeplitz matrix of cost Fourier
/// coefficients, with its eigenvector as the optimal mode weights.
///
/// For input `sum_k c_k |k>` over Fourier modes and a covariant measurement,
/// the uniform-prior Bayes risk is `c^dagger M c` with
/// `M_jk = a_{j-k}` up to a diagonal phase conjugation that leaves the
/// spectrum untouched, so the optimum over unit vectors is the bottom of the
/// spectrum. The coefficients are verified by quadrature once per process
/// before the matrix is trusted.
pub fn covariant_minimax_risk(n: usize) -> Result<CovariantRiskResult> {
    if n > 5000 {
        return Err(Error::OutOfDomain {
            value: n as f64,
            lo: 0.0,
            hi: 5000.0,
        });
    }
    ensure_fourier_verified()?;
    let m = n + 1;
    let toeplitz = nalgebra::DMatrix::<f64>::from_fn(m, m, |j, k| {
        cost_fourier_coefficient(j as i64 - k as i64)
    });
    let eig = nalgebra::linalg::SymmetricEigen::new(toeplitz);
    let mut imin = 0;
    for i in 1..m {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let risk = eig.eigenvalues[imin];
    let mut amplitudes: Vec<f64> = (0..m).map(|i| eig.eigenvectors[(i, imin)]).collect();
    let norm = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NumericalFailure(format!(
            "eigenvector norm {norm} deviates from 1"
        )));
    }
    let mut ipeak = 0;
    for i in 1..m {
        if amplitudes[i].abs() > amplitudes[ipeak].abs() {
            ipeak = i;
        }
    }
    if amplitudes[ipeak] < 0.0 {
        for a in amplitudes.iter_mut() {
            *a = -*a;
        }
    }
    for a in amplitudes.iter_mut() {
        *a /= norm;
    }
    if !(risk > 0.0 && risk <= PI * PI / 3.0 + 1e-12) {
        return Err(Error::NumericalFailure(format!(
            "covariant risk {risk} escaped (0, pi^2/3]"
        )));
    }
    Ok(CovariantRiskResult {
        n,
        risk,
        amplitudes,
    })
}

/// The two finite-n benchmarks side by side.
#[derive(Debug, Clone, Copy)]
pub struct RiskReport {
    pub n: usize,
    /// Inverse of the best Fisher information `n^2`.
    pub cramer_rao: f64,
    /// Exact covariant mini-max risk.
    pub covariant: f64,
    /// `covariant * n^2`; exceeds 1 for every n and approaches `pi^2`.
    pub ratio: f64,
}

/// Compares the Cramer-Rao benchmark `1/n^2` with the exact covariant
/// mini-max risk at `n` uses.
pub fn phase_bounds_report(n: usize) -> Result<RiskReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one use".into()));
    }
    let nf = n as f64;
    let cramer_rao = 1.0 / (nf * nf);
    let covariant = covariant_minimax_risk(n)?.risk;
    let ratio = covariant * nf * nf;
    if ratio <= 1.0 {
        return Err(Error::NumericalFailure(format!(
            "covariant risk fell to or below the Cramer-Rao value at n = {n}"
        )));
    }
    Ok(RiskReport {
        n,
        cramer_rao,
        covariant,
        ratio,
    })
}

/// Normalized likelihood over a uniform grid on `[0, 2 pi)` after
/// `k_repeats` binary readouts simulated at `theta_true`.
///
/// The binary statistics cannot separate `theta` from `theta + 2 pi j / n`
/// (or from the mirror image `-theta`), so the posterior carries
/// near-equal peaks at every alias.
pub fn ambiguity_posterior(
    n: usize,
    k_repeats: usize,
    theta_true: f64,
    seed: u64,
    grid_size: usize,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one use".into()));
    }
    if grid_size < 4 * n {
        return Err(Error::InvalidArgument(format!(
            "grid of {grid_size} cells cannot resolve {n} aliases (need >= {})",
            4 * n
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p_true = noon_outcome_prob(n, theta_true);
    let mut k_plus = 0usize;
    for _ in 0..k_repeats {
        if rng.gen::<f64>() < p_true {
            k_plus += 1;
        }
    }
    let k_minus = k_repeats - k_plus;
    let mut log_like = vec![0.0f64; grid_size];
    for (g, ll) in log_like.iter_mut().enumerate() {
        let theta = TAU * g as f64 / grid_size as f64;
        let p = noon_outcome_prob(n, theta).clamp(1e-300, 1.0 - 1e-16);
        *ll = k_plus as f64 * p.ln() + k_minus as f64 * (1.0 - p).ln();
    }
    let peak = log_like.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut posterior: Vec<f64> = log_like.iter().map(|&l| (l - peak).exp()).collect();
    let total: f64 = posterior.iter().sum();
    for v in posterior.iter_mut() {
        *v /= total;
    }
    Ok(posterior)
}

/// Outcome probabilities of the discretized covariant measurement: grid
/// estimates `theta_g = 2 pi g / G` with
/// `p_g = |sum_k c_k e^{i k (theta - theta_g)}|^2 / G`.
///
/// The grid measurement is exactly complete on the mode space whenever
/// `G > n`; completeness is still checked numerically.
pub fn covariant_outcome_probs(
    amplitudes: &[f64],
    theta: f64,
    grid_size: usize,
) -> Result<Vec<f64>> {
    let modes = amplitudes.len();
    if modes == 0 {
        return Err(Error::InvalidArgument("empty amplitude vector".into()));
    }
    let n = modes - 1;
    if grid_size < 8 * (n + 1) {
        return Err(Error::InvalidArgument(format!(
            "grid of {grid_size} outcomes is too coarse for {modes} modes (need >= {})",
            8 * (n + 1)
        )));
    }
    // Completeness of the grid POVM on the mode space: the off-diagonal
    // phase sums must vanish (they do exactly for G > n).
    for m in 1..modes {
        let mut s = Complex64::new(0.0, 0.0);
        for g in 0..grid_size {
            s += Complex64::from_polar(1.0, m as f64 * TAU * g as f64 / grid_size as f64);
        }
        if s.norm() / grid_size as f64 > 1e-8 {
            return Err(Error::PovmIncomplete(s.norm() / grid_size as f64));
        }
    }
    let gf = grid_size as f64;
    let mut probs = Vec::with_capacity(grid_size);
    for g in 0..grid_size {
        let theta_g = TAU * g as f64 / gf;
        let mut amp = Complex64::new(0.0, 0.0);
        for (k, &c) in amplitudes.iter().enumerate() {
            amp += Complex64::from_polar(c, k as f64 * (theta - theta_g));
        }
        probs.push(amp.norm_sqr() / gf);
    }
    Ok(probs)
}

/// Monte Carlo run of the discretized optimal covariant estimator.
#[derive(Debug, Clone, Copy)]
pub struct CovariantSimReport {
    pub n: usize,
    pub trials: usize,
    pub grid_size: usize,
    /// Empirical mean circular squared error.
    pub mean_risk: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    /// Exact covariant risk for comparison.
    pub reference_risk: f64,
}

/// Simulates the discretized covariant estimator at `theta_true` and
/// reports the empirical circular squared-error risk. By covariance the
/// result is independent of `theta_true` up to Monte Carlo noise and the
/// `O(grid_size^-2)` discretization bias.
///
/// Trials draw from per-trial counter-based substreams, so the outcome
/// sequence is reproducible for a given `(seed, trials)` regardless of
/// scheduling.
pub fn simulate_covariant_estimator(
    n: usize,
    theta_true: f64,
    trials: usize,
    grid_size: usize,
    seed: u64,
) -> Result<CovariantSimReport> {
    if n > 64 {
        return Err(Error::OutOfDomain {
            value: n as f64,
            lo: 0.0,
            hi: 64.0,
        });
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let scheme = covariant_minimax_risk(n)?;
    let probs = covariant_outcome_probs(&scheme.amplitudes, theta_true, grid_size)?;
    let mut cdf = Vec::with_capacity(grid_size);
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cdf.push(acc);
    }
    let mut costs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let u: f64 = rng.gen();
        let g = cdf.partition_point(|&c| c <= u).min(grid_size - 1);
        let theta_g = TAU * g as f64 / grid_size as f64;
        costs.push(circular_cost(theta_g - theta_true));
    }
    let mean = costs.iter().sum::<f64>() / trials as f64;
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / trials as f64;
    Ok(CovariantSimReport {
        n,
        trials,
        grid_size,
        mean_risk: mean,
        std_error: (var / trials as f64).sqrt(),
        reference_risk: scheme.risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_is_even_periodic_and_bounded() {
        assert_eq!(circular_cost(0.0), 0.0);
        assert!((circular_cost(PI) - PI * PI).abs() < 1e-12);
        assert!(circular_cost(TAU) < 1e-24);
        assert!((circular_cost(1.5 * PI) - 0.25 * PI * PI).abs() < 1e-12);
        for u in [-2.3, 0.4, 1.9, 5.0] {
            assert!((circular_cost(u) - circular_cost(-u)).abs() < 1e-12);
            assert!((circular_cost(u) - circular_cost(u + TAU)).abs() < 1e-11);
            assert!(circular_cost(u) <= PI * PI + 1e-12);
        }
    }

    #[test]
    fn fourier_formula_agrees_with_quadrature() {
        verify_cost_fourier(64, 1 << 17, 1e-10).unwrap();
    }

    #[test]
    fn probe_state_has_two_balanced_amplitudes() {
        let v = noon_state(1).unwrap();
        assert!((v.get(0, 0).re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v.get(1, 0).re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        for n in [2, 5, 12, 20] {
            let v = noon_state(n).unwrap();
            assert!((v.frobenius_norm() - 1.0).abs() < 1e-12);
        }
        assert!(noon_state(0).is_err());
        assert!(noon_state(21).is_err());
    }

    #[test]
    fn outcome_probability_follows_the_half_angle_cosine() {
        assert_eq!(noon_outcome_prob(4, 0.0), 1.0);
        assert!(noon_outcome_prob(4, PI / 4.0) < 1e-20);
        assert!((noon_outcome_prob(2, 0.7) - (0.7f64.cos() * 0.7f64.cos())).abs() < 1e-15);
    }

    #[test]
    fn outcome_probability_matches_the_born_rule() {
        // Rotate each qubit by diag(e^{i theta/2}, e^{-i theta/2}) and project
        // onto (|0..0> + |1..1>)/sqrt(2).
        for n in [1usize, 2, 5] {
            let dim = 1usize << n;
            for &theta in &[0.3, 1.1, 2.9] {
                let mut u = CMatrix::identity(1);
                let single = CMatrix::from_fn(2, 2, |i, j| {
                    if i == j {
                        Complex64::from_polar(1.0, if i == 0 { theta / 2.0 } else { -theta / 2.0 })
                    } else {
                        cr(0.0)
                    }
                });
                for _ in 0..n {
                    u = u.kron(&single);
                }
                let psi = &u * &noon_state(n).unwrap();
                let mut plus = vec![cr(0.0); dim];
                plus[0] = cr(std::f64::consts::FRAC_1_SQRT_2);
                plus[dim - 1] = cr(std::f64::consts::FRAC_1_SQRT_2);
                let overlap = (&CMatrix::col_vector(&plus).adjoint() * &psi).get(0, 0);
                let born = overlap.norm_sqr();
                assert!(
                    (born - noon_outcome_prob(n, theta)).abs() < 1e-12,
                    "n={n} theta={theta}"
                );
            }
        }
    }

    #[test]
    fn binary_readout_carries_quadratic_information() {
        assert!((noon_classical_fisher(5, 0.3).unwrap() - 25.0).abs() < 1e-9);
        assert!((noon_classical_fisher(1, PI / 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(noon_classical_fisher(4, 0.0).is_err());
        assert!(noon_classical_fisher(4, PI / 4.0).is_err());
    }

    #[test]
    fn zero_use_risk_is_the_prior_variance() {
        let r = covariant_minimax_risk(0).unwrap();
        assert!((r.risk - PI * PI / 3.0).abs() < 1e-12);
        assert_eq!(r.amplitudes.len(), 1);
    }

    #[test]
    fn single_use_risk_matches_the_two_mode_eigenvalue() {
        let r = covariant_minimax_risk(1).unwrap();
        assert!((r.risk - (PI * PI / 3.0 - 2.0)).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.amplitudes[0] - s).abs() < 1e-10);
        assert!((r.amplitudes[1] - s).abs() < 1e-10);
    }

    #[test]
    fn risk_decreases_with_more_uses() {
        let r1 = covariant_minimax_risk(1).unwrap().risk;
        let r3 = covariant_minimax_risk(3).unwrap().risk;
        let r8 = covariant_minimax_risk(8).unwrap().risk;
        assert!(r1 > r3 && r3 > r8);
    }

    #[test]
    fn scaled_risk_sits_between_one_and_the_limit() {
        for n in [10usize, 50] {
            let report = phase_bounds_report(n).unwrap();
            assert!(report.ratio > 1.0);
            assert!(report.ratio < PI * PI * (1.0 + 5.0 / n as f64));
            assert!((report.cramer_rao - 1.0 / (n as f64 * n as f64)).abs() < 1e-15);
            assert!(report.covariant > report.cramer_rao);
        }
        let r10 = phase_bounds_report(10).unwrap().ratio;
        let r50 = phase_bounds_report(50).unwrap().ratio;
        assert!(r50 > r10);
    }

    #[test]
    fn posterior_is_uniform_without_data() {
        let post = ambiguity_posterior(4, 0, 0.3, 1, 64).unwrap();
        for &p in &post {
            assert!((p - 1.0 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_use_posterior_peaks_at_the_truth_and_its_mirror() {
        let grid = 64usize;
        let theta_true = 0.9;
        let post = ambiguity_posterior(1, 200, theta_true, 7, grid).unwrap();
        let mut order: Vec<usize> = (0..grid).collect();
        order.sort_by(|&a, &b| post[b].total_cmp(&post[a]));
        let cell = TAU / grid as f64;
        let locations = [theta_true, TAU - theta_true];
        for &g in &order[..2] {
            let theta_g = cell * g as f64;
            let near = locations
                .iter()
                .any(|&l| circular_cost(theta_g - l).sqrt() <= cell * 1.5);
            assert!(near, "peak at {theta_g} away from truth/mirror");
        }
    }

    #[test]
    fn grid_measurement_probabilities_are_a_distribution() {
        let scheme = covariant_minimax_risk(6).unwrap();
        let probs = covariant_outcome_probs(&scheme.amplitudes, 1.3, 128).unwrap();
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(probs.iter().all(|&p| p >= 0.0));
        assert!(covariant_outcome_probs(&scheme.amplitudes, 1.3, 32).is_err());
    }

    #[test]
    fn simulated_covariant_risk_matches_the_eigenvalue() {
        let report = simulate_covariant_estimator(3, 0.7, 40_000, 128, 21).unwrap();
        let allowance = 4.0 * PI * PI / (128.0 * 128.0);
        assert!(
            (report.mean_risk - report.reference_risk).abs()
                <= 3.0 * report.std_error + allowance,
            "{report:?}"
        );
    }

    #[test]
    fn simulated_risk_is_insensitive_to_the_true_phase() {
        let a = simulate_covariant_estimator(3, 0.0, 20_000, 128, 5).unwrap();
        let b = simulate_covariant_estimator(3, 2.1, 20_000, 128, 5).unwrap();
        assert!(
            (a.mean_risk - b.mean_risk).abs() <= 3.0 * (a.std_error + b.std_error),
            "{a:?} vs {b:?}"
        );
    }

    #[test]
    fn simulation_is_reproducible() {
        let a = simulate_covariant_estimator(2, 0.4, 5_000, 96, 9).unwrap();
        let b = simulate_covariant_estimator(2, 0.4, 5_000, 96, 9).unwrap();
        assert_eq!(a.mean_risk.to_bits(), b.mean_risk.to_bits());
        assert!(simulate_covariant_estimator(2, 0.4, 0, 96, 9).is_err());
    }
}
