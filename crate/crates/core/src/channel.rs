//! One-parameter channel families and their Choi matrices.
//!
//! A family `theta -> Lambda_theta` is described by Kraus operators
//! `{F_i(theta)}` with `sum_i F_i^dagger F_i = I`. Its (unnormalized) Choi
//! matrix on the output-reference space `K (x) R` is
//!
//! ```text
//! rho[Lambda] = sum_i |F_i>><<F_i|,        Tr_K rho[Lambda] = I_R,
//! ```
//!
//! using the vectorization `|A>> = sum_jk A_jk |j>_K |k>_R`. The derivative
//! `D[Lambda] = d rho / d theta` satisfies `Tr_K D = 0`. An input pure state
//! `|A>><<A|` on `H (x) R` maps to the output state
//! `(I (x) A^T) rho[Lambda] (I (x) conj(A))`, which is how every downstream
//! Fisher-information quantity is evaluated.
//!
//! Derivatives are supplied analytically (per Kraus operator, or directly at
//! the Choi level) or by central finite differences with a Richardson
//! fallback; analytic derivatives are cross-checked against finite
//! differences at evaluation time.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{c, cr, CMatrix, Complex64, Keep};

/// Default central-difference step, scaled by `max(1, |theta|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Frobenius residual allowed for `sum_i F_i^dagger F_i = I`.
pub const TP_TOL: f64 = 1e-9;

/// Frobenius residual allowed for `Tr_K rho = I`.
pub const CHOI_TRACE_TOL: f64 = 1e-9;

/// Frobenius residual allowed for `Tr_K (d rho) = 0`.
pub const DERIV_TRACE_TOL: f64 = 1e-7;

/// Relative disagreement allowed between analytic and finite-difference
/// Choi derivatives.
pub const DERIV_CONSISTENCY_TOL: f64 = 1e-5;

/// Eigenvalue floor for the Choi PSD check.
pub const CHOI_PSD_FLOOR: f64 = -1e-10;

/// Largest supported total (output x reference) dimension.
pub const MAX_TOTAL_DIM: usize = 4096;

/// Parameter domain, optionally circular.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpace {
    pub lo: f64,
    pub hi: f64,
    /// `Some(p)`: estimates and errors are identified modulo `p`.
    pub period: Option<f64>,
}

impl ParamSpace {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "invalid parameter interval [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            lo,
            hi,
            period: None,
        })
    }

    pub fn circular(lo: f64, hi: f64, period: f64) -> Result<Self> {
        let mut s = Self::new(lo, hi)?;
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid period {period}"
            )));
        }
        s.period = Some(period);
        Ok(s)
    }

    pub fn contains(&self, theta: f64) -> bool {
        let slack = 1e-12 * self.hi.abs().max(self.lo.abs()).max(1.0);
        theta >= self.lo - slack && theta <= self.hi + slack
    }

    pub fn clamp(&self, theta: f64) -> f64 {
        theta.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Intersection of two domains; periods must agree to survive.
    fn intersect(&self, other: &ParamSpace) -> Result<ParamSpace> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        let mut s = ParamSpace::new(lo, hi)?;
        s.period = match (self.period, other.period) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-12 * a.abs().max(1.0) => Some(a),
            _ => None,
        };
        Ok(s)
    }
}

pub type KrausFn = Arc<dyn Fn(f64) -> Result<Vec<CMatrix>> + Send + Sync>;
pub type ChoiDerivFn = Arc<dyn Fn(f64) -> Result<CMatrix> + Send + Sync>;

/// How the family's derivative is obtained.
#[derive(Clone)]
pub enum DerivSpec {
    /// Per-Kraus analytic derivatives `{dF_i/dtheta}` in the same order.
    KrausAnalytic(KrausFn),
    /// Analytic derivative of the Choi matrix itself.
    ChoiAnalytic(ChoiDerivFn),
    /// Central finite differences of the Choi matrix.
    FiniteDifference,
}

/// One-parameter family of channels from a `dim_in`- to a `dim_out`-
/// dimensional system.
#[derive(Clone)]
pub struct ChannelFamily {
    label: String,
    dim_in: usize,
    dim_out: usize,
    kraus: KrausFn,
    deriv: DerivSpec,
    param_space: ParamSpace,
}

impl std::fmt::Debug for ChannelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelFamily")
            .field("label", &self.label)
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("param_space", &self.param_space)
            .finish()
    }
}

impl ChannelFamily {
    /// Assembles a family from raw parts. Prefer the `make_*` constructors.
    pub fn from_parts(
        label: impl Into<String>,
        dim_in: usize,
        dim_out: usize,
        kraus: KrausFn,
        deriv: DerivSpec,
        param_space: ParamSpace,
    ) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::InvalidArgument("zero channel dimension".into()));
        }
        if dim_in * dim_out > MAX_TOTAL_DIM {
            return Err(Error::DimensionOverflow(dim_in * dim_out, MAX_TOTAL_DIM));
        }
        Ok(Self {
            label: label.into(),
            dim_in,
            dim_out,
            kraus,
            deriv,
            param_space,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// Total Choi dimension `dim_out * dim_in`.
    pub fn choi_dim(&self) -> usize {
        self.dim_out * self.dim_in
    }

    pub fn param_space(&self) -> ParamSpace {
        self.param_space
    }

    /// Kraus operators at `theta`, validated for shape and trace
    /// preservation.
    pub fn kraus_at(&self, theta: f64) -> Result<Vec<CMatrix>> {
        if !self.param_space.contains(theta) {
            return Err(Error::OutOfDomain {
                value: theta,
                lo: self.param_space.lo,
                hi: self.param_space.hi,
            });
        }
        let ops = (self.kraus)(theta)?;
        if ops.is_empty() {
            return Err(Error::InvalidArgument("empty Kraus set".into()));
        }
        let mut gram = CMatrix::zeros(self.dim_in, self.dim_in);
        for f in &ops {
            if f.rows() != self.dim_out || f.cols() != self.dim_in {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operator is {}x{}, expected {}x{}",
                    f.rows(),
                    f.cols(),
                    self.dim_out,
                    self.dim_in
                )));
            }
            gram = &gram + &(&f.adjoint() * f);
        }
        let res = (&gram - &CMatrix::identity(self.dim_in)).frobenius_norm();
        if res > TP_TOL * (self.dim_in as f64).sqrt() {
            return Err(Error::TracePreservationViolated(res));
        }
        Ok(ops)
    }

    /// Unnormalized Choi matrix `sum_i |F_i>><<F_i|` on `K (x) R`
    /// (trace `dim_in`, partial trace over `K` equal to the identity).
    pub fn choi_state(&self, theta: f64) -> Result<CMatrix> {
        let ops = self.kraus_at(theta)?;
        let n = self.choi_dim();
        let mut rho = CMatrix::zeros(n, n);
        for f in &ops {
            let v = f.vec_ket();
            rho = &rho + &(&v * &v.adjoint());
        }
        let red = rho.partial_trace(self.dim_out, self.dim_in, Keep::Second)?;
        let res = (&red - &CMatrix::identity(self.dim_in)).frobenius_norm();
        if res > CHOI_TRACE_TOL * (self.dim_in as f64).sqrt() {
            return Err(Error::TracePreservationViolated(res));
        }
        let eig = rho.herm_eig()?;
        let lam_min = eig.eigenvalues.first().copied().unwrap_or(0.0);
        let lam_max = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if lam_min < CHOI_PSD_FLOOR * lam_max.max(1.0) {
            return Err(Error::NotPsd(lam_min));
        }
        Ok(rho)
    }

    /// Choi matrix and its theta-derivative at `theta`.
    ///
    /// `fd_step` overrides the central-difference step (scaled by
    /// `max(1, |theta|)`); analytic derivatives are cross-checked against the
    /// finite difference whenever the stencil stays inside the domain.
    pub fn choi_pair(&self, theta: f64, fd_step: Option<f64>) -> Result<ChoiPair> {
        let rho = self.choi_state(theta)?;
        let h = fd_step.unwrap_or(DEFAULT_FD_STEP) * theta.abs().max(1.0);
        let stencil_ok = self.param_space.contains(theta - h) && self.param_space.contains(theta + h);

        let deriv = match &self.deriv {
            DerivSpec::KrausAnalytic(df) => {
                let ops = self.kraus_at(theta)?;
                let dops = df(theta)?;
                if dops.len() != ops.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} Kraus derivatives for {} Kraus operators",
                        dops.len(),
                        ops.len()
                    )));
                }
                let n = self.choi_dim();
                let mut d = CMatrix::zeros(n, n);
                for (f, fd) in ops.iter().zip(dops.iter()) {
                    let v = f.vec_ket();
                    let w = fd.vec_ket();
                    d = &(&d + &(&w * &v.adjoint())) + &(&v * &w.adjoint());
                }
                self.check_deriv_consistency(&d, theta, h, stencil_ok)?;
                d.hermitize()
            }
            DerivSpec::ChoiAnalytic(df) => {
                let d = df(theta)?;
                if d.rows() != self.choi_dim() || d.cols() != self.choi_dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "Choi derivative is {}x{}, expected {}x{}",
                        d.rows(),
                        d.cols(),
                        self.choi_dim(),
                        self.choi_dim()
                    )));
                }
                self.check_deriv_consistency(&d, theta, h, stencil_ok)?;
                d.hermitize()
            }
            DerivSpec::FiniteDifference => {
                if !stencil_ok {
                    return Err(Error::OutOfDomain {
                        value: theta,
                        lo: self.param_space.lo + h,
                        hi: self.param_space.hi - h,
                    });
                }
                self.fd_choi_deriv(theta, h)?.hermitize()
            }
        };

        let red = deriv.partial_trace(self.dim_out, self.dim_in, Keep::Second)?;
        let res = red.frobenius_norm();
        if res > DERIV_TRACE_TOL * deriv.frobenius_norm().max(1.0) {
            return Err(Error::DerivativeInconsistency(res));
        }

        Ok(ChoiPair {
            rho,
            deriv,
            theta,
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            source: self.label.clone(),
        })
    }

    /// Central difference with a half-step check and Richardson fallback.
    fn fd_choi_deriv(&self, theta: f64, h: f64) -> Result<CMatrix> {
        let diff = |step: f64| -> Result<CMatrix> {
            let plus = self.choi_state(theta + step)?;
            let minus = self.choi_state(theta - step)?;
            Ok((&plus - &minus).scale_re(0.5 / step))
        };
        let d1 = diff(h)?;
        let d2 = diff(h / 2.0)?;
        let mismatch = (&d1 - &d2).frobenius_norm() / d2.frobenius_norm().max(1e-12);
        if mismatch > 1e-4 {
            // Richardson extrapolation removes the leading O(h^2) error.
            Ok((&d2.scale_re(4.0) - &d1).scale_re(1.0 / 3.0))
        } else {
            Ok(d2)
        }
    }

    fn check_deriv_consistency(
        &self,
        analytic: &CMatrix,
        theta: f64,
        h: f64,
        stencil_ok: bool,
    ) -> Result<()> {
        if !stencil_ok {
            return Ok(());
        }
        let plus = self.choi_state(theta + h)?;
        let minus = self.choi_state(theta - h)?;
        let fd = (&plus - &minus).scale_re(0.5 / h);
        let res = (analytic - &fd).frobenius_norm() / analytic.frobenius_norm().max(1.0);
        if res > DERIV_CONSISTENCY_TOL {
            return Err(Error::DerivativeInconsistency(res));
        }
        Ok(())
    }
}

/// Choi matrix and derivative of a family at a fixed parameter value.
#[derive(Debug, Clone)]
pub struct ChoiPair {
    /// Unnormalized Choi matrix on `K (x) R`, trace `dim_in`.
    pub rho: CMatrix,
    /// Its theta-derivative (Hermitian, traceless over `K`).
    pub deriv: CMatrix,
    pub theta: f64,
    pub dim_in: usize,
    pub dim_out: usize,
    /// Label of the producing family.
    pub source: String,
}

impl ChoiPair {
    /// Output density matrix for the pure input `|A>><<A|` on `H (x) R`:
    /// `(I (x) A^T) rho (I (x) conj(A))`. Requires `Tr conj(A) A^T = 1`.
    pub fn apply_with_ancilla(&self, a: &CMatrix) -> Result<CMatrix> {
        let (rho, _) = self.output_with_ancilla(a, false)?;
        Ok(rho)
    }

    /// Output state and its theta-derivative for the pure input `|A>><<A|`.
    pub fn output_pair(&self, a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
        let (rho, deriv) = self.output_with_ancilla(a, true)?;
        Ok((rho, deriv.expect("deriv requested")))
    }

    fn output_with_ancilla(
        &self,
        a: &CMatrix,
        with_deriv: bool,
    ) -> Result<(CMatrix, Option<CMatrix>)> {
        if a.rows() != self.dim_in || a.cols() != self.dim_in {
            return Err(Error::DimensionMismatch(format!(
                "input matrix is {}x{}, expected {}x{}",
                a.rows(),
                a.cols(),
                self.dim_in,
                self.dim_in
            )));
        }
        let norm2 = a.frobenius_norm().powi(2);
        if (norm2 - 1.0).abs() > 1e-9 {
            return Err(Error::NotDensity(format!(
                "input has squared norm {norm2}, expected 1"
            )));
        }
        let sandwich = CMatrix::identity(self.dim_out).kron(&a.transpose());
        let out = &(&sandwich * &self.rho) * &sandwich.adjoint();
        let dout = if with_deriv {
            Some(&(&sandwich * &self.deriv) * &sandwich.adjoint())
        } else {
            None
        };
        Ok((out, dout))
    }
}

/// Unitary family `rho -> U_theta rho U_theta^dagger` with
/// `U_theta = exp(i theta h)` for Hermitian `h`.
pub fn make_unitary_family(h: &CMatrix, param_space: ParamSpace) -> Result<ChannelFamily> {
    if !h.is_square() {
        return Err(Error::NotSquare(h.rows(), h.cols()));
    }
    let dim = h.rows();
    // Diagonalize once; closures reuse the spectral data.
    let eig = Arc::new(h.herm_eig()?);
    let h_arc = Arc::new(h.hermitize());
    let unitary_at = {
        let eig = Arc::clone(&eig);
        move |theta: f64| -> CMatrix {
            let n = eig.eigenvalues.len();
            let mut u = CMatrix::zeros(n, n);
            for (k, &lam) in eig.eigenvalues.iter().enumerate() {
                let v = eig.vector(k);
                u = &u + &(&v * &v.adjoint()).scale(Complex64::from_polar(1.0, theta * lam));
            }
            u
        }
    };
    let unitary_for_deriv = unitary_at.clone();
    let kraus: KrausFn = Arc::new(move |theta| Ok(vec![unitary_at(theta)]));
    let deriv: KrausFn = {
        let h_arc = Arc::clone(&h_arc);
        Arc::new(move |theta| {
            let u = unitary_for_deriv(theta);
            Ok(vec![(&*h_arc * &u).scale(c(0.0, 1.0))])
        })
    };
    ChannelFamily::from_parts(
        "unitary",
        dim,
        dim,
        kraus,
        DerivSpec::KrausAnalytic(deriv),
        param_space,
    )
}

/// Coefficient-matrix closure for phase damping: `theta -> [d_kl(theta)]`.
pub type CoeffFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;

/// Phase damping family `Lambda_theta(rho)_kl = d_kl(theta) rho_kl` in a
/// fixed basis. The coefficient matrix must be Hermitian PSD with unit
/// diagonal at every evaluated `theta`; Kraus operators are the diagonal
/// factors of its spectral decomposition.
///
/// `coeff_deriv` supplies `[d_kl'(theta)]` analytically; when absent the
/// coefficient matrix is differenced numerically.
pub fn make_phase_damping_family(
    dim: usize,
    coeff: CoeffFn,
    coeff_deriv: Option<CoeffFn>,
    param_space: ParamSpace,
) -> Result<ChannelFamily> {
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "phase damping needs dimension >= 2".into(),
        ));
    }
    let validate = move |m: &CMatrix| -> Result<()> {
        if m.rows() != dim || m.cols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "coefficient matrix is {}x{}, expected {dim}x{dim}",
                m.rows(),
                m.cols()
            )));
        }
        let herm = m.hermitian_residual();
        if herm > 1e-9 * m.frobenius_norm().max(1.0) {
            return Err(Error::NotHermitian(herm));
        }
        for k in 0..dim {
            if (m.get(k, k) - cr(1.0)).norm() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "coefficient diagonal entry {k} is {}, expected 1",
                    m.get(k, k)
                )));
            }
        }
        Ok(())
    };

    let kraus: KrausFn = {
        let coeff = Arc::clone(&coeff);
        Arc::new(move |theta| {
            let cm = coeff(theta);
            validate(&cm)?;
            let eig = cm.hermitize().herm_eig()?;
            let lam_max = eig.eigenvalues.last().copied().unwrap_or(0.0);
            if eig.eigenvalues[0] < -1e-10 * lam_max.max(1.0) {
                return Err(Error::NotPsd(eig.eigenvalues[0]));
            }
            let mut ops = Vec::new();
            for (k, &lam) in eig.eigenvalues.iter().enumerate() {
                if lam > 0.0 {
                    let v = eig.vector(k);
                    let scale = lam.sqrt();
                    ops.push(CMatrix::from_fn(dim, dim, |i, j| {
                        if i == j {
                            v.get(i, 0) * scale
                        } else {
                            cr(0.0)
                        }
                    }));
                }
            }
            Ok(ops)
        })
    };

    // The Choi matrix is sum_kl d_kl |kk><ll|; its derivative has the same
    // support pattern, so differentiate at the Choi level (the Kraus
    // factorization is not smooth through eigenvalue crossings).
    let deriv_fn: ChoiDerivFn = {
        let coeff = Arc::clone(&coeff);
        Arc::new(move |theta| {
            let dm = match &coeff_deriv {
                Some(f) => f(theta),
                None => {
                    let h = 1e-6 * theta.abs().max(1.0);
                    (&coeff(theta + h) - &coeff(theta - h)).scale_re(0.5 / h)
                }
            };
            if dm.rows() != dim || dm.cols() != dim {
                return Err(Error::DimensionMismatch(
                    "coefficient derivative has wrong shape".into(),
                ));
            }
            let n = dim * dim;
            let mut out = CMatrix::zeros(n, n);
            for k in 0..dim {
                for l in 0..dim {
                    out.set(k * dim + k, l * dim + l, dm.get(k, l));
                }
            }
            Ok(out)
        })
    };

    ChannelFamily::from_parts(
        "phase_damping",
        dim,
        dim,
        kraus,
        DerivSpec::ChoiAnalytic(deriv_fn),
        param_space,
    )
}

/// Coefficient matrix `d_kl(theta) = exp(-rates[k][l] * theta)` and its
/// derivative, for a symmetric nonnegative rate matrix with zero diagonal.
pub fn exponential_decay_coeffs(rates: &[Vec<f64>]) -> Result<(CoeffFn, CoeffFn)> {
    let d = rates.len();
    if d == 0 || rates.iter().any(|row| row.len() != d) {
        return Err(Error::DimensionMismatch("rate matrix must be square".into()));
    }
    for k in 0..d {
        if rates[k][k] != 0.0 {
            return Err(Error::InvalidArgument(
                "rate matrix diagonal must be zero".into(),
            ));
        }
        for l in 0..d {
            if rates[k][l] < 0.0 || (rates[k][l] - rates[l][k]).abs() > 1e-12 {
                return Err(Error::InvalidArgument(
                    "rate matrix must be symmetric with nonnegative entries".into(),
                ));
            }
        }
    }
    let r1 = rates.to_vec();
    let r2 = rates.to_vec();
    let coeff: CoeffFn = Arc::new(move |theta| {
        CMatrix::from_fn(d, d, |k, l| cr((-r1[k][l] * theta).exp()))
    });
    let deriv: CoeffFn = Arc::new(move |theta| {
        CMatrix::from_fn(d, d, |k, l| cr(-r2[k][l] * (-r2[k][l] * theta).exp()))
    });
    Ok((coeff, deriv))
}

/// Discrete Weyl (generalized Pauli) operator `X^a Z^b` in dimension `d`.
fn weyl(d: usize, a: usize, b: usize) -> CMatrix {
    let omega = 2.0 * std::f64::consts::PI / d as f64;
    CMatrix::from_fn(d, d, |i, j| {
        if i == (j + a) % d {
            Complex64::from_polar(1.0, omega * (b * j) as f64)
        } else {
            cr(0.0)
        }
    })
}

/// Depolarizing family `Lambda_p(rho) = (1-p) rho + p I/d Tr rho`,
/// parametrized by `p`. Kraus operators exist on `[0, 1]`; the Kraus
/// derivative is singular at `p = 0`, so the derivative domain is `(0, 1]`.
pub fn make_depolarizing_family(dim: usize, param_space: ParamSpace) -> Result<ChannelFamily> {
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "depolarizing needs dimension >= 2".into(),
        ));
    }
    if param_space.lo < 0.0 || param_space.hi > 1.0 {
        return Err(Error::InvalidArgument(
            "depolarizing parameter domain must lie in [0, 1]".into(),
        ));
    }
    let d2 = (dim * dim) as f64;
    let kraus: KrausFn = Arc::new(move |p| {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfDomain {
                value: p,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let w0 = (1.0 - p + p / d2).sqrt();
        let w = (p / d2).sqrt();
        let mut ops = vec![CMatrix::identity(dim).scale_re(w0)];
        for a in 0..dim {
            for b in 0..dim {
                if (a, b) != (0, 0) {
                    ops.push(weyl(dim, a, b).scale_re(w));
                }
            }
        }
        Ok(ops)
    });
    let deriv: KrausFn = Arc::new(move |p| {
        if !(0.0 < p && p <= 1.0) {
            return Err(Error::OutOfDomain {
                value: p,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let w0 = (1.0 - p + p / d2).sqrt();
        let dw0 = (1.0 / d2 - 1.0) / (2.0 * w0);
        let dw = 1.0 / (2.0 * (p * d2).sqrt());
        let mut ops = vec![CMatrix::identity(dim).scale_re(dw0)];
        for a in 0..dim {
            for b in 0..dim {
                if (a, b) != (0, 0) {
                    ops.push(weyl(dim, a, b).scale_re(dw));
                }
            }
        }
        Ok(ops)
    });
    ChannelFamily::from_parts(
        "depolarizing",
        dim,
        dim,
        kraus,
        DerivSpec::KrausAnalytic(deriv),
        param_space,
    )
}

/// Shift-mixture family: applies `exp(i theta H)` with diagonal `H`, then a
/// random cyclic shift `X^j` drawn with probability `p_j`:
/// `Lambda_theta(rho) = sum_j p_j X^j e^{i theta H} rho e^{-i theta H} X^{-j}`.
pub fn make_shift_mixture_family(
    probs: &[f64],
    h_diag: &[f64],
    param_space: ParamSpace,
) -> Result<ChannelFamily> {
    let d = probs.len();
    if d < 2 || h_diag.len() != d {
        return Err(Error::DimensionMismatch(
            "probability and Hamiltonian-diagonal lengths must match and be >= 2".into(),
        ));
    }
    if probs.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidArgument("negative mixture weight".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "mixture weights sum to {total}, expected 1"
        )));
    }
    let probs = probs.to_vec();
    let h_diag_v = h_diag.to_vec();
    let shifts: Vec<CMatrix> = (0..d).map(|j| weyl(d, j, 0)).collect();
    let shifts = Arc::new(shifts);
    let base = {
        let h_diag_v = h_diag_v.clone();
        move |theta: f64| -> CMatrix {
            CMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    Complex64::from_polar(1.0, theta * h_diag_v[i])
                } else {
                    cr(0.0)
                }
            })
        }
    };
    let base_for_deriv = base.clone();
    let kraus: KrausFn = {
        let probs = probs.clone();
        let shifts = Arc::clone(&shifts);
        Arc::new(move |theta| {
            let u = base(theta);
            Ok(probs
                .iter()
                .zip(shifts.iter())
                .map(|(&p, x)| (x * &u).scale_re(p.sqrt()))
                .collect())
        })
    };
    let deriv: KrausFn = {
        let shifts = Arc::clone(&shifts);
        Arc::new(move |theta| {
            let u = base_for_deriv(theta);
            let ih = CMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    c(0.0, h_diag_v[i])
                } else {
                    cr(0.0)
                }
            });
            let du = &ih * &u;
            Ok(probs
                .iter()
                .zip(shifts.iter())
                .map(|(&p, x)| (x * &du).scale_re(p.sqrt()))
                .collect())
        })
    };
    ChannelFamily::from_parts(
        "shift_mixture",
        d,
        d,
        kraus,
        DerivSpec::KrausAnalytic(deriv),
        param_space,
    )
}

/// Reorders a matrix on `(K1 (x) R1) (x) (K2 (x) R2)` into
/// `(K1 (x) K2) (x) (R1 (x) R2)`.
pub fn reorder_kr_pairs(m: &CMatrix, k1: usize, r1: usize, k2: usize, r2: usize) -> Result<CMatrix> {
    let n = k1 * r1 * k2 * r2;
    if m.rows() != n || m.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, expected {n}x{n}",
            m.rows(),
            m.cols()
        )));
    }
    // permutation: input flat (a, x, b, y) -> output flat (a, b, x, y)
    let mut perm = vec![0usize; n];
    for a in 0..k1 {
        for x in 0..r1 {
            for b in 0..k2 {
                for y in 0..r2 {
                    let src = ((a * r1 + x) * k2 + b) * r2 + y;
                    let dst = ((a * k2 + b) * r1 + x) * r2 + y;
                    perm[src] = dst;
                }
            }
        }
    }
    let mut out = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(perm[i], perm[j], m.get(i, j));
        }
    }
    Ok(out)
}

/// Tensor product of two families driven by the same parameter:
/// `theta -> Lambda_theta (x) Lambda~_theta`. The Choi derivative follows the
/// product rule `D (x) rho~ + rho (x) D~` (reordered to output-then-reference
/// factors).
pub fn tensor_families(f1: &ChannelFamily, f2: &ChannelFamily) -> Result<ChannelFamily> {
    let dim_in = f1.dim_in * f2.dim_in;
    let dim_out = f1.dim_out * f2.dim_out;
    if dim_in * dim_out > MAX_TOTAL_DIM {
        return Err(Error::DimensionOverflow(dim_in * dim_out, MAX_TOTAL_DIM));
    }
    let param_space = f1.param_space.intersect(&f2.param_space)?;
    let (g1, g2) = (f1.clone(), f2.clone());
    let kraus: KrausFn = Arc::new(move |theta| {
        let a = g1.kraus_at(theta)?;
        let b = g2.kraus_at(theta)?;
        let mut out = Vec::with_capacity(a.len() * b.len());
        for fa in &a {
            for fb in &b {
                out.push(fa.kron(fb));
            }
        }
        Ok(out)
    });
    let (h1, h2) = (f1.clone(), f2.clone());
    let deriv: ChoiDerivFn = Arc::new(move |theta| {
        let p1 = h1.choi_pair(theta, None)?;
        let p2 = h2.choi_pair(theta, None)?;
        let term = &p1.deriv.kron(&p2.rho) + &p1.rho.kron(&p2.deriv);
        reorder_kr_pairs(&term, h1.dim_out, h1.dim_in, h2.dim_out, h2.dim_in)
    });
    ChannelFamily::from_parts(
        format!("{}(x){}", f1.label, f2.label),
        dim_in,
        dim_out,
        kraus,
        DerivSpec::ChoiAnalytic(deriv),
        param_space,
    )
}

/// `n`-fold tensor power of a family.
pub fn tensor_power(f: &ChannelFamily, n: usize) -> Result<ChannelFamily> {
    if n == 0 {
        return Err(Error::InvalidArgument("tensor power needs n >= 1".into()));
    }
    let mut acc = f.clone();
    for _ in 1..n {
        acc = tensor_families(&acc, f)?;
    }
    acc.label = format!("{}^(x){}", f.label, n);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_SUPPORT_TOL;
    use crate::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn qubit_phase_hamiltonian() -> CMatrix {
        CMatrix::from_real_diag(&[0.5, -0.5])
    }

    fn full_line() -> ParamSpace {
        ParamSpace::new(-10.0, 10.0).unwrap()
    }

    /// Phase damping qubit with off-diagonal coefficient exp(-theta).
    fn decay_qubit() -> ChannelFamily {
        let (coeff, deriv) =
            exponential_decay_coeffs(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        make_phase_damping_family(
            2,
            coeff,
            Some(deriv),
            ParamSpace::new(0.05, 5.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn unitary_choi_is_rank_one_with_trace_d() {
        let f = make_unitary_family(&qubit_phase_hamiltonian(), full_line()).unwrap();
        let rho = f.choi_state(0.7).unwrap();
        assert!((rho.trace().re - 2.0).abs() < 1e-12);
        let support = rho.support_projector(DEFAULT_SUPPORT_TOL).unwrap();
        assert_eq!(support.rank, 1);
    }

    #[test]
    fn unitary_kraus_is_matrix_exponential() {
        let f = make_unitary_family(&qubit_phase_hamiltonian(), full_line()).unwrap();
        let u = &f.kraus_at(1.3).unwrap()[0];
        assert!((u.get(0, 0) - Complex64::from_polar(1.0, 0.65)).norm() < 1e-12);
        assert!((u.get(1, 1) - Complex64::from_polar(1.0, -0.65)).norm() < 1e-12);
    }

    #[test]
    fn unitary_choi_pair_passes_derivative_checks() {
        let f = make_unitary_family(&qubit_phase_hamiltonian(), full_line()).unwrap();
        let pair = f.choi_pair(0.4, None).unwrap();
        assert!(pair.deriv.hermitian_residual() < 1e-12);
        let red = pair
            .deriv
            .partial_trace(2, 2, Keep::Second)
            .unwrap()
            .frobenius_norm();
        assert!(red < 1e-10, "derivative partial trace {red}");
    }

    #[test]
    fn phase_damping_choi_matches_coefficient_pattern() {
        let f = decay_qubit();
        let theta = 2f64.ln();
        let rho = f.choi_state(theta).unwrap();
        // Nonzero entries only at |kk><ll|: rho[(0,0),(1,1)] = exp(-theta) = 1/2.
        let mut expect = CMatrix::zeros(4, 4);
        expect.set(0, 0, cr(1.0));
        expect.set(3, 3, cr(1.0));
        expect.set(0, 3, cr(0.5));
        expect.set(3, 0, cr(0.5));
        assert!(rho.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn phase_damping_derivative_at_log_two() {
        let f = decay_qubit();
        let pair = f.choi_pair(2f64.ln(), None).unwrap();
        let mut expect = CMatrix::zeros(4, 4);
        expect.set(0, 3, cr(-0.5));
        expect.set(3, 0, cr(-0.5));
        assert!(pair.deriv.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn phase_damping_numeric_coefficient_derivative_agrees() {
        let (coeff, _) = exponential_decay_coeffs(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let f = make_phase_damping_family(2, coeff, None, ParamSpace::new(0.05, 5.0).unwrap())
            .unwrap();
        let pair = f.choi_pair(2f64.ln(), None).unwrap();
        assert!((pair.deriv.get(0, 3).re + 0.5).abs() < 1e-8);
    }

    #[test]
    fn phase_damping_rejects_non_psd_coefficients() {
        let coeff: CoeffFn = Arc::new(|_| {
            CMatrix::from_rows(&[vec![cr(1.0), cr(1.5)], vec![cr(1.5), cr(1.0)]]).unwrap()
        });
        let f = make_phase_damping_family(2, coeff, None, full_line()).unwrap();
        assert!(matches!(f.kraus_at(0.3), Err(Error::NotPsd(_))));
    }

    #[test]
    fn phase_damping_rejects_non_unit_diagonal() {
        let coeff: CoeffFn = Arc::new(|_| CMatrix::identity(2).scale_re(0.9));
        let f = make_phase_damping_family(2, coeff, None, full_line()).unwrap();
        assert!(f.kraus_at(0.3).is_err());
    }

    #[test]
    fn depolarizing_is_trace_preserving_and_acts_correctly() {
        let f = make_depolarizing_family(3, ParamSpace::new(0.0, 1.0).unwrap()).unwrap();
        let ops = f.kraus_at(0.37).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        let v = sample::random_unit_ket(&mut rng, 3);
        let rho_in = &v * &v.adjoint();
        let mut rho_out = CMatrix::zeros(3, 3);
        for k in &ops {
            rho_out = &rho_out + &(&(k * &rho_in) * &k.adjoint());
        }
        let expect = &rho_in.scale_re(1.0 - 0.37)
            + &CMatrix::identity(3).scale_re(0.37 / 3.0);
        assert!(rho_out.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn depolarizing_choi_at_full_mixing_is_maximally_mixed() {
        let f = make_depolarizing_family(2, ParamSpace::new(0.0, 1.0).unwrap()).unwrap();
        let rho = f.choi_state(1.0).unwrap();
        assert!(rho.max_abs_diff(&CMatrix::identity(4).scale_re(0.5)) < 1e-12);
        // p = 0 limit: the identity channel's Choi.
        let rho0 = f.choi_state(0.0).unwrap();
        let id_vec = CMatrix::identity(2).vec_ket();
        assert!(rho0.max_abs_diff(&(&id_vec * &id_vec.adjoint())) < 1e-12);
    }

    #[test]
    fn depolarizing_choi_has_full_rank_inside_the_interval() {
        let f = make_depolarizing_family(2, ParamSpace::new(0.0, 1.0).unwrap()).unwrap();
        let rho = f.choi_state(0.5).unwrap();
        assert_eq!(rho.support_projector(DEFAULT_SUPPORT_TOL).unwrap().rank, 4);
        let pair = f.choi_pair(0.5, None).unwrap();
        assert!(pair.deriv.frobenius_norm() > 0.1);
    }

    #[test]
    fn depolarizing_rejects_out_of_range_parameters() {
        let f = make_depolarizing_family(2, ParamSpace::new(0.0, 1.0).unwrap()).unwrap();
        assert!(f.kraus_at(1.5).is_err());
        assert!(f.kraus_at(-0.1).is_err());
    }

    #[test]
    fn shift_mixture_matches_its_defining_action() {
        let probs = [0.3, 0.7];
        let f = make_shift_mixture_family(&probs, &[0.8, -0.2], full_line()).unwrap();
        let theta = 0.9;
        let ops = f.kraus_at(theta).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let v = sample::random_unit_ket(&mut rng, 2);
        let rho_in = &v * &v.adjoint();
        let mut via_kraus = CMatrix::zeros(2, 2);
        for k in &ops {
            via_kraus = &via_kraus + &(&(k * &rho_in) * &k.adjoint());
        }
        let u = CMatrix::from_real_diag(&[0.8, -0.2]).expi(theta).unwrap();
        let x = weyl(2, 1, 0);
        let rot = &(&u * &rho_in) * &u.adjoint();
        let expect = &rot.scale_re(0.3) + &(&(&x * &rot) * &x.adjoint()).scale_re(0.7);
        assert!(via_kraus.max_abs_diff(&expect) < 1e-12);
        // analytic derivative consistency is enforced inside choi_pair
        f.choi_pair(theta, None).unwrap();
    }

    #[test]
    fn shift_mixture_validates_weights() {
        assert!(make_shift_mixture_family(&[0.5, 0.6], &[1.0, 0.0], full_line()).is_err());
        assert!(make_shift_mixture_family(&[-0.1, 1.1], &[1.0, 0.0], full_line()).is_err());
    }

    #[test]
    fn bell_input_reproduces_normalized_choi() {
        let f = decay_qubit();
        let pair = f.choi_pair(0.8, None).unwrap();
        let bell = CMatrix::identity(2).scale_re(1.0 / 2f64.sqrt());
        let out = pair.apply_with_ancilla(&bell).unwrap();
        assert!(out.max_abs_diff(&pair.rho.scale_re(0.5)) < 1e-12);
        assert!((out.trace().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn product_input_yields_product_output() {
        let f = decay_qubit();
        let theta = 0.9;
        let pair = f.choi_pair(theta, None).unwrap();
        let u = CMatrix::col_vector(&[cr(1.0), cr(1.0)]).scale_re(1.0 / 2f64.sqrt());
        let v = CMatrix::basis_ket(2, 0);
        let a = &u * &v.transpose();
        let out = pair.apply_with_ancilla(&a).unwrap();
        // system part: Lambda(|u><u|), reference part: |v><v|
        let x = (-theta).exp();
        let sys = CMatrix::from_rows(&[
            vec![cr(0.5), cr(0.5 * x)],
            vec![cr(0.5 * x), cr(0.5)],
        ])
        .unwrap();
        let expect = sys.kron(&(&v * &v.adjoint()));
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn apply_with_ancilla_requires_normalized_input() {
        let f = decay_qubit();
        let pair = f.choi_pair(0.8, None).unwrap();
        let a = CMatrix::identity(2); // squared norm 2
        assert!(matches!(
            pair.apply_with_ancilla(&a),
            Err(Error::NotDensity(_))
        ));
    }

    #[test]
    fn tensor_choi_matches_reordered_factor_product() {
        let f1 = decay_qubit();
        let f2 = make_unitary_family(&qubit_phase_hamiltonian(), ParamSpace::new(0.05, 5.0).unwrap())
            .unwrap();
        let theta = 0.6;
        let prod = tensor_families(&f1, &f2).unwrap();
        let rho_prod = prod.choi_state(theta).unwrap();
        let p1 = f1.choi_state(theta).unwrap();
        let p2 = f2.choi_state(theta).unwrap();
        let expect = reorder_kr_pairs(&p1.kron(&p2), 2, 2, 2, 2).unwrap();
        assert!(rho_prod.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn tensor_derivative_matches_finite_difference() {
        let f1 = decay_qubit();
        let f2 = decay_qubit();
        let prod = tensor_families(&f1, &f2).unwrap();
        let theta = 0.8;
        let pair = prod.choi_pair(theta, None).unwrap();
        let h = 1e-5;
        let fd = (&prod.choi_state(theta + h).unwrap() - &prod.choi_state(theta - h).unwrap())
            .scale_re(0.5 / h);
        assert!(
            pair.deriv.max_abs_diff(&fd) < 1e-7,
            "product-rule derivative deviates from finite difference"
        );
    }

    #[test]
    fn tensor_power_of_unitary_is_unitary_with_summed_hamiltonian() {
        let h = qubit_phase_hamiltonian();
        let f = make_unitary_family(&h, full_line()).unwrap();
        let f2 = tensor_power(&f, 2).unwrap();
        let theta = 1.1;
        let ops = f2.kraus_at(theta).unwrap();
        assert_eq!(ops.len(), 1);
        let h_total = &h.kron(&CMatrix::identity(2)) + &CMatrix::identity(2).kron(&h);
        let expect = h_total.expi(theta).unwrap();
        assert!(ops[0].max_abs_diff(&expect) < 1e-11);
    }

    #[test]
    fn tensor_power_rejects_oversized_products() {
        let f = make_unitary_family(&qubit_phase_hamiltonian(), full_line()).unwrap();
        assert!(matches!(
            tensor_power(&f, 7),
            Err(Error::DimensionOverflow(_, _))
        ));
    }

    #[test]
    fn choi_pair_rejects_inconsistent_analytic_derivative() {
        // Claim a derivative of the wrong sign; the finite-difference
        // cross-check must catch it.
        let h = qubit_phase_hamiltonian();
        let eig = Arc::new(h.herm_eig().unwrap());
        let kraus: KrausFn = {
            let eig = Arc::clone(&eig);
            Arc::new(move |theta| {
                let mut u = CMatrix::zeros(2, 2);
                for (k, &lam) in eig.eigenvalues.iter().enumerate() {
                    let v = eig.vector(k);
                    u = &u + &(&v * &v.adjoint()).scale(Complex64::from_polar(1.0, theta * lam));
                }
                Ok(vec![u])
            })
        };
        let bad_deriv: KrausFn = {
            let kraus = Arc::clone(&kraus);
            Arc::new(move |theta| {
                let u = kraus(theta)?.remove(0);
                let h = CMatrix::from_real_diag(&[0.5, -0.5]);
                Ok(vec![(&h * &u).scale(c(0.0, -1.0))]) // wrong sign
            })
        };
        let f = ChannelFamily::from_parts(
            "bad",
            2,
            2,
            kraus,
            DerivSpec::KrausAnalytic(bad_deriv),
            full_line(),
        )
        .unwrap();
        assert!(matches!(
            f.choi_pair(0.4, None),
            Err(Error::DerivativeInconsistency(_))
        ));
    }

    #[test]
    fn finite_difference_derivative_close_to_analytic() {
        let h = qubit_phase_hamiltonian();
        let f_analytic = make_unitary_family(&h, full_line()).unwrap();
        let kraus = f_analytic.kraus.clone();
        let f_fd = ChannelFamily::from_parts(
            "unitary_fd",
            2,
            2,
            kraus,
            DerivSpec::FiniteDifference,
            full_line(),
        )
        .unwrap();
        let a = f_analytic.choi_pair(0.9, None).unwrap();
        let b = f_fd.choi_pair(0.9, None).unwrap();
        assert!(a.deriv.max_abs_diff(&b.deriv) < 1e-8);
    }

    #[test]
    fn finite_difference_requires_interior_theta() {
        let (coeff, _) = exponential_decay_coeffs(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let f = make_phase_damping_family(2, coeff, None, ParamSpace::new(0.05, 5.0).unwrap())
            .unwrap();
        let kraus = f.kraus.clone();
        let f_fd = ChannelFamily::from_parts(
            "pd_fd",
            2,
            2,
            kraus,
            DerivSpec::FiniteDifference,
            ParamSpace::new(0.05, 5.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            f_fd.choi_pair(0.05, None),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn reorder_is_an_involution_on_swapped_factors() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let m = sample::random_hermitian(&mut rng, 16);
        let once = reorder_kr_pairs(&m, 2, 2, 2, 2).unwrap();
        let twice = reorder_kr_pairs(&once, 2, 2, 2, 2).unwrap();
        assert!(twice.max_abs_diff(&m) < 1e-15);
    }
}
