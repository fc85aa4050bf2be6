//! Delay-dependent Riccati and Lyapunov tests for the sampled loop
//! `x_{k+1} = A_h x_k + γ_{k-d} B_h u_{k-d}` with i.i.d. Bernoulli `γ`
//! (`P(γ = 0) = p`).
//!
//! The stabilizing policy is the predictor feedback
//! `u_k = K x̂_{k+d|k-1}` with `x̂_{k+d|k-1} = A_h^d x_k + (1-p) Σ_{i<d} A_h^i B_h u_{k-i-1}`
//! and `K = -Φ⁻¹L` taken from the Riccati fixed point. Writing
//! `M₁ = A_h + (1-p) B_h K` and `M₂ = A_h^d B_h K`, a gain is mean-square
//! stabilizing iff the lifted operator `X ↦ M₁'XM₁ + p(1-p) M₂'XM₂` has
//! spectral radius below one.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::{mat_power, DiscretePlant};
use crate::error::{Error, Result};
use crate::linalg;

/// Positive definite `Q` (state) and `R` (input) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DareWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl DareWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_positive_definite(&q) {
            return Err(Error::NotPositiveDefinite("Q"));
        }
        if !linalg::is_positive_definite(&r) {
            return Err(Error::NotPositiveDefinite("R"));
        }
        Ok(Self { q, r })
    }

    pub fn identity(n: usize, m_u: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m_u, m_u),
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(&self.q * alpha, &self.r * alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    /// Stop when `‖P_{j+1} - P_j‖_F <= tol (1 + ‖P_j‖_F)`.
    pub tol: f64,
    pub max_iter: usize,
    /// `‖P_j‖_F` above this is reported as divergence.
    pub divergence_cap: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            divergence_cap: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// `-Φ⁻¹L`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of the fixed-point defect at the returned `P`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub iterations: usize,
    pub p_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DareOutcome {
    Stabilizable(DareSolution),
    NotStabilizable(Divergence),
}

impl DareOutcome {
    pub fn solution(&self) -> Option<&DareSolution> {
        match self {
            DareOutcome::Stabilizable(s) => Some(s),
            DareOutcome::NotStabilizable(_) => None,
        }
    }

    pub fn into_solution(self) -> Option<DareSolution> {
        match self {
            DareOutcome::Stabilizable(s) => Some(s),
            DareOutcome::NotStabilizable(_) => None,
        }
    }

    pub fn is_stabilizable(&self) -> bool {
        matches!(self, DareOutcome::Stabilizable(_))
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(
            "p",
            format!("dropout rate must lie in [0, 1], got {p}"),
        ));
    }
    Ok(())
}

fn check_deadline(d: u32) -> Result<()> {
    if d == 0 {
        return Err(Error::domain("d", "deadline must be at least one slot"));
    }
    Ok(())
}

/// Quantities of the Riccati map that do not depend on `P`.
struct RiccatiTerms<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    ad_b: DMatrix<f64>,
    /// `p(1-p) Σ_{i=0}^{d} B'(A')^i Q A^i B + R`.
    phi_const: DMatrix<f64>,
    q: &'a DMatrix<f64>,
    p: f64,
}

impl<'a> RiccatiTerms<'a> {
    fn new(plant: &'a DiscretePlant, d: u32, p: f64, weights: &'a DareWeights) -> Self {
        let a = &plant.a_h;
        let b = &plant.b_h;
        let c = p * (1.0 - p);
        let mut phi_const = weights.r.clone();
        let mut aib = b.clone();
        for i in 0..=d {
            if i > 0 {
                aib = a * aib;
            }
            phi_const += (aib.transpose() * &weights.q * &aib) * c;
        }
        Self {
            a,
            b,
            ad_b: mat_power(a, d) * b,
            phi_const,
            q: &weights.q,
            p,
        }
    }

    /// Returns `(Φ, L, next P)`.
    fn step(&self, p_mat: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let p = self.p;
        let c = p * (1.0 - p);
        let bt = self.b.transpose();
        let phi = linalg::symmetrize(
            &((&bt * p_mat * self.b) * (1.0 - p).powi(2)
                + (self.ad_b.transpose() * p_mat * &self.ad_b) * c
                + &self.phi_const),
        );
        let l = (&bt * p_mat * self.a) * (1.0 - p);
        let chol = phi
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Conditioning("Φ is numerically singular".into()))?;
        let phi_inv_l = chol.solve(&l);
        let next = self.a.transpose() * p_mat * self.a + self.q - l.transpose() * phi_inv_l;
        Ok((phi, l, linalg::symmetrize(&next)))
    }
}

/// Solves the delay-dependent Riccati equation by fixed-point iteration
/// from `P₀ = Q`.
///
/// Divergence of the iterates (norm above the cap, or still accelerating
/// when `max_iter` is reached) means no stabilizing solution exists at this
/// dropout rate. Iterates that are still contracting at `max_iter` yield
/// [`Error::NotConverged`].
pub fn dare_solve(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    weights: &DareWeights,
    opts: &DareOptions,
) -> Result<DareOutcome> {
    check_solve_args(plant, d, p, weights, opts)?;
    let terms = RiccatiTerms::new(plant, d, p, weights);
    let mut iter = RiccatiIteration::new(&terms, opts);
    match iter.advance(opts.max_iter)? {
        Some(outcome) => Ok(outcome),
        None => Err(iter.not_converged()),
    }
}

fn check_solve_args(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    weights: &DareWeights,
    opts: &DareOptions,
) -> Result<()> {
    check_probability(p)?;
    check_deadline(d)?;
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tol", "must be positive"));
    }
    let n = plant.state_dim();
    let m = plant.input_dim();
    if weights.q.nrows() != n || weights.r.nrows() != m {
        return Err(Error::Dimension(format!(
            "weights are {}x{} / {}x{}, plant needs Q {n}x{n} and R {m}x{m}",
            weights.q.nrows(),
            weights.q.ncols(),
            weights.r.nrows(),
            weights.r.ncols()
        )));
    }
    Ok(())
}

/// Resumable value iteration; `advance` returns `None` while undecided.
struct RiccatiIteration<'t, 'a> {
    terms: &'t RiccatiTerms<'a>,
    opts: &'t DareOptions,
    current: DMatrix<f64>,
    iterations: usize,
    last_step: f64,
    growth_streak: usize,
}

impl<'t, 'a> RiccatiIteration<'t, 'a> {
    fn new(terms: &'t RiccatiTerms<'a>, opts: &'t DareOptions) -> Self {
        Self {
            terms,
            opts,
            current: terms.q.clone(),
            iterations: 0,
            last_step: f64::INFINITY,
            growth_streak: 0,
        }
    }

    fn advance(&mut self, budget: usize) -> Result<Option<DareOutcome>> {
        let stop = (self.iterations + budget).min(self.opts.max_iter);
        while self.iterations < stop {
            self.iterations += 1;
            let (_, _, next) = self.terms.step(&self.current)?;
            let norm = next.norm();
            if !norm.is_finite() || norm > self.opts.divergence_cap {
                return Ok(Some(DareOutcome::NotStabilizable(Divergence {
                    iterations: self.iterations,
                    p_norm: norm,
                })));
            }
            let step = (&next - &self.current).norm();
            if step <= self.opts.tol * (1.0 + self.current.norm()) {
                return finish(self.terms, next, self.iterations).map(Some);
            }
            // Round-off makes a stalled iterate jitter, so only a long run of
            // non-shrinking steps above the noise floor counts as growth.
            let growing = next.trace() > self.current.trace()
                && step >= (1.0 - 1e-9) * self.last_step
                && step > 1e-9 * (1.0 + self.current.norm());
            self.growth_streak = if growing { self.growth_streak + 1 } else { 0 };
            self.last_step = step;
            self.current = next;
        }
        if self.iterations >= self.opts.max_iter && self.growth_streak >= GROWTH_STREAK {
            return Ok(Some(DareOutcome::NotStabilizable(Divergence {
                iterations: self.iterations,
                p_norm: self.current.norm(),
            })));
        }
        Ok(None)
    }

    fn exhausted(&self) -> bool {
        self.iterations >= self.opts.max_iter
    }

    fn not_converged(&self) -> Error {
        Error::NotConverged {
            iterations: self.iterations,
            step: self.last_step / (1.0 + self.current.norm()),
        }
    }

    /// Gain `-Φ⁻¹L` at the current iterate.
    fn gain(&self) -> Result<DMatrix<f64>> {
        let (phi, l, _) = self.terms.step(&self.current)?;
        Ok(-phi
            .cholesky()
            .ok_or_else(|| Error::Conditioning("Φ is numerically singular".into()))?
            .solve(&l))
    }
}

const GROWTH_STREAK: usize = 100;

fn finish(terms: &RiccatiTerms<'_>, p_mat: DMatrix<f64>, iterations: usize) -> Result<DareOutcome> {
    let (phi, l, next) = terms.step(&p_mat)?;
    let residual = (&next - &p_mat).norm();
    if !linalg::is_positive_definite(&p_mat) {
        return Err(Error::Numeric(
            "Riccati fixed point is not positive definite".into(),
        ));
    }
    let k = -phi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("Φ is numerically singular".into()))?
        .solve(&l);
    Ok(DareOutcome::Stabilizable(DareSolution {
        p: p_mat,
        phi,
        l,
        k,
        iterations,
        residual,
    }))
}

/// Coefficients of the `d`-step predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorCoeffs {
    /// `A_h^d`, applied to `x_k`.
    pub state: DMatrix<f64>,
    /// `inputs[i] = (1-p) A_h^i B_h`, applied to `u_{k-i-1}`.
    pub inputs: Vec<DMatrix<f64>>,
}

impl PredictorCoeffs {
    /// `x̂_{k+d|k-1}` from `x_k` and `past[i] = u_{k-i-1}`.
    pub fn predict(&self, x: &DMatrix<f64>, past: &[&DMatrix<f64>]) -> DMatrix<f64> {
        debug_assert_eq!(past.len(), self.inputs.len());
        self.inputs
            .iter()
            .zip(past)
            .fold(&self.state * x, |acc, (c, u)| acc + c * *u)
    }
}

pub fn predictor_coeffs(plant: &DiscretePlant, d: u32, p: f64) -> Result<PredictorCoeffs> {
    check_deadline(d)?;
    check_probability(p)?;
    let mut inputs = Vec::with_capacity(d as usize);
    let mut aib = plant.b_h.clone();
    for i in 0..d {
        if i > 0 {
            aib = &plant.a_h * aib;
        }
        inputs.push(&aib * (1.0 - p));
    }
    Ok(PredictorCoeffs {
        state: mat_power(&plant.a_h, d),
        inputs,
    })
}

fn closed_loop_factors(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    k: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_deadline(d)?;
    check_probability(p)?;
    let n = plant.state_dim();
    if k.nrows() != plant.input_dim() || k.ncols() != n {
        return Err(Error::Dimension(format!(
            "gain must be {}x{n}, got {}x{}",
            plant.input_dim(),
            k.nrows(),
            k.ncols()
        )));
    }
    let m1 = &plant.a_h + (&plant.b_h * k) * (1.0 - p);
    let m2 = mat_power(&plant.a_h, d) * &plant.b_h * k;
    Ok((m1, m2))
}

/// `L_K(p, X) = X - M₁'XM₁ - p(1-p) M₂'XM₂`.
pub fn lyapunov_operator_eval(
    plant: &DiscretePlant,
    d: u32,
    k: &DMatrix<f64>,
    p: f64,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (m1, m2) = closed_loop_factors(plant, d, p, k)?;
    let n = plant.state_dim();
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::Dimension(format!("X must be {n}x{n}")));
    }
    Ok(x - m1.transpose() * x * &m1 - (m2.transpose() * x * &m2) * (p * (1.0 - p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DleSolution {
    /// Present only when the lifted operator is a strict contraction.
    pub p: Option<DMatrix<f64>>,
    pub spectral_radius: f64,
    pub feasible: bool,
    /// `|ρ - 1| <= 1e-10`: `I - T` is numerically singular.
    pub marginal: bool,
}

/// Tests a fixed gain via the `n²×n²` Kronecker lift of the delay-dependent
/// Lyapunov equation `P = Q + M₁'PM₁ + p(1-p) M₂'PM₂`.
pub fn dle_solve(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DleSolution> {
    let (m1, m2) = closed_loop_factors(plant, d, p, k)?;
    let n = plant.state_dim();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    if !linalg::is_positive_definite(q) {
        return Err(Error::NotPositiveDefinite("Q"));
    }
    let m1t = m1.transpose();
    let m2t = m2.transpose();
    let lifted = m1t.kronecker(&m1t) + m2t.kronecker(&m2t) * (p * (1.0 - p));
    let rho = linalg::spectral_radius(&lifted)?;
    let marginal = (rho - 1.0).abs() <= 1e-10;
    if rho >= 1.0 - 1e-10 {
        return Ok(DleSolution {
            p: None,
            spectral_radius: rho,
            feasible: false,
            marginal,
        });
    }
    let system = DMatrix::identity(n * n, n * n) - lifted;
    let sol = system
        .lu()
        .solve(&linalg::vec_of(q))
        .ok_or_else(|| Error::Conditioning("I - T is singular".into()))?;
    let p_mat = linalg::symmetrize(&linalg::unvec(&sol, n));
    let feasible = linalg::min_symmetric_eigenvalue(&p_mat) > 0.0;
    Ok(DleSolution {
        p: Some(p_mat),
        spectral_radius: rho,
        feasible,
        marginal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityMargin {
    pub p_max: f64,
    pub bracket_width: f64,
    /// Whether the sampled pair satisfies the structural conditions under
    /// which the threshold is known to be unique. When false the value is
    /// advisory.
    pub assumptions_hold: bool,
}

fn sampled_assumptions_hold(plant: &DiscretePlant) -> bool {
    let gap = 1e-8;
    let Ok(eigs) = linalg::eigenvalues(&plant.a_h) else {
        return false;
    };
    let real = eigs.iter().all(|&(_, im)| im.abs() <= gap);
    let distinct = eigs.iter().enumerate().all(|(i, &(ri, ii))| {
        eigs[i + 1..]
            .iter()
            .all(|&(rj, ij)| (ri - rj).hypot(ii - ij) > gap)
    });
    let unstable = eigs.iter().any(|&(re, im)| re.hypot(im) >= 1.0);
    let n = plant.state_dim();
    let m = plant.input_dim();
    let full_rank = linalg::rank(&plant.b_h, 1e-10) == m;
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = plant.b_h.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = &plant.a_h * block;
    }
    real && distinct && unstable && full_rank && linalg::rank(&ctrb, 1e-10) == n
}

/// Riccati solvability at `p`, used as the bisection predicate.
///
/// Besides convergence, an intermediate iterate whose gain already passes
/// the Lyapunov test counts as solvable, since a mean-square stabilizing
/// gain exists. Iterates still contracting when the budget runs out also
/// count as solvable.
pub fn dare_feasible(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    weights: &DareWeights,
    opts: &DareOptions,
) -> Result<bool> {
    check_solve_args(plant, d, p, weights, opts)?;
    let terms = RiccatiTerms::new(plant, d, p, weights);
    let mut iter = RiccatiIteration::new(&terms, opts);
    loop {
        if let Some(outcome) = iter.advance(CERTIFY_EVERY)? {
            return Ok(outcome.is_stabilizable());
        }
        if iter.exhausted() {
            return Ok(true);
        }
        let k = iter.gain()?;
        let (m1, m2) = closed_loop_factors(plant, d, p, &k)?;
        let (m1t, m2t) = (m1.transpose(), m2.transpose());
        let lifted = m1t.kronecker(&m1t) + m2t.kronecker(&m2t) * (p * (1.0 - p));
        if linalg::spectral_radius(&lifted)? < 1.0 - 1e-9 {
            return Ok(true);
        }
    }
}

const CERTIFY_EVERY: usize = 1000;

/// Largest tolerable dropout rate, by bisection of Riccati solvability
/// over `[0, 1]`.
pub fn pmax_bisection(
    plant: &DiscretePlant,
    d: u32,
    weights: &DareWeights,
    tol_p: f64,
) -> Result<StabilityMargin> {
    pmax_bisection_with(plant, d, weights, tol_p, &DareOptions::default())
}

pub fn pmax_bisection_with(
    plant: &DiscretePlant,
    d: u32,
    weights: &DareWeights,
    tol_p: f64,
    opts: &DareOptions,
) -> Result<StabilityMargin> {
    if !(tol_p > 0.0) {
        return Err(Error::domain("tol_p", "must be positive"));
    }
    if !dare_feasible(plant, d, 0.0, weights, opts)? {
        return Err(Error::PlantNotStabilizable);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol_p {
        let mid = 0.5 * (lo + hi);
        if dare_feasible(plant, d, mid, weights, opts)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(StabilityMargin {
        p_max: 0.5 * (lo + hi),
        bracket_width: hi - lo,
        assumptions_hold: sampled_assumptions_hold(plant),
    })
}

/// `1 / (e^{2Ah(d+1)} - e^{2Ahd} + 1)` for a scalar plant with `A >= 0`.
pub fn pmax_scalar_closed_form(a: f64, h: f64, d: u32) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::domain("A", format!("must be nonnegative, got {a}")));
    }
    if !(h > 0.0) {
        return Err(Error::domain("h", format!("must be positive, got {h}")));
    }
    check_deadline(d)?;
    let growth = (2.0 * a * h * f64::from(d)).exp() * (2.0 * a * h).exp_m1();
    Ok(1.0 / (growth + 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustGridReport {
    pub p_hat: f64,
    pub grid: Vec<f64>,
    pub spectral_radii: Vec<f64>,
    /// Grid point with the largest lifted spectral radius.
    pub worst_p: f64,
    pub all_feasible: bool,
}

/// Sampled robustness check of a fixed gain over `p ∈ [0, p̂]`.
///
/// Solves the Lyapunov test at `0, step, 2·step, …` and at `p̂` itself.
/// Passing is necessary for robust stability on the interval but not a
/// certificate: behaviour between grid points is not examined.
pub fn robust_grid_check(
    plant: &DiscretePlant,
    d: u32,
    k: &DMatrix<f64>,
    p_hat: f64,
    grid_step: f64,
    q: &DMatrix<f64>,
) -> Result<RobustGridReport> {
    if !(0.0..1.0).contains(&p_hat) {
        return Err(Error::domain(
            "p_hat",
            format!("must lie in [0, 1), got {p_hat}"),
        ));
    }
    if !(grid_step > 0.0) {
        return Err(Error::domain("grid_step", "must be positive"));
    }
    let count = (p_hat / grid_step).floor() as usize;
    let mut grid: Vec<f64> = (0..=count)
        .map(|i| i as f64 * grid_step)
        .filter(|&p| p < p_hat)
        .collect();
    grid.push(p_hat);

    let mut radii = Vec::with_capacity(grid.len());
    let mut all_feasible = true;
    for &p in &grid {
        let sol = dle_solve(plant, d, p, k, q)?;
        all_feasible &= sol.feasible;
        radii.push(sol.spectral_radius);
    }
    let worst = radii
        .iter()
        .enumerate()
        .fold(0, |best, (i, &r)| if r > radii[best] { i } else { best });
    Ok(RobustGridReport {
        p_hat,
        worst_p: grid[worst],
        grid,
        spectral_radii: radii,
        all_feasible,
    })
}
