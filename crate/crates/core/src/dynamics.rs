//! Continuous plant, its exact zero-order-hold discretization and the
//! structural assumptions the stabilization results rely on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// `dx/dt = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantRows", into = "PlantRows")]
pub struct ContinuousPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlantRows {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

impl TryFrom<PlantRows> for ContinuousPlant {
    type Error = Error;

    fn try_from(rows: PlantRows) -> Result<Self> {
        ContinuousPlant::new(linalg::from_rows(&rows.a)?, linalg::from_rows(&rows.b)?)
    }
}

impl From<ContinuousPlant> for PlantRows {
    fn from(p: ContinuousPlant) -> Self {
        PlantRows {
            a: linalg::to_rows(&p.a),
            b: linalg::to_rows(&p.b),
        }
    }
}

impl ContinuousPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must have {} rows and at least one column, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !linalg::is_finite(&a) {
            return Err(Error::domain("A", "entries must be finite"));
        }
        if !linalg::is_finite(&b) {
            return Err(Error::domain("B", "entries must be finite"));
        }
        Ok(Self { a, b })
    }

    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Sampled plant `x_{k+1} = A_h x_k + B_h u_k` for period `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub a_h: DMatrix<f64>,
    pub b_h: DMatrix<f64>,
    pub h: f64,
}

impl DiscretePlant {
    /// Builds a sampled plant directly, e.g. from identified data.
    pub fn new(a_h: DMatrix<f64>, b_h: DMatrix<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::domain(
                "h",
                format!("sampling period must be positive, got {h}"),
            ));
        }
        // Reuses the shape and finiteness checks.
        let checked = ContinuousPlant::new(a_h, b_h)?;
        Ok(Self {
            a_h: checked.a,
            b_h: checked.b,
            h,
        })
    }

    pub fn scalar(a_h: f64, b_h: f64, h: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a_h),
            DMatrix::from_element(1, 1, b_h),
            h,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a_h.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_h.ncols()
    }
}

/// `e^M`.
///
/// Backed by nalgebra's scaling-and-squaring Padé implementation.
pub fn mat_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !linalg::is_finite(m) {
        return Err(Error::domain("M", "entries must be finite"));
    }
    if m.is_empty() {
        return Ok(m.clone());
    }
    Ok(m.exp())
}

/// `M^d` by repeated squaring; `M^0 = I`.
pub fn mat_power(m: &DMatrix<f64>, d: u32) -> DMatrix<f64> {
    assert!(m.is_square(), "mat_power needs a square matrix");
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    let mut e = d;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Exact zero-order-hold discretization.
///
/// `A_h` and `B_h = ∫₀ʰ e^{Aτ} B dτ` are read off the exponential of the
/// augmented generator `[[A, B], [0, 0]]·h`.
pub fn discretize(plant: &ContinuousPlant, h: f64) -> Result<DiscretePlant> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(
            "h",
            format!("sampling period must be positive, got {h}"),
        ));
    }
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut gen = DMatrix::zeros(n + m, n + m);
    gen.view_mut((0, 0), (n, n)).copy_from(&(plant.a() * h));
    gen.view_mut((0, n), (n, m)).copy_from(&(plant.b() * h));
    let e = mat_exp(&gen)?;
    Ok(DiscretePlant {
        a_h: e.view((0, 0), (n, n)).into_owned(),
        b_h: e.view((0, n), (n, m)).into_owned(),
        h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionTolerances {
    /// Minimum separation for two eigenvalues to count as distinct, and the
    /// largest imaginary part still treated as real.
    pub eig_gap: f64,
    /// Singular values at or below `rank_rel * sigma_max` count as zero.
    pub rank_rel: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        Self {
            eig_gap: 1e-8,
            rank_rel: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Unstable (some eigenvalue with nonnegative real part) with real,
    /// pairwise distinct eigenvalues.
    pub h1_unstable_real_distinct: bool,
    pub h2_full_column_rank: bool,
    pub h3_controllable: bool,
    /// Only reported for scalar plants: `A >= 0` and `B != 0`.
    pub h4_scalar_nonneg: Option<bool>,
    /// `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub notes: String,
}

impl AssumptionReport {
    /// H1 through H3 all hold.
    pub fn admits_pmax(&self) -> bool {
        self.h1_unstable_real_distinct && self.h2_full_column_rank && self.h3_controllable
    }
}

pub fn check_assumptions(plant: &ContinuousPlant) -> AssumptionReport {
    check_assumptions_with(plant, AssumptionTolerances::default())
}

pub fn check_assumptions_with(
    plant: &ContinuousPlant,
    tol: AssumptionTolerances,
) -> AssumptionReport {
    let a = plant.a();
    let b = plant.b();
    let n = plant.state_dim();
    let mut notes = Vec::new();

    let eigenvalues = match linalg::eigenvalues(a) {
        Ok(e) => e,
        Err(e) => {
            notes.push(format!("eigenvalue computation failed: {e}"));
            Vec::new()
        }
    };
    let all_real = eigenvalues.iter().all(|&(_, im)| im.abs() <= tol.eig_gap);
    if !all_real {
        notes.push(
            "complex eigenvalues: the maximum dropout rate threshold is not guaranteed to be unique"
                .to_string(),
        );
    }
    let distinct = eigenvalues.iter().enumerate().all(|(i, &(ri, ii))| {
        eigenvalues[i + 1..]
            .iter()
            .all(|&(rj, ij)| (ri - rj).hypot(ii - ij) > tol.eig_gap)
    });
    if !distinct {
        notes.push("repeated eigenvalues".to_string());
    }
    let unstable = eigenvalues.iter().any(|&(re, _)| re >= 0.0);
    if !unstable {
        notes.push("A is Hurwitz (no unstable mode)".to_string());
    }
    let h1 = !eigenvalues.is_empty() && all_real && distinct && unstable;

    let h2 = linalg::rank(b, tol.rank_rel) == plant.input_dim();
    if !h2 {
        notes.push("B is column-rank deficient".to_string());
    }

    let m = plant.input_dim();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    let h3 = linalg::rank(&ctrb, tol.rank_rel) == n;
    if !h3 {
        notes.push("(A, B) is not controllable".to_string());
    }

    let h4 = (n == 1 && m == 1).then(|| a[(0, 0)] >= 0.0 && b[(0, 0)] != 0.0);

    AssumptionReport {
        h1_unstable_real_distinct: h1,
        h2_full_column_rank: h2,
        h3_controllable: h3,
        h4_scalar_nonneg: h4,
        eigenvalues,
        notes: notes.join("; "),
    }
}
