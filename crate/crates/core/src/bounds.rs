//! Closed-form stabilizability tests and sampling-period bounds for scalar
//! plants and for decoupled (diagonal) plants.
//!
//! For a scalar plant with `A >= 0` the loop is stabilizable with deadline
//! `d·h` iff `p(d·h) < 1 / (e^{2A d h}(e^{2Ah} - 1) + 1)`. With exponential
//! flows of total rate `r̄`, `p = e^{-r̄ d h}` and the condition becomes
//! `e^{2Ah} - 1 < f(d h)` where `f(t) = e^{(r̄-2A)t} - e^{-2At}`. The shape of
//! `f` decides which sampling periods admit some deadline.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{dropout_rate, DeadlinePolicy, FlowSet};
use crate::stabilization::pmax_scalar_closed_form;

/// Scalar plant with `A >= 0`, `B != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarPlant {
    a: f64,
    b: f64,
}

impl ScalarPlant {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::domain(
                "A",
                format!("scalar plant needs finite A >= 0, got {a}"),
            ));
        }
        if b == 0.0 || !b.is_finite() {
            return Err(Error::domain(
                "B",
                format!("scalar plant needs finite B != 0, got {b}"),
            ));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

/// `diag(A₁…A_n)`, `diag(B₁…B_n)` stored with `A₁ >= … >= A_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecoupledPlant {
    a_list: Vec<f64>,
    b_list: Vec<f64>,
    mu: usize,
}

impl DecoupledPlant {
    /// Modes may be given in any order; they are sorted by decreasing `A`.
    pub fn new(a_list: Vec<f64>, b_list: Vec<f64>) -> Result<Self> {
        if a_list.is_empty() || a_list.len() != b_list.len() {
            return Err(Error::Dimension(format!(
                "need matching nonempty mode lists, got {} A and {} B entries",
                a_list.len(),
                b_list.len()
            )));
        }
        if a_list.iter().any(|a| !a.is_finite()) {
            return Err(Error::domain("A", "entries must be finite"));
        }
        if b_list.iter().any(|&b| b == 0.0 || !b.is_finite()) {
            return Err(Error::domain(
                "B",
                "every mode needs a finite nonzero input gain",
            ));
        }
        let mut modes: Vec<(f64, f64)> = a_list.into_iter().zip(b_list).collect();
        modes.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mu = modes.iter().filter(|m| m.0 >= 0.0).count();
        if mu == 0 {
            return Err(Error::domain(
                "A",
                "at least one mode must satisfy A_i >= 0",
            ));
        }
        let (a_list, b_list) = modes.into_iter().unzip();
        Ok(Self { a_list, b_list, mu })
    }

    pub fn a_list(&self) -> &[f64] {
        &self.a_list
    }

    pub fn b_list(&self) -> &[f64] {
        &self.b_list
    }

    /// Number of modes with `A_i >= 0`.
    pub fn mu(&self) -> usize {
        self.mu
    }

    /// The most unstable mode, which alone decides stabilizability.
    pub fn leading(&self) -> ScalarPlant {
        ScalarPlant {
            a: self.a_list[0],
            b: self.b_list[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `r̄ > 2A`.
    Overprovisioned,
    /// `r̄ = 2A`.
    Critical,
    /// `0 < r̄ < 2A`.
    Underprovisioned,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingBounds {
    pub regime: Regime,
    pub h_bar: Option<f64>,
    pub t_bar: Option<f64>,
    pub h_u: Option<f64>,
    pub h_l1: Option<f64>,
    pub h_l2: Option<f64>,
    pub h_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// `f(t) = e^{(r̄-2A)t} - e^{-2At}`: the largest `e^{2Ah} - 1` that a deadline
/// of length `t` tolerates under exponential flows of total rate `r̄`.
pub fn deadline_margin(a: f64, r_bar: f64, t: f64) -> f64 {
    ((r_bar - 2.0 * a) * t).exp() - (-2.0 * a * t).exp()
}

/// Sampling period `h` at which `e^{2Ah} - 1` equals `value`.
fn period_for(a: f64, value: f64) -> f64 {
    value.ln_1p() / (2.0 * a)
}

fn check_rate(r_bar: f64) -> Result<()> {
    if !(r_bar > 0.0 && r_bar.is_finite()) {
        return Err(Error::domain(
            "rbar",
            format!("total service rate must be positive, got {r_bar}"),
        ));
    }
    Ok(())
}

/// Regime classification and sampling-period bounds for `(A, r̄)`.
pub fn sampling_bounds(a: f64, r_bar: f64) -> Result<SamplingBounds> {
    check_rate(r_bar)?;
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::domain(
            "A",
            format!("must be finite and nonnegative, got {a}"),
        ));
    }
    let two_a = 2.0 * a;
    let empty = SamplingBounds {
        regime: Regime::Overprovisioned,
        h_bar: None,
        t_bar: None,
        h_u: None,
        h_l1: None,
        h_l2: None,
        h_l: None,
        note: None,
    };
    if a == 0.0 {
        return Ok(SamplingBounds {
            note: Some("A = 0: any sampling period is admissible as long as p < 1".into()),
            ..empty
        });
    }
    if (r_bar - two_a).abs() <= 1e-12 * two_a.max(r_bar) {
        return Ok(SamplingBounds {
            regime: Regime::Critical,
            h_bar: Some(std::f64::consts::LN_2 / two_a),
            ..empty
        });
    }
    if r_bar > two_a {
        return Ok(empty);
    }

    // Peak of f.
    let t_bar = (two_a.ln() - (two_a - r_bar).ln()) / r_bar;
    let h_u = period_for(a, deadline_margin(a, r_bar, t_bar));
    let h_l1 = period_for(a, deadline_margin(a, r_bar, t_bar + h_u));
    // Behind the peak by h_u only makes sense while that stays positive.
    let h_l2 = (t_bar > h_u).then(|| period_for(a, deadline_margin(a, r_bar, t_bar - h_u)));
    let h_l = h_l2.map_or(h_l1, |v| v.max(h_l1));
    Ok(SamplingBounds {
        regime: Regime::Underprovisioned,
        t_bar: Some(t_bar),
        h_u: Some(h_u),
        h_l1: Some(h_l1),
        h_l2,
        h_l: Some(h_l),
        ..empty
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stabilizable,
    NotStabilizable,
    /// The sufficient test failed; only an exhaustive deadline search can
    /// settle the case.
    UndecidedByBounds,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadlineDecision {
    pub verdict: Verdict,
    pub stabilizable: bool,
    pub chosen_d: Option<u32>,
    pub f_star: Option<f64>,
    pub t_bar: Option<f64>,
    pub d1: Option<u32>,
    pub d2: Option<u32>,
}

impl DeadlineDecision {
    fn bare(verdict: Verdict) -> Self {
        Self {
            verdict,
            stabilizable: verdict == Verdict::Stabilizable,
            chosen_d: None,
            f_star: None,
            t_bar: None,
            d1: None,
            d2: None,
        }
    }
}

/// Strict test `p(d·h) < p_max(A, h, d)`.
pub fn scalar_stabilizable(plant: &ScalarPlant, h: f64, flows: &FlowSet, d: u32) -> Result<bool> {
    let policy = DeadlinePolicy::new(d, h)?;
    let p = dropout_rate(flows, &policy).p();
    Ok(p < pmax_scalar_closed_form(plant.a, h, d)?)
}

/// Smallest `d ∈ [1, d_max]` passing [`scalar_stabilizable`].
pub fn find_min_deadline(
    plant: &ScalarPlant,
    h: f64,
    flows: &FlowSet,
    d_max: u32,
) -> Result<DeadlineDecision> {
    if d_max == 0 {
        return Err(Error::domain("d_max", "must be at least 1"));
    }
    for d in 1..=d_max {
        if scalar_stabilizable(plant, h, flows, d)? {
            return Ok(DeadlineDecision {
                chosen_d: Some(d),
                ..DeadlineDecision::bare(Verdict::Stabilizable)
            });
        }
    }
    Ok(DeadlineDecision::bare(Verdict::NotStabilizable))
}

/// Sufficient test for sampling periods between the two bounds: try the
/// deadlines on either side of the peak of `f`.
///
/// Returns [`Verdict::NotApplicable`] outside the underprovisioned regime or
/// for `h` outside `(h_l, h_u]`. A zero floor deadline (`h > t̄`) is left out
/// of the comparison.
pub fn proposition_check(a: f64, r_bar: f64, h: f64) -> Result<DeadlineDecision> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(
            "h",
            format!("sampling period must be positive, got {h}"),
        ));
    }
    let bounds = sampling_bounds(a, r_bar)?;
    let (Some(t_bar), Some(h_u), Some(h_l)) = (bounds.t_bar, bounds.h_u, bounds.h_l) else {
        return Ok(DeadlineDecision::bare(Verdict::NotApplicable));
    };
    let ratio = t_bar / h;
    let d1 = ratio.ceil() as u32;
    let d2 = ratio.floor() as u32;
    let with_t = |v| DeadlineDecision {
        t_bar: Some(t_bar),
        d1: Some(d1),
        d2: (d2 > 0).then_some(d2),
        ..DeadlineDecision::bare(v)
    };
    if !(h > h_l && h <= h_u) {
        return Ok(with_t(Verdict::NotApplicable));
    }

    let f1 = deadline_margin(a, r_bar, f64::from(d1) * h);
    let (chosen, f_star) = if d2 > 0 {
        let f2 = deadline_margin(a, r_bar, f64::from(d2) * h);
        // Ties go to the shorter deadline.
        if f2 >= f1 {
            (d2, f2)
        } else {
            (d1, f1)
        }
    } else {
        (d1, f1)
    };
    let ok = (2.0 * a * h).exp_m1() < f_star;
    Ok(DeadlineDecision {
        chosen_d: ok.then_some(chosen),
        f_star: Some(f_star),
        ..with_t(if ok {
            Verdict::Stabilizable
        } else {
            Verdict::UndecidedByBounds
        })
    })
}

/// Decoupled plants reduce to the scalar test on the most unstable mode.
pub fn decoupled_stabilizable(
    plant: &DecoupledPlant,
    h: f64,
    flows: &FlowSet,
    d: u32,
) -> Result<bool> {
    scalar_stabilizable(&plant.leading(), h, flows, d)
}
