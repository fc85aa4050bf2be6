//! Replicated network flows, the deadline-based actuation rule and the
//! Bernoulli dropout process it induces.
//!
//! Every control packet is copied onto each of the `m` flows. The actuator
//! applies the first copy that arrives within the deadline `d·h`, exactly at
//! the deadline; if all copies are late the packet is dropped. With
//! independent per-flow delays the drop probability is
//! `p = Π (1 - F_i(d·h))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Piecewise linear between breakpoints.
    #[default]
    Linear,
    /// Right-continuous staircase: `F(x) = F_i` on `[x_i, x_{i+1})`.
    Step,
}

/// Per-flow delay law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DelayDistribution {
    Exponential {
        rate: f64,
    },
    Deterministic {
        value: f64,
    },
    #[serde(rename = "empirical")]
    EmpiricalCdf {
        /// `(x, F(x))` breakpoints, strictly increasing in `x`.
        points: Vec<(f64, f64)>,
        #[serde(default)]
        interpolation: Interpolation,
    },
}

impl DelayDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        let d = DelayDistribution::Exponential { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        let d = DelayDistribution::Deterministic { value };
        d.validate()?;
        Ok(d)
    }

    pub fn empirical(points: Vec<(f64, f64)>, interpolation: Interpolation) -> Result<Self> {
        let d = DelayDistribution::EmpiricalCdf {
            points,
            interpolation,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DelayDistribution::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(Error::domain(
                        "rate",
                        format!("must be positive and finite, got {rate}"),
                    ));
                }
            }
            DelayDistribution::Deterministic { value } => {
                if !(*value >= 0.0 && value.is_finite()) {
                    return Err(Error::domain(
                        "value",
                        format!("must be nonnegative and finite, got {value}"),
                    ));
                }
            }
            DelayDistribution::EmpiricalCdf { points, .. } => {
                if points.is_empty() {
                    return Err(Error::domain(
                        "points",
                        "empirical CDF needs at least one breakpoint",
                    ));
                }
                for (i, &(x, f)) in points.iter().enumerate() {
                    if !(x >= 0.0 && x.is_finite()) {
                        return Err(Error::domain(
                            "points",
                            format!("breakpoint {i}: x must be nonnegative, got {x}"),
                        ));
                    }
                    if !(0.0..=1.0).contains(&f) {
                        return Err(Error::domain(
                            "points",
                            format!("breakpoint {i}: F must lie in [0, 1], got {f}"),
                        ));
                    }
                    if i > 0 {
                        let (xp, fp) = points[i - 1];
                        if x <= xp {
                            return Err(Error::domain(
                                "points",
                                format!("breakpoint {i}: x must be strictly increasing"),
                            ));
                        }
                        if f < fp {
                            return Err(Error::domain(
                                "points",
                                format!("breakpoint {i}: F must be nondecreasing"),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `P(delay <= x)`.
    pub fn cdf_at(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(
                "x",
                format!("delay argument must be nonnegative, got {x}"),
            ));
        }
        Ok(match self {
            DelayDistribution::Exponential { rate } => -(-rate * x).exp_m1(),
            DelayDistribution::Deterministic { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            DelayDistribution::EmpiricalCdf {
                points,
                interpolation,
            } => empirical_cdf(points, *interpolation, x),
        })
    }

    /// `P(delay > x)`, computed directly so it keeps relative accuracy in
    /// the tail.
    pub fn survival_at(&self, x: f64) -> Result<f64> {
        match self {
            DelayDistribution::Exponential { rate } => {
                self.cdf_at(x)?;
                Ok((-rate * x).exp())
            }
            _ => Ok(1.0 - self.cdf_at(x)?),
        }
    }

    /// Generalized inverse `inf{x : F(x) >= u}`; `+inf` when the CDF never
    /// reaches `u` (the packet is lost on this flow).
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            DelayDistribution::Exponential { rate } => -(-u).ln_1p() / rate,
            DelayDistribution::Deterministic { value } => *value,
            DelayDistribution::EmpiricalCdf {
                points,
                interpolation,
            } => empirical_quantile(points, *interpolation, u),
        }
    }

    /// One delay draw by inverse-CDF sampling (one uniform per draw).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

fn empirical_cdf(points: &[(f64, f64)], mode: Interpolation, x: f64) -> f64 {
    let (x0, _) = points[0];
    if x < x0 {
        return 0.0;
    }
    // Last breakpoint with x_i <= x.
    let i = points.partition_point(|&(xi, _)| xi <= x) - 1;
    let (xi, fi) = points[i];
    match (mode, points.get(i + 1)) {
        (Interpolation::Linear, Some(&(xn, fn_))) => fi + (fn_ - fi) * (x - xi) / (xn - xi),
        _ => fi,
    }
}

fn empirical_quantile(points: &[(f64, f64)], mode: Interpolation, u: f64) -> f64 {
    let (x0, f0) = points[0];
    if u <= f0 {
        return x0;
    }
    for w in points.windows(2) {
        let ((xa, fa), (xb, fb)) = (w[0], w[1]);
        if u <= fb {
            return match mode {
                Interpolation::Step => xb,
                Interpolation::Linear => xa + (u - fa) / (fb - fa) * (xb - xa),
            };
        }
    }
    f64::INFINITY
}

/// The `m >= 1` replicated flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DelayDistribution>", into = "Vec<DelayDistribution>")]
pub struct FlowSet {
    flows: Vec<DelayDistribution>,
}

impl TryFrom<Vec<DelayDistribution>> for FlowSet {
    type Error = Error;

    fn try_from(flows: Vec<DelayDistribution>) -> Result<Self> {
        FlowSet::new(flows)
    }
}

impl From<FlowSet> for Vec<DelayDistribution> {
    fn from(f: FlowSet) -> Self {
        f.flows
    }
}

impl FlowSet {
    pub fn new(flows: Vec<DelayDistribution>) -> Result<Self> {
        if flows.is_empty() {
            return Err(Error::domain("flows", "at least one flow is required"));
        }
        for f in &flows {
            f.validate()?;
        }
        Ok(Self { flows })
    }

    /// `m` identical exponential flows.
    pub fn exponential(rates: &[f64]) -> Result<Self> {
        Self::new(
            rates
                .iter()
                .map(|&rate| DelayDistribution::Exponential { rate })
                .collect(),
        )
    }

    pub fn flows(&self) -> &[DelayDistribution] {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn push(&mut self, flow: DelayDistribution) -> Result<()> {
        flow.validate()?;
        self.flows.push(flow);
        Ok(())
    }
}

/// Deadline of `d` sampling slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlinePolicy {
    d: u32,
    h: f64,
}

impl DeadlinePolicy {
    pub fn new(d: u32, h: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::domain("d", "deadline must be at least one slot"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::domain(
                "h",
                format!("sampling period must be positive, got {h}"),
            ));
        }
        Ok(Self { d, h })
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `d·h`.
    pub fn deadline(&self) -> f64 {
        f64::from(self.d) * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DropoutModel {
    p: f64,
}

impl DropoutModel {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(
                "p",
                format!("dropout rate must lie in [0, 1], got {p}"),
            ));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

pub fn cdf_at(dist: &DelayDistribution, x: f64) -> Result<f64> {
    dist.cdf_at(x)
}

/// Probability that every copy misses the deadline.
pub fn dropout_rate(flows: &FlowSet, policy: &DeadlinePolicy) -> DropoutModel {
    let deadline = policy.deadline();
    let p = flows
        .flows()
        .iter()
        .map(|f| f.survival_at(deadline).expect("deadline is positive"))
        .product::<f64>()
        .clamp(0.0, 1.0);
    DropoutModel { p }
}

/// Sum of exponential rates; only meaningful when every flow is exponential.
pub fn total_service_rate(flows: &FlowSet) -> Result<f64> {
    flows
        .flows()
        .iter()
        .map(|f| match f {
            DelayDistribution::Exponential { rate } => Ok(*rate),
            other => Err(Error::UnsupportedModel(format!(
                "total service rate needs exponential flows, found {other:?}"
            ))),
        })
        .sum()
}

/// Draws one delay per flow and reports whether the earliest copy meets the
/// deadline (`true` = applied, `false` = dropped).
pub fn sample_arrival<R: Rng + ?Sized>(
    flows: &FlowSet,
    policy: &DeadlinePolicy,
    rng: &mut R,
) -> bool {
    let deadline = policy.deadline();
    // Every flow is sampled, even after a hit, so the stream consumption per
    // packet is fixed.
    flows
        .flows()
        .iter()
        .map(|f| f.sample(rng))
        .fold(f64::INFINITY, f64::min)
        <= deadline
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_cdf() {
        let d = DelayDistribution::exponential(0.5).unwrap();
        assert_abs_diff_eq!(
            d.cdf_at(2.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(d.cdf_at(2.0).unwrap(), 0.6321, epsilon = 1e-4);
    }

    #[test]
    fn deterministic_cdf_is_a_step() {
        let d = DelayDistribution::deterministic(1.5).unwrap();
        assert_eq!(d.cdf_at(1.0).unwrap(), 0.0);
        assert_eq!(d.cdf_at(1.5).unwrap(), 1.0);
        assert_eq!(d.cdf_at(2.0).unwrap(), 1.0);
    }

    #[test]
    fn empirical_cdf_modes() {
        let pts = vec![(0.0, 0.0), (2.0, 1.0)];
        let lin = DelayDistribution::empirical(pts.clone(), Interpolation::Linear).unwrap();
        assert_abs_diff_eq!(lin.cdf_at(1.0).unwrap(), 0.5, epsilon = 1e-15);
        let step = DelayDistribution::empirical(pts, Interpolation::Step).unwrap();
        assert_eq!(step.cdf_at(1.0).unwrap(), 0.0);
        assert_eq!(step.cdf_at(2.0).unwrap(), 1.0);

        let gapped =
            DelayDistribution::empirical(vec![(1.0, 0.4), (3.0, 0.8)], Interpolation::Linear)
                .unwrap();
        assert_eq!(gapped.cdf_at(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(gapped.cdf_at(1.0).unwrap(), 0.4);
        assert_abs_diff_eq!(gapped.cdf_at(10.0).unwrap(), 0.8);
        assert_eq!(gapped.quantile(0.9), f64::INFINITY);
        assert_abs_diff_eq!(gapped.quantile(0.6), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gapped.quantile(0.1), 1.0);
    }

    #[test]
    fn cdf_rejects_negative_argument() {
        let d = DelayDistribution::exponential(1.0).unwrap();
        assert!(matches!(
            d.cdf_at(-0.1),
            Err(Error::Domain { field: "x", .. })
        ));
    }

    #[test]
    fn invalid_distributions() {
        assert!(DelayDistribution::exponential(0.0).is_err());
        assert!(DelayDistribution::deterministic(-1.0).is_err());
        assert!(DelayDistribution::empirical(vec![], Interpolation::Linear).is_err());
        assert!(
            DelayDistribution::empirical(vec![(0.0, 0.5), (1.0, 0.2)], Interpolation::Linear)
                .is_err()
        );
        assert!(
            DelayDistribution::empirical(vec![(1.0, 0.1), (1.0, 0.2)], Interpolation::Linear)
                .is_err()
        );
        assert!(FlowSet::new(vec![]).is_err());
    }

    #[test]
    fn reference_dropout_rate() {
        let flows = FlowSet::exponential(&[0.5, 0.5]).unwrap();
        let p = dropout_rate(&flows, &DeadlinePolicy::new(2, 1.0).unwrap()).p();
        assert_abs_diff_eq!(p, (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.1353, epsilon = 1e-4);
    }

    #[test]
    fn guaranteed_delivery_gives_zero_dropout() {
        let flows = FlowSet::new(vec![
            DelayDistribution::exponential(0.1).unwrap(),
            DelayDistribution::deterministic(0.5).unwrap(),
        ])
        .unwrap();
        assert_eq!(
            dropout_rate(&flows, &DeadlinePolicy::new(1, 1.0).unwrap()).p(),
            0.0
        );

        let mixed = FlowSet::new(vec![
            DelayDistribution::exponential(1.0).unwrap(),
            DelayDistribution::deterministic(0.5).unwrap(),
            DelayDistribution::empirical(vec![(0.0, 0.0), (2.0, 1.0)], Interpolation::Linear)
                .unwrap(),
        ])
        .unwrap();
        assert_eq!(
            dropout_rate(&mixed, &DeadlinePolicy::new(1, 1.0).unwrap()).p(),
            0.0
        );
    }

    #[test]
    fn service_rate() {
        assert_abs_diff_eq!(
            total_service_rate(&FlowSet::exponential(&[0.5, 0.5]).unwrap()).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            total_service_rate(&FlowSet::exponential(&[0.2, 0.2]).unwrap()).unwrap(),
            0.4
        );
        assert_eq!(
            total_service_rate(&FlowSet::exponential(&[0.7]).unwrap()).unwrap(),
            0.7
        );
        let mixed = FlowSet::new(vec![
            DelayDistribution::exponential(1.0).unwrap(),
            DelayDistribution::deterministic(1.0).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            total_service_rate(&mixed),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn deterministic_arrivals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = DeadlinePolicy::new(1, 1.0).unwrap();
        let early = FlowSet::new(vec![DelayDistribution::deterministic(0.5).unwrap()]).unwrap();
        let late = FlowSet::new(vec![DelayDistribution::deterministic(2.0).unwrap()]).unwrap();
        for _ in 0..100 {
            assert!(sample_arrival(&early, &policy, &mut rng));
            assert!(!sample_arrival(&late, &policy, &mut rng));
        }
    }

    #[test]
    fn deadline_policy_validation() {
        assert!(DeadlinePolicy::new(0, 1.0).is_err());
        assert!(DeadlinePolicy::new(1, 0.0).is_err());
        assert_eq!(DeadlinePolicy::new(3, 0.5).unwrap().deadline(), 1.5);
        assert!(DropoutModel::new(1.2).is_err());
    }

    #[test]
    fn flow_json_schema() {
        let json = r#"[{"type":"exponential","rate":0.5},{"type":"deterministic","value":1.0},{"type":"empirical","points":[[0,0],[2,1]]}]"#;
        let flows: FlowSet = serde_json::from_str(json).unwrap();
        assert_eq!(flows.len(), 3);
        assert_eq!(
            flows.flows()[2],
            DelayDistribution::EmpiricalCdf {
                points: vec![(0.0, 0.0), (2.0, 1.0)],
                interpolation: Interpolation::Linear
            }
        );
        assert!(serde_json::from_str::<FlowSet>(r#"[{"type":"exponential","rate":-1}]"#).is_err());
        assert!(serde_json::from_str::<FlowSet>("[]").is_err());
    }

    #[test]
    fn dropout_keeps_relative_accuracy_in_tail() {
        let flows = FlowSet::exponential(&[0.2, 0.2]).unwrap();
        let p = dropout_rate(&flows, &DeadlinePolicy::new(200, 1.0).unwrap()).p();
        let exact = (-80.0f64).exp();
        assert!(p > 0.0);
        assert!((p - exact).abs() <= 1e-12 * exact);
    }
}
