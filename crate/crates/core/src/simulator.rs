//! Closed-loop simulation of the sampled plant under random dropouts, with
//! an exact second-moment recursion to check it against.
//!
//! Each step `k` the controller forms the predictor `x̂_{k+d|k-1}` from `x_k`
//! and its last `d` controls, sends `u_k = K x̂`, and the plant advances with
//! whatever packet (sent at slot `k-d`) made its deadline:
//! `x_{k+1} = A_h x_k + γ_{k-d} B_h u_{k-d}`. Dropped packets contribute
//! nothing; there is no hold of stale inputs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::DiscretePlant;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{dropout_rate, sample_arrival, DeadlinePolicy, FlowSet};
use crate::stabilization::{predictor_coeffs, PredictorCoeffs};

/// Trials per parallel work item. Results do not depend on it, only the
/// batching overhead does.
const BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub plant: DiscretePlant,
    pub d: u32,
    pub flows: FlowSet,
    /// `m_u × n` predictor-feedback gain.
    pub gain: DMatrix<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub x0: DVector<f64>,
    /// `u_{-d}, …, u_{-1}`, oldest first.
    pub u_init: Vec<DVector<f64>>,
}

impl SimConfig {
    /// Config with zero initial control history.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: DiscretePlant,
        d: u32,
        flows: FlowSet,
        gain: DMatrix<f64>,
        horizon: usize,
        trials: usize,
        seed: u64,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let m = plant.input_dim();
        let cfg = Self {
            u_init: vec![DVector::zeros(m); d as usize],
            plant,
            d,
            flows,
            gain,
            horizon,
            trials,
            seed,
            x0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.state_dim();
        let m = self.plant.input_dim();
        DeadlinePolicy::new(self.d, self.plant.h)?;
        if self.horizon == 0 {
            return Err(Error::domain("horizon", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials", "must be at least 1"));
        }
        if self.gain.nrows() != m || self.gain.ncols() != n {
            return Err(Error::Dimension(format!(
                "gain must be {m}x{n}, got {}x{}",
                self.gain.nrows(),
                self.gain.ncols()
            )));
        }
        if self.x0.len() != n {
            return Err(Error::Dimension(format!(
                "x0 must have {n} entries, got {}",
                self.x0.len()
            )));
        }
        if self.u_init.len() != self.d as usize {
            return Err(Error::Dimension(format!(
                "u_init must hold exactly d = {} controls, got {}",
                self.d,
                self.u_init.len()
            )));
        }
        if let Some(u) = self.u_init.iter().find(|u| u.len() != m) {
            return Err(Error::Dimension(format!(
                "initial controls must have {m} entries, got {}",
                u.len()
            )));
        }
        Ok(())
    }

    pub fn policy(&self) -> DeadlinePolicy {
        DeadlinePolicy::new(self.d, self.plant.h).expect("validated")
    }

    /// Dropout probability implied by the flows and deadline.
    pub fn dropout(&self) -> f64 {
        dropout_rate(&self.flows, &self.policy()).p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrajectory {
    /// `x_0, …, x_N`.
    pub states: Vec<DVector<f64>>,
    /// `u_0, …, u_{N-1}`.
    pub controls: Vec<DVector<f64>>,
    /// `γ_{-d}, …, γ_{N-1-d}`; `true` when the packet was applied.
    pub gammas: Vec<bool>,
    /// `u_{-d}, …, u_{-1}`.
    pub initial_controls: Vec<DVector<f64>>,
}

impl TrialTrajectory {
    /// Control sent at slot `t` (negative slots come from the initial history).
    pub fn control_at(&self, t: isize) -> &DVector<f64> {
        let d = self.initial_controls.len() as isize;
        if t < 0 {
            &self.initial_controls[(t + d) as usize]
        } else {
            &self.controls[t as usize]
        }
    }

    /// Largest deviation from `x_{k+1} = A_h x_k + γ_{k-d} B_h u_{k-d}` over
    /// the stored trajectory.
    pub fn recursion_defect(&self, plant: &DiscretePlant) -> f64 {
        let d = self.initial_controls.len() as isize;
        (0..self.states.len() - 1)
            .map(|k| {
                let mut next = &plant.a_h * &self.states[k];
                if self.gammas[k] {
                    next += &plant.b_h * self.control_at(k as isize - d);
                }
                (next - &self.states[k + 1]).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Independent stream per `(seed, trial_index)`, so a trial's draws do not
/// depend on which thread runs it or in what order.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

struct Stepper<'a> {
    cfg: &'a SimConfig,
    coeffs: PredictorCoeffs,
    policy: DeadlinePolicy,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            coeffs: predictor_coeffs(&cfg.plant, cfg.d, cfg.dropout())?,
            policy: cfg.policy(),
            cfg,
        })
    }

    fn run(&self, trial_index: u64) -> TrialTrajectory {
        let cfg = self.cfg;
        let d = cfg.d as usize;
        let n_steps = cfg.horizon;
        let mut rng = trial_rng(cfg.seed, trial_index);

        // history[t + d] = u_t
        let mut history: Vec<DVector<f64>> = cfg.u_init.clone();
        history.reserve(n_steps);
        let mut states = Vec::with_capacity(n_steps + 1);
        let mut gammas = Vec::with_capacity(n_steps);
        states.push(cfg.x0.clone());

        for k in 0..n_steps {
            let x = &states[k];
            let past: Vec<&DVector<f64>> = (0..d).map(|i| &history[k + d - i - 1]).collect();
            let x_hat = self.coeffs.predict_vec(x, &past);
            let u = &cfg.gain * x_hat;
            let applied = sample_arrival(&cfg.flows, &self.policy, &mut rng);
            let mut next = &cfg.plant.a_h * x;
            if applied {
                next += &cfg.plant.b_h * &history[k];
            }
            history.push(u);
            gammas.push(applied);
            states.push(next);
        }
        let controls = history.split_off(d);
        TrialTrajectory {
            states,
            controls,
            gammas,
            initial_controls: history,
        }
    }
}

impl PredictorCoeffs {
    fn predict_vec(&self, x: &DVector<f64>, past: &[&DVector<f64>]) -> DVector<f64> {
        self.inputs
            .iter()
            .zip(past)
            .fold(&self.state * x, |acc, (c, u)| acc + c * *u)
    }
}

pub fn run_trial(cfg: &SimConfig, trial_index: u64) -> Result<TrialTrajectory> {
    Ok(Stepper::new(cfg)?.run(trial_index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    Exact,
    MonteCarlo,
}

/// `E‖x_k‖²` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTrajectory {
    pub mean_sq: Vec<f64>,
    pub source: MomentSource,
    /// `1.96 · s / √trials` per step, Monte Carlo only.
    pub ci_halfwidth: Option<Vec<f64>>,
}

impl MomentTrajectory {
    /// Reporting heuristic: final moment more than 1000× the initial one.
    pub fn diverged(&self) -> bool {
        match (self.mean_sq.first(), self.mean_sq.last()) {
            (Some(&first), Some(&last)) => last > 1e3 * first,
            _ => false,
        }
    }
}

/// Running count, mean and sum of squared deviations per step.
#[derive(Clone)]
struct Accumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1.0;
        for ((m, s2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = v - *m;
            *m += delta / self.count;
            *s2 += delta * (v - *m);
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        if other.count == 0.0 {
            return self;
        }
        let total = self.count + other.count;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.m2[i] += other.m2[i] + delta * delta * self.count * other.count / total;
            self.mean[i] += delta * other.count / total;
        }
        self.count = total;
        self
    }
}

/// Averages `‖x_k‖²` over `cfg.trials` independent trials.
///
/// Trials run in parallel; batches are merged in trial order so the result
/// is bit-identical across thread counts.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<MomentTrajectory> {
    let stepper = Stepper::new(cfg)?;
    let len = cfg.horizon + 1;
    let batches: Vec<Accumulator> = (0..cfg.trials.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator::new(len);
            let mut sq = vec![0.0; len];
            for t in b * BATCH..((b + 1) * BATCH).min(cfg.trials) {
                let traj = stepper.run(t as u64);
                for (s, x) in sq.iter_mut().zip(&traj.states) {
                    *s = x.norm_squared();
                }
                acc.push(&sq);
            }
            acc
        })
        .collect();
    let total = batches
        .iter()
        .fold(Accumulator::new(len), |acc, b| acc.merge(b));

    let n = total.count;
    let ci = total
        .m2
        .iter()
        .map(|&m2| {
            if n > 1.0 {
                1.96 * (m2 / (n - 1.0)).max(0.0).sqrt() / n.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(MomentTrajectory {
        mean_sq: total.mean,
        source: MomentSource::MonteCarlo,
        ci_halfwidth: Some(ci),
    })
}

/// Closed-loop state `z_k = (x_k, u_{k-1}, …, u_{k-d})`, which makes the
/// loop Markov.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState(pub DVector<f64>);

impl AugmentedState {
    /// `recent[i] = u_{k-1-i}`.
    pub fn from_parts(x: &DVector<f64>, recent: &[DVector<f64>]) -> Self {
        let mut parts: Vec<f64> = x.iter().copied().collect();
        for u in recent {
            parts.extend(u.iter());
        }
        Self(DVector::from_vec(parts))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Transition matrices `(M(1), M(0))` of the augmented closed loop: the
/// packet sent at `k-d` is applied or dropped.
pub fn closed_loop_maps(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    gain: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    if gain.nrows() != m || gain.ncols() != n {
        return Err(Error::Dimension(format!("gain must be {m}x{n}")));
    }
    let coeffs = predictor_coeffs(plant, d, p)?;
    let d = d as usize;
    let dim = n + d * m;
    let mut off = DMatrix::zeros(dim, dim);
    off.view_mut((0, 0), (n, n)).copy_from(&plant.a_h);
    // u_k = K A^d x_k + Σ K (1-p) A^i B u_{k-1-i}
    off.view_mut((n, 0), (m, n))
        .copy_from(&(gain * &coeffs.state));
    for (i, c) in coeffs.inputs.iter().enumerate() {
        off.view_mut((n, n + i * m), (m, m)).copy_from(&(gain * c));
    }
    // Shift the control history down one slot.
    for i in 1..d {
        off.view_mut((n + i * m, n + (i - 1) * m), (m, m))
            .copy_from(&DMatrix::identity(m, m));
    }
    let mut on = off.clone();
    on.view_mut((0, n + (d - 1) * m), (n, m))
        .copy_from(&plant.b_h);
    Ok((on, off))
}

/// Exact `E‖x_k‖²` from `S_{k+1} = (1-p) M(1) S_k M(1)' + p M(0) S_k M(0)'`.
///
/// Valid because the dropout indicator acting at step `k` is independent of
/// `z_k`.
pub fn exact_moments(cfg: &SimConfig) -> Result<MomentTrajectory> {
    cfg.validate()?;
    let p = cfg.dropout();
    let (on, off) = closed_loop_maps(&cfg.plant, cfg.d, p, &cfg.gain)?;
    let n = cfg.plant.state_dim();
    let recent: Vec<DVector<f64>> = cfg.u_init.iter().rev().cloned().collect();
    let z0 = AugmentedState::from_parts(&cfg.x0, &recent).0;
    let mut s = &z0 * z0.transpose();
    let on_t = on.transpose();
    let off_t = off.transpose();
    let mut mean_sq = Vec::with_capacity(cfg.horizon + 1);
    for k in 0..=cfg.horizon {
        mean_sq.push(s.view((0, 0), (n, n)).trace());
        if k < cfg.horizon {
            s = (&on * &s * &on_t) * (1.0 - p) + (&off * &s * &off_t) * p;
            s = linalg::symmetrize(&s);
        }
    }
    Ok(MomentTrajectory {
        mean_sq,
        source: MomentSource::Exact,
        ci_halfwidth: None,
    })
}

/// Spectral radius of `S ↦ (1-p) M(1) S M(1)' + p M(0) S M(0)'`; below one
/// iff the exact moments vanish.
pub fn closed_loop_spectral_radius(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    gain: &DMatrix<f64>,
) -> Result<f64> {
    let (on, off) = closed_loop_maps(plant, d, p, gain)?;
    let lifted = on.kronecker(&on) * (1.0 - p) + off.kronecker(&off) * p;
    linalg::spectral_radius(&lifted)
}
