//! `sdnctl`: batch front end over `sdnctl-core`.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 the analysis
//! says the loop cannot be stabilized (the verdict is still printed), 3
//! numerical failure, 64 unknown or missing subcommand.

pub mod config;
pub mod report;
pub mod scenarios;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use sdnctl_core::{
    check_assumptions, closed_loop_spectral_radius, dare_solve, decoupled_stabilizable, discretize,
    dle_solve, dropout_rate, exact_moments, find_min_deadline, linalg, pmax_bisection,
    pmax_scalar_closed_form, proposition_check, robust_grid_check, run_monte_carlo,
    sampling_bounds, scalar_stabilizable, total_service_rate, ContinuousPlant, DMatrix, DVector,
    DareOptions, DareOutcome, DareWeights, DeadlinePolicy, DecoupledPlant, DiscretePlant, FlowSet,
    ScalarPlant, SimConfig, Verdict,
};

use config::{Format, ToolConfig};

/// Environment variable supplying the default simulation seed.
pub const SEED_ENV: &str = "SDNCTL_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(sdnctl_core::Error),
    Infeasible(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Infeasible(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<sdnctl_core::Error> for CliError {
    fn from(e: sdnctl_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Core(sdnctl_core::Error::PlantNotStabilizable) => EXIT_INFEASIBLE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sdnctl",
    version,
    about = "Stabilization analysis for control loops over deadline-limited multi-path networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Scalar plant coefficient A (replaces the configured plant).
    #[arg(long = "A", allow_negative_numbers = true)]
    a: Option<f64>,
    /// Scalar plant coefficient B (default 1 with --A).
    #[arg(long = "B", allow_negative_numbers = true)]
    b: Option<f64>,
    /// Sampling period.
    #[arg(long, allow_negative_numbers = true)]
    h: Option<f64>,
    /// Deadline in sampling periods.
    #[arg(long)]
    d: Option<u32>,
    /// Dropout probability, overriding the flows.
    #[arg(long, allow_negative_numbers = true)]
    p: Option<f64>,
    /// Exponential flow rate; repeat for several flows.
    #[arg(long = "rate", allow_negative_numbers = true)]
    rates: Vec<f64>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args, Default)]
struct SimFlags {
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Zero-order-hold discretization and structural checks.
    Discretize(Common),
    /// Dropout probability for the flows and deadline.
    Dropout(Common),
    /// Delay-dependent Riccati solution and predictor gain.
    Dare(Common),
    /// Lyapunov test of a gain (configured, or the Riccati gain).
    Dle {
        #[command(flatten)]
        common: Common,
        /// Also scan dropout rates below p with this spacing.
        #[arg(long)]
        grid_step: Option<f64>,
    },
    /// Largest tolerable dropout probability.
    Pmax {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-4)]
        tol_p: f64,
    },
    /// Sampling-period bounds for a scalar plant.
    Bounds {
        #[arg(long = "A", allow_negative_numbers = true)]
        a: f64,
        #[arg(long = "rbar", allow_negative_numbers = true)]
        r_bar: f64,
    },
    /// Shortest deadline that stabilizes a scalar plant.
    Deadline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        d_max: u32,
    },
    /// Two-candidate deadline test between the sampling bounds.
    Proposition {
        #[arg(long = "A", allow_negative_numbers = true)]
        a: f64,
        #[arg(long = "rbar", allow_negative_numbers = true)]
        r_bar: f64,
        #[arg(long, allow_negative_numbers = true)]
        h: f64,
    },
    /// Stabilizability of a plant with decoupled scalar modes.
    Decoupled {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        a_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        b_list: Vec<f64>,
    },
    /// Monte Carlo and exact second moments.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Exact second moments only.
    Moments {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Regenerate both sampling-bound tables as CSV.
    Tables {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Simulate the two-flow scalar reference loop at both service rates.
    Figure3 {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 60)]
        horizon: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Result text plus the exit code it should produce.
struct Rendered {
    text: String,
    code: i32,
}

impl Rendered {
    fn json(v: Value, code: i32) -> Self {
        Self {
            text: format!(
                "{}\n",
                serde_json::to_string_pretty(&v).expect("values are serializable")
            ),
            code,
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, env_seed: Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_INPUT,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, env_seed, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(
    command: Command,
    env_seed: Option<String>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let default_seed = match env_seed {
        Some(s) => s.trim().parse::<u64>().map_err(|_| {
            CliError::Config(format!(
                "{SEED_ENV}: expected an unsigned integer, got \"{s}\""
            ))
        })?,
        None => 0,
    };
    match command {
        Command::Discretize(c) => emit(out, &c, Format::Json, cmd_discretize),
        Command::Dropout(c) => emit(out, &c, Format::Json, cmd_dropout),
        Command::Dare(c) => emit(out, &c, Format::Json, cmd_dare),
        Command::Dle { common, grid_step } => {
            emit(out, &common, Format::Json, |ctx| cmd_dle(ctx, grid_step))
        }
        Command::Pmax { common, tol_p } => {
            emit(out, &common, Format::Json, |ctx| cmd_pmax(ctx, tol_p))
        }
        Command::Bounds { a, r_bar } => {
            let b = sampling_bounds(a, r_bar)?;
            write_out(
                out,
                None,
                &Rendered::json(serde_json::to_value(b).unwrap(), EXIT_OK),
            )
        }
        Command::Deadline { common, d_max } => {
            emit(out, &common, Format::Json, |ctx| cmd_deadline(ctx, d_max))
        }
        Command::Proposition { a, r_bar, h } => {
            let dec = proposition_check(a, r_bar, h)?;
            write_out(
                out,
                None,
                &Rendered::json(serde_json::to_value(dec).unwrap(), EXIT_OK),
            )
        }
        Command::Decoupled {
            common,
            a_list,
            b_list,
        } => emit(out, &common, Format::Json, |ctx| {
            cmd_decoupled(ctx, &a_list, &b_list)
        }),
        Command::Simulate { common, sim } => emit(out, &common, Format::Csv, |ctx| {
            cmd_simulate(ctx, &sim, default_seed, true)
        }),
        Command::Moments { common, sim } => emit(out, &common, Format::Csv, |ctx| {
            cmd_simulate(ctx, &sim, default_seed, false)
        }),
        Command::Tables { out_dir } => cmd_tables(out, &out_dir),
        Command::Figure3 {
            out_dir,
            horizon,
            trials,
            seed,
        } => cmd_figure3(out, &out_dir, horizon, trials, seed.unwrap_or(default_seed)),
    }
}

/// Flags and configuration for one command; flags take precedence.
struct Ctx<'a> {
    flags: &'a Common,
    cfg: ToolConfig,
    format: Format,
}

fn emit(
    out: &mut dyn Write,
    flags: &Common,
    default_format: Format,
    body: impl FnOnce(&Ctx) -> Result<Rendered, CliError>,
) -> Result<i32, CliError> {
    let cfg = match &flags.config {
        Some(path) => config::load(path)?,
        None => ToolConfig::default(),
    };
    let format = flags.format.or(cfg.output.format).unwrap_or(default_format);
    let path = flags.output.clone().or_else(|| cfg.output.path.clone());
    let ctx = Ctx { flags, cfg, format };
    let rendered = body(&ctx)?;
    write_out(out, path.as_deref(), &rendered)
}

fn write_out(out: &mut dyn Write, path: Option<&Path>, r: &Rendered) -> Result<i32, CliError> {
    match path {
        Some(p) => std::fs::write(p, &r.text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?,
        None => out
            .write_all(r.text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write output: {e}")))?,
    }
    Ok(r.code)
}

fn missing(field: &str) -> CliError {
    CliError::Config(format!(
        "{field}: required (set it in the config or by flag)"
    ))
}

impl Ctx<'_> {
    fn json_only(&self, command: &str) -> Result<(), CliError> {
        if self.format == Format::Csv {
            return Err(CliError::Config(format!(
                "output.format: {command} only writes json"
            )));
        }
        Ok(())
    }

    fn h(&self) -> Result<f64, CliError> {
        self.flags.h.or(self.cfg.h).ok_or_else(|| missing("h"))
    }

    fn d(&self) -> Result<u32, CliError> {
        self.flags.d.or(self.cfg.d).ok_or_else(|| missing("d"))
    }

    fn continuous(&self) -> Result<Option<ContinuousPlant>, CliError> {
        if let Some(a) = self.flags.a {
            return Ok(Some(ContinuousPlant::scalar(
                a,
                self.flags.b.unwrap_or(1.0),
            )?));
        }
        Ok(self.cfg.plant.clone())
    }

    fn discrete(&self) -> Result<DiscretePlant, CliError> {
        let continuous = self.continuous()?;
        let from_flags = self.flags.a.is_some();
        match (continuous, &self.cfg.discrete_plant) {
            (Some(_), Some(_)) if !from_flags => Err(CliError::Config(
                "plant: give exactly one of plant and discrete_plant".into(),
            )),
            (Some(p), _) => Ok(discretize(&p, self.h()?)?),
            (None, Some(rows)) => {
                let a_h = linalg::from_rows(&rows.a_h)
                    .map_err(|e| CliError::Config(format!("discrete_plant.A_h: {e}")))?;
                let b_h = linalg::from_rows(&rows.b_h)
                    .map_err(|e| CliError::Config(format!("discrete_plant.B_h: {e}")))?;
                Ok(DiscretePlant::new(a_h, b_h, self.h()?)?)
            }
            (None, None) => Err(missing("plant")),
        }
    }

    fn flows(&self) -> Result<FlowSet, CliError> {
        if !self.flags.rates.is_empty() {
            return Ok(FlowSet::exponential(&self.flags.rates)?);
        }
        self.cfg.flows.clone().ok_or_else(|| missing("flows"))
    }

    /// `p` by flag, config, or from the flows at deadline `d·h`.
    fn dropout(&self) -> Result<f64, CliError> {
        if let Some(p) = self.flags.p.or(self.cfg.p) {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Core(sdnctl_core::Error::Domain {
                    field: "p",
                    reason: format!("must lie in [0, 1], got {p}"),
                }));
            }
            return Ok(p);
        }
        let policy = DeadlinePolicy::new(self.d()?, self.h()?)?;
        Ok(dropout_rate(&self.flows()?, &policy).p())
    }

    fn weights(&self, n: usize, m: usize) -> Result<DareWeights, CliError> {
        let q = self.cfg.weights.q.resolve("Q", n)?;
        let r = self.cfg.weights.r.resolve("R", m)?;
        Ok(DareWeights::new(q, r)?)
    }

    fn gain(&self, plant: &DiscretePlant, d: u32, p: f64) -> Result<DMatrix<f64>, CliError> {
        if let Some(rows) = &self.cfg.gain {
            let k = linalg::from_rows(rows).map_err(|e| CliError::Config(format!("gain: {e}")))?;
            if k.nrows() != plant.input_dim() || k.ncols() != plant.state_dim() {
                return Err(CliError::Config(format!(
                    "gain: must be {}x{}, got {}x{}",
                    plant.input_dim(),
                    plant.state_dim(),
                    k.nrows(),
                    k.ncols()
                )));
            }
            return Ok(k);
        }
        let w = self.weights(plant.state_dim(), plant.input_dim())?;
        match dare_solve(plant, d, p, &w, &DareOptions::default())? {
            DareOutcome::Stabilizable(s) => Ok(s.k),
            DareOutcome::NotStabilizable(_) => Err(CliError::Infeasible(format!(
                "no Riccati gain exists at p = {p}; supply one under \"gain\""
            ))),
        }
    }
}

fn cmd_discretize(ctx: &Ctx) -> Result<Rendered, CliError> {
    ctx.json_only("discretize")?;
    let continuous = ctx.continuous()?.ok_or_else(|| missing("plant"))?;
    let dp = discretize(&continuous, ctx.h()?)?;
    let report = check_assumptions(&continuous);
    Ok(Rendered::json(
        json!({
            "A_h": report::rows(&dp.a_h),
            "B_h": report::rows(&dp.b_h),
            "h": dp.h,
            "assumptions": report,
        }),
        EXIT_OK,
    ))
}

fn cmd_dropout(ctx: &Ctx) -> Result<Rendered, CliError> {
    ctx.json_only("dropout")?;
    let flows = ctx.flows()?;
    let policy = DeadlinePolicy::new(ctx.d()?, ctx.h()?)?;
    let p = dropout_rate(&flows, &policy).p();
    Ok(Rendered::json(
        json!({
            "p": p,
            "deadline": policy.deadline(),
            "flows": flows.len(),
            "total_rate": total_service_rate(&flows).ok(),
        }),
        EXIT_OK,
    ))
}

fn cmd_dare(ctx: &Ctx) -> Result<Rendered, CliError> {
    ctx.json_only("dare")?;
    let plant = ctx.discrete()?;
    let d = ctx.d()?;
    let p = ctx.dropout()?;
    let w = ctx.weights(plant.state_dim(), plant.input_dim())?;
    Ok(
        match dare_solve(&plant, d, p, &w, &DareOptions::default())? {
            DareOutcome::Stabilizable(s) => Rendered::json(
                json!({
                    "P": report::rows(&s.p),
                    "K": report::rows(&s.k),
                    "Phi": report::rows(&s.phi),
                    "iterations": s.iterations,
                    "residual": s.residual,
                    "stabilizable": true,
                    "p": p,
                }),
                EXIT_OK,
            ),
            DareOutcome::NotStabilizable(div) => Rendered::json(
                json!({
                    "P": null,
                    "K": null,
                    "Phi": null,
                    "iterations": div.iterations,
                    "residual": null,
                    "stabilizable": false,
                    "p": p,
                }),
                EXIT_INFEASIBLE,
            ),
        },
    )
}

fn cmd_dle(ctx: &Ctx, grid_step: Option<f64>) -> Result<Rendered, CliError> {
    ctx.json_only("dle")?;
    let plant = ctx.discrete()?;
    let d = ctx.d()?;
    let p = ctx.dropout()?;
    let k = ctx.gain(&plant, d, p)?;
    let q = ctx.cfg.weights.q.resolve("Q", plant.state_dim())?;
    let dle = dle_solve(&plant, d, p, &k, &q)?;
    let mut body = json!({
        "feasible": dle.feasible,
        "spectral_radius": dle.spectral_radius,
        "marginal": dle.marginal,
        "P": dle.p.as_ref().map(report::rows),
        "K": report::rows(&k),
        "p": p,
        "lifted_spectral_radius": closed_loop_spectral_radius(&plant, d, p, &k)?,
    });
    let mut ok = dle.feasible;
    if let Some(step) = grid_step {
        let grid = robust_grid_check(&plant, d, &k, p, step, &q)?;
        ok &= grid.all_feasible;
        body["grid"] = json!({
            "note": "sampled dropout rates only; not a certificate for the whole interval",
            "p": grid.grid,
            "spectral_radius": grid.spectral_radii,
            "worst_p": grid.worst_p,
            "all_feasible": grid.all_feasible,
        });
    }
    Ok(Rendered::json(
        body,
        if ok { EXIT_OK } else { EXIT_INFEASIBLE },
    ))
}

fn cmd_pmax(ctx: &Ctx, tol_p: f64) -> Result<Rendered, CliError> {
    ctx.json_only("pmax")?;
    let plant = ctx.discrete()?;
    let d = ctx.d()?;
    let w = ctx.weights(plant.state_dim(), plant.input_dim())?;
    let margin = pmax_bisection(&plant, d, &w, tol_p)?;
    let closed_form = match ctx.continuous()? {
        Some(c) if c.state_dim() == 1 && c.input_dim() == 1 && c.a()[(0, 0)] >= 0.0 => {
            Some(pmax_scalar_closed_form(c.a()[(0, 0)], plant.h, d)?)
        }
        _ => None,
    };
    Ok(Rendered::json(
        json!({
            "p_max": margin.p_max,
            "bracket_width": margin.bracket_width,
            "assumptions_hold": margin.assumptions_hold,
            "closed_form": closed_form,
        }),
        EXIT_OK,
    ))
}

fn scalar_of(ctx: &Ctx) -> Result<ScalarPlant, CliError> {
    let c = ctx.continuous()?.ok_or_else(|| missing("plant"))?;
    if c.state_dim() != 1 || c.input_dim() != 1 {
        return Err(CliError::Config("plant: a scalar plant is required".into()));
    }
    Ok(ScalarPlant::new(c.a()[(0, 0)], c.b()[(0, 0)])?)
}

fn cmd_deadline(ctx: &Ctx, d_max: u32) -> Result<Rendered, CliError> {
    ctx.json_only("deadline")?;
    let plant = scalar_of(ctx)?;
    let h = ctx.h()?;
    let flows = ctx.flows()?;
    let decision = find_min_deadline(&plant, h, &flows, d_max)?;
    let mut body = serde_json::to_value(&decision).unwrap();
    if let Some(d) = ctx.flags.d.or(ctx.cfg.d) {
        body["at_d"] =
            json!({ "d": d, "stabilizable": scalar_stabilizable(&plant, h, &flows, d)? });
    }
    if let Ok(r_bar) = total_service_rate(&flows) {
        body["bounds"] = serde_json::to_value(sampling_bounds(plant.a(), r_bar)?).unwrap();
    }
    let code = if decision.verdict == Verdict::NotStabilizable {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    };
    Ok(Rendered::json(body, code))
}

fn cmd_decoupled(ctx: &Ctx, a_list: &[f64], b_list: &[f64]) -> Result<Rendered, CliError> {
    ctx.json_only("decoupled")?;
    let plant = if !a_list.is_empty() {
        DecoupledPlant::new(a_list.to_vec(), b_list.to_vec())?
    } else {
        let c = ctx.cfg.plant.as_ref().ok_or_else(|| missing("plant"))?;
        let n = c.state_dim();
        let off_diag =
            |m: &DMatrix<f64>| (0..n).any(|i| (0..m.ncols()).any(|j| i != j && m[(i, j)] != 0.0));
        if c.input_dim() != n || off_diag(c.a()) || off_diag(c.b()) {
            return Err(CliError::Config(
                "plant: decoupled analysis needs diagonal A and B".into(),
            ));
        }
        DecoupledPlant::new(
            c.a().diagonal().iter().copied().collect(),
            c.b().diagonal().iter().copied().collect(),
        )?
    };
    let h = ctx.h()?;
    let d = ctx.d()?;
    let flows = ctx.flows()?;
    let ok = decoupled_stabilizable(&plant, h, &flows, d)?;
    let lead = plant.leading();
    Ok(Rendered::json(
        json!({
            "stabilizable": ok,
            "leading": lead,
            "mu": plant.mu(),
            "p": dropout_rate(&flows, &DeadlinePolicy::new(d, h)?).p(),
            "p_max": pmax_scalar_closed_form(lead.a(), h, d)?,
        }),
        if ok { EXIT_OK } else { EXIT_INFEASIBLE },
    ))
}

fn sim_config(ctx: &Ctx, sim: &SimFlags, default_seed: u64) -> Result<SimConfig, CliError> {
    if ctx.flags.p.is_some() || ctx.cfg.p.is_some() {
        return Err(CliError::Config(
            "p: simulation draws dropouts from the flows; remove p".into(),
        ));
    }
    let plant = ctx.discrete()?;
    let d = ctx.d()?;
    let flows = ctx.flows()?;
    let p = dropout_rate(&flows, &DeadlinePolicy::new(d, plant.h)?).p();
    let gain = ctx.gain(&plant, d, p)?;
    let s = &ctx.cfg.sim;
    let n = plant.state_dim();
    let x0 = match &s.x0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::from_element(n, 1.0),
    };
    let horizon = sim.horizon.or(s.horizon).unwrap_or(60);
    let trials = sim.trials.or(s.trials).unwrap_or(10_000);
    let seed = sim.seed.or(s.seed).unwrap_or(default_seed);
    let mut cfg =
        SimConfig::new(plant, d, flows, gain, horizon, trials, seed, x0).map_err(|e| match e {
            sdnctl_core::Error::Dimension(m) => CliError::Config(format!("sim: {m}")),
            other => other.into(),
        })?;
    if let Some(u) = &s.u_init {
        cfg.u_init = u.iter().map(|v| DVector::from_vec(v.clone())).collect();
        cfg.validate()
            .map_err(|e| CliError::Config(format!("sim.u_init: {e}")))?;
    }
    Ok(cfg)
}

fn cmd_simulate(
    ctx: &Ctx,
    sim: &SimFlags,
    default_seed: u64,
    monte_carlo: bool,
) -> Result<Rendered, CliError> {
    let cfg = sim_config(ctx, sim, default_seed)?;
    let exact = exact_moments(&cfg)?;
    let rho = closed_loop_spectral_radius(&cfg.plant, cfg.d, cfg.dropout(), &cfg.gain)?;
    if !monte_carlo {
        return Ok(match ctx.format {
            Format::Csv => Rendered {
                text: report::exact_csv(&exact),
                code: EXIT_OK,
            },
            Format::Json => Rendered::json(
                json!({
                    "p": cfg.dropout(),
                    "spectral_radius": rho,
                    "diverged": exact.diverged(),
                    "exact_mean_sq": exact.mean_sq,
                }),
                EXIT_OK,
            ),
        });
    }
    let mc = run_monte_carlo(&cfg)?;
    Ok(match ctx.format {
        Format::Csv => Rendered {
            text: report::moments_csv(&mc, &exact),
            code: EXIT_OK,
        },
        Format::Json => Rendered::json(
            json!({
                "p": cfg.dropout(),
                "trials": cfg.trials,
                "seed": cfg.seed,
                "spectral_radius": rho,
                "diverged": mc.diverged(),
                "mean_sq": mc.mean_sq,
                "ci_halfwidth": mc.ci_halfwidth,
                "exact_mean_sq": exact.mean_sq,
            }),
            EXIT_OK,
        ),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn cmd_tables(out: &mut dyn Write, dir: &Path) -> Result<i32, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let t1 = dir.join("table1.csv");
    let t2 = dir.join("table2.csv");
    write_file(
        &t1,
        &scenarios::table_csv(&scenarios::table_rows(&scenarios::TABLE1)?, false),
    )?;
    write_file(
        &t2,
        &scenarios::table_csv(&scenarios::table_rows(&scenarios::TABLE2)?, true),
    )?;
    write_out(
        out,
        None,
        &Rendered::json(json!({ "table1": t1, "table2": t2 }), EXIT_OK),
    )
}

fn cmd_figure3(
    out: &mut dyn Write,
    dir: &Path,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<i32, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut summary = Vec::new();
    for lp in scenarios::reference_loops(horizon, trials, seed)? {
        let mc = run_monte_carlo(&lp.config)?;
        let exact = exact_moments(&lp.config)?;
        let path = dir.join(format!("figure3_{}.csv", lp.label));
        write_file(&path, &report::moments_csv(&mc, &exact))?;
        summary.push(json!({
            "scenario": lp.label,
            "rate_per_flow": lp.rate,
            "p": lp.config.dropout(),
            "gain": lp.config.gain[(0, 0)],
            "path": path,
            "mean_sq_final": mc.mean_sq.last(),
            "exact_mean_sq_final": exact.mean_sq.last(),
            "diverged": mc.diverged(),
        }));
    }
    write_out(out, None, &Rendered::json(Value::Array(summary), EXIT_OK))
}
