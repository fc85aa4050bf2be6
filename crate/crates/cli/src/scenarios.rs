//! Fixed reference scenarios: the sampling-bound tables and the two-flow
//! scalar simulation.

use sdnctl_core::{
    dare_solve, discretize, sampling_bounds, ContinuousPlant, DVector, DareOptions, DareWeights,
    FlowSet, SimConfig,
};

use crate::report::sig6;
use crate::CliError;

/// `(A, r̄)` pairs of the first table, left column then right column.
pub const TABLE1: [(f64, f64); 14] = [
    (0.6, 1.0),
    (0.7, 1.0),
    (0.8, 1.0),
    (0.9, 1.0),
    (1.0, 1.0),
    (1.1, 1.0),
    (1.2, 1.0),
    (0.4, 0.1),
    (0.4, 0.2),
    (0.4, 0.3),
    (0.4, 0.4),
    (0.4, 0.5),
    (0.4, 0.6),
    (0.4, 0.7),
];

/// `(A, r̄)` pairs of the second table.
pub const TABLE2: [(f64, f64); 6] = [
    (0.5, 0.9),
    (0.5, 0.75),
    (0.5, 0.6),
    (0.5, 0.45),
    (0.5, 0.3),
    (0.5, 0.15),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub a: f64,
    pub r_bar: f64,
    pub h_u: f64,
    pub h_l: f64,
}

impl TableRow {
    pub fn delta_h(&self) -> f64 {
        self.h_u - self.h_l
    }
}

pub fn table_rows(pairs: &[(f64, f64)]) -> Result<Vec<TableRow>, CliError> {
    pairs
        .iter()
        .map(|&(a, r_bar)| {
            let b = sampling_bounds(a, r_bar)?;
            let (Some(h_u), Some(h_l)) = (b.h_u, b.h_l) else {
                return Err(CliError::Config(format!(
                    "A={a}, rbar={r_bar} is not underprovisioned"
                )));
            };
            Ok(TableRow { a, r_bar, h_u, h_l })
        })
        .collect()
}

pub fn table_csv(rows: &[TableRow], with_delta: bool) -> String {
    let mut out = String::from(if with_delta {
        "A,rbar,h_u,h_l,delta_h\n"
    } else {
        "A,rbar,h_u,h_l\n"
    });
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            sig6(r.a),
            sig6(r.r_bar),
            sig6(r.h_u),
            sig6(r.h_l)
        ));
        if with_delta {
            out.push_str(&format!(",{}", sig6(r.delta_h())));
        }
        out.push('\n');
    }
    out
}

/// Scalar plant `A = 0.25, B = 1`, `h = 1`, `d = 2`, `x_0 = 2`, zero initial
/// controls, two exponential flows.
pub struct ReferenceLoop {
    pub label: &'static str,
    pub rate: f64,
    pub config: SimConfig,
}

pub const REFERENCE_A: f64 = 0.25;
pub const REFERENCE_H: f64 = 1.0;
pub const REFERENCE_D: u32 = 2;
pub const REFERENCE_X0: f64 = 2.0;

/// Both flow settings share the gain designed for the faster one
/// (`Q = R = 1`).
pub fn reference_loops(
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<[ReferenceLoop; 2], CliError> {
    let plant = discretize(&ContinuousPlant::scalar(REFERENCE_A, 1.0)?, REFERENCE_H)?;
    let fast = FlowSet::exponential(&[0.5, 0.5])?;
    let slow = FlowSet::exponential(&[0.2, 0.2])?;
    let mk = |flows: FlowSet, gain| {
        SimConfig::new(
            plant.clone(),
            REFERENCE_D,
            flows,
            gain,
            horizon,
            trials,
            seed,
            DVector::from_element(1, REFERENCE_X0),
        )
    };
    let probe = mk(fast.clone(), sdnctl_core::DMatrix::zeros(1, 1))?;
    let gain = dare_solve(
        &plant,
        REFERENCE_D,
        probe.dropout(),
        &DareWeights::identity(1, 1),
        &DareOptions::default(),
    )?
    .into_solution()
    .ok_or_else(|| CliError::Infeasible("reference loop is not stabilizable".into()))?
    .k;
    Ok([
        ReferenceLoop {
            label: "stabilizable",
            rate: 0.5,
            config: mk(fast, gain.clone())?,
        },
        ReferenceLoop {
            label: "unstabilizable",
            rate: 0.2,
            config: mk(slow, gain)?,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_have_expected_shape() {
        let t1 = table_csv(&table_rows(&TABLE1).unwrap(), false);
        let t2 = table_csv(&table_rows(&TABLE2).unwrap(), true);
        assert_eq!(t1.lines().count(), 15);
        assert_eq!(t2.lines().count(), 7);
        assert!(t1.starts_with("A,rbar,h_u,h_l\n"));
        assert!(t2.starts_with("A,rbar,h_u,h_l,delta_h\n"));
        assert!(t1.ends_with('\n'));
    }

    #[test]
    fn reference_loops_share_gain() {
        let [fast, slow] = reference_loops(5, 1, 0).unwrap();
        assert_eq!(fast.config.gain, slow.config.gain);
        assert!((fast.config.dropout() - (-2.0f64).exp()).abs() < 1e-12);
        assert!((slow.config.dropout() - (-0.8f64).exp()).abs() < 1e-12);
    }
}
