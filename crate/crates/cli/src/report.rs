//! Number formatting and CSV rendering.

use sdnctl_core::{linalg, DMatrix, MomentTrajectory};

/// Six significant digits, plain decimal where that stays readable.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-4..6).contains(&exp) {
        format!("{x:.*}", (5 - exp) as usize)
    } else {
        sci
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

/// `k,mean_sq,ci_low,ci_high,exact_mean_sq`.
pub fn moments_csv(mc: &MomentTrajectory, exact: &MomentTrajectory) -> String {
    let mut out = String::from("k,mean_sq,ci_low,ci_high,exact_mean_sq\n");
    let hw = mc
        .ci_halfwidth
        .clone()
        .unwrap_or_else(|| vec![0.0; mc.mean_sq.len()]);
    for (k, ((m, w), e)) in mc.mean_sq.iter().zip(&hw).zip(&exact.mean_sq).enumerate() {
        out.push_str(&format!(
            "{k},{},{},{},{}\n",
            sig6(*m),
            sig6(m - w),
            sig6(m + w),
            sig6(*e)
        ));
    }
    out
}

/// `k,exact_mean_sq`.
pub fn exact_csv(exact: &MomentTrajectory) -> String {
    let mut out = String::from("k,exact_mean_sq\n");
    for (k, e) in exact.mean_sq.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", sig6(*e)));
    }
    out
}
