//! CSV emission for the results tables, the per-point interval dumps, and
//! training-loss histories. Floats print as shortest round-trip decimals;
//! infinite widths print as `inf` rather than being hidden.

use std::fmt::Write as _;

use crate::experiments::{PerPointRow, ResultRow};
use crate::scalar::Scalar;
use crate::train::TrainHistory;

/// The coverage/width table, one line per (model, interval-kind) row.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("model,intervals_kind,coverage,avg_piw,std_piw,alpha,n_cal,M,L,seed\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.intervals_kind,
            r.coverage,
            r.avg_piw,
            r.std_piw,
            r.alpha,
            r.n_cal,
            r.ensemble_size,
            r.subdomain_count,
            r.seed
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Per-test-point dump: one input column per dimension, then the target,
/// the ensemble statistics, and the conformal interval. Empty input yields
/// an empty document (there is no dimensionality to describe).
pub fn per_point_csv(rows: &[PerPointRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut out = String::new();
    for d in 0..first.x.len() {
        write!(out, "x{d},").expect("writing to a String cannot fail");
    }
    out.push_str("y_true,mean,std,lower,upper,covered\n");
    for r in rows {
        for v in &r.x {
            write!(out, "{v},").expect("writing to a String cannot fail");
        }
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.y_true, r.mean, r.std, r.lower, r.upper, r.covered
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Loss history with one column per named loss component.
pub fn history_csv<S: Scalar>(history: &TrainHistory<S>) -> String {
    let mut out = String::from("epoch,total");
    if let Some(first) = history.losses.first() {
        for (name, _) in &first.components {
            write!(out, ",{name}").expect("writing to a String cannot fail");
        }
    }
    out.push('\n');
    for (epoch, loss) in history.losses.iter().enumerate() {
        write!(out, "{epoch},{}", loss.total).expect("writing to a String cannot fail");
        for (_, value) in &loss.components {
            write!(out, ",{value}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}
