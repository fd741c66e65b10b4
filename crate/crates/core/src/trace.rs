//! Fixed-schema CSV serialization of a [`RunLog`].

use std::io::{self, Write};

use crate::sim::{RunLog, StepRecord};

pub const CSV_HEADER: &str = "t,q1,q2,q1dot,q2dot,q1d,q2d,q1dotd,q2dotd,q1hat,q2hat,q1dothat,q2dothat,u1,u2,er1,er2,er3,er4,ea1,ea2,ea3,ea4,loss,ftilde_norm";

/// Nine significant digits in scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

fn row(r: &StepRecord) -> String {
    let mut fields = Vec::with_capacity(25);
    fields.push(r.t);
    fields.extend(r.x.iter());
    fields.extend(r.x_d.iter());
    fields.extend(r.x_hat.iter());
    fields.extend(r.u.iter());
    fields.extend(r.e_r.iter());
    fields.extend(r.e_a.iter());
    fields.push(r.loss);
    fields.push(r.ftilde_norm);
    fields
        .into_iter()
        .map(format_value)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_csv<W: Write>(log: &RunLog, mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &log.records {
        writeln!(out, "{}", row(r))?;
    }
    out.flush()
}
