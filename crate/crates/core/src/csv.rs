//! Deterministic CSV writers. Every number is printed with 17 significant
//! digits so values round-trip exactly.

use std::io::{self, Write};

use crate::grid::{Field2D, Profile};

/// `{:.16e}`: one leading digit plus 16 decimals.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Header `t,a,value`, rows ordered by time then age.
pub fn write_field<W: Write + ?Sized>(out: &mut W, field: &Field2D) -> io::Result<()> {
    writeln!(out, "t,a,value")?;
    let ages = field.age_grid().nodes();
    for n in 0..field.n_levels() {
        let t = fmt_num(field.time_grid().time(n));
        for (a, v) in ages.iter().zip(field.row(n)) {
            writeln!(out, "{t},{},{}", fmt_num(*a), fmt_num(*v))?;
        }
    }
    Ok(())
}

/// Header `a,value`.
pub fn write_profile<W: Write + ?Sized>(out: &mut W, profile: &Profile) -> io::Result<()> {
    writeln!(out, "a,value")?;
    for (a, v) in profile.grid().nodes().iter().zip(profile.values()) {
        writeln!(out, "{},{}", fmt_num(*a), fmt_num(*v))?;
    }
    Ok(())
}

/// Numeric table with named columns; `None` cells are left empty.
pub fn write_table<W: Write + ?Sized>(out: &mut W, header: &[&str], rows: &[Vec<Option<f64>>]) -> io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_opt(*v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Two-column time series with the given header.
pub fn write_series<W: Write + ?Sized>(out: &mut W, header: &str, times: &[f64], values: &[f64]) -> io::Result<()> {
    writeln!(out, "{header}")?;
    for (t, v) in times.iter().zip(values) {
        writeln!(out, "{},{}", fmt_num(*t), fmt_num(*v))?;
    }
    Ok(())
}
