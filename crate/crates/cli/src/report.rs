//! Fixed-width table of experiment summaries.

use crate::output::delta_columns;
use crate::pipeline::RunSummary;

/// Shift with an explicit sign and four decimals, e.g. `+0.0334`.
pub fn signed(v: f64) -> String {
    // Keep "-0.0000" out of the table: it reads as a real decrease.
    let r = (v * 1e4).round() / 1e4;
    format!("{:+.4}", if r == 0.0 { 0.0 } else { v })
}

pub fn render(rows: &[RunSummary]) -> String {
    let dim = rows.iter().map(|r| r.delta.len()).max().unwrap_or(4);
    let name_w = rows.iter().map(|r| r.instance.len()).max().unwrap_or(0).max("instance".len());
    let mut out = format!("{:<name_w$}  {:>5}  {:>6}  {:>6}", "instance", "Val.", "LOF", "iters.");
    for c in delta_columns(dim) {
        out += &format!("  {c:>9}");
    }
    out.push('\n');
    for r in rows {
        out += &format!("{:<name_w$}  {:>5.2}  {:>6.3}  {:>6.1}", r.instance, r.validity, r.lof, r.iters);
        for d in &r.delta {
            out += &format!("  {:>9}", signed(*d));
        }
        out.push('\n');
    }
    out
}
