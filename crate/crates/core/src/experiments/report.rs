use std::io::Write;

use super::{AblationCurve, EvalRow};

pub const EVAL_HEADER: &str = "model,seed,precision,recall,f1,lambda,params";
pub const ABLATION_HEADER: &str = "fraction,seed,gnn_f1,mlp_f1";

/// Six decimals; infinities print as `inf` / `-inf`.
pub fn format_fixed(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.6}")
    }
}

pub fn write_eval_csv<W: Write>(mut out: W, rows: &[EvalRow]) -> std::io::Result<()> {
    writeln!(out, "{EVAL_HEADER}")?;
    for r in rows {
        let e = &r.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model,
            r.seed,
            format_fixed(e.precision),
            format_fixed(e.recall),
            format_fixed(e.f1),
            format_fixed(e.lambda),
            r.params
        )?;
    }
    Ok(())
}

pub fn write_ablation_csv<W: Write>(mut out: W, curve: &AblationCurve) -> std::io::Result<()> {
    writeln!(out, "{ABLATION_HEADER}")?;
    for p in &curve.points {
        writeln!(
            out,
            "{},{},{},{}",
            format_fixed(p.fraction),
            p.seed,
            format_fixed(p.gnn_f1),
            format_fixed(p.mlp_f1)
        )?;
    }
    Ok(())
}
