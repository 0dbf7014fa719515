//! Plain-text tables for terminal output and `report.txt`.

use crate::pipeline::RecipeOutcome;
use nudgenet_core::evaluate::TheoremReport;

/// Left-aligned first column, right-aligned numeric columns.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate().take(cols) {
            if i == 0 {
                s.push_str(&format!("{c:<w$}", w = widths[i]));
            } else {
                s.push_str(&format!("  {c:>w$}", w = widths[i]));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn recipe_table(outcomes: &[&RecipeOutcome]) -> String {
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.recipe.clone(),
                num(o.nudging.rmse),
                format!("{:.4}", o.benchmark_nudging),
                num(o.dnn.rmse),
                format!("{:.4}", o.benchmark_dnn),
                num(o.ratio),
                o.dnn.failed_runs.len().to_string(),
            ]
        })
        .collect();
    table(
        &[
            "case",
            "nudging",
            "bench",
            "dnn",
            "bench",
            "dnn/nudging",
            "dnn failures",
        ],
        &rows,
    )
}

pub fn theorem_table(report: &TheoremReport) -> String {
    let rows: Vec<Vec<String>> = report
        .refs
        .iter()
        .map(|r| {
            vec![
                r.ref_id.to_string(),
                format!("{:.3e}", r.v0),
                format!("{:.3e}", r.v_final),
                num(r.max_envelope_ratio),
                r.max_window_ratio
                    .map_or_else(|| "n/a".into(), |v| format!("{v:.10}")),
                format!("{:.3e}", r.max_norm_sq),
                if r.passed {
                    "ok".into()
                } else {
                    r.failure.clone().unwrap_or_else(|| "FAIL".into())
                },
            ]
        })
        .collect();
    let b = &report.bounds;
    let mut out = format!(
        "mu {} delta {}  mu_min {:.4}  delta_max {:.4e}  gamma {:.12}  hypotheses {}\n\n",
        b.mu,
        b.delta,
        b.mu_min,
        b.delta_max,
        b.gamma,
        if report.hypotheses_satisfied {
            "satisfied"
        } else {
            "NOT satisfied"
        },
    );
    out.push_str(&table(
        &[
            "ref",
            "V(0)",
            "V(end)",
            "envelope",
            "window ratio",
            "max |w|^2",
            "status",
        ],
        &rows,
    ));
    out
}
