//! Markdown tables from run directories: estimator errors, policy gains
//! and the bound sweep summary.

use std::fmt::Write;
use std::path::Path;

use crate::artifacts::read_json;
use crate::error::{CliError, Result};
use crate::policy::{PolicyFile, Stat, POLICY_FILE};
use crate::regret::{RegretSummary, SUMMARY_FILE};
use crate::train::{MetricsFile, METRICS_FILE};

fn pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "n/a".into(),
    }
}

fn stat(s: Option<Stat>) -> String {
    pm(s.map(|s| s.mean), s.map(|s| s.std))
}

pub fn metrics_table(files: &[MetricsFile]) -> String {
    let mut out = String::from("| Method | √MSE | ε_PEHE |\n|---|---|---|\n");
    for f in files {
        for r in &f.summary {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                r.estimator,
                pm(r.rmse_mean, r.rmse_std),
                pm(r.pehe_mean, r.pehe_std)
            );
        }
    }
    out
}

pub fn policy_table(files: &[PolicyFile]) -> String {
    let mut out = String::from("| Estimator | p_t | ΔŜ | ΔS |\n|---|---|---|---|\n");
    for f in files {
        let s = &f.summary;
        let _ =
            writeln!(out, "| {} | {} | {} | {} |", f.estimator, s.p_t, stat(Some(s.delta_s_hat)), stat(s.delta_s_true));
    }
    out
}

pub fn regret_table(files: &[RegretSummary]) -> String {
    let mut out = String::from(
        "| Tail rows | Violations | ω > d²+1 | Tight families | Lipschitz violations |\n|---|---|---|---|---|\n",
    );
    for f in files {
        let tight = if f.tight_families.is_empty() { "none".into() } else { f.tight_families.join(", ") };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            f.concentration_rows, f.concentration_violations, f.omega_cap_breaches, tight, f.lipschitz_violations
        );
    }
    out
}

/// Renders every table for which at least one run directory has data.
pub fn render(dirs: &[&Path]) -> Result<String> {
    let (mut metrics, mut policies, mut regrets) = (Vec::new(), Vec::new(), Vec::new());
    for d in dirs {
        let mut found = false;
        if d.join(METRICS_FILE).exists() {
            metrics.push(read_json::<MetricsFile>(&d.join(METRICS_FILE))?);
            found = true;
        }
        if d.join(POLICY_FILE).exists() {
            policies.push(read_json::<PolicyFile>(&d.join(POLICY_FILE))?);
            found = true;
        }
        if d.join(SUMMARY_FILE).exists() {
            regrets.push(read_json::<RegretSummary>(&d.join(SUMMARY_FILE))?);
            found = true;
        }
        if !found {
            return Err(CliError::config(format!("{} holds no metrics, policy or regret results", d.display())));
        }
    }
    let mut out = String::new();
    if !metrics.is_empty() {
        out.push_str("## Estimation error (test split)\n\n");
        out.push_str(&metrics_table(&metrics));
    }
    if !policies.is_empty() {
        out.push_str(if out.is_empty() { "" } else { "\n" });
        out.push_str("## Policy improvement over random\n\n");
        out.push_str(&policy_table(&policies));
    }
    if !regrets.is_empty() {
        out.push_str(if out.is_empty() { "" } else { "\n" });
        out.push_str("## Bound checks\n\n");
        out.push_str(&regret_table(&regrets));
    }
    Ok(out)
}
