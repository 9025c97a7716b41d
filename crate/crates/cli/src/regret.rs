//! Bound verification sweep: hypergraph degrees, Monte-Carlo tails,
//! regret bound values, the d_max/n curve and the Lipschitz check.

use std::path::Path;

use netcausal::graph::{path_graph, random_graph, random_regular_graph, ring_graph, star_graph};
use netcausal::regretlab::{
    build_hypergraph, claim1_curve, concentration_check, eps_grid, lipschitz_check, lipschitz_tight_ratio,
    regret_bound, BoundReport,
};
use netcausal::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_csv, write_json, Manifest};
use crate::config::{run_seed, ExperimentConfig, Family};
use crate::error::Result;

pub fn build_family(f: Family, n: usize, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match f {
        Family::Edgeless => Graph::empty(n),
        Family::Path => path_graph(n),
        Family::Ring => ring_graph(n),
        Family::Star => star_graph(n),
        Family::Regular { d } => random_regular_graph(n, d, &mut rng)?,
        Family::Random { p } => random_graph(n, p, &mut rng),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypergraphRow {
    pub family: String,
    pub n: usize,
    pub edges: usize,
    pub d_max: usize,
    pub omega: usize,
    /// d_max² + 1.
    pub omega_cap: usize,
    pub tight: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub family: String,
    pub n: usize,
    pub omega: usize,
    pub eps: f64,
    pub empirical: f64,
    pub bound: f64,
    pub se: f64,
    pub violation: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub family: String,
    pub n: usize,
    pub d_max: usize,
    pub constrained: bool,
    pub estimation: f64,
    pub eps_star: f64,
    pub total: f64,
    pub display_total: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim1CsvRow {
    pub d_max: usize,
    pub n: usize,
    pub value: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub family: String,
    pub n: usize,
    pub pairs: usize,
    pub max_ratio: f64,
    /// α·max|τ|.
    pub bound: f64,
    pub violations: usize,
    /// Ratio of the constant-effect witness; equals α·M1 off edgeless graphs.
    pub tight_ratio: f64,
    pub tight_target: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub config_hash: String,
    pub seed: u64,
    pub concentration_rows: usize,
    pub concentration_violations: usize,
    /// Families whose hypergraph reaches ω = d_max² + 1.
    pub tight_families: Vec<String>,
    pub omega_cap_breaches: usize,
    pub lipschitz_violations: usize,
    pub bounds: Vec<BoundReport>,
}

pub const SUMMARY_FILE: &str = "regret.json";
const FILES: [&str; 5] = ["hypergraph.csv", "concentration.csv", "bounds.csv", "claim1.csv", "lipschitz.csv"];

/// Runs the whole sweep and writes the CSV tables plus a JSON summary.
pub fn cmd_regret(cfg: &ExperimentConfig, out: &Path) -> Result<RegretSummary> {
    cfg.validate()?;
    let r = &cfg.regret;
    let hash = cfg.hash();
    let grid = eps_grid(r.eps_lo, r.eps_hi, r.eps_points);
    let (mut hyper, mut conc, mut bounds, mut lips) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut reports = Vec::new();
    let mut idx = 0;
    for &family in &r.families {
        for &n in &r.sizes {
            let seed = run_seed(cfg.seed, idx);
            idx += 1;
            let label = family.label();
            let g = build_family(family, n, seed)?;
            let h = build_hypergraph(&g);
            let d = g.d_max();
            let cap = d * d + 1;
            hyper.push(HypergraphRow {
                family: label.clone(),
                n,
                edges: g.num_edges(),
                d_max: d,
                omega: h.omega,
                omega_cap: cap,
                tight: h.omega == cap,
                config_hash: hash.clone(),
            });

            let rep = concentration_check(&g, r.xi, r.trials, &grid, seed)?;
            log::info!("{label} n={n}: ω={} violations {}", rep.omega, rep.violations());
            conc.extend(rep.rows.iter().map(|t| ConcentrationRow {
                family: label.clone(),
                n,
                omega: rep.omega,
                eps: t.eps,
                empirical: t.empirical,
                bound: t.bound,
                se: t.se,
                violation: t.violation,
                config_hash: hash.clone(),
            }));

            let modes = if r.bound.p_t.is_some() { &[false, true][..] } else { &[false][..] };
            for &constrained in modes {
                let b = regret_bound(r.bound.inputs(n, d), constrained)?.report();
                bounds.push(BoundRow {
                    family: label.clone(),
                    n,
                    d_max: d,
                    constrained,
                    estimation: b.estimation,
                    eps_star: b.eps_star,
                    total: b.total,
                    display_total: b.display_total,
                    config_hash: hash.clone(),
                });
                reports.push(b);
            }

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(3);
            let tau: Vec<f64> = (0..n).map(|_| rng.random_range(-r.bound.m1..=r.bound.m1)).collect();
            let lip = lipschitz_check(&g, &tau, r.lipschitz_alpha, r.lipschitz_pairs, &mut rng)?;
            let tight = lipschitz_tight_ratio(&g, r.bound.m1, r.lipschitz_alpha, 1.0)?.unwrap_or(0.0);
            lips.push(LipschitzRow {
                family: label,
                n,
                pairs: lip.pairs,
                max_ratio: lip.max_ratio,
                bound: lip.bound,
                violations: lip.violations,
                tight_ratio: tight,
                tight_target: if g.num_edges() > 0 { r.lipschitz_alpha * r.bound.m1 } else { 0.0 },
                config_hash: hash.clone(),
            });
        }
    }
    let claim: Vec<Claim1CsvRow> = claim1_curve(&r.claim1_d, &r.claim1_n)?
        .into_iter()
        .map(|c| Claim1CsvRow { d_max: c.d_max, n: c.n, value: c.value, config_hash: hash.clone() })
        .collect();

    write_csv(&out.join(FILES[0]), &hyper)?;
    write_csv(&out.join(FILES[1]), &conc)?;
    write_csv(&out.join(FILES[2]), &bounds)?;
    write_csv(&out.join(FILES[3]), &claim)?;
    write_csv(&out.join(FILES[4]), &lips)?;

    let mut tight_families: Vec<String> = hyper.iter().filter(|h| h.tight).map(|h| h.family.clone()).collect();
    tight_families.dedup();
    let summary = RegretSummary {
        config_hash: hash,
        seed: cfg.seed,
        concentration_rows: conc.len(),
        concentration_violations: conc.iter().filter(|c| c.violation).count(),
        tight_families,
        omega_cap_breaches: hyper.iter().filter(|h| h.omega > h.omega_cap).count(),
        lipschitz_violations: lips.iter().map(|l| l.violations).sum(),
        bounds: reports,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    let mut manifest = Manifest::new("regret", cfg);
    manifest.files.extend(FILES.iter().map(|s| s.to_string()));
    manifest.files.push(SUMMARY_FILE.into());
    manifest.write(out)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_have_expected_degrees() {
        assert_eq!(build_family(Family::Edgeless, 10, 0).unwrap().d_max(), 0);
        assert_eq!(build_family(Family::Path, 10, 0).unwrap().d_max(), 2);
        assert_eq!(build_family(Family::Ring, 10, 0).unwrap().d_max(), 2);
        assert_eq!(build_family(Family::Star, 10, 0).unwrap().d_max(), 9);
        let g = build_family(Family::Regular { d: 3 }, 10, 4).unwrap();
        assert!((0..10).all(|i| g.degree(i) == 3));
    }
}
