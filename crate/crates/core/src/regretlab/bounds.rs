use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the covering number of the policy class is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Covering {
    /// |Π| at every radius.
    #[default]
    Finite,
    /// (1 + 2/r)^dim: a dim-parameter class with outputs in [0, 1].
    Parametric { dim: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub n: usize,
    pub d_max: usize,
    /// Bound on |τ|.
    pub m1: f64,
    /// Bound on |δ|.
    pub m2: f64,
    /// Lipschitz constant of the spillover in the policy.
    pub l: f64,
    pub pi_class_size: f64,
    /// Failure probability δ of the high-probability statement.
    pub delta_conf: f64,
    pub alpha_tau: f64,
    pub alpha_delta: f64,
    pub zeta_tau: f64,
    pub zeta_delta: f64,
    #[serde(default)]
    pub p_t: Option<f64>,
    #[serde(default)]
    pub covering: Covering,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if !(self.m1 > 0.0 && self.m2 > 0.0 && self.l > 0.0) {
            return Err(Error::invalid("M1, M2 and L must be positive"));
        }
        for z in [self.zeta_tau, self.zeta_delta] {
            if !(z > 0.0 && z < 1.0) {
                return Err(Error::invalid(format!("rate exponents must lie in (0, 1), got {z}")));
            }
        }
        if !(self.alpha_tau >= 0.0 && self.alpha_delta >= 0.0) {
            return Err(Error::invalid("rate constants must be nonnegative"));
        }
        if !(self.delta_conf > 0.0 && self.delta_conf < 1.0) {
            return Err(Error::invalid("confidence δ must lie in (0, 1)"));
        }
        if !(self.pi_class_size >= 1.0) {
            return Err(Error::invalid("policy class size must be at least 1"));
        }
        if let Some(p) = self.p_t {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("p_t must lie in (0, 1), got {p}")));
            }
        }
        if let Covering::Parametric { dim } = self.covering {
            if !(dim > 0.0) {
                return Err(Error::invalid("covering dimension must be positive"));
            }
        }
        Ok(())
    }

    fn m(&self) -> f64 {
        self.m1 + self.m2
    }

    fn dep(&self) -> f64 {
        (self.d_max * self.d_max + 1) as f64
    }
}

/// High-probability regret bound of the unconstrained (or, with p_t,
/// capacity-constrained) policy learner.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretBound {
    pub inputs: BoundInputs,
    pub constrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub d_max: usize,
    pub constrained: bool,
    pub estimation: f64,
    pub eps_star: f64,
    /// estimation + 2ε* at confidence 1 − δ.
    pub total: f64,
    /// Finite-class closed form 8(M1+M2)√(2(d²+1)/n · ln(|Π|/δ)) plus the
    /// estimation term.
    pub display_total: f64,
}

pub fn regret_bound(inputs: BoundInputs, constrained: bool) -> Result<RegretBound> {
    inputs.validate()?;
    if constrained && inputs.p_t.is_none() {
        return Err(Error::invalid("the constrained bound needs p_t"));
    }
    Ok(RegretBound { inputs, constrained })
}

impl RegretBound {
    /// 2(α_τ/n^ζ_τ + α_δ/n^ζ_δ).
    pub fn estimation(&self) -> f64 {
        let b = &self.inputs;
        let n = b.n as f64;
        2.0 * (b.alpha_tau / n.powf(b.zeta_tau) + b.alpha_delta / n.powf(b.zeta_delta))
    }

    pub fn regret(&self, eps: f64) -> f64 {
        self.estimation() + 2.0 * eps
    }

    /// Covering radius at which the policy class must be covered.
    pub fn radius(&self, eps: f64) -> f64 {
        let b = &self.inputs;
        if self.constrained {
            let p = b.p_t.expect("validated");
            eps / (8.0 * ((b.m() + b.l) + b.m() / p))
        } else {
            eps / (4.0 * (2.0 * b.m1 + 2.0 * b.m2 + b.l))
        }
    }

    pub fn covering_number(&self, eps: f64) -> f64 {
        match self.inputs.covering {
            Covering::Finite => self.inputs.pi_class_size,
            Covering::Parametric { dim } => (1.0 + 2.0 / self.radius(eps)).powf(dim),
        }
    }

    /// 𝒩·exp(−nε² / (32(d²+1)(M1+M2)²)), not truncated at 1.
    pub fn failure_probability(&self, eps: f64) -> f64 {
        let b = &self.inputs;
        let expo = -(b.n as f64) * eps * eps / (32.0 * b.dep() * b.m() * b.m());
        self.covering_number(eps) * expo.exp()
    }

    /// Smallest ε whose failure probability is at most δ.
    pub fn eps_star(&self) -> f64 {
        let b = &self.inputs;
        let scale = 32.0 * b.dep() / b.n as f64;
        match b.covering {
            Covering::Finite => b.m() * (scale * (b.pi_class_size / b.delta_conf).ln().max(0.0)).sqrt(),
            Covering::Parametric { .. } => {
                // failure probability is decreasing in ε
                let target = b.delta_conf.ln();
                let f = |e: f64| self.failure_probability(e).ln() - target;
                let (mut lo, mut hi) = (1e-12, b.m());
                while f(hi) > 0.0 {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    pub fn display_total(&self) -> f64 {
        let b = &self.inputs;
        let root = (2.0 * b.dep() / b.n as f64 * (b.pi_class_size / b.delta_conf).ln().max(0.0)).sqrt();
        self.estimation() + 8.0 * b.m() * root
    }

    pub fn report(&self) -> BoundReport {
        let eps = self.eps_star();
        BoundReport {
            n: self.inputs.n,
            d_max: self.inputs.d_max,
            constrained: self.constrained,
            estimation: self.estimation(),
            eps_star: eps,
            total: self.regret(eps),
            display_total: self.display_total(),
        }
    }
}

/// Leading term √(D³ ln D / n) of the estimator error, D = 1 + d + d².
pub fn claim1_value(d_max: usize, n: usize) -> f64 {
    let d = (1 + d_max + d_max * d_max) as f64;
    (d.powi(3) * d.ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim1Row {
    pub d_max: usize,
    pub n: usize,
    pub value: f64,
}

pub fn claim1_curve(d_max_grid: &[usize], n_grid: &[usize]) -> Result<Vec<Claim1Row>> {
    if d_max_grid.is_empty() || n_grid.is_empty() || d_max_grid.contains(&0) || n_grid.contains(&0) {
        return Err(Error::invalid("grids must be nonempty and positive"));
    }
    Ok(d_max_grid
        .iter()
        .flat_map(|&d| n_grid.iter().map(move |&n| Claim1Row { d_max: d, n, value: claim1_value(d, n) }))
        .collect())
}
