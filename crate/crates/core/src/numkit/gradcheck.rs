use crate::error::{Error, Result};
use crate::numkit::params::Params;
use crate::numkit::tape::{Tape, Var};
use crate::scalar::Scalar;

/// Relative error denominators never drop below this.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares tape adjoints against central differences with step `h` for
/// every scalar in `params`. `loss_fn` must build a deterministic 1x1 loss
/// from the attached parameter vars.
pub fn grad_check<F, L>(params: &Params<F>, h: f64, mut loss_fn: L) -> Result<GradCheckReport>
where
    F: Scalar,
    L: FnMut(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape, true);
    let loss = loss_fn(&mut tape, &vars)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    tape.backward(loss)?;
    let analytic = params.collect_grads(&tape, &vars);

    let mut eval = |p: &Params<F>| -> Result<f64> {
        let mut t = Tape::new();
        let v = p.attach(&mut t, false);
        let l = loss_fn(&mut t, &v)?;
        let val = t.scalar(l).as_f64();
        if !val.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        Ok(val)
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_param: String::new(), worst_index: 0, checked: 0 };
    for k in 0..params.len() {
        for idx in 0..params.values()[k].len() {
            let orig = params.values()[k].data()[idx];
            probe.values_mut()[k].data_mut()[idx] = orig + F::lit(h);
            let up = eval(&probe)?;
            probe.values_mut()[k].data_mut()[idx] = orig - F::lit(h);
            let down = eval(&probe)?;
            probe.values_mut()[k].data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[idx].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params.name(crate::numkit::params::ParamId(k)).to_string();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
