//! Central finite differences, the independent oracle the analytic
//! derivatives are tested against.
//!
//! The oracle only ever calls [`Expr::eval`]; it never touches the jet
//! propagation or the reverse sweep, so agreement between the two is a
//! meaningful check.

use super::{Bindings, EvalError, Expr};
use crate::params::{ParamId, ParamStore};

/// What to differentiate with respect to.
#[derive(Debug, Clone, Copy)]
pub enum Wrt<'a> {
    Input(&'a str),
    Param(ParamId),
}

/// Central-difference estimate `(f(·+h) − f(·−h)) / 2h`, second order in `h`.
pub fn fd_oracle(
    expr: &Expr,
    inputs: &Bindings,
    params: &ParamStore,
    wrt: Wrt<'_>,
    h: f64,
) -> Result<f64, EvalError> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let compiled = expr.compile()?;
    let (hi, lo) = match wrt {
        Wrt::Input(name) => {
            let x = inputs
                .get(name)
                .ok_or_else(|| EvalError::UnboundInput(name.to_string()))?;
            let mut up = inputs.clone();
            up.set(name, x + h);
            let mut dn = inputs.clone();
            dn.set(name, x - h);
            (compiled.eval(&up, params)?, compiled.eval(&dn, params)?)
        }
        Wrt::Param(id) => {
            let mut shifted = params.clone();
            let x = shifted.get(id);
            shifted.set(id, x + h);
            let hi = compiled.eval(inputs, &shifted)?;
            shifted.set(id, x - h);
            let lo = compiled.eval(inputs, &shifted)?;
            (hi, lo)
        }
    };
    Ok((hi - lo) / (2.0 * h))
}
