use alloc::string::String;
use alloc::vec::Vec;

use super::store::{ParamId, ParameterStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared absolutely.
pub const TINY_GRAD: f64 = 1e-6;
pub const TINY_TOL: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_error: f64,
    pub checked: usize,
    pub passed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn passed(&self) -> usize {
        self.params.iter().map(|p| p.passed).sum()
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.checked() == 0 {
            return 1.0;
        }
        self.passed() as f64 / self.checked() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_error).fold(0.0, f64::max)
    }
}

/// Error between an analytic and a numeric derivative: relative, or absolute when both are tiny.
pub fn grad_error(analytic: f64, numeric: f64) -> (f64, bool) {
    let scale = analytic.abs().max(numeric.abs());
    if scale < TINY_GRAD {
        ((analytic - numeric).abs(), true)
    } else {
        ((analytic - numeric).abs() / scale, false)
    }
}

/// Compares tape gradients against central differences for every scalar parameter.
///
/// `forward` must record the loss on a fresh tape and be deterministic in the parameters.
pub fn gradcheck<F>(store: &mut ParameterStore<f64>, h: f64, tol: f64, mut forward: F) -> Result<GradcheckReport>
where
    F: FnMut(&ParameterStore<f64>) -> Result<(Tape<f64>, NodeId)>,
{
    let eval = |f: &mut F, s: &ParameterStore<f64>| -> Result<f64> {
        let (tape, loss) = f(s)?;
        Ok(tape.value(loss).data()[0])
    };
    store.zero_grad();
    let (tape, loss) = forward(store)?;
    let base = tape.value(loss).data()[0];
    if eval(&mut forward, store)?.to_bits() != base.to_bits() {
        return Err(Error::Usage("loss closure is not deterministic".into()));
    }
    tape.backward(loss, store)?;
    drop(tape);

    let mut params = Vec::with_capacity(store.len());
    for pi in 0..store.len() {
        let id = ParamId(pi);
        let n = store.get(id).value.len();
        let mut check = ParamCheck { name: store.get(id).name.clone(), max_error: 0.0, checked: 0, passed: 0 };
        for j in 0..n {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let up = eval(&mut forward, store)?;
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let down = eval(&mut forward, store)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = store.get(id).grad.data()[j];
            let (err, tiny) = grad_error(analytic, numeric);
            check.checked += 1;
            if err <= if tiny { TINY_TOL } else { tol } {
                check.passed += 1;
            }
            if !tiny {
                check.max_error = check.max_error.max(err);
            }
        }
        params.push(check);
    }
    store.zero_grad();
    Ok(GradcheckReport { params, tolerance: tol })
}
