//! Central-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it stays independent of
//! the backward rules it validates.

use crate::error::Result;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over all inputs,
    /// or the absolute error when both gradients are below `1e-10`.
    pub fn relative_error(&self) -> f64 {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for (a, n) in self.analytic.iter().zip(&self.numeric) {
            for (x, y) in a.iter().zip(n) {
                diff += (x - y) * (x - y);
                na += x * x;
                nn += y * y;
            }
        }
        let scale = na.sqrt().max(nn.sqrt());
        if scale < 1e-10 {
            diff.sqrt()
        } else {
            diff.sqrt() / scale
        }
    }
}

/// Compares the tape gradient of the scalar produced by `f` with central
/// differences of step `h` for every input tensor.
///
/// `f` must be deterministic (seed any randomness inside it).
pub fn check<F>(inputs: &[(Vec<f64>, Vec<usize>)], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Vec<f64>], track: bool| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| tape.leaf(v.clone(), shape, track))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let (mut tape, vars, out) = eval(&base, true)?;
    tape.backward(out)?;
    let analytic = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; base[i].len()];
        for j in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][j] += h;
            let mut minus = base.clone();
            minus[i][j] -= h;
            let (tp, _, op) = eval(&plus, false)?;
            let (tm, _, om) = eval(&minus, false)?;
            g[j] = (tp.value(op)[0] - tm.value(om)[0]) / (2.0 * h);
        }
        numeric.push(g);
    }
    Ok(GradCheck { analytic, numeric })
}
