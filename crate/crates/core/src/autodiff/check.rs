//! Finite-difference gradient checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

use super::{Tape, Var};

/// Which coordinates of each input tensor are perturbed.
#[derive(Clone, Copy, Debug)]
pub enum CoordSelection {
    All,
    /// At most `per_tensor` coordinates per input, chosen with `seed`.
    Sampled { per_tensor: usize, seed: u64 },
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central finite differences with the given `step`.
pub fn grad_check<F>(f: F, x: &RealTensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        step,
        CoordSelection::All,
    )
}

/// [`grad_check`] over several input tensors.
pub fn grad_check_many<F>(f: F, inputs: &[RealTensor], step: f64, coords: CoordSelection) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("grad_check step must be > 0, got {step}")));
    }
    let eval = |values: &[RealTensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape
            .value(out)
            .item()
            .ok_or_else(|| Error::Contract("grad_check needs a scalar function".into()))?;
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v0 = tape
        .value(out)
        .item()
        .ok_or_else(|| Error::Contract("grad_check needs a scalar function".into()))?;
    if !v0.is_finite() {
        return Err(Error::Evaluation(format!("function value {v0} is not finite")));
    }
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut values = inputs.to_vec();
    for (t_idx, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var)?.clone();
        let n = inputs[t_idx].numel();
        let picks: Vec<usize> = match coords {
            CoordSelection::All => (0..n).collect(),
            CoordSelection::Sampled { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t_idx as u64));
                let mut v = sample(&mut rng, n, per_tensor.min(n)).into_vec();
                v.sort_unstable();
                v
            }
        };
        for j in picks {
            let orig = values[t_idx].data()[j];
            values[t_idx].data_mut()[j] = orig + step;
            let fp = eval(&values)?;
            values[t_idx].data_mut()[j] = orig - step;
            let fm = eval(&values)?;
            values[t_idx].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}
