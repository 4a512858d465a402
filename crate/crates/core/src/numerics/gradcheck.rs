use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn evaluate<G>(f: &G, inputs: &[Tensor<f64>]) -> Result<f64>
where
    G: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::Contract("checked function must return a scalar".into()));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, for all coordinates or the listed `(input, coordinate)` pairs.
pub fn grad_check_inputs<G>(
    f: G,
    inputs: &[Tensor<f64>],
    h: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step {h}")));
    }
    evaluate(&f, inputs)?;

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, x)| {
                grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; x.numel()])
            })
            .collect()
    };

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, x)| (0..x.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for &(i, j) in coords {
        if i >= work.len() || j >= work[i].numel() {
            return Err(Error::invalid(format!("coordinate ({i}, {j}) out of range")));
        }
        let x0 = work[i].data()[j];
        let step = h * x0.abs().max(1.0);
        work[i].data_mut()[j] = x0 + step;
        let plus = evaluate(&f, &work)?;
        work[i].data_mut()[j] = x0 - step;
        let minus = evaluate(&f, &work)?;
        work[i].data_mut()[j] = x0;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i][j];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (i, j);
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Directional check: compares `<grad f, u>` with the central difference of
/// `f` along `u`, one direction per input tensor. Returns the relative error
/// for each input (0 for inputs whose direction is `None`).
pub fn grad_check_directions<G>(
    f: G,
    inputs: &[Tensor<f64>],
    directions: &[Option<Tensor<f64>>],
    h: f64,
) -> Result<Vec<f64>>
where
    G: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step {h}")));
    }
    if directions.len() != inputs.len() {
        return Err(Error::invalid("one direction slot per input".to_string()));
    }
    let grads: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, x)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]))
            .collect()
    };
    let mut work = inputs.to_vec();
    let mut errors = vec![0.0; inputs.len()];
    for (i, u) in directions.iter().enumerate() {
        let Some(u) = u else { continue };
        if u.shape() != inputs[i].shape() {
            return Err(Error::shape("grad_check_directions", inputs[i].shape(), u.shape()));
        }
        let scale = inputs[i].data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let step = h * scale;
        let shifted = |sign: f64| {
            Tensor::from_fn(inputs[i].shape(), |j| inputs[i].data()[j] + sign * step * u.data()[j])
        };
        work[i] = shifted(1.0);
        let plus = evaluate(&f, &work)?;
        work[i] = shifted(-1.0);
        let minus = evaluate(&f, &work)?;
        work[i] = inputs[i].clone();
        let numeric = (plus - minus) / (2.0 * step);
        let a: f64 = grads[i].iter().zip(u.data()).map(|(g, d)| g * d).sum();
        errors[i] = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
    }
    Ok(errors)
}

/// Maximum relative error of the gradient of `f` at `x`.
pub fn grad_check<G>(f: G, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    G: Fn(&mut Tape<'_, f64>, Var) -> Result<Var>,
{
    grad_check_inputs(|t, v| f(t, v[0]), std::slice::from_ref(x), h, None)
        .map(|r| r.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::from_fn(&[6], |i| i as f64 * 0.7 - 1.3);
        let err = grad_check(
            |t, x| {
                let sq = ops::mul(t, x, x)?;
                ops::sum(t, sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn directional_matches_quadratic() {
        let x = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let u = Tensor::from_fn(&[5], |i| if i % 2 == 0 { 0.5 } else { -0.25 });
        let errs = grad_check_directions(
            |t, v| {
                let sq = ops::mul(t, v[0], v[0])?;
                ops::sum(t, sq)
            },
            std::slice::from_ref(&x),
            &[Some(u)],
            1e-5,
        )
        .unwrap();
        assert!(errs[0] < 1e-8, "{errs:?}");
    }

    #[test]
    fn zero_step_rejected() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(
            grad_check(|t, x| ops::sum(t, x), &x, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_function_rejected() {
        let x = Tensor::full(&[1], 1000.0f64);
        let r = grad_check(
            |t, x| {
                let e = ops::unary(t, ops::Unary::Expm1, x)?;
                ops::sum(t, e)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
