//! Central finite-difference verification of tape gradients.

use super::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: Option<(usize, usize)>,
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step `h` for every coordinate of every input.
///
/// `f` receives a fresh tape with the inputs bound as differentiable leaves.
/// `perturb_analytic` is added to each analytic gradient entry and exists so
/// callers can check that a broken gradient is caught.
pub fn finite_difference_check<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    perturb_analytic: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for c in 0..inputs[k].numel() {
            let orig = inputs[k].data()[c];
            work[k].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[c] + perturb_analytic;
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((k, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, &[5]);
        let r = finite_difference_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.reduce_sum(sq, None)
            },
            &[x],
            1e-5,
            0.0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.coordinates, 5);
    }

    #[test]
    fn detects_corrupted_gradient() {
        let x = Tensor::new(vec![3], vec![0.3, -0.2, 0.9]).unwrap();
        let r = finite_difference_check(|t, v| t.reduce_sum(v[0], None), &[x], 1e-5, 1e-2).unwrap();
        assert!(r.max_rel_error > 1e-3);
    }

    #[test]
    fn backward_is_deterministic_and_additive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[3, 3]);
        let run = || {
            let mut t = Tape::new();
            let v = t.param(x.clone());
            let a = t.tanh(v);
            let fa = t.reduce_sum(a, None).unwrap();
            let b = t.mul(v, v).unwrap();
            let fb = t.reduce_sum(b, None).unwrap();
            let s = t.add(fa, fb).unwrap();
            let g = t.backward(s).unwrap().wrt(v);
            let ga = t.backward(fa).unwrap().wrt(v);
            let gb = t.backward(fb).unwrap().wrt(v);
            (g, ga, gb)
        };
        let (g1, ga, gb) = run();
        let (g2, _, _) = run();
        assert_eq!(g1.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), g2.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        for ((s, a), b) in g1.data().iter().zip(ga.data()).zip(gb.data()) {
            assert!((s - (a + b)).abs() < 1e-15);
        }
    }
}
