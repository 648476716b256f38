//! The two levels of a first-order MAML update, independent of the model.

use crate::diff::{Optimizer, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Loss value and one gradient vector per parameter set.
pub type LossGrads<T> = (f64, Vec<Vec<Tensor<T>>>);

/// Runs `n_inner` steps on `adapted` in place; `grad` evaluates the inner
/// loss at the current point and receives the step index. Returns the loss
/// of every step.
pub fn inner_loop<T, F>(
    adapted: &mut [ParamSet<T>],
    opts: &mut [Optimizer<T>],
    lr: f64,
    n_inner: usize,
    mut grad: F,
) -> Result<Vec<f64>>
where
    T: Scalar,
    F: FnMut(usize, &[ParamSet<T>]) -> Result<LossGrads<T>>,
{
    if opts.len() != adapted.len() {
        return Err(Error::ParamMismatch(format!(
            "{} optimizers for {} parameter sets",
            opts.len(),
            adapted.len()
        )));
    }
    let mut losses = Vec::with_capacity(n_inner);
    for step in 0..n_inner {
        let (loss, grads) = grad(step, adapted)?;
        apply(adapted, opts, grads, lr)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Evaluates the outer loss and its gradient at `at` (the adapted point)
/// and applies that gradient to `targets`.
pub fn outer_step<T, F>(
    targets: &mut [ParamSet<T>],
    opts: &mut [Optimizer<T>],
    lr: f64,
    at: &[ParamSet<T>],
    grad: F,
) -> Result<f64>
where
    T: Scalar,
    F: FnOnce(&[ParamSet<T>]) -> Result<LossGrads<T>>,
{
    if targets.len() != at.len() || opts.len() != targets.len() {
        return Err(Error::ParamMismatch(format!(
            "{} targets, {} adapted sets, {} optimizers",
            targets.len(),
            at.len(),
            opts.len()
        )));
    }
    for (t, a) in targets.iter().zip(at) {
        t.check_layout(a)?;
    }
    let (loss, grads) = grad(at)?;
    apply(targets, opts, grads, lr)?;
    Ok(loss)
}

fn apply<T: Scalar>(
    params: &mut [ParamSet<T>],
    opts: &mut [Optimizer<T>],
    grads: Vec<Vec<Tensor<T>>>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ParamMismatch(format!(
            "{} gradient sets for {} parameter sets",
            grads.len(),
            params.len()
        )));
    }
    for ((p, o), g) in params.iter_mut().zip(opts.iter_mut()).zip(grads) {
        o.apply(p, g, lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Group;

    // Linear model y = a x + b with squared error averaged over the points.
    type Points = [(f64, f64)];

    fn mse_grad(a: f64, b: f64, pts: &Points) -> (f64, f64, f64) {
        let n = pts.len() as f64;
        let (mut l, mut ga, mut gb) = (0.0, 0.0, 0.0);
        for &(x, y) in pts {
            let r = a * x + b - y;
            l += r * r / n;
            ga += 2.0 * r * x / n;
            gb += 2.0 * r / n;
        }
        (l, ga, gb)
    }

    fn set(a: f64, b: f64) -> ParamSet<f64> {
        ParamSet::new(Group::Other)
            .with("a", Tensor::scalar(a))
            .unwrap()
            .with("b", Tensor::scalar(b))
            .unwrap()
    }

    fn ab(p: &ParamSet<f64>) -> (f64, f64) {
        (p.tensors()[0].item().unwrap(), p.tensors()[1].item().unwrap())
    }

    fn grad_on(pts: &'static Points) -> impl Fn(&[ParamSet<f64>]) -> Result<LossGrads<f64>> {
        move |p: &[ParamSet<f64>]| {
            let (a, b) = ab(&p[0]);
            let (l, ga, gb) = mse_grad(a, b, pts);
            Ok((l, vec![vec![Tensor::scalar(ga), Tensor::scalar(gb)]]))
        }
    }

    const TR: &Points = &[(1.0, 2.0), (2.0, 3.5), (-1.0, 0.0)];
    const VAL: &Points = &[(0.5, 1.0), (3.0, 5.0)];

    fn fomaml(n_inner: usize, (lr_in, lr_out): (f64, f64)) -> (f64, f64) {
        let mut theta = vec![set(0.3, -0.2)];
        let mut adapted = vec![theta[0].copy_params()];
        let g = grad_on(TR);
        inner_loop(&mut adapted, &mut [Optimizer::Sgd], lr_in, n_inner, |_, p| g(p)).unwrap();
        outer_step(&mut theta, &mut [Optimizer::Sgd], lr_out, &adapted, grad_on(VAL)).unwrap();
        ab(&theta[0])
    }

    #[test]
    fn hand_traced_two_level_updates() {
        // Inner gradients on TR at (0.3, -0.2):
        //   residuals r = (-1.9, -3.1, -0.5), ga = 2/3 (-1.9 - 6.2 + 0.5) = -5.0666..,
        //   gb = 2/3 (-5.5) = -3.6666..
        let lr = (0.1, 0.05);
        let (a0, b0) = (0.3, -0.2);
        let ga0 = 2.0 / 3.0 * (-1.9 * 1.0 + -3.1 * 2.0 + -0.5 * -1.0);
        let gb0 = 2.0 / 3.0 * (-1.9 - 3.1 - 0.5);
        let (a1, b1) = (a0 - 0.1 * ga0, b0 - 0.1 * gb0);
        // Outer gradient on VAL at the adapted point.
        let (r1, r2) = (a1 * 0.5 + b1 - 1.0, a1 * 3.0 + b1 - 5.0);
        let (gav, gbv) = (r1 * 0.5 + r2 * 3.0, r1 + r2);
        let expect = (a0 - 0.05 * gav, b0 - 0.05 * gbv);
        let got = fomaml(1, lr);
        assert!((got.0 - expect.0).abs() < 1e-10 && (got.1 - expect.1).abs() < 1e-10, "{got:?} vs {expect:?}");
    }

    #[test]
    fn zero_inner_steps_is_a_plain_step() {
        let (gav, gbv) = {
            let (r1, r2) = (0.3 * 0.5 - 0.2 - 1.0, 0.3 * 3.0 - 0.2 - 5.0);
            (r1 * 0.5 + r2 * 3.0, r1 + r2)
        };
        let got = fomaml(0, (0.1, 0.05));
        assert!((got.0 - (0.3 - 0.05 * gav)).abs() < 1e-12);
        assert!((got.1 - (-0.2 - 0.05 * gbv)).abs() < 1e-12);
    }

    #[test]
    fn two_inner_steps_follow_the_recursion() {
        let mut p = (0.3, -0.2);
        for _ in 0..2 {
            let (_, ga, gb) = mse_grad(p.0, p.1, TR);
            p = (p.0 - 0.1 * ga, p.1 - 0.1 * gb);
        }
        let (_, ga, gb) = mse_grad(p.0, p.1, VAL);
        let expect = (0.3 - 0.05 * ga, -0.2 - 0.05 * gb);
        let got = fomaml(2, (0.1, 0.05));
        assert!((got.0 - expect.0).abs() < 1e-10 && (got.1 - expect.1).abs() < 1e-10);
    }

    #[test]
    fn source_is_untouched_by_the_inner_loop() {
        let theta = set(0.3, -0.2);
        let mut adapted = vec![theta.copy_params()];
        inner_loop(&mut adapted, &mut [Optimizer::Sgd], 0.1, 3, |_, p| grad_on(TR)(p)).unwrap();
        assert_eq!(ab(&theta), (0.3, -0.2));
        assert_ne!(ab(&adapted[0]), (0.3, -0.2));
    }

    #[test]
    fn zero_outer_gradient_changes_nothing() {
        let mut theta = vec![set(0.3, -0.2)];
        let at = theta.clone();
        outer_step(&mut theta, &mut [Optimizer::Sgd], 0.05, &at, |_| {
            Ok((0.0, vec![vec![Tensor::scalar(0.0), Tensor::scalar(0.0)]]))
        })
        .unwrap();
        assert_eq!(theta, at);
    }

    #[test]
    fn mismatched_sets_are_rejected() {
        let mut theta = vec![set(0.0, 0.0)];
        let other = vec![ParamSet::new(Group::Other).with("a", Tensor::scalar(0.0)).unwrap()];
        let r = outer_step(&mut theta, &mut [Optimizer::Sgd], 0.1, &other, grad_on(VAL));
        assert!(matches!(r, Err(Error::ParamMismatch(_))));
        assert!(inner_loop(&mut theta, &mut [], 0.1, 1, |_, p| grad_on(TR)(p)).is_err());
    }
}
