//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Worst coordinate found by [`grad_check`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn evaluate<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares the tape gradient of `f` at `params` with `(f(θ+h) − f(θ−h)) / 2h` for every
/// coordinate. `f` must be deterministic.
pub fn grad_check<F>(params: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport::default();
    let mut probe = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; params[pi].len()]);
        for k in 0..params[pi].len() {
            let orig = probe[pi].data()[k];
            probe[pi].data_mut()[k] = orig + step;
            let up = evaluate(&probe, &f)?;
            probe[pi].data_mut()[k] = orig - step;
            let down = evaluate(&probe, &f)?;
            probe[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[k], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report = GradCheckReport {
                    max_rel_error: err,
                    param: pi,
                    index: k,
                    analytic: analytic[k],
                    numeric,
                    coordinates: report.coordinates,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convkit::{build_autoregressive_mask, Boundary, MaskVariant, Padding};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// `Σ r ⊙ y` for a fixed random `r`, turning any tensor output into a scalar.
    fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rand_tensor(t.value(y).shape(), &mut rng);
        let r = t.constant(r);
        let p = t.mul(y, r)?;
        t.sum(p)
    }

    fn check(params: &[Tensor], tol: f64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let r = grad_check(params, FD_STEP, f).unwrap();
        assert!(r.max_rel_error < tol, "{r:?}");
    }

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[5], &mut rng);
        let r = grad_check(&[x], FD_STEP, |t, v| {
            let y = t.scale(v[0], 3.0)?;
            project(t, y, 9)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
        assert_eq!(r.coordinates, 5);
    }

    #[test]
    fn elementwise_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&[2, 3], &mut rng);
        let b = rand_tensor(&[2, 3], &mut rng);
        check(&[a.clone(), b], 1e-7, |t, v| {
            let d = t.sub(v[0], v[1])?;
            let m = t.mul(d, v[0])?;
            let s = t.sigmoid(m)?;
            let e = t.exp(s)?;
            let l = t.log(e)?;
            let q = t.add_scalar(l, 0.5)?;
            let w = t.mul(q, v[1])?;
            project(t, w, 3)
        });
        let shifted = Tensor::new(vec![6], a.data().iter().map(|v| v + 0.3 * v.signum()).collect()).unwrap();
        check(&[shifted], 1e-7, |t, v| {
            let r = t.relu(v[0])?;
            project(t, r, 4)
        });
    }

    #[test]
    fn conv2d_filter_and_input_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[1, 2, 3, 3], &mut rng);
        let f = rand_tensor(&[2, 2, 3, 3], &mut rng);
        let b = rand_tensor(&[2], &mut rng);
        for boundary in [Boundary::Zero, Boundary::Wrap] {
            check(&[x.clone(), f.clone(), b.clone()], 1e-7, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), Padding::centered(3, 3), boundary)?;
                project(t, y, 5)
            });
        }
        let f2 = rand_tensor(&[2, 2, 2, 2], &mut rng);
        check(&[x, f2], 1e-7, |t, v| {
            let y = t.conv2d(v[0], v[1], None, MaskVariant::Upper.padding(2), Boundary::Zero)?;
            project(t, y, 6)
        });
    }

    #[test]
    fn periodic_conv_and_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&[2, 2, 4, 3], &mut rng);
        let mut f = rand_tensor(&[2, 2, 3, 3], &mut rng);
        for c in 0..2 {
            f.data_mut()[(c * 2 + c) * 9 + 4] += 2.0;
        }
        check(&[x, f.clone()], 1e-7, |t, v| {
            let y = t.periodic_conv(v[0], v[1], Padding::centered(3, 3))?;
            project(t, y, 7)
        });
        check(&[f], 1e-6, |t, v| t.periodic_logdet(v[0], Padding::centered(3, 3), 4, 3));
    }

    #[test]
    fn matrix_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&[3, 3], &mut rng);
        let b = rand_tensor(&[3, 3], &mut rng);
        let d = rand_tensor(&[3], &mut rng);
        check(&[a, b, d], 1e-6, |t, v| {
            let e = t.diag_embed(v[2])?;
            let s = t.add(v[1], e)?;
            let m = t.matmul(v[0], s)?;
            let l = t.log_abs_det(m)?;
            let p = project(t, m, 8)?;
            t.add(l, p)
        });
    }

    #[test]
    fn log_abs_det_gradient_is_inverse_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = rand_tensor(&[3, 3], &mut rng);
        let mut t = Tape::new();
        let v = t.leaf(w.clone());
        let l = t.log_abs_det(v).unwrap();
        let g = t.backward(l).unwrap();
        let expected = crate::numerics::inverse(&w.to_matrix().unwrap()).unwrap().transpose();
        assert!(g.get(v).unwrap().max_abs_diff(&Tensor::from(expected)) < 1e-9);
    }

    #[test]
    fn householder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = rand_tensor(&[3, 4], &mut rng);
        check(&[v], 1e-6, |t, p| {
            let q = t.householder(p[0])?;
            project(t, q, 9)
        });
    }

    #[test]
    fn masked_diagonal_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mask = build_autoregressive_mask(MaskVariant::Lower, 2, 2).unwrap();
        let mut w = rand_tensor(&[2, 2, 2, 2], &mut rng);
        for c in 0..2 {
            w.data_mut()[(c * 2 + c) * 4 + 3] = 1.5 - c as f64;
        }
        let m = Tensor::new(vec![2, 2, 2, 2], mask.taps().to_vec()).unwrap();
        check(&[w], 1e-7, move |t, v| {
            let mv = t.constant(m.clone());
            let k = t.mul(v[0], mv)?;
            let l = t.log_abs_diag_taps(k, (1, 1))?;
            t.scale(l, 12.0)
        });
    }

    #[test]
    fn affine_per_channel_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&[2, 3, 2, 2], &mut rng);
        let ls = rand_tensor(&[3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        check(&[x, ls, b], 1e-7, |t, v| {
            let y = t.affine_per_channel(v[0], v[1], v[2])?;
            project(t, y, 10)
        });
    }

    #[test]
    fn reshaping_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_tensor(&[2, 2, 4, 2], &mut rng);
        check(&[x], 1e-7, |t, v| {
            let s = t.squeeze(v[0])?;
            let a = t.slice_channels(s, 0, 3)?;
            let b = t.slice_channels(s, 3, 5)?;
            let c = t.concat_channels(b, a)?;
            let e = t.exp(c)?;
            let u = t.unsqueeze(e)?;
            let r = t.reshape(u, &[2, 16])?;
            let per = t.sum_per_example(r)?;
            let sq = t.mul(per, per)?;
            t.sum(sq)
        });
    }

    #[test]
    fn gaussian_log_prob_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = rand_tensor(&[3, 2, 2, 2], &mut rng);
        let mu = rand_tensor(&[3, 2, 2, 2], &mut rng);
        let ls = rand_tensor(&[3, 2, 2, 2], &mut rng);
        check(&[z.clone(), mu, ls], 1e-7, |t, v| {
            let lp = t.gaussian_log_prob(v[0], Some(v[1]), Some(v[2]))?;
            project(t, lp, 12)
        });
        check(&[z], 1e-7, |t, v| {
            let lp = t.gaussian_log_prob(v[0], None, None)?;
            project(t, lp, 13)
        });
    }

    #[test]
    fn standard_normal_density_value() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap());
        let lp = t.gaussian_log_prob(z, None, None).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5;
        assert!((t.value(lp).data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn expand_gradient_sums() {
        check(&[Tensor::scalar(0.4)], 1e-7, |t, v| {
            let e = t.expand(v[0], 3)?;
            let x = t.exp(e)?;
            project(t, x, 14)
        });
    }
}
