//! Minimal dense real-tensor engine with reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute and differentiated
//! by walking the tape backwards from a scalar loss:
//!
//! ```
//! use cxformer::autodiff::Tape;
//! use cxformer::RealTensor;
//!
//! let tape = Tape::new();
//! let x = tape.variable(&RealTensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.of(x), vec![6.0]);
//! ```

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_coords, grad_check_params, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use ops::{check_dropout_rate, dropout, Extreme};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RealTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[Vec<f64>]) -> RealTensor {
        RealTensor::from_rows(rows).unwrap()
    }

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> RealTensor {
        RealTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    // Triple-loop oracle, kept separate from the tape kernel.
    fn naive_matmul(a: &RealTensor, b: &RealTensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_examples() {
        let tape = Tape::new();
        let i2 = tape.constant(&RealTensor::identity(2));
        let m = tape.constant(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        assert_eq!(*i2.matmul(m).unwrap().value(), vec![1.0, 2.0, 3.0, 4.0]);

        let b = t2(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let expected = naive_matmul(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]), &b);
        assert_eq!(expected, vec![19.0, 22.0, 43.0, 50.0]);
        let prod = m.matmul(tape.constant(&b)).unwrap();
        assert_eq!(*prod.value(), expected);

        let e1 = tape.constant(&RealTensor::zeros(vec![1, 0]));
        let e2 = tape.constant(&RealTensor::zeros(vec![0, 3]));
        let z = e1.matmul(e2).unwrap();
        assert_eq!(z.shape(), vec![1, 3]);
        assert_eq!(*z.value(), vec![0.0; 3]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(&RealTensor::zeros(vec![2, 3]));
        let b = tape.constant(&RealTensor::zeros(vec![2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_matches_triple_loop_on_random_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(vec![5, 5], &mut rng);
            let b = random(vec![5, 5], &mut rng);
            let tape = Tape::new();
            let got = tape.constant(&a).matmul(tape.constant(&b)).unwrap().value();
            for (g, e) in got.iter().zip(naive_matmul(&a, &b)) {
                assert!((g - e).abs() <= 1e-10 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn batched_matmul_broadcasts_plain_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(vec![2, 3, 4], &mut rng);
        let b = random(vec![4, 2], &mut rng);
        let report = grad_check(
            |t, x| {
                let w = t.constant(&b);
                Ok(x.matmul(w)?.mul(x.matmul(w)?)?.sum())
            },
            &a,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let x = tape.constant(&RealTensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(*x.relu().value(), vec![0.0, 0.0, 2.0]);
        let a = tape.constant(&RealTensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(&RealTensor::vector(vec![3.0, 4.0]));
        assert_eq!(*a.add(b).unwrap().value(), vec![4.0, 6.0]);
        assert_eq!(*a.scale(0.0).value(), vec![0.0, 0.0]);
        assert_eq!(*a.neg().value(), vec![-1.0, -2.0]);
        assert_eq!(*a.mul(b).unwrap().value(), vec![3.0, 8.0]);
        assert_eq!(*b.sub(a).unwrap().value(), vec![2.0, 2.0]);
        let c = tape.constant(&RealTensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(a.add(c).is_err());
    }

    #[test]
    fn broadcast_bias_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bias = random(vec![3], &mut rng);
        let x = random(vec![4, 3], &mut rng);
        let tape = Tape::new();
        let bv = tape.variable(&bias);
        let xv = tape.constant(&x);
        let s = tape.scalar(2.0);
        let y = xv.add(bv).unwrap().mul(s).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.of(bv), vec![8.0; 3]);
        // Leading-axis mismatch is not a supported broadcast.
        let odd = tape.constant(&RealTensor::zeros(vec![4]));
        assert!(xv.add(odd).is_err());
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.variable(&RealTensor::vector(vec![-1.0, 0.0, 2.0]));
        let g = tape.backward(x.relu().sum()).unwrap();
        assert_eq!(g.of(x), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn reduce_extreme_examples() {
        let tape = Tape::new();
        let x = tape.variable(&t2(&[vec![1.0, 2.0], vec![0.0, 5.0]]));
        let mn = x.reduce_extreme(1, Extreme::Min).unwrap();
        assert_eq!(*mn.value(), vec![1.0, 0.0]);
        let row = tape.variable(&RealTensor::vector(vec![5.0, 5.0, 5.0]));
        let mx = row.reduce_extreme(0, Extreme::Max).unwrap();
        assert_eq!(mx.item(), 5.0);
        let g = tape.backward(mx).unwrap();
        assert_eq!(g.of(row), vec![1.0, 0.0, 0.0], "ties route to the lowest index");
        let single = tape.constant(&RealTensor::vector(vec![3.0]));
        assert_eq!(single.reduce_extreme(0, Extreme::Min).unwrap().item(), 3.0);
        let empty = tape.constant(&RealTensor::zeros(vec![2, 0]));
        assert!(matches!(empty.reduce_extreme(1, Extreme::Min), Err(crate::Error::Domain(_))));
        assert!(matches!(x.reduce_extreme(2, Extreme::Min), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::new();
        let gain = tape.constant(&RealTensor::filled(vec![3], 1.0));
        let bias = tape.constant(&RealTensor::zeros(vec![3]));
        // mean 2, population variance 2/3
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        let y = tape.constant(&RealTensor::vector(vec![1.0, 2.0, 3.0])).layer_norm(gain, bias, 1e-12).unwrap();
        let v = y.value();
        assert!((v[0] + expected).abs() < 1e-3 && v[1].abs() < 1e-12 && (v[2] - expected).abs() < 1e-3);
        assert!((expected - 1.2247).abs() < 1e-4);

        let c = tape.constant(&RealTensor::vector(vec![4.0, 4.0, 4.0])).layer_norm(gain, bias, 1e-9).unwrap();
        assert_eq!(*c.value(), vec![0.0; 3]);

        // A row that already has zero mean and unit population variance.
        let s = (1.5f64).sqrt();
        let eps = 1e-9;
        let z = tape.constant(&RealTensor::vector(vec![-s, 0.0, s])).layer_norm(gain, bias, eps).unwrap();
        let shrink = 1.0 / (1.0 + eps).sqrt();
        for (got, want) in z.value().iter().zip([-s, 0.0, s]) {
            assert!((got - want * shrink).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::new();
        let x = tape.constant(&RealTensor::filled(vec![100_000], 1.0));
        assert_eq!(dropout(x, 0.0, true, &mut rng).unwrap().id(), x.id());
        assert_eq!(dropout(x, 0.5, false, &mut rng).unwrap().id(), x.id());
        assert!(matches!(dropout(x, 1.0, true, &mut rng), Err(crate::Error::Config(_))));
        let y = dropout(x, 0.5, true, &mut rng).unwrap();
        let v = y.value();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let x = tape.variable(&RealTensor::scalar(3.0));
        let g = tape.backward(x.mul(x).unwrap()).unwrap();
        assert_eq!(g.of(x), vec![6.0]);

        let tape = Tape::new();
        let x = tape.variable(&RealTensor::vector(vec![-1.0, 2.0]));
        let lone = tape.variable(&RealTensor::vector(vec![1.0]));
        let g = tape.backward(x.relu().sum()).unwrap();
        assert_eq!(g.of(x), vec![0.0, 1.0]);
        assert_eq!(g.of(lone), vec![0.0]);
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xt = random(vec![3, 3], &mut rng);
        let wt = random(vec![3, 3], &mut rng);
        let grad_of = |which: u8| {
            let tape = Tape::new();
            let x = tape.variable(&xt);
            let w = tape.constant(&wt);
            let l1 = x.matmul(w).unwrap().relu().sum();
            let l2 = x.mul(x).unwrap().mean();
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => l1.add(l2).unwrap(),
            };
            tape.backward(loss).unwrap().of(x)
        };
        let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
        for i in 0..9 {
            assert_eq!(g12[i], g1[i] + g2[i]);
        }
    }

    #[test]
    fn grad_check_quadratic() {
        let x = RealTensor::vector(vec![1.0, 2.0]);
        let r = grad_check(|_, x| Ok(x.mul(x)?.sum()), &x, 1e-4, 1e-5).unwrap();
        assert!(r.passed && r.excluded.is_empty(), "{r:?}");
    }

    #[test]
    fn grad_check_flags_min_max_tie() {
        let x = t2(&[vec![3.0, 1.0, 3.0]]);
        let r = grad_check(
            |t, x| {
                let w = t.constant(&RealTensor::from_rows(&[vec![0.3, -0.7, 1.1]]).unwrap());
                Ok(x.min_max_norm(None, 1e-9)?.mul(w)?.sum())
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.excluded.contains(&0) || r.excluded.contains(&2), "{r:?}");
    }

    #[test]
    fn grad_check_reports_nan_as_failure() {
        let x = RealTensor::vector(vec![1.0]);
        let r = grad_check(|t, x| Ok(x.mul(t.scalar(f64::NAN))?.sum()), &x, 1e-4, 1e-5).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn every_differentiable_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random(vec![3, 4], &mut rng);
        let w = random(vec![4, 4], &mut rng);
        let kernel = random(vec![2, 4, 3], &mut rng);
        let gain = random(vec![4], &mut rng);
        let bias = random(vec![4], &mut rng);
        let probe = random(vec![3, 4], &mut rng);
        let mask: Vec<bool> = (0..12).map(|i| i % 4 <= i / 4 + 1).collect();
        type Case = Box<dyn for<'t> Fn(&'t Tape, Var<'t>) -> crate::Result<Var<'t>>>;
        let cases: Vec<(&str, Case)> = vec![
            ("add/sub/mul", Box::new({ let probe = probe.clone(); move |t, x| {
                let p = t.constant(&probe);
                Ok(x.add(p)?.mul(x)?.sub(p.scale(0.5))?.sum())
            }})),
            ("matmul/transpose", Box::new(move |t, x| {
                let w = t.constant(&w);
                Ok(x.matmul(w)?.matmul(x.transpose()?)?.sum())
            })),
            ("relu", Box::new({ let probe = probe.clone(); move |t, x| Ok(x.relu().mul(t.constant(&probe))?.sum()) })),
            ("slice/concat", Box::new(move |t, x| {
                let a = x.slice_last(1, 2)?;
                let b = x.slice_rows(0, 2)?.slice_last(0, 2)?;
                let c = Var::concat_last(&[a.slice_rows(1, 2)?, b])?;
                let d = Var::concat_rows(&[c, x.slice_last(0, 4)?.slice_rows(0, 1)?])?;
                d.mul(d)?.mean().add(t.scalar(0.0))
            })),
            ("reduce", Box::new(move |_, x| {
                let lo = x.reduce_extreme(1, Extreme::Min)?;
                let hi = x.reduce_extreme(0, Extreme::Max)?;
                lo.mul(lo)?.sum().add(hi.sum())
            })),
            ("layer_norm", Box::new({ let probe = probe.clone(); move |t, x| {
                let y = x.layer_norm(t.constant(&gain), t.constant(&bias), 1e-9)?;
                Ok(y.mul(t.constant(&probe))?.sum())
            }})),
            ("min_max_norm", Box::new({ let probe = probe.clone(); move |t, x| {
                let y = x.min_max_norm(Some(&mask), 1e-9)?;
                Ok(y.mul(t.constant(&probe))?.sum())
            }})),
            ("softmax", Box::new(move |t, x| Ok(x.softmax(None)?.mul(t.constant(&probe))?.sum()))),
            ("conv1d", Box::new(move |t, x| {
                let k = t.constant(&kernel);
                let y = x.conv1d(k, 1)?;
                Ok(y.mul(y)?.sum())
            })),
            ("bce", Box::new(|_, x| x.bce_with_logits(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]))),
            ("ce", Box::new(|_, x| x.reshape(vec![12])?.cross_entropy(5))),
        ];
        for (name, f) in cases {
            let r = grad_check(|t, v| f(t, v), &x, 1e-5, 1e-4).unwrap();
            assert!(r.passed, "{name}: {r:?}");
            assert!(r.checked > 0, "{name}");
        }
    }

    #[test]
    fn kernel_gradient_of_conv1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(vec![6, 2], &mut rng);
        let k = random(vec![3, 2, 2], &mut rng);
        let r = grad_check(
            |t, k| {
                let y = t.constant(&x).conv1d(k, 2)?;
                Ok(y.mul(y)?.sum())
            },
            &k,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
