//! Central-difference gradient checking, always in f64.

use super::tape::{Tape, Var};
use ndarray::ArrayD;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("non-finite value while evaluating {0}")]
    NonFiniteValue(String),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
}

/// Compare the reverse-mode gradient of a scalar computation against central
/// finite differences over every entry of every parameter.
///
/// `build` constructs the computation on a fresh tape from parameter leaves
/// (keyed by name) and returns the scalar root.
pub fn grad_check<B>(
    params: &BTreeMap<String, ArrayD<f64>>,
    eps: f64,
    build: B,
) -> Result<GradCheckReport, GradCheckError>
where
    B: Fn(&mut Tape<f64>, &BTreeMap<String, Var>) -> Var,
{
    let eval = |p: &BTreeMap<String, ArrayD<f64>>| -> Result<f64, GradCheckError> {
        let mut tape = Tape::<f64>::new();
        let vars: BTreeMap<String, Var> =
            p.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        let root = build(&mut tape, &vars);
        let v = tape.scalar_value(root);
        if !v.is_finite() {
            return Err(GradCheckError::NonFiniteValue("forward value".into()));
        }
        Ok(v)
    };

    // analytic gradients
    let mut tape = Tape::<f64>::new();
    let vars: BTreeMap<String, Var> = params
        .iter()
        .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
        .collect();
    let root = build(&mut tape, &vars);
    if !tape.scalar_value(root).is_finite() {
        return Err(GradCheckError::NonFiniteValue("forward value".into()));
    }
    let grads = tape.backward(root);
    let analytic: BTreeMap<String, ArrayD<f64>> = params
        .iter()
        .map(|(k, v)| {
            let g = grads
                .get(vars[k])
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(v.raw_dim()));
            (k.clone(), g)
        })
        .collect();

    let mut work = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = (String::new(), 0usize);
    for (name, value) in params {
        for idx in 0..value.len() {
            let orig = value.as_slice().unwrap()[idx];
            work.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = orig + eps;
            let f_plus = eval(&work)?;
            work.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = orig - eps;
            let f_minus = eval(&work)?;
            work.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[name].as_slice().unwrap()[idx];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(GradCheckError::NonFiniteValue(format!("{name}[{idx}]")));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = (name.clone(), idx);
            }
        }
    }
    Ok(GradCheckReport { max_rel_err, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| {
            // Box-Muller from two uniforms
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 0.5
        })
    }

    #[test]
    fn sum_of_inputs_has_unit_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), randn(&mut rng, &[3, 4]));
        let report = grad_check(&params, 1e-5, |tape, vars| {
            tape.sum_all(vars["x"])
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-10, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn affine_tanh_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), randn(&mut rng, &[4, 5]));
        params.insert("w".to_string(), randn(&mut rng, &[5, 3]));
        params.insert("b".to_string(), randn(&mut rng, &[3]));
        let report = grad_check(&params, 1e-5, |tape, vars| {
            let y = tape.affine(vars["x"], vars["w"], vars["b"]);
            let y = tape.tanh(y);
            tape.sum_all(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn every_elementwise_and_norm_op_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), randn(&mut rng, &[3, 6]));
        params.insert("y".to_string(), randn(&mut rng, &[3, 6]));
        params.insert("g".to_string(), randn(&mut rng, &[6]));

        type Build = fn(&mut Tape<f64>, &BTreeMap<String, Var>) -> Var;
        let cases: Vec<(&str, Build)> = vec![
            ("mul", |t, v| {
                let z = t.mul(v["x"], v["y"]);
                t.sum_all(z)
            }),
            ("sub_square", |t, v| {
                let z = t.sub(v["x"], v["y"]);
                let z = t.square(z);
                t.sum_all(z)
            }),
            ("sigmoid", |t, v| {
                let z = t.sigmoid(v["x"]);
                t.sum_all(z)
            }),
            ("relu", |t, v| {
                let z = t.relu(v["x"]);
                t.sum_all(z)
            }),
            ("gelu", |t, v| {
                let z = t.gelu(v["x"]);
                t.sum_all(z)
            }),
            ("softmax_weighted", |t, v| {
                let z = t.softmax_last(v["x"]);
                let z = t.mul(z, v["y"]);
                t.sum_all(z)
            }),
            ("log_softmax_weighted", |t, v| {
                let z = t.log_softmax_last(v["x"]);
                let z = t.mul(z, v["y"]);
                t.sum_all(z)
            }),
            ("layer_norm_gain_bias", |t, v| {
                let z = t.layer_norm_last(v["x"], 1e-5);
                let z = t.mul_rowbcast(z, v["g"]);
                let z = t.add_rowbcast(z, v["g"]);
                let z = t.square(z);
                t.sum_all(z)
            }),
            ("l2_normalize_weighted", |t, v| {
                let z = t.row_l2_normalize(v["x"], 1e-8);
                let z = t.mul(z, v["y"]);
                t.sum_all(z)
            }),
            ("concat_slice_shift", |t, v| {
                let c = t.concat(1, &[v["x"], v["y"]]);
                let s = t.slice_axis_op(c, 1, 2, 9);
                let s = t.shift_time(s, 1);
                let s = t.square(s);
                t.sum_all(s)
            }),
            ("sum_axis", |t, v| {
                let z = t.sum_axis_op(v["x"], 0);
                let z = t.square(z);
                t.sum_all(z)
            }),
        ];
        for (name, build) in cases {
            let report = grad_check(&params, 1e-6, build).unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "{name}: rel err {} at {:?}",
                report.max_rel_err,
                report.worst
            );
        }
    }

    #[test]
    fn matmul_and_transpose_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), randn(&mut rng, &[4, 3]));
        params.insert("b".to_string(), randn(&mut rng, &[3, 5]));
        let report = grad_check(&params, 1e-6, |t, v| {
            let bt = t.transpose2d(v["b"]);
            let btt = t.transpose2d(bt);
            let m = t.matmul(v["a"], btt);
            let m = t.square(m);
            t.sum_all(m)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn lstm_layer_passes_in_both_directions_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t_len, batch, d_in, hidden) = (5, 2, 3, 4);
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), randn(&mut rng, &[t_len, batch, d_in]));
        params.insert("wx".to_string(), randn(&mut rng, &[d_in, 4 * hidden]));
        params.insert("wh".to_string(), randn(&mut rng, &[hidden, 4 * hidden]));
        params.insert("b".to_string(), randn(&mut rng, &[4 * hidden]));
        // second sequence padded after 3 steps
        let mut mask = Array2::<f64>::ones((t_len, batch));
        mask[[3, 1]] = 0.0;
        mask[[4, 1]] = 0.0;

        for reverse in [false, true] {
            let mask = mask.clone();
            let report = grad_check(&params, 1e-6, move |t, v| {
                let h = t.lstm_layer(v["x"], v["wx"], v["wh"], v["b"], &mask, reverse);
                let h = t.square(h);
                t.sum_all(h)
            })
            .unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "reverse={reverse}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn matmul_by_identity_returns_the_input() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(Array2::<f64>::eye(3).into_dyn());
        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let av = tape.constant(a.clone().into_dyn());
        let out = tape.matmul(eye, av);
        assert_eq!(tape.value(out), &a.into_dyn());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(ArrayD::zeros(IxDyn(&[2, 5])));
        let y = tape.softmax_last(x);
        for &v in tape.value(y).iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(randn(&mut rng, &[8, 16]));
        let y = tape.layer_norm_last(x, 1e-8);
        let yv = tape.value(y);
        for row in yv.rows() {
            let d = row.len() as f64;
            let mean = row.sum() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn mean_and_variance_of_a_constant_sequence_are_exact() {
        // mean/variance pooling composed from primitives
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Array3::from_elem((7, 2, 3), 1.5).into_dyn());
        let inv_t = 1.0 / 7.0;
        let sum = tape.sum_axis_op(x, 0);
        let mean = tape.scale(sum, inv_t);
        let x2 = tape.square(x);
        let sum2 = tape.sum_axis_op(x2, 0);
        let mean2 = tape.scale(sum2, inv_t);
        let mean_sq = tape.square(mean);
        let var = tape.sub(mean2, mean_sq);
        for &v in tape.value(mean).iter() {
            assert!((v - 1.5).abs() < 1e-12);
        }
        for &v in tape.value(var).iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(randn(&mut rng, &[6, 4]).mapv(|v| v as f32).into_dyn());
            let w = tape.leaf(randn(&mut rng, &[4, 3]).mapv(|v| v as f32).into_dyn());
            let b = tape.leaf(Array1::<f32>::zeros(3).into_dyn());
            let y = tape.affine(x, w, b);
            let y = tape.softmax_last(y);
            let y = tape.square(y);
            let loss = tape.sum_all(y);
            let grads = tape.backward(loss);
            (
                tape.scalar_value(loss),
                grads.get(w).unwrap().clone(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(ArrayD::zeros(IxDyn(&[2, 3])));
        let b = tape.constant(ArrayD::zeros(IxDyn(&[4, 2])));
        let _ = tape.matmul(a, b);
    }
}
