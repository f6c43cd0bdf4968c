use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spellbee_core::numcore::{grad_check, AttentionShape, GradCheckOptions, Graph, Var, LAYER_NORM_EPS};
use spellbee_core::{Error, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn eval(f: impl FnOnce(&mut Graph<f64>) -> Var) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.value(v).clone()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_projector() {
    let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let out = eval(|g| {
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(m.clone());
        g.matmul(i, b).unwrap()
    });
    assert_eq!(out, m);
    let out = eval(|g| {
        let p = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        g.matmul(p, b).unwrap()
    });
    assert_eq!(out.data(), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let (a, b) = (random(&[3, 4], 1), random(&[4, 2], 2));
    let out = eval(|g| {
        let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
        g.matmul(x, y).unwrap()
    });
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            }
            let got = out.data()[i * 2 + j];
            assert!((got - s).abs() <= 1e-6 * s.abs().max(1e-12), "{got} vs {s}");
        }
    }
}

#[test]
fn matmul_shape_error() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(random(&[3, 4], 1));
    let b = g.constant(random(&[3, 2], 2));
    assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
}

#[test]
fn layer_norm_cases() {
    let ln = |x: Tensor<f64>, w: Tensor<f64>| {
        eval(|g| {
            let (x, w) = (g.constant(x), g.constant(w));
            g.layer_norm(x, w).unwrap()
        })
    };
    assert!(ln(t(&[4], &[2.5; 4]), t(&[4], &[1.0; 4])).data().iter().all(|&v| v == 0.0));
    let out = ln(t(&[2], &[1.0, -1.0]), t(&[2], &[1.0, 1.0]));
    for (o, e) in out.data().iter().zip([1.0, -1.0]) {
        // eps in the denominator moves this by ~5e-6
        assert!((o - e).abs() < 1e-5);
    }
    let x = random(&[3, 7], 5);
    let w = random(&[7], 6);
    let out = ln(x.clone(), w.clone());
    for r in 0..3 {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / 7.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        for j in 0..7 {
            let e = (row[j] - mean) / (var + 1e-5).sqrt() * w.data()[j];
            assert!((out.row(r)[j] - e).abs() < 1e-6);
        }
    }
}

fn swiglu(g: &mut Graph<f64>, x: Var, up: Var, gate: Var, down: Var) -> Var {
    let u = g.matmul(x, up).unwrap();
    let gt = g.matmul(x, gate).unwrap();
    let s = g.silu(gt);
    let h = g.mul(s, u).unwrap();
    g.matmul(h, down).unwrap()
}

#[test]
fn swiglu_cases() {
    let one = t(&[1, 1], &[1.0]);
    let out = eval(|g| {
        let vs: Vec<Var> = (0..4).map(|_| g.constant(one.clone())).collect();
        swiglu(g, vs[0], vs[1], vs[2], vs[3])
    });
    assert!((out.item() - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
    assert!((out.item() - 0.731058).abs() < 1e-6);

    let out = eval(|g| {
        let x = g.constant(random(&[3, 4], 1));
        let up = g.constant(random(&[4, 5], 2));
        let gate = g.constant(Tensor::zeros(&[4, 5]));
        let down = g.constant(random(&[5, 4], 3));
        swiglu(g, x, up, gate, down)
    });
    assert!(out.data().iter().all(|&v| v == 0.0));

    let params = [random(&[3, 4], 1), random(&[4, 5], 2), random(&[4, 5], 3), random(&[5, 4], 4)];
    let r = grad_check(
        &params,
        |g, v| {
            let y = swiglu(g, v[0], v[1], v[2], v[3]);
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

fn shape(batch: usize, seq: usize, nh: usize, nkv: usize, hd: usize) -> AttentionShape {
    AttentionShape { batch, seq, n_heads: nh, n_kv_heads: nkv, head_dim: hd, causal: true }
}

/// Per-element reference: loops over query, key and head dimension.
fn attention_reference(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, s: AttentionShape) -> Vec<f64> {
    let (qw, kw) = (s.n_heads * s.head_dim, s.n_kv_heads * s.head_dim);
    let mut out = vec![0.0; s.batch * s.seq * qw];
    for b in 0..s.batch {
        for h in 0..s.n_heads {
            let kh = h * s.n_kv_heads / s.n_heads;
            for i in 0..s.seq {
                let keys = if s.causal { i + 1 } else { s.seq };
                let scores: Vec<f64> = (0..keys)
                    .map(|j| {
                        (0..s.head_dim)
                            .map(|d| q.data()[(b * s.seq + i) * qw + h * s.head_dim + d] * k.data()[(b * s.seq + j) * kw + kh * s.head_dim + d])
                            .sum::<f64>()
                            / (s.head_dim as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
                for d in 0..s.head_dim {
                    out[(b * s.seq + i) * qw + h * s.head_dim + d] = (0..keys)
                        .map(|j| (scores[j] - m).exp() / z * v.data()[(b * s.seq + j) * kw + kh * s.head_dim + d])
                        .sum();
                }
            }
        }
    }
    out
}

fn run_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, s: AttentionShape) -> Tensor<f64> {
    eval(|g| {
        let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        g.attention(q, k, v, s).unwrap()
    })
}

#[test]
fn attention_single_key_returns_value() {
    let s = shape(1, 1, 2, 2, 3);
    let v = random(&[1, 6], 3);
    assert_eq!(run_attention(&random(&[1, 6], 1), &random(&[1, 6], 2), &v, s), v);
}

#[test]
fn attention_grouped_matches_loops() {
    let s = shape(1, 3, 2, 1, 4);
    let (q, k, v) = (random(&[3, 8], 1), random(&[3, 4], 2), random(&[3, 4], 3));
    let out = run_attention(&q, &k, &v, s);
    for (a, b) in out.data().iter().zip(attention_reference(&q, &k, &v, s)) {
        assert!((a - b).abs() < 1e-6);
    }
    let s = AttentionShape { causal: false, batch: 2, ..shape(2, 5, 4, 2, 2) };
    let (q, k, v) = (random(&[10, 8], 4), random(&[10, 4], 5), random(&[10, 4], 6));
    let out = run_attention(&q, &k, &v, s);
    for (a, b) in out.data().iter().zip(attention_reference(&q, &k, &v, s)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_full_grouping_is_multi_head() {
    let s = shape(1, 4, 2, 2, 3);
    let (q, k, v) = (random(&[4, 6], 1), random(&[4, 6], 2), random(&[4, 6], 3));
    let out = run_attention(&q, &k, &v, s);
    // Each head on its own equals single-head attention on its slice.
    for h in 0..2 {
        let slice = |x: &Tensor<f64>| Tensor::from_fn(&[4, 3], |i| x.data()[(i / 3) * 6 + h * 3 + i % 3]);
        let single = run_attention(&slice(&q), &slice(&k), &slice(&v), shape(1, 4, 1, 1, 3));
        for i in 0..12 {
            assert!((single.data()[i] - out.data()[(i / 3) * 6 + h * 3 + i % 3]).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_grouping_error() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(random(&[2, 6], 1));
    let k = g.constant(random(&[2, 4], 2));
    assert!(matches!(g.attention(q, k, k, shape(1, 2, 3, 2, 2)), Err(Error::Config(_))));
}

#[test]
fn attention_gradients() {
    let s = shape(2, 3, 4, 2, 2);
    let params = [random(&[6, 8], 1), random(&[6, 4], 2), random(&[6, 4], 3), random(&[6, 8], 4)];
    let r = grad_check(
        &params,
        |g, p| {
            let a = g.attention(p[0], p[1], p[2], s)?;
            let w = g.mul(a, p[3])?;
            Ok(g.sum(w))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

fn xent(logits: Tensor<f64>, targets: &[usize]) -> f64 {
    eval(|g| {
        let l = g.constant(logits);
        g.cross_entropy(l, targets).unwrap()
    })
    .item()
}

#[test]
fn cross_entropy_cases() {
    assert!((xent(Tensor::zeros(&[1, 4]), &[2]) - 4f64.ln()).abs() < 1e-12);
    let mut l = Tensor::zeros(&[1, 4]);
    l.data_mut()[1] = 1e4;
    assert!(xent(l, &[1]).abs() < 1e-12);

    // Reference with compensated summation of exponentials.
    let logits = random(&[5, 7], 9).data().iter().map(|x| x * 8.0).collect::<Vec<_>>();
    let targets = [0, 6, 3, 3, 1];
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * 7..(r + 1) * 7];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for x in row {
            let y = (x - m).exp() - comp;
            let t2 = s + y;
            comp = (t2 - s) - y;
            s = t2;
        }
        total += m + s.ln() - row[t];
    }
    let got = xent(Tensor::new(&[5, 7], logits).unwrap(), &targets);
    assert!((got - total / 5.0).abs() <= 1e-6 * (total / 5.0).abs());

    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::zeros(&[1, 4]));
    assert!(matches!(g.cross_entropy(l, &[4]), Err(Error::Index { .. })));
}

#[test]
fn grad_check_trivial_functions() {
    let r = grad_check(
        &[Tensor::scalar(3.0)],
        |g, p| {
            let sq = g.mul(p[0], p[0])?;
            Ok(g.sum(sq))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-9);
    let r = grad_check(
        &[random(&[4, 3], 1)],
        |g, p| {
            let s = g.scale(p[0], 2.5);
            Ok(g.sum(s))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-9);
}

#[test]
fn elementwise_and_norm_gradients() {
    let params = [random(&[3, 6], 1), random(&[6], 2), random(&[3, 6], 3)];
    let r = grad_check(
        &params,
        |g, p| {
            let n = g.layer_norm(p[0], p[1])?;
            let a = g.gelu(n);
            let b = g.relu(p[2]);
            let c = g.add_row(b, p[1])?;
            let d = g.mul(a, c)?;
            let r = g.rope(d, 3, 2, 10_000.0)?;
            let e = g.mul(r, p[2])?;
            Ok(g.sum(e))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn gather_and_cross_entropy_gradients() {
    let params = [random(&[5, 4], 1), random(&[4, 6], 2)];
    let r = grad_check(
        &params,
        |g, p| {
            let x = g.gather(p[0], &[4, 0, 4, 2])?;
            let l = g.matmul(x, p[1])?;
            g.cross_entropy(l, &[1, 5, 0, 2])
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

proptest! {
    #[test]
    fn attention_rows_are_convex_combinations(seed in 0u64..1000) {
        let s = shape(1, 4, 2, 1, 3);
        let (q, k) = (random(&[4, 6], seed), random(&[4, 3], seed + 1));
        // With v = 1 every output must be exactly a sum of weights, i.e. 1.
        let out = run_attention(&q.clone(), &k, &Tensor::full(&[4, 3], 1.0), s);
        for &x in out.data() {
            prop_assert!((x - 1.0).abs() < 1e-6);
        }
        let v = random(&[4, 3], seed + 2);
        let out = run_attention(&q, &k, &v, s);
        for (i, &x) in out.data().iter().enumerate() {
            let col: Vec<f64> = (0..4).map(|r| v.data()[r * 3 + i % 3]).collect();
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &c| (a.min(c), b.max(c)));
            prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes(seed in 0u64..1000, d in 2usize..32) {
        let x = random(&[2, d], seed).data().iter().map(|v| v * 10.0 + 3.0).collect::<Vec<_>>();
        let out = eval(|g| {
            let x = g.constant(Tensor::new(&[2, d], x.clone()).unwrap());
            let w = g.constant(Tensor::full(&[d], 1.0));
            g.layer_norm(x, w).unwrap()
        });
        for r in 0..2 {
            let (row, xr) = (out.row(r), &x[r * d..(r + 1) * d]);
            let moments = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / d as f64;
                (m, v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / d as f64)
            };
            let ((mean, var), (_, var_in)) = (moments(row), moments(xr));
            // eps shrinks the output variance to var_in / (var_in + eps)
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - var_in / (var_in + LAYER_NORM_EPS)).abs() <= 1e-4);
        }
    }

    #[test]
    fn identity_is_neutral(seed in 0u64..1000, n in 1usize..6) {
        let a = random(&[n, n], seed);
        let id = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let out = eval(|g| {
            let (x, i) = (g.constant(a.clone()), g.constant(id));
            let y = g.matmul(x, i).unwrap();
            let i2 = g.constant(Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 }));
            g.matmul(i2, y).unwrap()
        });
        prop_assert_eq!(out, a);
    }
}
