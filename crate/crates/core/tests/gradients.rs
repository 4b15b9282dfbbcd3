mod common;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use citetrend::autodiff::{Reduction, Tape, Tensor, Var};
use citetrend::experiments::TrainConfig;
use citetrend::models::{LogisticBaseline, MlpBaseline, Mode, TrendModel, TrendPredictor};
use citetrend::sparse::CsrMatrix;

use common::*;

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).trainable()
}

/// Scalar loss `sum(sigmoid(out · R))` for a fixed random `R`, so every
/// output entry gets a distinct sensitivity.
fn scalarize<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Var<'t> {
    let (_, c) = out.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(c, 2, (0..2 * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
    out.matmul(r).unwrap().sigmoid().sum()
}

/// Norm-wise error between backprop and central differences, over every
/// entry of every input. Relative for large gradients, absolute below 0.01 so
/// that gradients which cancel exactly (shift-invariant softmax inputs) are
/// not judged on rounding noise.
fn check_op(inputs: &[Tensor], build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) -> f64 {
    let eval = |ts: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ts.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&tape, &vars);
        scalarize(&tape, out, 99).scalar()
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&tape, &vars);
    let loss = scalarize(&tape, out, 99);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
        let mut numeric = vec![0.0; t.numel()];
        for i in 0..t.numel() {
            let mut ts = inputs.to_vec();
            ts[k].data_mut()[i] += h;
            let up = eval(&ts);
            ts[k].data_mut()[i] -= 2.0 * h;
            let down = eval(&ts);
            numeric[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-2);
        worst = worst.max(diff / scale);
    }
    worst
}

const TOL: f64 = 1e-6;

#[test]
fn dense_ops_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, k) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..4));
        let x = random_tensor(n, d, &mut rng);
        let w = random_tensor(d, k, &mut rng);
        let b = random_tensor(1, k, &mut rng);
        let y = random_tensor(n, k, &mut rng);
        let e = check_op(&[x.clone(), w, b, y.clone()], |_, v| {
            v[0].matmul(v[1]).unwrap().add_row(v[2]).unwrap().add(v[3]).unwrap().leaky_relu(0.2)
        });
        assert!(e < TOL, "matmul chain seed {seed}: {e}");
        let e = check_op(&[x.clone(), y.clone()], |_, v| Var::concat(&[v[0], v[1].sigmoid()]).unwrap());
        assert!(e < TOL, "concat seed {seed}: {e}");
        let z = random_tensor(rng.gen_range(1..4), d, &mut rng);
        let e = check_op(&[x, z], |_, v| Var::vstack(&[v[0], v[1]]).unwrap());
        assert!(e < TOL, "vstack seed {seed}: {e}");
    }
}

#[test]
fn indexing_and_reduction_ops_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, d) = (rng.gen_range(2..7), rng.gen_range(1..4));
        let x = random_tensor(n, d, &mut rng);
        let idx: Rc<Vec<usize>> = Rc::new((0..n + 3).map(|_| rng.gen_range(0..n)).collect());
        let out_rows = rng.gen_range(1..4);
        let groups: Rc<Vec<usize>> = Rc::new((0..n).map(|_| rng.gen_range(0..out_rows)).collect());

        let i2 = Rc::clone(&idx);
        let e = check_op(&[x.clone()], move |_, v| v[0].gather_rows(Rc::clone(&i2)).unwrap());
        assert!(e < TOL, "gather seed {seed}: {e}");
        for mode in [Reduction::Sum, Reduction::Mean, Reduction::Max] {
            let g2 = Rc::clone(&groups);
            let e = check_op(&[x.clone()], move |_, v| v[0].scatter_reduce(Rc::clone(&g2), out_rows, mode).unwrap());
            assert!(e < TOL, "scatter {mode:?} seed {seed}: {e}");
        }
        let s = random_tensor(n, 1, &mut rng);
        let e = check_op(&[x.clone(), s], |_, v| v[0].scale_rows(v[1]).unwrap());
        assert!(e < TOL, "scale_rows seed {seed}: {e}");
    }
}

#[test]
fn softmax_ops_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let segs = rng.gen_range(1..5);
        let mut offsets = vec![0];
        for _ in 0..segs {
            offsets.push(offsets.last().unwrap() + rng.gen_range(1..4));
        }
        let e_len = *offsets.last().unwrap();
        let x = random_tensor(e_len, 1, &mut rng);
        let off = Rc::new(offsets);
        let e = check_op(&[x], move |_, v| v[0].segment_softmax(Rc::clone(&off)).unwrap());
        assert!(e < TOL, "segment softmax seed {seed}: {e}");

        let (r, c) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let mut mask: Vec<bool> = (0..r * c).map(|_| rng.gen_bool(0.6)).collect();
        for row in 0..r {
            mask[row * c] = true;
        }
        let mask = Rc::new(mask);
        let m = random_tensor(r, c, &mut rng);
        let e = check_op(&[m], move |_, v| v[0].rowwise_softmax_masked(Rc::clone(&mask)).unwrap());
        assert!(e < TOL, "masked softmax seed {seed}: {e}");
    }
}

#[test]
fn sparse_dropout_and_loss_ops_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (n, d, k) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4));
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for row in &mut rows {
            for c in 0..d {
                if rng.gen_bool(0.5) {
                    row.push((c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let a = Rc::new(CsrMatrix::from_rows(d, rows));
        let w = random_tensor(d, k, &mut rng);
        let e = check_op(&[w], move |_, v| v[0].sparse_lmul(Rc::clone(&a)).unwrap());
        assert!(e < TOL, "sparse matmul seed {seed}: {e}");

        let x = random_tensor(n, k, &mut rng);
        let e = check_op(&[x.clone()], |_, v| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
            v[0].dropout(0.3, &mut drop_rng)
        });
        assert!(e < TOL, "dropout seed {seed}: {e}");

        let z = random_tensor(n, 1, &mut rng);
        let labels = random_labels(n, &mut rng);
        let weight = rng.gen_range(0.5..5.0);
        let e = check_op(&[z, x], move |tape, v| {
            let l = v[0].bce_with_logits(&labels, weight).unwrap();
            let m = v[1].mean();
            Var::concat(&[l, m, tape.constant(1, 1, vec![0.5])]).unwrap()
        });
        assert!(e < TOL, "bce / mean seed {seed}: {e}");
    }
}

#[test]
fn random_compositions_match_finite_differences() {
    // Attention-style pipelines with random sizes and random graphs.
    for seed in 0..15 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (n, d, k) = (rng.gen_range(2..7), rng.gen_range(1..5), rng.gen_range(1..4));
        let lists: Vec<Vec<usize>> = (0..n).map(|i| (0..i).filter(|_| rng.gen_bool(0.5)).collect()).collect();
        let mut offsets = vec![0];
        let (mut owners, mut members, mut groups) = (vec![], vec![], vec![]);
        for (g, l) in lists.iter().enumerate() {
            for &m in std::iter::once(&g).chain(l) {
                owners.push(g);
                members.push(m);
                groups.push(g);
            }
            offsets.push(members.len());
        }
        let (owners, members, groups, offsets) = (Rc::new(owners), Rc::new(members), Rc::new(groups), Rc::new(offsets));
        let x = random_tensor(n, d, &mut rng);
        let w = random_tensor(d, k, &mut rng);
        let a_self = random_tensor(k, 1, &mut rng);
        let a_nbr = random_tensor(k, 1, &mut rng);
        let slope = rng.gen_range(0.01..0.3);
        let e = check_op(&[x, w, a_self, a_nbr], move |_, v| {
            let p = v[0].matmul(v[1]).unwrap();
            let s = p
                .matmul(v[2])
                .unwrap()
                .gather_rows(Rc::clone(&owners))
                .unwrap()
                .add(p.matmul(v[3]).unwrap().gather_rows(Rc::clone(&members)).unwrap())
                .unwrap()
                .leaky_relu(slope);
            let alpha = s.segment_softmax(Rc::clone(&offsets)).unwrap();
            p.gather_rows(Rc::clone(&members))
                .unwrap()
                .scale_rows(alpha)
                .unwrap()
                .scatter_reduce(Rc::clone(&groups), n, Reduction::Sum)
                .unwrap()
                .leaky_relu(slope)
        });
        assert!(e < TOL, "composition seed {seed}: {e}");
    }
}

#[test]
fn end_to_end_models_on_six_nodes() {
    let graph = synthetic_graph(6, 3, 11);
    let cfg = TrainConfig {
        holdout_latest_prior_year: false,
        ..TrainConfig::default()
    };
    let data = dataset(&graph, &cfg);
    assert_eq!(data.inputs.rows(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = random_labels(6, &mut rng);
    let mcfg = small_model_config();
    let widths = data.widths();
    let mut models: Vec<Box<dyn TrendPredictor>> = vec![
        Box::new(TrendModel::new(mcfg, widths, &mut rng)),
        Box::new(MlpBaseline::new(mcfg, widths, &mut rng).unwrap()),
        Box::new(LogisticBaseline::new(mcfg, widths, &mut rng)),
    ];
    for model in &mut models {
        for mode in [Mode::Eval, Mode::Train] {
            let (err, checked) = gradient_error(model.as_mut(), &data.inputs, &labels, 2.5, mode);
            assert!(checked > 0);
            assert!(err < 1e-4, "{} {mode:?}: relative error {err}", model.name());
        }
    }
}
