use approx::assert_abs_diff_eq;
use rand::Rng;

use super::*;
use crate::error::Error;
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_matrix(rng: &mut impl Rng, p: usize, q: usize) -> Tensor {
    Tensor::matrix(p, q, rand_vec(rng, p * q)).unwrap()
}

/// Relative error between an analytic gradient and central differences of a
/// graph output, over every input coordinate.
fn input_fd_error(graph: &mut Graph, out: NodeId, inputs: &[Vec<f64>], params: &ParameterSet) -> f64 {
    let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    graph.forward(&refs, params).unwrap();
    let grads = graph.backward_scalar(out, params).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for slot in 0..inputs.len() {
        for j in 0..inputs[slot].len() {
            let mut eval = |delta: f64| {
                let mut moved = inputs.to_vec();
                moved[slot][j] += delta;
                let refs: Vec<&[f64]> = moved.iter().map(|v| v.as_slice()).collect();
                graph.forward(&refs, params).unwrap();
                graph.scalar(out).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = grads.input(slot).data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn identity_affine_is_identity() {
    let mut params = ParameterSet::new();
    params.insert("w", Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), false).unwrap();
    params.insert("b", Tensor::vector(vec![0.0; 3]), false).unwrap();
    let mut g = Graph::new();
    let x = g.input(3);
    let w = g.param(&params, "w").unwrap();
    let b = g.param(&params, "b").unwrap();
    let y = g.affine(w, x, b).unwrap();
    g.forward(&[&[0.5, -2.0, 3.25]], &params).unwrap();
    assert_eq!(g.value(y).unwrap(), &[0.5, -2.0, 3.25]);
}

#[test]
fn cosine_of_parallel_vectors_is_one() {
    let mut g = Graph::new();
    let a = g.input(3);
    let b = g.input(3);
    let c = g.cosine(a, b).unwrap();
    g.forward(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]], &ParameterSet::new()).unwrap();
    assert_abs_diff_eq!(g.scalar(c).unwrap(), 1.0, epsilon = 1e-15);
}

#[test]
fn two_layer_net_matches_hand_computation() {
    // h = silu(W1 x + b1), y = W2 h + b2 with
    // W1 = [[1, -1], [0.5, 2]], b1 = [0, 1], W2 = [[2, -3]], b2 = [0.5], x = [1, 2].
    let mut params = ParameterSet::new();
    params.insert("w1", Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap(), true).unwrap();
    params.insert("b1", Tensor::vector(vec![0.0, 1.0]), true).unwrap();
    params.insert("w2", Tensor::matrix(1, 2, vec![2.0, -3.0]).unwrap(), true).unwrap();
    params.insert("b2", Tensor::vector(vec![0.5]), true).unwrap();
    let mut g = Graph::new();
    let x = g.input(2);
    let (w1, b1, w2, b2) = (
        g.param(&params, "w1").unwrap(),
        g.param(&params, "b1").unwrap(),
        g.param(&params, "w2").unwrap(),
        g.param(&params, "b2").unwrap(),
    );
    let z = g.affine(w1, x, b1).unwrap();
    let h = g.silu(z).unwrap();
    let y = g.affine(w2, h, b2).unwrap();
    g.forward(&[&[1.0, 2.0]], &params).unwrap();
    // z = [-1, 5.5]; silu(-1) = -1/(1+e), silu(5.5) = 5.5/(1+e^-5.5)
    let s1 = -1.0 / (1.0 + 1f64.exp());
    let s2 = 5.5 / (1.0 + (-5.5f64).exp());
    assert_abs_diff_eq!(g.value(y).unwrap()[0], 2.0 * s1 - 3.0 * s2 + 0.5, epsilon = 1e-14);
}

#[test]
fn gradient_of_squared_norm() {
    let mut g = Graph::new();
    let x = g.input(4);
    let y = g.dot(x, x).unwrap();
    let xv = [1.0, -2.0, 0.5, 3.0];
    let params = ParameterSet::new();
    g.forward(&[&xv], &params).unwrap();
    let grads = g.backward_scalar(y, &params).unwrap();
    for (gi, xi) in grads.input(0).data().iter().zip(&xv) {
        assert_eq!(*gi, 2.0 * xi);
    }
}

#[test]
fn cosine_gradient_at_orthogonal_unit_vectors() {
    // d cos(x, a)/dx = a/(|x||a|) - cos x/|x|^2 = a when x is orthogonal to a.
    let mut g = Graph::new();
    let x = g.input(3);
    let a = g.input(3);
    let c = g.cosine(x, a).unwrap();
    let params = ParameterSet::new();
    let av = [0.0, 0.6, 0.8];
    g.forward(&[&[1.0, 0.0, 0.0], &av], &params).unwrap();
    let grads = g.backward_scalar(c, &params).unwrap();
    for (gi, ai) in grads.input(0).data().iter().zip(&av) {
        assert_abs_diff_eq!(*gi, *ai, epsilon = 1e-15);
    }
}

#[test]
fn unrolled_affine_chain_matches_finite_differences() {
    let mut rng = rng_from_seed(21);
    let mut params = ParameterSet::new();
    params.insert("w", rand_matrix(&mut rng, 4, 4), true).unwrap();
    params.insert("b", Tensor::vector(rand_vec(&mut rng, 4)), true).unwrap();
    let mut g = Graph::new();
    let x0 = g.input(4);
    let w = g.param(&params, "w").unwrap();
    let b = g.param(&params, "b").unwrap();
    let mut x = x0;
    for _ in 0..5 {
        let z = g.affine(w, x, b).unwrap();
        x = g.silu(z).unwrap();
    }
    let loss = g.dot(x, x).unwrap();
    let input = rand_vec(&mut rng, 4);
    g.forward(&[&input], &params).unwrap();
    let grads = g.backward_scalar(loss, &params).unwrap();
    let report = grad_check(
        |p| {
            let mut g2 = g.clone();
            g2.forward(&[&input], p)?;
            g2.scalar(loss)
        },
        &params,
        &grads,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.coords_checked, 20);
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    assert!(input_fd_error(&mut g, loss, &[input], &params) < 1e-5);
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = rng_from_seed(99);
    for trial in 0..30 {
        let n = 3 + trial % 6;
        let p = 3 + (trial * 7) % 6;
        let mut params = ParameterSet::new();
        params.insert("w", rand_matrix(&mut rng, p, n), true).unwrap();
        params.insert("b", Tensor::vector(rand_vec(&mut rng, p)), true).unwrap();
        params.insert("table", rand_matrix(&mut rng, 4, n), true).unwrap();
        let mut g = Graph::new();
        let x = g.input(n);
        let y = g.input(n);
        let z = g.input(p);
        let w = g.param(&params, "w").unwrap();
        let b = g.param(&params, "b").unwrap();
        let table = g.param(&params, "table").unwrap();

        let mv = g.matvec(w, x).unwrap();
        let af = g.affine(w, y, b).unwrap();
        let s = g.silu(af).unwrap();
        let sum = g.add(mv, s).unwrap();
        let diff = g.sub(sum, z).unwrap();
        let sc = g.scale(diff, -0.7).unwrap();
        let row = g.gather_row(table, trial % 4).unwrap();
        let xr = g.add(x, row).unwrap();
        let cat = g.concat(&[sc, xr]).unwrap();
        let nrm = g.norm(cat).unwrap();
        let d = g.dot(x, y).unwrap();
        let cs = g.cosine(x, y).unwrap();
        let t1 = g.add(nrm, d).unwrap();
        let out = g.add(t1, cs).unwrap();

        let inputs = vec![rand_vec(&mut rng, n), rand_vec(&mut rng, n), rand_vec(&mut rng, p)];
        let err = input_fd_error(&mut g, out, &inputs, &params);
        assert!(err < 1e-5, "trial {trial}: input error {err}");

        let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        g.forward(&refs, &params).unwrap();
        let grads = g.backward_scalar(out, &params).unwrap();
        let report = grad_check(
            |pp| {
                let mut g2 = g.clone();
                g2.forward(&refs, pp)?;
                g2.scalar(out)
            },
            &params,
            &grads,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "trial {trial}: {report:?}");
    }
}

#[test]
fn insertion_order_does_not_change_gradients() {
    let mut rng = rng_from_seed(3);
    let mut params = ParameterSet::new();
    params.insert("w", rand_matrix(&mut rng, 5, 5), true).unwrap();
    let input = rand_vec(&mut rng, 5);

    // Two independent branches off the same weight, built in both orders.
    let build = |flip: bool| {
        let mut g = Graph::new();
        let x = g.input(5);
        let w = g.param(&params, "w").unwrap();
        let (a, b) = if flip {
            let s = g.silu(x).unwrap();
            let b = g.matvec(w, s).unwrap();
            let a = g.matvec(w, x).unwrap();
            (a, b)
        } else {
            let a = g.matvec(w, x).unwrap();
            let s = g.silu(x).unwrap();
            let b = g.matvec(w, s).unwrap();
            (a, b)
        };
        let out = g.dot(a, b).unwrap();
        (g, out)
    };
    let (mut g1, o1) = build(false);
    let (mut g2, o2) = build(true);
    g1.forward(&[&input], &params).unwrap();
    g2.forward(&[&input], &params).unwrap();
    assert_eq!(g1.scalar(o1).unwrap(), g2.scalar(o2).unwrap());
    let gr1 = g1.backward_scalar(o1, &params).unwrap();
    let gr2 = g2.backward_scalar(o2, &params).unwrap();
    assert_eq!(gr1, gr2);
}

#[test]
fn frozen_parameters_get_zero_gradient() {
    let mut params = ParameterSet::new();
    let w = params.insert("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false).unwrap();
    let b = params.insert("b", Tensor::vector(vec![0.5, 1.0]), true).unwrap();
    let mut g = Graph::new();
    let x = g.input(2);
    let wn = g.param(&params, "w").unwrap();
    let bn = g.param(&params, "b").unwrap();
    let y = g.affine(wn, x, bn).unwrap();
    let out = g.dot(y, y).unwrap();
    g.forward(&[&[1.0, -1.0]], &params).unwrap();
    let grads = g.backward_scalar(out, &params).unwrap();
    assert!(grads.param(w).data().iter().all(|v| *v == 0.0));
    assert!(grads.param(b).data().iter().any(|v| *v != 0.0));
}

#[test]
fn errors_are_reported() {
    let params = ParameterSet::new();
    let mut g = Graph::new();
    let x = g.input(3);
    let y = g.input(2);
    assert!(matches!(g.add(x, y), Err(Error::Shape(_))));
    let n = g.norm(x).unwrap();
    assert!(matches!(g.backward_scalar(n, &params), Err(Error::BackwardBeforeForward)));
    assert!(g.forward(&[&[1.0, 2.0, 3.0]], &params).is_err());

    let mut g = Graph::new();
    let a = g.input(2);
    let b = g.input(2);
    let c = g.cosine(a, b).unwrap();
    let err = g.forward(&[&[0.0, 0.0], &[1.0, 0.0]], &params).unwrap_err();
    assert!(matches!(err, Error::NonFiniteNode { node, op: "cosine" } if node == c.index()), "{err}");
}

#[test]
fn identical_runs_are_bit_identical() {
    let mut rng = rng_from_seed(8);
    let mut params = ParameterSet::new();
    params.insert("w", rand_matrix(&mut rng, 6, 6), true).unwrap();
    let mut g = Graph::new();
    let x = g.input(6);
    let w = g.param(&params, "w").unwrap();
    let y = g.matvec(w, x).unwrap();
    let z = g.silu(y).unwrap();
    let input = rand_vec(&mut rng, 6);
    g.forward(&[&input], &params).unwrap();
    let first: Vec<u64> = g.value(z).unwrap().iter().map(|v| v.to_bits()).collect();
    g.forward(&[&input], &params).unwrap();
    let second: Vec<u64> = g.value(z).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(first, second);
}

#[test]
fn grad_check_is_exact_for_affine_and_catches_bugs() {
    let mut rng = rng_from_seed(12);
    let mut params = ParameterSet::new();
    let wid = params.insert("w", Tensor::vector(rand_vec(&mut rng, 6)), true).unwrap();
    let c = rand_vec(&mut rng, 6);
    let mut g = Graph::new();
    let w = g.param(&params, "w").unwrap();
    let cn = g.constant(Tensor::vector(c.clone()));
    let d = g.dot(w, cn).unwrap();
    let out = g.add_scalar(d, 3.0).unwrap();
    g.forward(&[], &params).unwrap();
    let grads = g.backward_scalar(out, &params).unwrap();
    let eval = |p: &ParameterSet| {
        let mut g2 = g.clone();
        g2.forward(&[], p)?;
        g2.scalar(out)
    };
    let report = grad_check(eval, &params, &grads, &GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error <= 1e-9, "{report:?}");

    let mut corrupted = grads.clone();
    corrupted.param_mut(wid).data_mut()[2] *= 1.5;
    let report = grad_check(eval, &params, &corrupted, &GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error > 1e-2);
    assert_eq!(report.worst, Some((wid, 2)));
}

#[test]
fn large_parameter_sets_are_sampled() {
    let mut params = ParameterSet::new();
    params.insert("w", Tensor::vector(vec![0.5; 2000]), true).unwrap();
    let mut g = Graph::new();
    let w = g.param(&params, "w").unwrap();
    let out = g.dot(w, w).unwrap();
    g.forward(&[], &params).unwrap();
    let grads = g.backward_scalar(out, &params).unwrap();
    let report = grad_check(
        |p| {
            let mut g2 = g.clone();
            g2.forward(&[], p)?;
            g2.scalar(out)
        },
        &params,
        &grads,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.coords_checked, 50);
    assert!(report.max_rel_error < 1e-8);
}
