//! Central finite-difference checks for every differentiable tape op.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::graph::{grad, Data, Graph, Var};

fn randn(shape: &[usize], seed: u64) -> Data {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0f32..1.0))
}

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences over every input element.
fn fd_check(build: impl Fn(&Graph, &[Var]) -> Var, inputs: &[Data], h: f32, tol: f32) {
    let eval = |points: &[Data]| -> f32 {
        let g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|d| g.leaf(d.clone())).collect();
        build(&g, &vars).scalar_value()
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|d| g.leaf(d.clone())).collect();
    let y = build(&g, &vars);
    assert_eq!(y.len(), 1, "fd_check expects scalar outputs");
    let refs: Vec<&Var> = vars.iter().collect();
    let analytic = grad(&y, &refs).unwrap();

    for (i, input) in inputs.iter().enumerate() {
        let ga = analytic[i].value().as_standard_layout().to_owned();
        assert_eq!(ga.shape(), input.shape());
        for flat in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[i].as_slice_mut().unwrap()[flat] += h;
            minus[i].as_slice_mut().unwrap()[flat] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = ga.as_slice().unwrap()[flat];
            let denom = a.abs().max(fd.abs()).max(1.0);
            assert!(
                (a - fd).abs() / denom < tol,
                "input {i} elem {flat}: analytic {a} vs fd {fd}"
            );
        }
    }
}

#[test]
fn elementwise_ops() {
    let x = randn(&[6], 1);
    let y = randn(&[6], 2).mapv(|v| v + 2.5); // keep divisors away from zero
    fd_check(|_, v| v[0].add(&v[1]).mul(&v[0]).sum_all(), &[x.clone(), y.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].sub(&v[1]).square().mean_all(), &[x.clone(), y.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].div(&v[1]).sum_all(), &[x.clone(), y.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].neg().scale(3.0).add_scalar(1.0).sum_all(), &[x.clone()], 1e-2, 2e-2);
}

#[test]
fn nonlinear_ops() {
    let x = randn(&[8], 3);
    fd_check(|_, v| v[0].tanh().sum_all(), &[x.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].sigmoid().sum_all(), &[x.clone()], 1e-2, 2e-2);
    // keep away from the relu kink at 0
    let off = x.mapv(|v| if v.abs() < 0.1 { 0.5 } else { v });
    fd_check(|_, v| v[0].relu().sum_all(), &[off.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].leaky_relu(0.2).sum_all(), &[off.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].abs().sum_all(), &[off], 1e-2, 2e-2);
    let pos = x.mapv(|v| v.abs() + 0.5);
    fd_check(|_, v| v[0].sqrt().sum_all(), &[pos], 1e-2, 2e-2);
}

#[test]
fn matmul_and_shape_ops() {
    let a = randn(&[3, 4], 4);
    let b = randn(&[4, 2], 5);
    fd_check(|_, v| v[0].matmul(&v[1]).square().sum_all(), &[a.clone(), b], 1e-2, 2e-2);
    fd_check(|_, v| v[0].t().sum_all(), &[a.clone()], 1e-2, 2e-2);
    fd_check(|_, v| v[0].reshape(&[12]).square().mean_all(), &[a.clone()], 1e-2, 2e-2);
    fd_check(
        |_, v| v[0].sum_axes(&[0]).square().sum_all(),
        &[a.clone()],
        1e-2,
        2e-2,
    );
    let c = randn(&[1, 4], 6);
    fd_check(
        |_, v| v[0].broadcast_to(&[3, 4]).mul(&v[1]).sum_all(),
        &[c, a],
        1e-2,
        2e-2,
    );
}

#[test]
fn conv_ops() {
    let x = randn(&[2, 2, 6, 6], 7);
    let w = randn(&[3, 2, 4, 4], 8);
    fd_check(
        |_, v| v[0].conv2d(&v[1], 2, 1).square().sum_all(),
        &[x.clone(), w.clone()],
        1e-2,
        3e-2,
    );
    let z = randn(&[2, 3, 3, 3], 9);
    fd_check(
        |_, v| v[0].convt2d(&v[1], 2, 1).square().sum_all(),
        &[z, w],
        1e-2,
        3e-2,
    );
}

#[test]
fn pool_and_resize_ops() {
    // perturbations must not flip the argmax: space the values out
    let mut base = randn(&[1, 2, 4, 4], 10);
    for (i, v) in base.iter_mut().enumerate() {
        *v += i as f32 * 0.5;
    }
    fd_check(|_, v| v[0].maxpool2().square().sum_all(), &[base], 1e-3, 2e-2);
    let x = randn(&[1, 2, 3, 3], 11);
    fd_check(|_, v| v[0].upsample2().square().sum_all(), &[x], 1e-2, 2e-2);
}

#[test]
fn concat_ops() {
    let a = randn(&[2, 2, 2, 2], 12);
    let b = randn(&[2, 3, 2, 2], 13);
    fd_check(
        |_, v| v[0].concat1(&v[1]).square().sum_all(),
        &[a, b],
        1e-2,
        2e-2,
    );
}

/// Double backprop: differentiate a function of an input gradient with
/// respect to the weights, the exact structure of a gradient penalty.
#[test]
fn second_order_gradient_penalty_path() {
    // critic D(x) = sum(leaky_relu(conv(x, w))), penalty = (||dD/dx|| - 1)^2
    let x = randn(&[1, 1, 4, 4], 14);
    let w0 = randn(&[2, 1, 3, 3], 15);

    let penalty_value = |wv: &Data| -> f32 {
        let g = Graph::new();
        let xx = g.leaf(x.clone());
        let ww = g.leaf(wv.clone());
        let d = xx.conv2d(&ww, 1, 1).leaky_relu(0.2).sum_all();
        let gx = grad(&d, &[&xx]).unwrap().remove(0);
        let norm = gx.square().sum_all().sqrt();
        norm.add_scalar(-1.0).square().scalar_value()
    };

    // analytic d penalty / d w via a second grad() call
    let g = Graph::new();
    let xx = g.leaf(x.clone());
    let ww = g.leaf(w0.clone());
    let d = xx.conv2d(&ww, 1, 1).leaky_relu(0.2).sum_all();
    let gx = grad(&d, &[&xx]).unwrap().remove(0);
    let penalty = gx.square().sum_all().sqrt().add_scalar(-1.0).square();
    let gw = grad(&penalty, &[&ww]).unwrap().remove(0).value();

    let h = 1e-2f32;
    for flat in 0..w0.len() {
        let mut plus = w0.clone();
        let mut minus = w0.clone();
        plus.as_slice_mut().unwrap()[flat] += h;
        minus.as_slice_mut().unwrap()[flat] -= h;
        let fd = (penalty_value(&plus) - penalty_value(&minus)) / (2.0 * h);
        let a = gw.as_slice().unwrap()[flat];
        let denom = a.abs().max(fd.abs()).max(1.0);
        assert!(
            (a - fd).abs() / denom < 3e-2,
            "w elem {flat}: analytic {a} vs fd {fd}"
        );
    }
}
