use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Central-difference gradient of a scalar function of several tensors,
/// compared against the tape gradient.
fn fd_check<F>(inputs: &[Tensor], f: F, tol: f64)
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| tape.param(x.clone()).unwrap())
        .collect();
    let out = f(&vars);
    let g = tape.grad(out, &vars, false).unwrap();
    let eval = |xs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .map(|x| tape.constant(x.clone()).unwrap())
            .collect();
        f(&vars).item()
    };
    let h = 1e-6;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = g.grads[k].value();
        for i in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += h;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * h;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / numeric.abs().max(a.abs()).max(1e-3);
            assert!(
                err <= tol,
                "input {k} elem {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}

#[test]
fn square_derivative() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0)).unwrap();
    let y = x.mul(x).unwrap();
    let g = tape.grad(y, &[x], false).unwrap();
    assert_eq!(g.grads[0].item(), 6.0);
    assert!(g.detached.is_empty());
}

#[test]
fn cube_second_derivative() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0)).unwrap();
    let y = x.powi(3).unwrap();
    let dy = tape.grad(y, &[x], true).unwrap().grads[0];
    assert_eq!(dy.item(), 12.0);
    let d2 = tape.grad(dy, &[x], false).unwrap().grads[0];
    assert_eq!(d2.item(), 12.0);
}

#[test]
fn grads_without_create_graph_are_constants() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0)).unwrap();
    let dy = tape.grad(x.powi(3).unwrap(), &[x], false).unwrap().grads[0];
    assert!(!dy.is_tracked());
    let second = tape.grad(dy, &[x], false).unwrap();
    assert_eq!(second.detached, vec![0]);
    assert_eq!(second.grads[0].item(), 0.0);
}

#[test]
fn stop_gradient_blocks_flow() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0)).unwrap();
    let y = x.mul(x.stop_gradient().unwrap()).unwrap();
    assert_eq!(tape.grad(y, &[x], false).unwrap().grads[0].item(), 2.0);
}

#[test]
fn unrelated_param_is_reported_detached() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(1.0)).unwrap();
    let z = tape.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let g = tape.grad(x.exp().unwrap(), &[x, z], false).unwrap();
    assert_eq!(g.detached, vec![1]);
    assert_eq!(g.grads[1].value().data(), &[0.0, 0.0]);
}

#[test]
fn grad_rejects_non_scalar_and_foreign_tape() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(
        tape.grad(x, &[x], false),
        Err(crate::Error::NotScalar(_))
    ));
    let other = Tape::new();
    let y = other.param(Tensor::scalar(1.0)).unwrap();
    assert!(tape.grad(x.sum().unwrap(), &[y], false).is_err());
}

#[test]
fn non_finite_is_an_error() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0)).unwrap();
    assert!(matches!(
        x.log(),
        Err(crate::Error::NonFinite { op: "log" })
    ));
}

#[test]
fn activation_values() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[3])).unwrap();
    assert_eq!(z.arctan().unwrap().value().data(), &[0.0; 3]);
    assert_eq!(z.sigmoid().unwrap().value().data(), &[0.5; 3]);
    for p in z.softmax().unwrap().value().data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn log_softmax_gradient_is_onehot_minus_softmax() {
    let tape = Tape::new();
    let x = tape.param(t(&[4], &[0.3, -1.0, 2.0, 0.5])).unwrap();
    let lp = x.log_softmax().unwrap().pick_columns_1d(2);
    let g = tape.grad(lp, &[x], false).unwrap().grads[0].value();
    let p = x.softmax().unwrap().value();
    for i in 0..4 {
        let want = if i == 2 { 1.0 } else { 0.0 } - p.data()[i];
        assert!((g.data()[i] - want).abs() < 1e-14);
    }
}

trait Pick1d<'t> {
    fn pick_columns_1d(self, j: usize) -> Var<'t>;
}

impl<'t> Pick1d<'t> for Var<'t> {
    fn pick_columns_1d(self, j: usize) -> Var<'t> {
        self.gather(vec![j], &[]).unwrap()
    }
}

#[test]
fn identity_conv_passes_input_through() {
    let tape = Tape::new();
    let x = tape
        .constant(t(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]))
        .unwrap();
    let k = tape.constant(t(&[1, 1, 1, 1], &[1.0])).unwrap();
    let y = x.conv2d(k, Padding::Valid).unwrap();
    assert_eq!(y.value().data(), x.value().data());
}

#[test]
fn broadcasting_rules() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::vector(vec![1., 2., 3.])).unwrap();
    assert_eq!(a.add(b).unwrap().shape(), vec![2, 3]);
    assert_eq!(b.add(a).unwrap().shape(), vec![2, 3]);
    let c = tape.constant(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(a.add(c), Err(crate::Error::Shape { .. })));
}

#[test]
fn fd_elementwise() {
    let a = t(&[2, 3], &lcg(1, 6));
    let b = t(
        &[2, 3],
        &lcg(2, 6).iter().map(|v| v + 2.5).collect::<Vec<_>>(),
    );
    let c = t(&[3], &lcg(3, 3));
    fd_check(
        &[a, b, c],
        |v| {
            let s = v[0].mul(v[1]).unwrap().sub(v[2]).unwrap();
            let d = v[0].div(v[1]).unwrap().neg().unwrap();
            let e = v[1].log().unwrap().add(v[0].exp().unwrap()).unwrap();
            let f = v[0].arctan().unwrap().mul(v[2].sigmoid().unwrap()).unwrap();
            let r = v[0].affine(1.5, 0.1).unwrap().relu().unwrap();
            s.add(d)
                .unwrap()
                .add(e)
                .unwrap()
                .add(f)
                .unwrap()
                .add(r)
                .unwrap()
                .powi(2)
                .unwrap()
                .sum()
                .unwrap()
        },
        1e-6,
    );
}

#[test]
fn fd_matmul_all_transposes() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa = if ta { [3, 2] } else { [2, 3] };
        let sb = if tb { [4, 3] } else { [3, 4] };
        let a = t(&sa, &lcg(4, 6));
        let b = t(&sb, &lcg(5, 12));
        fd_check(
            &[a, b],
            move |v| {
                v[0].matmul_t(v[1], ta, tb)
                    .unwrap()
                    .powi(2)
                    .unwrap()
                    .sum()
                    .unwrap()
            },
            1e-6,
        );
    }
}

#[test]
fn fd_conv_both_paddings() {
    for pad in [Padding::Valid, Padding::Same] {
        let x = t(&[2, 2, 4, 3], &lcg(6, 48));
        let k = t(&[3, 2, 2, 2], &lcg(7, 24));
        fd_check(
            &[x, k],
            move |v| {
                v[0].conv2d(v[1], pad)
                    .unwrap()
                    .powi(2)
                    .unwrap()
                    .sum()
                    .unwrap()
            },
            1e-6,
        );
    }
}

#[test]
fn fd_softmax_family_and_reductions() {
    let x = t(&[3, 4], &lcg(8, 12));
    let w = t(&[3, 4], &lcg(9, 12));
    fd_check(
        &[x, w],
        |v| {
            let a = v[0]
                .log_softmax()
                .unwrap()
                .mul(v[1])
                .unwrap()
                .sum()
                .unwrap();
            let b = v[0]
                .softmax()
                .unwrap()
                .mul(v[1])
                .unwrap()
                .sum_last()
                .unwrap();
            let c = b.expand_last(2).unwrap().powi(3).unwrap().mean().unwrap();
            let d = v[0]
                .sum_to(&[4])
                .unwrap()
                .broadcast_to(&[2, 4])
                .unwrap()
                .powi(2)
                .unwrap()
                .sum()
                .unwrap();
            a.add(c).unwrap().add(d).unwrap()
        },
        1e-6,
    );
}

#[test]
fn fd_indexing_and_layout() {
    let x = t(&[2, 3], &lcg(10, 6));
    let y = t(&[2, 2], &lcg(11, 4));
    fd_check(
        &[x, y],
        |v| {
            let cat = v[0].concat_last(v[1]).unwrap();
            let g = cat.gather(vec![0, 4, 4, 9, 7], &[5]).unwrap();
            let s = g.scatter_add(vec![1, 0, 1, 2, 1], &[3]).unwrap();
            let r = cat.reshape(&[10]).unwrap().pick_columns_1d(3);
            let rows = cat
                .select_rows(&[1, 1, 0])
                .unwrap()
                .pick_columns(&[0, 4, 2])
                .unwrap();
            let p = v[0]
                .powi_each(vec![1, 2, 3, 0, -1, 2])
                .unwrap()
                .sum()
                .unwrap();
            s.powi(2)
                .unwrap()
                .sum()
                .unwrap()
                .add(r)
                .unwrap()
                .add(rows.powi(2).unwrap().sum().unwrap())
                .unwrap()
                .add(p)
                .unwrap()
        },
        1e-6,
    );
}

/// Second-order check: the gradient of a gradient-norm objective, compared
/// against finite differences of the first-order tape gradient.
#[test]
fn fd_second_order_through_conv_and_dense() {
    let x = t(&[1, 2, 3, 3], &lcg(12, 18));
    let k = t(&[2, 2, 2, 2], &lcg(13, 16));
    let w = t(&[8, 3], &lcg(14, 24));
    let objective = |kv: &Tensor, wv: &Tensor, create: bool| -> (f64, Option<(Tensor, Tensor)>) {
        let tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let k = tape.param(kv.clone()).unwrap();
        let w = tape.param(wv.clone()).unwrap();
        let h = xv
            .conv2d(k, Padding::Valid)
            .unwrap()
            .arctan()
            .unwrap()
            .reshape(&[1, 8])
            .unwrap();
        let loss = h
            .matmul(w)
            .unwrap()
            .log_softmax()
            .unwrap()
            .pick_columns(&[1])
            .unwrap()
            .sum()
            .unwrap();
        let g = tape.grad(loss, &[k, w], true).unwrap().grads;
        let meta = g[0]
            .powi(2)
            .unwrap()
            .sum()
            .unwrap()
            .add(g[1].mul(g[1]).unwrap().sum().unwrap())
            .unwrap();
        if create {
            let mg = tape.grad(meta, &[k, w], false).unwrap().grads;
            (
                meta.item(),
                Some(((*mg[0].value()).clone(), (*mg[1].value()).clone())),
            )
        } else {
            (meta.item(), None)
        }
    };
    let (_, grads) = objective(&k, &w, true);
    let (gk, gw) = grads.unwrap();
    let h = 1e-5;
    for (which, base, analytic) in [(0, &k, &gk), (1, &w, &gw)] {
        for i in 0..base.numel() {
            let mut up = base.clone();
            up.data_mut()[i] += h;
            let mut down = base.clone();
            down.data_mut()[i] -= h;
            let f = |p: &Tensor| {
                if which == 0 {
                    objective(p, &w, false).0
                } else {
                    objective(&k, p, false).0
                }
            };
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / numeric.abs().max(a.abs()).max(1e-3);
            assert!(
                err <= 1e-5,
                "param {which} elem {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}
