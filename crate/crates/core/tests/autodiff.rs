use bracketlab::autodiff::{check_gradient, Graph, Shape, Tensor};
use bracketlab::nn::{mlp_spec, NetParams};

#[test]
fn gradient_inside_a_loss() {
    // f(w) = wᵀ ∇_x(½‖x‖²) = wᵀx, so ∂f/∂w = x.
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0]));
    let w = g.parameter(Tensor::vector(vec![3.0, 5.0]));
    let sq = g.square(x).unwrap();
    let s = g.sum(sq).unwrap();
    let half = g.scale_by(s, 0.5).unwrap();
    let gx = g.gradient(half, &[x]).unwrap()[0];
    let f = g.dot(w, gx).unwrap();
    let dw = g.gradient(f, &[w]).unwrap()[0];
    assert_eq!(g.value(dw).data(), &[1.0, 2.0]);

    // Central differences over the composite.
    let h = 1e-6;
    for k in 0..2 {
        let mut eval = |delta: f64| {
            let mut v = vec![3.0, 5.0];
            v[k] += delta;
            g.set_value(w, &v).unwrap();
            g.recompute();
            g.scalar(f)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!((fd - [1.0, 2.0][k]).abs() < 1e-8, "{fd}");
    }
}

#[test]
fn two_layer_mlp_matches_central_differences() {
    let p = NetParams::init_kaiming(&mlp_spec(8, 2, 6, 3), 11).unwrap();
    let mut g = Graph::new();
    let net = p.bind(&mut g);
    let x = g.input(Tensor::vector((0..8).map(|i| 0.1 * i as f64 - 0.3).collect()));
    let y = net.forward(&mut g, x).unwrap();
    let sq = g.square(y).unwrap();
    let f = g.sum(sq).unwrap();
    let mut leaves = vec![x];
    leaves.extend(net.handles());
    let err = check_gradient(&mut g, f, &leaves, 1e-6).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn second_order_path_through_input_gradient() {
    // Loss on ∇_x of a scalar network output, differentiated wrt the weights.
    let p = NetParams::init_kaiming(&mlp_spec(4, 2, 5, 1), 3).unwrap();
    let mut g = Graph::new();
    let net = p.bind(&mut g);
    let x = g.input(Tensor::vector(vec![0.2, -0.4, 0.7, 0.1]));
    let y = net.forward(&mut g, x).unwrap();
    let e = g.index(y, 0).unwrap();
    let gx = g.gradient(e, &[x]).unwrap()[0];
    let sq = g.square(gx).unwrap();
    let f = g.sum(sq).unwrap();
    let err = check_gradient(&mut g, f, &net.handles(), 1e-6).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn matrix_primitives_differentiate() {
    let mut g = Graph::new();
    let a = g.input(Tensor::matrix(3, 3, (0..9).map(|i| (i as f64 * 0.37).sin()).collect()));
    let v = g.input(Tensor::vector(vec![0.5, -1.0, 2.0]));
    let at = g.transpose(a).unwrap();
    let skew = g.sub(a, at).unwrap();
    let aat = g.matmul(a, at).unwrap();
    let both = g.add(skew, aat).unwrap();
    let mv = g.matvec(both, v).unwrap();
    let ex = g.softplus(mv).unwrap();
    let ln = g.ln(ex).unwrap();
    let f = g.sum(ln).unwrap();
    assert_eq!(g.shape(aat), Shape::Matrix(3, 3));
    let err = check_gradient(&mut g, f, &[a, v], 1e-6).unwrap();
    assert!(err < 1e-6, "{err}");
}
