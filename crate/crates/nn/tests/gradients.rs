use std::rc::Rc;

use flowguide_core::motion::FlowField;
use flowguide_core::Prng;
use flowguide_nn::{Graph, ParamStore, Var};
use ndarray::{Array3, ArrayD, IxDyn};

fn random(shape: &[usize], rng: &mut Prng) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.uniform_range(-1.0, 1.0) as f32)
}

/// Compares the tape gradient of `Σ probe ⊙ f(inputs)` against central
/// differences for every input entry.
fn check(inputs: Vec<ArrayD<f32>>, seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = Prng::new(seed);
    let eval = |vals: &[ArrayD<f32>], probe: Option<&ArrayD<f32>>| -> (f64, Option<Vec<ArrayD<f32>>>, ArrayD<f32>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.input(v.clone())).collect();
        let out = f(&mut g, &vars);
        let shape = g.value(out).shape().to_vec();
        let Some(probe) = probe else {
            return (0.0, None, ArrayD::zeros(IxDyn(&shape)));
        };
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p);
        let loss = g.sum(prod);
        let value = (g.value(out).mapv(f64::from) * probe.mapv(f64::from)).sum();
        let grads = g.backward(loss);
        let gs = vars
            .iter()
            .map(|v| grads.get(*v).cloned().unwrap_or_else(|| ArrayD::zeros(g.value(*v).raw_dim())))
            .collect();
        (value, Some(gs), ArrayD::zeros(IxDyn(&shape)))
    };
    let (_, _, shape_probe) = eval(&inputs, None);
    let probe = random(shape_probe.shape(), &mut rng);
    let (_, grads, _) = eval(&inputs, Some(&probe));
    let grads = grads.unwrap();
    let h = 1e-2f32;
    for (k, input) in inputs.iter().enumerate() {
        let mut num = ArrayD::<f32>::zeros(input.raw_dim());
        for idx in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].as_slice_mut().unwrap()[idx] += h;
            let mut minus = inputs.clone();
            minus[k].as_slice_mut().unwrap()[idx] -= h;
            let fp = eval(&plus, Some(&probe)).0;
            let fm = eval(&minus, Some(&probe)).0;
            num.as_slice_mut().unwrap()[idx] = ((fp - fm) / (2.0 * h as f64)) as f32;
        }
        let diff = (&num - &grads[k]).mapv(|v| v * v).sum().sqrt();
        let scale = num.mapv(|v| v * v).sum().sqrt().max(1e-3);
        assert!(diff / scale < 2e-2, "input {k}: relative error {}", diff / scale);
    }
}

#[test]
fn conv2d_grads() {
    let mut rng = Prng::new(1);
    for (stride, k) in [(1, 3), (2, 3), (1, 1)] {
        let inputs = vec![random(&[2, 3, 5, 6], &mut rng), random(&[4, 3, k, k], &mut rng), random(&[4], &mut rng)];
        check(inputs, 2, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, k / 2));
    }
}

#[test]
fn temporal_conv_grads() {
    let mut rng = Prng::new(3);
    for frames in [1, 3] {
        let inputs = vec![random(&[6, 2, 3, 3], &mut rng), random(&[3, 2, 3], &mut rng), random(&[3], &mut rng)];
        check(inputs, 4, |g, v| g.temporal_conv(v[0], v[1], v[2], frames));
    }
}

#[test]
fn linear_and_channel_bias_grads() {
    let mut rng = Prng::new(5);
    let inputs = vec![random(&[2, 4], &mut rng), random(&[3, 4], &mut rng), random(&[3], &mut rng), random(&[2, 3, 2, 2], &mut rng)];
    check(inputs, 6, |g, v| {
        let e = g.linear(v[0], v[1], v[2]);
        g.add_channel(v[3], e)
    });
}

#[test]
fn elementwise_grads() {
    let mut rng = Prng::new(7);
    let inputs = vec![random(&[2, 3, 4], &mut rng), random(&[2, 3, 4], &mut rng)];
    check(inputs.clone(), 8, |g, v| {
        let a = g.mul(v[0], v[1]);
        let b = g.sub(a, v[1]);
        let c = g.silu(b);
        let d = g.add(c, v[0]);
        let e = g.leaky_relu(d, 0.2);
        let f = g.softplus(e);
        let sq = g.square(f);
        g.scale(sq, 0.5)
    });
    check(inputs, 9, |g, v| {
        let a = g.abs(v[0]);
        let b = g.add(a, v[1]);
        let c = g.scale(b, 0.4);
        g.clamp01(c)
    });
}

#[test]
fn structural_grads() {
    let mut rng = Prng::new(10);
    let inputs = vec![random(&[3, 2, 2, 3], &mut rng), random(&[3, 1, 4, 6], &mut rng)];
    check(inputs, 11, |g, v| {
        let up = g.upsample2(v[0]);
        let cat = g.concat(up, v[1]);
        g.select_frames(cat, vec![2, 0, 0])
    });
}

#[test]
fn reductions_and_constants() {
    let mut rng = Prng::new(12);
    let c = Rc::new(random(&[2, 5], &mut rng));
    let inputs = vec![random(&[2, 5], &mut rng)];
    check(inputs, 13, move |g, v| {
        let m = g.mul_const(v[0], c.clone());
        let s = g.sum(m);
        let mean = g.mean(v[0]);
        let both = g.add(s, mean);
        g.square(both)
    });
}

#[test]
fn warp_grads() {
    let mut rng = Prng::new(14);
    let flows: Vec<FlowField<f32>> = (0..2)
        .map(|_| FlowField::new(Array3::from_shape_fn((2, 4, 5), |_| rng.uniform_range(-2.0, 2.0) as f32)).unwrap())
        .collect();
    let flows = Rc::new(flows);
    let inputs = vec![random(&[2, 3, 4, 5], &mut rng)];
    check(inputs, 15, move |g, v| g.warp(v[0], flows.clone()));
}

#[test]
fn parameters_receive_gradients() {
    let mut rng = Prng::new(16);
    let mut store = ParamStore::new();
    let conv = flowguide_nn::layers::Conv2d::new(&mut store, "c", 1, 2, 3, 1, &mut rng);
    store.set_trainable("c.bias", false);
    let mut g = Graph::new();
    let x = g.constant(random(&[1, 1, 4, 4], &mut rng));
    let y = conv.forward(&mut g, &store, x);
    let s = g.square(y);
    let loss = g.sum(s);
    let grads = g.backward(loss);
    assert!(grads.get(x).is_none());
    g.accumulate_param_grads(&grads, &mut store);
    assert!(store.grad(conv.weight).iter().any(|&v| v != 0.0));
    assert!(store.grad(conv.bias).iter().all(|&v| v == 0.0));
}

#[test]
fn gradients_route_to_the_owning_store() {
    let mut rng = Prng::new(17);
    let mut a = ParamStore::new();
    let mut b = ParamStore::new();
    let ca = flowguide_nn::layers::Conv2d::new(&mut a, "a", 1, 1, 3, 1, &mut rng);
    let cb = flowguide_nn::layers::Conv2d::new(&mut b, "b", 1, 1, 3, 1, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(random(&[1, 1, 4, 4], &mut rng));
    let y = cb.forward(&mut g, &b, x);
    let loss = g.sum(y);
    let grads = g.backward(loss);
    g.accumulate_param_grads(&grads, &mut a);
    assert_eq!(a.grad(ca.weight).iter().map(|v| v.abs()).sum::<f32>(), 0.0);
    g.accumulate_param_grads(&grads, &mut b);
    assert!(b.grad(cb.weight).iter().map(|v| v.abs()).sum::<f32>() > 0.0);
}
