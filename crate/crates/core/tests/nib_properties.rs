mod common;

use common::tensor;
use nibkit::autodiff::{Graph, ParamStore, Tensor};
use nibkit::models::layers::{Conv2dLayer, Initializer};
use nibkit::nib::{make_noise_map, nib_forward, Injection, NibParams, NoiseFamily, NoiseMode, NoiseSpec};

fn branches(kernel: usize, cout: usize, seed: u64) -> (ParamStore<f32>, NibParams) {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let f1 = Conv2dLayer::new(&mut store, &mut init, "f1", 1, cout, kernel, 1, 1.0);
    let f2 = Conv2dLayer::new(&mut store, &mut init, "f2", 1, cout, kernel, 1, 1.0);
    for b in [f1.bias.unwrap(), f2.bias.unwrap()] {
        *store.get_mut(b) = tensor([1, cout, 1, 1], seed + 7, -0.2, 0.2).cast();
    }
    (store, NibParams::new(f1, f2).unwrap())
}

fn run(spec: &NoiseSpec, store: &ParamStore<f32>, p: &NibParams, x: &Tensor) -> Tensor {
    let g = Graph::new();
    let bound = store.bind(&g, false);
    let y = nib_forward(g.constant(x.clone()), spec, p, &bound, 0).unwrap();
    (*y.value()).clone()
}

fn tie(store: &mut ParamStore<f32>, p: &NibParams) {
    *store.get_mut(p.f2.weight) = store.get(p.f1.weight).clone();
    *store.get_mut(p.f2.bias.unwrap()) = store.get(p.f1.bias.unwrap()).clone();
}

#[test]
fn tied_branches_cancel_noise_bit_exactly() {
    let x: Tensor = tensor([2, 1, 16, 16], 1, 0.0, 1.0).cast();
    for kernel in [1, 3] {
        let (mut store, p) = branches(kernel, 8, 3);
        tie(&mut store, &p);
        let outputs: Vec<Tensor> = [0u64, 1, 42, u64::MAX]
            .iter()
            .map(|&seed| run(&NoiseSpec { seed, ..NoiseSpec::default() }, &store, &p, &x))
            .collect();
        for o in &outputs[1..] {
            assert_eq!(o.data(), outputs[0].data(), "kernel {kernel}");
        }
        // Equals 2 * f1(I).
        let g = Graph::new();
        let bound = store.bind(&g, false);
        let single = p.f1.forward(&bound, g.constant(x.clone())).unwrap();
        let doubled = single.value().map(|v| 2.0 * v);
        assert_eq!(outputs[0].data(), doubled.data());
    }
}

#[test]
fn tied_identity_branches_are_lossless() {
    let (mut store, p) = branches(1, 1, 5);
    *store.get_mut(p.f1.weight) = Tensor::full([1, 1, 1, 1], 0.5);
    *store.get_mut(p.f1.bias.unwrap()) = Tensor::zeros([1, 1, 1, 1]);
    tie(&mut store, &p);
    let x: Tensor = tensor([1, 1, 9, 9], 6, 0.0, 1.0).cast();
    assert_eq!(run(&NoiseSpec::default(), &store, &p, &x), x);
}

#[test]
fn swapping_branches_and_negating_noise_is_symmetric() {
    let x: Tensor = tensor([1, 1, 12, 12], 8, 0.0, 1.0).cast();
    let (store, p) = branches(3, 4, 9);
    let spec = NoiseSpec::default();
    let a = run(&spec, &store, &p, &x);

    // Same parameters, branches swapped, noise negated (mean 0 gaussian with
    // the hash output flipped is emulated by feeding -N through a feature map).
    let swapped = NibParams::new(p.f2.clone(), p.f1.clone()).unwrap();
    let n: Tensor = make_noise_map(&spec, 12, 12, 0).unwrap();
    let g = Graph::new();
    let bound = store.bind(&g, false);
    let xv = g.constant(x.clone());
    let nv = g.constant(n.map(|v| -v));
    let (f1, f2) = (&swapped.f1, &swapped.f2);
    let (w1, w2) = (bound.get(f1.weight), bound.get(f2.weight));
    let bias = bound.get(f1.bias.unwrap()).add(bound.get(f2.bias.unwrap())).unwrap();
    let signal = xv.conv2d(w1.add(w2).unwrap(), Some(bias), 1, 1).unwrap();
    let residual = nv.conv2d(w1.sub(w2).unwrap(), None, 1, 1).unwrap();
    let b = signal.add(residual).unwrap();
    assert_eq!(a.data(), b.value().data());

    // And numerically against the textbook form f1(I+N) + f2(I-N).
    let direct = {
        let nv = g.constant(n.clone());
        let l = p.f1.forward(&bound, xv.add(nv).unwrap()).unwrap();
        let r = p.f2.forward(&bound, xv.sub(nv).unwrap()).unwrap();
        l.add(r).unwrap()
    };
    let err = a.data().iter().zip(direct.value().data()).map(|(u, v)| (u - v).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn feature_domain_with_zero_f2_ignores_noise() {
    let x: Tensor = tensor([1, 1, 10, 10], 10, 0.0, 1.0).cast();
    let (mut store, p) = branches(1, 4, 11);
    *store.get_mut(p.f2.weight) = Tensor::zeros([4, 1, 1, 1]);
    let spec = |seed| NoiseSpec {
        injection: Injection::FeatureDomain,
        seed,
        ..NoiseSpec::default()
    };
    assert_eq!(run(&spec(1), &store, &p, &x), run(&spec(2), &store, &p, &x));
    let (store2, p2) = branches(1, 4, 11);
    assert_ne!(run(&spec(1), &store2, &p2, &x), run(&spec(2), &store2, &p2, &x));
}

#[test]
fn multiplicative_complementary_partitions_the_input() {
    let x: Tensor = tensor([1, 1, 10, 10], 12, 0.1, 1.0).cast();
    let (mut store, p) = branches(1, 1, 13);
    *store.get_mut(p.f1.weight) = Tensor::full([1, 1, 1, 1], 1.0);
    *store.get_mut(p.f2.weight) = Tensor::full([1, 1, 1, 1], 1.0);
    for b in [p.f1.bias.unwrap(), p.f2.bias.unwrap()] {
        *store.get_mut(b) = Tensor::zeros([1, 1, 1, 1]);
    }
    let spec = NoiseSpec::new(
        NoiseMode::Stationary,
        NoiseFamily::Bernoulli { p: 0.5 },
        Injection::MultiplicativeComplementary,
        3,
    )
    .unwrap();
    assert_eq!(run(&spec, &store, &p, &x), x);
}

#[test]
fn stationary_nib_is_a_pure_function_of_input() {
    let x: Tensor = tensor([3, 1, 8, 8], 14, 0.0, 1.0).cast();
    let (store, p) = branches(3, 4, 15);
    let spec = NoiseSpec::default();
    let g = Graph::new();
    let bound = store.bind(&g, false);
    let a = nib_forward(g.constant(x.clone()), &spec, &p, &bound, 0).unwrap();
    let b = nib_forward(g.constant(x.clone()), &spec, &p, &bound, 999).unwrap();
    assert_eq!(a.value().data(), b.value().data());
    let dynamic = NoiseSpec {
        mode: NoiseMode::Dynamic,
        ..spec
    };
    let c = nib_forward(g.constant(x.clone()), &dynamic, &p, &bound, 0).unwrap();
    let d = nib_forward(g.constant(x), &dynamic, &p, &bound, 999).unwrap();
    assert_ne!(c.value().data(), d.value().data());
}
