mod common;

use common::tensor;
use nibkit::autodiff::{Graph, Tensor};
use nibkit::flatlab::{probe_stack, LayerStack};
use nibkit::models::{build_model, receptive_field, ModelConfig, NibConfig};

#[test]
fn conv_hand_examples() {
    let x = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    let k = Tensor::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
    let g = Graph::<f64>::new();
    assert!(g.constant(x.clone()).conv2d(g.constant(k.clone()), None, 1, 0).is_err());

    let w = Tensor::<f64>::full([1, 1, 1, 1], 2.0);
    let b = Tensor::<f64>::full([1, 1, 1, 1], 0.5);
    let y = g.constant(x.clone()).conv2d(g.constant(w), Some(g.constant(b)), 1, 0).unwrap();
    assert_eq!(y.value().data(), &[2.5, 4.5, 6.5, 8.5]);

    // 3x3 kernel with the 2x2 example embedded in its lower-right corner
    // reproduces 1*1 + 4*1 at the top-left output.
    let mut k3 = Tensor::<f64>::zeros([1, 1, 3, 3]);
    k3.set(0, 0, 1, 1, 1.0);
    k3.set(0, 0, 2, 2, 1.0);
    let y = g.constant(x).conv2d(g.constant(k3), None, 1, 1).unwrap();
    assert_eq!(y.value().at(0, 0, 0, 0), 5.0);
}

#[test]
fn conv_output_size_and_shape_errors() {
    let g = Graph::<f64>::new();
    let x = g.constant(tensor([1, 2, 9, 7], 1, 0.0, 1.0));
    let w = g.constant(tensor([3, 2, 3, 3], 2, -1.0, 1.0));
    let y = x.conv2d(w, None, 2, 1).unwrap();
    assert_eq!(y.shape().dims(), [1, 3, 5, 4]);
    let bad = g.constant(tensor([3, 1, 3, 3], 3, -1.0, 1.0));
    let Err(e) = x.conv2d(bad, None, 1, 1) else { panic!("channel mismatch accepted") };
    assert!(e.to_string().contains('2') && e.to_string().contains('1'), "{e}");
}

#[test]
fn constant_input_gives_constant_conv_output_without_padding() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 3, 10, 10], 0.7));
    let w = tensor([4, 3, 3, 3], 4, -1.0, 1.0);
    let b = tensor([1, 4, 1, 1], 5, -1.0, 1.0);
    let y = x.conv2d(g.constant(w.clone()), Some(g.constant(b.clone())), 1, 0).unwrap();
    let v = y.value();
    for o in 0..4 {
        let ksum: f64 = (0..3).flat_map(|c| (0..3).flat_map(move |i| (0..3).map(move |j| (c, i, j)))).map(|(c, i, j)| w.at(o, c, i, j)).sum();
        let want = 0.7 * ksum + b.at(0, o, 0, 0);
        assert!(v.plane(0, o).iter().all(|&p| (p - want).abs() < 1e-12));
    }
}

#[test]
fn fifty_random_stacks_stay_flat_on_constant_input() {
    for seed in 0..50 {
        let stack = LayerStack::<f32>::random(seed);
        let size = (stack.receptive_extent() + 24).max(32);
        for gray in [0.0, 0.25, 0.5, 1.0] {
            let report = probe_stack(&stack, gray, size).unwrap();
            assert!(report.all_flat(), "stack {seed} gray {gray}: {:?}", report.first_non_flat());
        }
    }
}

fn changed_span(a: &Tensor<f64>, b: &Tensor<f64>) -> (usize, usize) {
    let s = a.shape();
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..s.h {
        for x in 0..s.w {
            if a.at(0, 0, y, x) != b.at(0, 0, y, x) {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    (y1 + 1 - y0, x1 + 1 - x0)
}

#[test]
fn brute_force_receptive_field_of_resnet() {
    for nib in [None, Some(NibConfig::default())] {
        let model = build_model::<f64>(&ModelConfig::resnet(8, nib).with_seed(3)).unwrap();
        assert_eq!(receptive_field(&model), (41, 41));
        let base = tensor([1, 1, 48, 48], 6, 0.2, 0.8);
        let mut bumped = base.clone();
        bumped.set(0, 0, 24, 24, 0.95);
        let (a, b) = (model.infer(&base, 0).unwrap(), model.infer(&bumped, 0).unwrap());
        let (h, w) = changed_span(&a, &b);
        assert!(h <= 41 && w <= 41, "span {h}x{w}");
        assert!(h >= 37 && w >= 37, "span {h}x{w} far below the analytic bound");
    }
}

#[test]
fn unet_receptive_field() {
    let model = build_model::<f32>(&ModelConfig::unet(8, None)).unwrap();
    assert_eq!(receptive_field(&model), (183, 183));
}
