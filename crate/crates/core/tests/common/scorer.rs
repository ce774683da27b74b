use densescan::scorer::{ConvNetSpec, Layer, Network, OpCounter, Scorer, Tensor};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w as u32, h as u32, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

/// Nested-loop forward pass in f64, written from the layer definitions alone.
pub fn naive_forward(net: &Network<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut cur = x.clone();
    let mut convs = net.params().iter();
    for layer in &net.spec().layers {
        cur = match *layer {
            Layer::Conv { kernel: k, c_in, c_out } => {
                let p = convs.next().unwrap();
                let (oh, ow) = (cur.h - k + 1, cur.w - k + 1);
                let mut out = Tensor::zeros(c_out, oh, ow);
                for co in 0..c_out {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let mut acc = p.bias[co];
                            for ci in 0..c_in {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let wv = p.weights[((co * c_in + ci) * k + ky) * k + kx];
                                        acc += wv * cur.at(ci, y + ky, xo + kx);
                                    }
                                }
                            }
                            out.data[(co * oh + y) * ow + xo] = acc;
                        }
                    }
                }
                out
            }
            Layer::Relu => {
                let mut out = cur.clone();
                out.data.iter_mut().for_each(|v| *v = v.max(0.0));
                out
            }
            Layer::MaxPool => {
                let (oh, ow) = (cur.h / 2, cur.w / 2);
                let mut out = Tensor::zeros(cur.c, oh, ow);
                for c in 0..cur.c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    m = m.max(cur.at(c, 2 * y + dy, 2 * xo + dx));
                                }
                            }
                            out.data[(c * oh + y) * ow + xo] = m;
                        }
                    }
                }
                out
            }
            Layer::Softmax => {
                let mut out = cur.clone();
                let n = cur.h * cur.w;
                for i in 0..n {
                    let (a, b) = (cur.data[i], cur.data[n + i]);
                    let m = a.max(b);
                    let (ea, eb) = ((a - m).exp(), (b - m).exp());
                    out.data[i] = ea / (ea + eb);
                    out.data[n + i] = eb / (ea + eb);
                }
                out
            }
        };
    }
    cur
}

pub fn specs() -> Vec<ConvNetSpec> {
    use Layer::*;
    vec![
        ConvNetSpec::toy(),
        ConvNetSpec::toy_with_widths(3, 4, 5),
        ConvNetSpec {
            input_channels: 3,
            layers: vec![
                Conv { kernel: 3, c_in: 3, c_out: 4 },
                MaxPool,
                Relu,
                Conv { kernel: 2, c_in: 4, c_out: 2 },
                Softmax,
            ],
        },
    ]
}

fn loss(net: &Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    net.loss_and_grad(x, labels, &OpCounter::new()).unwrap().0
}

/// Central differences with eps = 1e-6 against the analytic gradient, over
/// every parameter of every convolution (so through relu, pooling and softmax).
pub fn gradient_check(spec: ConvNetSpec, seed: u64, k: usize) -> f64 {
    let (rf, stride) = spec.net_geometry().unwrap();
    let mut net = Network::<f64>::random(spec, seed).unwrap();
    let side = rf + k * stride;
    let x = Tensor::<f64>::from_rgb(&random_image(side, side, seed ^ 77));
    let n_out = (k + 1) * (k + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n_out).map(|_| rng.gen_range(0..2)).collect();
    let (_, grads) = net.loss_and_grad(&x, &labels, &OpCounter::new()).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.weights.iter().chain(&g.bias).copied()).collect();
    let base = net.flat_params();
    // flat_params orders each layer's weights before its biases, like `analytic`
    assert_eq!(analytic.len(), base.len());
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        net.set_flat_params(&p).unwrap();
        let up = loss(&net, &x, &labels);
        p[i] = base[i] - eps;
        net.set_flat_params(&p).unwrap();
        let down = loss(&net, &x, &labels);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    net.set_flat_params(&base).unwrap();
    worst
}

/// Largest gap between one pass over a `(rf + k s) x (rf + (k + extra) s)`
/// window and scoring each of its patches alone.
pub fn window_vs_patch_deviation(spec: ConvNetSpec, seed: u64, k: usize, extra: usize) -> f32 {
    let net = Network::<f32>::random(spec, seed).unwrap();
    let (rf, s) = (net.receptive_field(), net.total_stride());
    let img = random_image(rf + k * s, rf + (k + extra) * s, seed ^ 0x5eed);
    let ops = OpCounter::new();
    let grid = net.score_window(&img, &ops).unwrap();
    assert_eq!((grid.height, grid.width), (k + 1, k + extra + 1));
    let mut worst: f32 = 0.0;
    for i in 0..grid.height {
        for j in 0..grid.width {
            let patch = image::imageops::crop_imm(&img, (j * s) as u32, (i * s) as u32, rf as u32, rf as u32).to_image();
            worst = worst.max((grid.get(i, j) - net.patch_score(&patch, &ops).unwrap()).abs());
        }
    }
    worst
}
