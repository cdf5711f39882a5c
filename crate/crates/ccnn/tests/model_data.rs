use ccnn::autodiff::Parameterized;
use ccnn::checkpoint;
use ccnn::data::{load_mnist_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC};
use ccnn::kernelgen::{GeneratorConfig, KernelGenerator};
use ccnn::model::{Ccnn, CcnnConfig, ForwardOptions};
use ccnn::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal<T: ccnn::Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::lit(StandardNormal.sample(&mut rng)))
}

#[test]
fn toy_parameter_count_by_hand() {
    let (c, h) = (16, 32);
    let generator = 3 * (2 * h + 2 * h) + 2 * (h * h + h) + (c * h + c) + 2;
    let block = 2 * c + generator + (c * c + c) + (c * c + c);
    let total = (c + c) + 2 * block + 2 * c + (2 * c + 2);
    let net = Ccnn::<f32>::build(CcnnConfig::new(2, c, &[256], 2)).unwrap();
    assert_eq!(net.param_count(), total);
    assert_eq!(net.param_breakdown().total(), total);
    assert_eq!(net.param_breakdown().generators, 2 * generator);
}

#[test]
fn generator_count_is_closed_form() {
    let cfg = GeneratorConfig::new(1, 32, 110, 30.0);
    let g = KernelGenerator::<f64>::new(cfg.clone(), 0).unwrap();
    let by_hand = 3 * (2 * 32 + 2 * 32) + 2 * (32 * 32 + 32) + (110 * 32 + 110) + 2;
    assert_eq!(g.param_count(), by_hand);
    assert_eq!(cfg.param_count(), by_hand);
}

#[test]
fn ccnn_4_110_size() {
    let net = Ccnn::<f32>::build(CcnnConfig::ccnn_4_110(&[784], 10)).unwrap();
    let n = net.param_count();
    assert!((100_000..=400_000).contains(&n), "{n}");
}

#[test]
fn same_seed_same_generator() {
    let cfg = GeneratorConfig::new(2, 16, 4, 10.0);
    let a = KernelGenerator::<f64>::new(cfg.clone(), 5).unwrap();
    let b = KernelGenerator::<f64>::new(cfg, 5).unwrap();
    let (mut va, mut vb) = (Vec::new(), Vec::new());
    a.visit_params(&mut |p| va.push(p.value.clone()));
    b.visit_params(&mut |p| vb.push(p.value.clone()));
    assert_eq!(va, vb);
}

#[test]
fn zero_branches_make_blocks_identity() {
    // With every residual branch scaled by zero, the logits depend only on the
    // stem, the final norm and the head.
    let cfg = CcnnConfig::new(3, 6, &[12], 4);
    let net = Ccnn::<f64>::build(cfg.clone()).unwrap();
    let shallow = {
        let mut c = cfg.clone();
        c.n_blocks = 1;
        let mut s = Ccnn::<f64>::build(c).unwrap();
        s.stem_w = net.stem_w.clone();
        s.stem_b = net.stem_b.clone();
        s.final_norm = net.final_norm.clone();
        s.head_w = net.head_w.clone();
        s.head_b = net.head_b.clone();
        s
    };
    let x = normal::<f64>(&[2, 1, 12], 1);
    let off = ForwardOptions {
        branch_gain: Some(0.0),
        ..ForwardOptions::eval()
    };
    let a = net.logits_with(&x, &off).unwrap();
    let b = shallow.logits_with(&x, &off).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
    assert!(net.logits(&x).unwrap().max_abs_diff(&a).unwrap() > 0.0);
}

/// Logit change from flipping both end tokens minus the two single flips.
fn end_token_interaction(kernel_points: Option<Vec<usize>>) -> f64 {
    let mut cfg = CcnnConfig::new(2, 4, &[64], 2);
    cfg.kernel_points = kernel_points;
    let net = Ccnn::<f64>::build(cfg).unwrap();
    let noise = normal::<f64>(&[1, 1, 64], 4);
    let logit = |a: f64, b: f64| {
        let mut x = noise.map(|v| 0.1 * v);
        x.data_mut()[0] = a;
        x.data_mut()[63] = b;
        net.logits(&x).unwrap().data()[0]
    };
    logit(1.0, 1.0) - logit(1.0, -1.0) - logit(-1.0, 1.0) + logit(-1.0, -1.0)
}

#[test]
fn short_kernels_separate_the_end_tokens() {
    // No position of a 3-point network sees both ends, so in eval mode the
    // logits are a sum of a first-token and a last-token term.
    assert!(end_token_interaction(Some(vec![3])).abs() <= 1e-12);
    assert!(end_token_interaction(None).abs() > 1e-6);
}

#[test]
fn two_d_network_runs_on_images() {
    let net = Ccnn::<f32>::build(CcnnConfig::new(1, 4, &[9, 9], 10)).unwrap();
    let y = net.logits(&normal::<f32>(&[2, 1, 9, 9], 2)).unwrap();
    assert_eq!(y.shape(), &[2, 10]);
    assert!(net.logits(&normal::<f32>(&[2, 1, 81], 2)).is_err());
}

fn assert_bit_exact<T: ccnn::Real>(seed: u64) {
    let mut cfg = CcnnConfig::new(2, 5, &[9, 9], 3);
    cfg.seed = seed;
    let net = Ccnn::<T>::build(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&net, &serde_json::json!({"epoch": 3}), &path).unwrap();
    let ck = checkpoint::read(&path).unwrap();
    assert_eq!(ck.meta["epoch"], 3);
    let back = ck.into_model::<T>().unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    net.visit_params(&mut |p| a.push((p.name.clone(), p.value.clone())));
    back.visit_params(&mut |p| b.push((p.name.clone(), p.value.clone())));
    assert_eq!(a, b);
    assert_eq!(net.buffers(), back.buffers());
    assert_eq!(checkpoint::encode(&net, &serde_json::Value::Null).unwrap(), checkpoint::encode(&back, &serde_json::Value::Null).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    assert_bit_exact::<f32>(1);
    assert_bit_exact::<f64>(2);
}

#[test]
fn missing_checkpoint_is_reported() {
    assert!(matches!(checkpoint::read(std::path::Path::new("/nonexistent/x.ckpt")), Err(Error::MissingPath(_))));
}

#[test]
fn idx_round_trip_and_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
    let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
    write_idx_images(&img, 2, 28, 28, &pixels).unwrap();
    write_idx_labels(&lab, &[7, 3]).unwrap();
    let d = load_mnist_idx(&img, &lab).unwrap();
    assert_eq!(d.inputs().shape(), &[2, 1, 28, 28]);
    assert_eq!(d.labels(), &[7, 3]);
    assert_eq!(d.inputs().data()[255], 1.0);

    // swapping the files trips the magic check
    match load_mnist_idx(&lab, &img) {
        Err(Error::Format { field, .. }) => assert!(field.contains("magic"), "{field}"),
        other => panic!("expected a format error, got {:?}", other.map(|d| d.len())),
    }
    let mut bytes = std::fs::read(&img).unwrap();
    bytes[..4].copy_from_slice(&(IDX_IMAGES_MAGIC + 1).to_be_bytes());
    std::fs::write(&img, &bytes).unwrap();
    assert!(load_mnist_idx(&img, &lab).is_err());
    assert!(matches!(load_mnist_idx(&dir.path().join("none"), &lab), Err(Error::MissingPath(_))));
}
