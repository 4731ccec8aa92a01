use ctxnet::diffcore::{BatchNormState, Graph, NormMode, Tensor};
use ctxnet::model::{cross_attention, Arch, Batch, CrossAttnVars, ModelConfig, Network};
use ctxnet::rng::rng_from;
use ctxnet::textenc::ReportEmbedding;
use rand::Rng;

fn small() -> ModelConfig {
    ModelConfig { image_size: 16, depth: 2, channels: vec![4, 8, 16], d_e: 8, max_tokens: 8, ..ModelConfig::default() }
}

fn images(n: usize, s: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| (0..s * s).map(|_| rng.gen::<f32>()).collect()).collect()
}

fn batch(cfg: &ModelConfig, imgs: &[Vec<f32>], reports: &[ReportEmbedding]) -> Batch<f64> {
    let refs: Vec<&ReportEmbedding> = reports.iter().collect();
    Batch::new(imgs.iter().map(|v| v.as_slice()).collect(), cfg.image_size, &refs).unwrap()
}

fn logits(net: &Network<f64>, b: &Batch<f64>, mode: NormMode) -> Tensor<f64> {
    let mut g = Graph::new();
    let f = net.forward(&mut g, b, mode).unwrap();
    g.value(f.logits).clone()
}

fn reports(cfg: &ModelConfig, texts: &[&str]) -> Vec<ReportEmbedding> {
    texts.iter().map(|t| cfg.embedder().embed_text(t)).collect()
}

#[test]
fn output_shape_matches_input_for_both_arches() {
    let cfg = small();
    let imgs = images(2, 16, 1);
    let b = batch(&cfg, &imgs, &reports(&cfg, &["left apical", "right basal"]));
    for arch in [Arch::TextGated, Arch::Unet] {
        let net = Network::<f64>::new(cfg.clone(), arch).unwrap();
        assert_eq!(logits(&net, &b, NormMode::Train).shape(), &[2, 1, 16, 16]);
    }
}

#[test]
fn wrong_image_size_is_rejected() {
    let cfg = small();
    let net = Network::<f64>::new(cfg.clone(), Arch::TextGated).unwrap();
    let other = ModelConfig { image_size: 32, ..cfg.clone() };
    let b = batch(&other, &images(1, 32, 2), &reports(&cfg, &["x"]));
    let mut g = Graph::new();
    assert!(net.forward(&mut g, &b, NormMode::Eval).is_err());
}

#[test]
fn block_matches_independent_primitives() {
    let cfg = small();
    let net = Network::<f64>::new(cfg.clone(), Arch::TextGated).unwrap();
    let x = Tensor::new(&[2, 1, 16, 16], images(2, 16, 3).concat().into_iter().map(f64::from).collect()).unwrap();

    let mut g = Graph::new();
    let params = net.bind(&mut g);
    let xv = g.constant(x.clone());
    let mut updates = Vec::new();
    let out = net.block(&mut g, xv, "enc1", &params, NormMode::Train, &mut updates).unwrap();
    let got = g.value(out).clone();
    assert_eq!(got.shape(), &[2, 4, 16, 16]);
    assert!(got.data().iter().all(|&v| v >= 0.0));
    assert_eq!(updates.len(), 2);

    let mut h = Graph::new();
    let p = |h: &mut Graph<f64>, n: &str| h.param(net.param(n).unwrap().clone());
    let mut y = h.constant(x);
    for (conv, bn) in [("conv1", "bn1"), ("conv2", "bn2")] {
        let w = p(&mut h, &format!("enc1.{conv}.w"));
        let b = p(&mut h, &format!("enc1.{conv}.b"));
        y = h.conv2d(y, w, b, 1, 1).unwrap();
        let gm = p(&mut h, &format!("enc1.{bn}.gamma"));
        let bt = p(&mut h, &format!("enc1.{bn}.beta"));
        y = h.batchnorm2d(y, gm, bt, &BatchNormState::new(4), NormMode::Train).unwrap().0;
        y = h.relu(y).unwrap();
    }
    assert_eq!(got.max_abs_diff(h.value(y)), 0.0);
}

fn attn_params(g: &mut Graph<f64>, d_e: usize, c: usize, seed: u64, zero_wv: bool) -> CrossAttnVars {
    let mut rng = rng_from(seed);
    let mut mk = |g: &mut Graph<f64>, shape: &[usize], zero: bool| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| if zero { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
        g.param(Tensor::new(shape, data).unwrap())
    };
    CrossAttnVars {
        tproj_w: mk(g, &[d_e, c], false),
        tproj_b: mk(g, &[c], false),
        wq_w: mk(g, &[c, c], false),
        wq_b: mk(g, &[c], false),
        wk_w: mk(g, &[c, c], false),
        wk_b: mk(g, &[c], false),
        wv_w: mk(g, &[c, c], zero_wv),
        wv_b: mk(g, &[c], zero_wv),
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn zero_value_projection_annihilates_output() {
    let mut g = Graph::new();
    let q = g.constant(random(&[2, 3, 4, 4], 5));
    let e = g.constant(random(&[2, 5, 6], 6));
    let p = attn_params(&mut g, 6, 3, 7, true);
    let out = cross_attention(&mut g, q, e, &[5, 2], &p, true).unwrap();
    assert!(g.value(out.output).data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_token_hand_computation() {
    // c = 2, d_e = 1, one pixel per row of a 1x2 map.
    let mut g = Graph::new();
    let q = g.constant(Tensor::new(&[1, 2, 1, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    let e = g.constant(Tensor::new(&[1, 1, 1], vec![2.0]).unwrap());
    let t = |g: &mut Graph<f64>, s: &[usize], d: Vec<f64>| g.param(Tensor::new(s, d).unwrap());
    let p = CrossAttnVars {
        tproj_w: t(&mut g, &[1, 2], vec![0.5, -1.0]),
        tproj_b: t(&mut g, &[2], vec![0.0, 1.0]),
        wq_w: t(&mut g, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]),
        wq_b: t(&mut g, &[2], vec![0.1, 0.2]),
        wk_w: t(&mut g, &[2, 2], vec![-1.0, 0.5, 0.25, 2.0]),
        wk_b: t(&mut g, &[2], vec![0.0, 0.0]),
        wv_w: t(&mut g, &[2, 2], vec![0.2, -0.3, 0.4, 0.1]),
        wv_b: t(&mut g, &[2], vec![0.05, -0.05]),
    };
    let out = cross_attention(&mut g, q, e, &[1], &p, true).unwrap();
    // K = V = [2*0.5 + 0, 2*(-1) + 1] = [1, -1]
    // V·Wv + b = [1*0.2 + (-1)*0.4 + 0.05, 1*(-0.3) + (-1)*0.1 - 0.05] = [-0.15, -0.45]
    let a = [(-0.15f64).tanh(), (-0.45f64).tanh()];
    let expect = [a[0] * 1.0, a[0] * -2.0, a[1] * 0.5, a[1] * 3.0];
    for (got, want) in g.value(out.output).data().iter().zip(expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!(g.value(out.weights).data().iter().all(|&w| w == 1.0));
}

#[test]
fn gate_never_amplifies() {
    let cfg = small();
    let net = Network::<f64>::new(cfg.clone(), Arch::TextGated).unwrap();
    let b = batch(&cfg, &images(2, 16, 8), &reports(&cfg, &["large left apical pneumothorax.", "no"]));
    let mut g = Graph::new();
    let f = net.forward(&mut g, &b, NormMode::Train).unwrap();
    assert_eq!(f.levels.len(), 2);
    for lv in &f.levels {
        let q = g.value(lv.query).data();
        let o = g.value(lv.output).data();
        assert!(q.iter().zip(o).all(|(q, o)| o.abs() <= q.abs()));
    }
}

#[test]
fn token_permutation_leaves_forward_unchanged() {
    let cfg = ModelConfig { max_tokens: 6, ..small() };
    let net = Network::<f64>::new(cfg.clone(), Arch::TextGated).unwrap();
    let e = cfg.embedder().embed_text("a large left basal pneumothorax .");
    assert_eq!(e.valid_len, 6);
    let order = [3usize, 0, 5, 1, 4, 2];
    let d = cfg.d_e;
    let perm: Vec<f32> = order.iter().flat_map(|&r| e.matrix.data()[r * d..(r + 1) * d].to_vec()).collect();
    let e2 = ReportEmbedding { matrix: Tensor::new(&[6, d], perm).unwrap(), valid_len: 6 };
    let imgs = images(1, 16, 9);
    let a = logits(&net, &batch(&cfg, &imgs, &[e]), NormMode::Eval);
    let b = logits(&net, &batch(&cfg, &imgs, &[e2]), NormMode::Eval);
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn report_changes_gated_output_but_not_unet() {
    let cfg = small();
    let imgs = images(1, 16, 10);
    let r1 = reports(&cfg, &["left apical"]);
    let r2 = reports(&cfg, &["right basal small"]);
    let ctx = Network::<f64>::new(cfg.clone(), Arch::TextGated).unwrap();
    let unet = Network::<f64>::new(cfg.clone(), Arch::Unet).unwrap();
    let d = |n: &Network<f64>| logits(n, &batch(&cfg, &imgs, &r1), NormMode::Eval).max_abs_diff(&logits(n, &batch(&cfg, &imgs, &r2), NormMode::Eval));
    assert!(d(&ctx) > 1e-9);
    assert_eq!(d(&unet), 0.0);
}

#[test]
fn all_padding_reports_are_indistinguishable() {
    let cfg = small();
    let net = Network::<f64>::new(cfg.clone(), Arch::TextGated).unwrap();
    let imgs = images(1, 16, 11);
    let a = logits(&net, &batch(&cfg, &imgs, &reports(&cfg, &[""])), NormMode::Eval);
    let b = logits(&net, &batch(&cfg, &imgs, &reports(&cfg, &["   "])), NormMode::Eval);
    assert_eq!(a, b);
}

#[test]
fn unet_shares_all_its_weights_with_the_gated_net() {
    let cfg = ModelConfig::default();
    let ctx = Network::<f32>::new(cfg.clone(), Arch::TextGated).unwrap();
    let unet = Network::<f32>::new(cfg, Arch::Unet).unwrap();
    assert!(unet.num_params() < ctx.num_params());
    for (k, v) in unet.params() {
        assert_eq!(ctx.param(k), Some(v), "{k}");
    }
    assert!(ctx.params().keys().filter(|k| unet.param(k).is_none()).all(|k| k.starts_with("xattn")));
}

#[test]
fn init_is_deterministic_and_seeded() {
    let cfg = small();
    let a = Network::<f32>::new(cfg.clone(), Arch::TextGated).unwrap();
    let b = Network::<f32>::new(cfg.clone(), Arch::TextGated).unwrap();
    assert_eq!(a, b);
    let c = Network::<f32>::new(ModelConfig { init_seed: 1, ..cfg }, Arch::TextGated).unwrap();
    assert_ne!(a.param("enc1.conv1.w"), c.param("enc1.conv1.w"));
    for (k, v) in a.params() {
        if k.ends_with(".gamma") {
            assert!(v.data().iter().all(|&x| x == 1.0));
        }
        if k.ends_with(".beta") || k.ends_with(".b") {
            assert!(v.data().iter().all(|&x| x == 0.0));
        }
        if k.ends_with(".w") {
            let fan_in: usize = if k.starts_with("up") || k.starts_with("xattn") { v.dim(0) } else { v.shape()[1..].iter().product() };
            let bound = (6.0 / fan_in as f32).sqrt();
            assert!(v.data().iter().all(|x| x.abs() <= bound), "{k}");
        }
    }
}

#[test]
fn checkpoint_round_trip_restores_weights_and_stats() {
    let cfg = small();
    let mut net = Network::<f32>::new(cfg.clone(), Arch::TextGated).unwrap();
    let imgs = images(2, 16, 12);
    let reps = reports(&cfg, &["a", "b"]);
    let refs: Vec<&ReportEmbedding> = reps.iter().collect();
    let b: Batch<f32> = Batch::new(imgs.iter().map(|v| v.as_slice()).collect(), 16, &refs).unwrap();
    let mut g = Graph::new();
    let f = net.forward(&mut g, &b, NormMode::Train).unwrap();
    net.apply_bn_updates(&f.bn_updates);

    let ck = net.to_checkpoint();
    let names: Vec<&str> = ck.tensors.iter().map(|(n, _)| n.as_str()).collect();
    for n in ["enc1.conv1.w", "enc1.bn2.mean", "dec2.bn1.var", "xattn1.tproj.b", "up2.w", "head.b", "enc3.conv2.w"] {
        assert!(names.contains(&n), "{n}");
    }
    let back = Network::<f32>::from_checkpoint(cfg.clone(), &ck).unwrap();
    assert_eq!(back, net);

    let unet_ck = Network::<f32>::new(cfg.clone(), Arch::Unet).unwrap().to_checkpoint();
    assert_eq!(Network::<f32>::from_checkpoint(cfg.clone(), &unet_ck).unwrap().arch(), Arch::Unet);

    let bigger = ModelConfig { channels: vec![4, 8, 32], ..cfg };
    assert!(Network::<f32>::from_checkpoint(bigger, &ck).is_err());
}
