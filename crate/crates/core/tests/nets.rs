use geolatent::equivariance::{DecoderHead, EncoderHead, GroupConv, GroupConvKind};
use geolatent::nets::layers::{Gelu, LayerNorm, Linear, MaxPool, Pointwise, Relu, Upsample2};
use geolatent::nets::{
    Adam, Checkpoint, ConvNextBlock, Family, HasParams, Model, ModelConfig, NormStats, Param, Tensor, FRAME,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

trait Layer: HasParams {
    fn fwd(&mut self, x: &Tensor) -> Tensor;
    fn bwd(&mut self, dy: &Tensor) -> Tensor;
}

macro_rules! plain_layer {
    ($t:ty) => {
        impl Layer for $t {
            fn fwd(&mut self, x: &Tensor) -> Tensor {
                self.forward(x)
            }
            fn bwd(&mut self, dy: &Tensor) -> Tensor {
                self.backward(dy)
            }
        }
    };
}
plain_layer!(Pointwise);
plain_layer!(LayerNorm);
plain_layer!(Linear);

impl Layer for GroupConv {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.forward(x).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.backward(dy)
    }
}

impl Layer for ConvNextBlock {
    fn fwd(&mut self, x: &Tensor) -> Tensor {
        self.forward(x).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor) -> Tensor {
        self.backward(dy)
    }
}

struct Stateless<L>(L);

impl<L> HasParams for Stateless<L> {
    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param)) {}
}

macro_rules! stateless {
    ($t:ty) => {
        impl Layer for Stateless<$t> {
            fn fwd(&mut self, x: &Tensor) -> Tensor {
                self.0.forward(x)
            }
            fn bwd(&mut self, dy: &Tensor) -> Tensor {
                self.0.backward(dy)
            }
        }
    };
}
stateless!(Gelu);
stateless!(Relu);
stateless!(MaxPool);
stateless!(Upsample2);

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn close(fd: f64, an: f64, tol: f64) -> bool {
    (fd - an).abs() <= tol * (1.0 + an.abs().max(fd.abs()))
}

/// Central-difference check of input and parameter gradients of the scalar
/// `Σ r ⊙ layer(x)` on `samples` random coordinates each.
fn gradcheck<L: Layer>(layer: &mut L, x_shape: &[usize], samples: usize, eps: f32, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(x_shape, &mut rng);
    let y = layer.fwd(&x);
    let r = random(y.shape(), &mut rng);
    layer.zero_grad();
    let dx = layer.bwd(&r);
    assert_eq!(dx.shape(), x.shape());

    for _ in 0..samples {
        let i = rng.random_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let lp = weighted(&layer.fwd(&xp), &r);
        xp.data_mut()[i] -= 2.0 * eps;
        let lm = weighted(&layer.fwd(&xp), &r);
        let fd = (lp - lm) / (2.0 * eps as f64);
        let an = dx.data()[i] as f64;
        assert!(close(fd, an, tol), "input grad {i}: fd {fd} vs analytic {an}");
    }

    let mut grads: Vec<(String, Vec<f32>)> = Vec::new();
    layer.visit_params(&mut |p| grads.push((p.name.clone(), p.grad.clone())));
    for (pi, (name, g)) in grads.iter().enumerate() {
        for _ in 0..samples.min(g.len()) {
            let j = rng.random_range(0..g.len());
            let eval = |delta: f32, layer: &mut L| {
                let mut k = 0;
                layer.visit_params(&mut |p| {
                    if k == pi {
                        p.value[j] += delta;
                    }
                    k += 1;
                });
            };
            eval(eps, layer);
            let lp = weighted(&layer.fwd(&x), &r);
            eval(-2.0 * eps, layer);
            let lm = weighted(&layer.fwd(&x), &r);
            eval(eps, layer);
            let fd = (lp - lm) / (2.0 * eps as f64);
            let an = g[j] as f64;
            assert!(close(fd, an, tol), "{name}[{j}]: fd {fd} vs analytic {an}");
        }
    }
}

#[test]
fn pointwise_gradients() {
    gradcheck(&mut Pointwise::new("pw", 3, 5, 1), &[2, 3, 4, 6, 6], 20, 1e-2, 1e-2);
}

#[test]
fn layer_norm_gradients() {
    gradcheck(&mut LayerNorm::new("ln", 4), &[2, 4, 2, 3, 3], 20, 1e-2, 1e-2);
}

#[test]
fn linear_gradients() {
    gradcheck(&mut Linear::new("fc", 7, 5, 1), &[3, 7], 20, 1e-2, 1e-2);
}

#[test]
fn activation_and_resampling_gradients() {
    gradcheck(&mut Stateless(Gelu::default()), &[2, 3, 5, 5], 20, 1e-3, 1e-2);
    gradcheck(&mut Stateless(Relu::default()), &[2, 3, 5, 5], 20, 1e-4, 1e-2);
    gradcheck(&mut Stateless(MaxPool::new(2, 2, 0)), &[2, 3, 8, 8], 20, 1e-4, 1e-2);
    gradcheck(&mut Stateless(MaxPool::new(3, 2, 1)), &[2, 3, 9, 9], 20, 1e-4, 1e-2);
    gradcheck(&mut Stateless(Upsample2), &[2, 3, 4, 4], 20, 1e-2, 1e-2);
}

#[test]
fn group_conv_gradients() {
    for n in [1, 4, 8] {
        gradcheck(&mut GroupConv::new("lift", GroupConvKind::Lifting, 2, 3, 5, n, 3), &[2, 2, 9, 9], 15, 1e-2, 1e-2);
        gradcheck(&mut GroupConv::new("gc", GroupConvKind::Group, 2, 3, 5, n, 3), &[2, 2, n, 9, 9], 15, 1e-2, 1e-2);
        gradcheck(&mut GroupConv::new("dw", GroupConvKind::Depthwise, 3, 3, 5, n, 3), &[2, 3, n, 9, 9], 15, 1e-2, 1e-2);
    }
}

#[test]
fn convnext_block_gradients() {
    gradcheck(&mut ConvNextBlock::new("blk", 3, 2, 5, 4, 5), &[2, 3, 4, 7, 7], 15, 2e-3, 2e-2);
}

#[test]
fn decoder_head_gradients() {
    let mut head = DecoderHead::new("dh", 6, 3, 4, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = head.forward(&z);
    let r = random(y.shape(), &mut rng);
    head.zero_grad();
    let dz = head.backward(&r);
    for i in 0..z.len() {
        let eps = 1e-2f32;
        let mut zp = z.clone();
        zp[i] += eps;
        let lp = weighted(&head.forward(&zp), &r);
        zp[i] -= 2.0 * eps;
        let lm = weighted(&head.forward(&zp), &r);
        let fd = (lp - lm) / (2.0 * eps as f64);
        assert!(close(fd, dz[i] as f64, 1e-2), "dz[{i}]: {fd} vs {}", dz[i]);
    }
}

#[test]
fn encoder_head_gradients() {
    let mut head = EncoderHead::new("eh", 3, 4, 5, 6, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = random(&[2, 3, 4, 5, 5], &mut rng);
    let out = head.forward(&f);
    let rmu: Vec<f32> = (0..out.mu_raw.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rs: Vec<f32> = (0..out.scale_raw.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let score = |o: &geolatent::equivariance::HeadOutput| -> f64 {
        o.mu_raw.iter().zip(&rmu).map(|(a, b)| (a * b) as f64).sum::<f64>()
            + o.scale_raw.iter().zip(&rs).map(|(a, b)| (a * b) as f64).sum::<f64>()
    };
    head.zero_grad();
    let df = head.backward(&rmu, &rs, f.shape());
    for _ in 0..30 {
        let i = rng.random_range(0..f.len());
        let eps = 1e-3f32;
        let mut fp = f.clone();
        fp.data_mut()[i] += eps;
        let po = head.forward(&fp);
        let lp = score(&po);
        fp.data_mut()[i] -= 2.0 * eps;
        let mo = head.forward(&fp);
        let lm = score(&mo);
        if po.pose != out.pose || mo.pose != out.pose {
            continue;
        }
        let fd = (lp - lm) / (2.0 * eps as f64);
        assert!(close(fd, df.data()[i] as f64, 2e-2), "df[{i}]: {fd} vs {}", df.data()[i]);
    }
}

fn tiny(family: Family, variational: bool, equivariant: bool, m: usize) -> ModelConfig {
    ModelConfig {
        family,
        variational,
        equivariant,
        latent_dim: m,
        widths: [2, 3, 4],
        expansion: 2,
        channels: 1,
        group_order: 4,
        ..ModelConfig::default()
    }
}

fn image_batch(b: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random(&[b, c, FRAME, FRAME], &mut rng)
}

/// Directional finite differences of the full training loss along the
/// gradient, separately for encoder and decoder parameters. The sampling
/// noise is frozen by reseeding the generator for every evaluation. Max
/// pooling and pose argmax make the loss piecewise smooth, so the step is
/// kept small.
fn model_gradcheck(cfg: ModelConfig, tol: f64) {
    let mut model = Model::new(cfg, 11).unwrap();
    let x = image_batch(2, 1, 5);
    let run = |model: &mut Model| model.forward(&x, &mut ChaCha8Rng::seed_from_u64(99)).unwrap().loss.total;
    model.train_step(&x, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    for prefix in ["enc.", "dec."] {
        let mut dir: Vec<Vec<f32>> = Vec::new();
        model.visit_params(&mut |p| {
            dir.push(if p.name.starts_with(prefix) { p.grad.clone() } else { vec![0.0; p.len()] })
        });
        let norm = dir.iter().flatten().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
        assert!(norm > 0.0, "{prefix} gradient vanished");
        let shift = |model: &mut Model, scale: f64| {
            let mut k = 0;
            model.visit_params(&mut |p| {
                for (v, g) in p.value.iter_mut().zip(&dir[k]) {
                    *v += (scale * *g as f64 / norm) as f32;
                }
                k += 1;
            });
        };
        let eps = 1e-5;
        shift(&mut model, eps);
        let lp = run(&mut model);
        shift(&mut model, -2.0 * eps);
        let lm = run(&mut model);
        shift(&mut model, eps);
        let fd = (lp - lm) / (2.0 * eps);
        assert!((fd - norm).abs() <= tol * norm, "{prefix}: fd {fd} vs |g| {norm}");
    }
}

#[test]
fn gaussian_vae_gradients() {
    model_gradcheck(tiny(Family::Gaussian, true, false, 8), 3e-2);
}

#[test]
fn gaussian_ae_with_spread_gradients() {
    let mut cfg = tiny(Family::Gaussian, false, false, 8);
    cfg.spread_loss_weight = 0.5;
    model_gradcheck(cfg, 3e-2);
}

#[test]
fn spherical_ae_gradients() {
    let mut cfg = tiny(Family::Spherical, false, false, 3);
    cfg.spread_loss_weight = 1.0;
    model_gradcheck(cfg, 3e-2);
}

#[test]
fn equivariant_gaussian_ae_gradients() {
    model_gradcheck(tiny(Family::Gaussian, false, true, 8), 3e-2);
}

#[test]
fn spherical_vae_trains_without_nan() {
    let mut model = Model::new(tiny(Family::Spherical, true, false, 16), 2).unwrap();
    let x = image_batch(4, 1, 8);
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let out = model.train_step(&x, &mut rng).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.heads.iter().all(|h| h.scale >= 100.0));
        adam.step(&mut model, 1e-3);
    }
}

#[test]
fn training_reduces_reconstruction() {
    let mut model = Model::new(tiny(Family::Gaussian, false, false, 8), 2).unwrap();
    let mut data = Vec::new();
    for i in 0..4 {
        for y in 0..FRAME {
            for x in 0..FRAME {
                data.push(((x as f32 * 0.2 + i as f32).sin() + (y as f32 * 0.1).cos()) * 0.5);
            }
        }
    }
    let x = Tensor::from_vec(&[4, 1, FRAME, FRAME], data).unwrap();
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = model.train_step(&x, &mut rng).unwrap().loss.reconstruction;
    adam.step(&mut model, 1e-2);
    let mut last = first;
    for _ in 0..30 {
        last = model.train_step(&x, &mut rng).unwrap().loss.reconstruction;
        adam.step(&mut model, 1e-2);
    }
    assert!(last < 0.8 * first, "{first} -> {last}");
}

#[test]
fn shared_layers_initialize_identically_across_latent_sizes() {
    let mut a = Model::new(tiny(Family::Gaussian, true, false, 8), 4).unwrap();
    let mut b = Model::new(tiny(Family::Gaussian, true, false, 16), 4).unwrap();
    let mut pa = Vec::new();
    a.encoder.visit_params(&mut |p| pa.push((p.name.clone(), p.value.clone())));
    let mut pb = Vec::new();
    b.encoder.visit_params(&mut |p| pb.push((p.name.clone(), p.value.clone())));
    for ((na, va), (nb, vb)) in pa.iter().zip(&pb) {
        assert_eq!(na, nb);
        if !na.contains("head") {
            assert_eq!(va, vb, "{na}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut model = Model::new(tiny(Family::Spherical, true, true, 8), 3).unwrap();
    let x = image_batch(2, 1, 2);
    let mut adam = Adam::new();
    model.train_step(&x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    adam.step(&mut model, 1e-3);
    let ck = Checkpoint::capture(&mut model, Some(&adam), NormStats::identity(1), 3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.header.epoch, 1);
    assert_eq!(loaded.restore_optimizer(), adam);
    let mut restored = loaded.restore_model().unwrap();
    let a = model.encode(&x).unwrap();
    let b = restored.encode(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"definitely not a checkpoint").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn config_invariants() {
    let mut cfg = tiny(Family::Spherical, true, false, 512);
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("256"), "{err}");
    cfg.latent_dim = 256;
    assert!(cfg.validate().is_ok());
    let eq = tiny(Family::Gaussian, true, true, 4);
    assert!(eq.validate().is_err());
    assert!(Model::new(tiny(Family::Spherical, true, false, 512), 0).is_err());
}

#[test]
fn spherical_vae_gradients() {
    let mut cfg = tiny(Family::Spherical, true, false, 8);
    cfg.kappa_min = 1.0;
    // The score term is an expectation correction, not a pathwise derivative.
    cfg.score_correction = false;
    model_gradcheck(cfg, 5e-2);
}

#[test]
fn equivariant_spherical_vae_gradients() {
    model_gradcheck(tiny(Family::Spherical, true, true, 8), 5e-2);
}
