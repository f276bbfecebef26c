use geolatent::equivariance::{
    canonicalize, estimate_pose, project_invariant, BlockRotation, GroupAction, GroupConv, GroupConvKind,
    GroupFeatureMap, PoseDescriptor, Projection, RotationMap,
};
use geolatent::nets::{ConvNextBlock, Family, Model, ModelConfig, Tensor, FRAME};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Sum of random Gaussian bumps on every plane; band-limited enough for
/// bilinear resampling to be accurate.
fn smooth(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let s = shape[shape.len() - 1];
    let planes: usize = shape[..shape.len() - 2].iter().product();
    let mut data = Vec::with_capacity(planes * s * s);
    for _ in 0..planes {
        let bumps: Vec<(f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.2..0.8) * s as f64,
                    rng.random_range(0.2..0.8) * s as f64,
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let sigma = s as f64 / 6.0;
        for r in 0..s {
            for c in 0..s {
                let v: f64 = bumps
                    .iter()
                    .map(|&(br, bc, a)| {
                        a * (-((r as f64 - br).powi(2) + (c as f64 - bc).powi(2)) / (2.0 * sigma * sigma)).exp()
                    })
                    .sum();
                data.push(v as f32);
            }
        }
    }
    Tensor::from_vec(shape, data).unwrap()
}

fn rotate_image(x: &Tensor, g: usize, n: usize) -> Tensor {
    let s = x.shape()[x.shape().len() - 1];
    let map = RotationMap::for_group(s, g, n);
    let mut out = x.clone();
    for (src, dst) in x.data().chunks(s * s).zip(out.data_mut().chunks_mut(s * s)) {
        map.apply(src, dst);
    }
    out
}

fn act(f: &Tensor, g: usize, n: usize) -> Tensor {
    let s = f.shape()[4];
    let a = GroupAction::new(s, g, n);
    let mut out = f.clone();
    for i in 0..f.batch() {
        a.apply(f.item(i), out.item_mut(i));
    }
    out
}

/// `‖a − b‖ / ‖b‖`, optionally restricted to a centred disc of the planes.
fn rel_diff(a: &Tensor, b: &Tensor, radius: Option<f64>) -> f64 {
    let s = a.shape()[a.shape().len() - 1];
    let c = (s as f64 - 1.0) / 2.0;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        let p = i % (s * s);
        let (r, q) = ((p / s) as f64 - c, (p % s) as f64 - c);
        if radius.is_some_and(|rad| r * r + q * q > rad * rad) {
            continue;
        }
        num += (x as f64 - y as f64).powi(2);
        den += (y as f64).powi(2);
    }
    (num / den).sqrt()
}

fn naive_conv(x: &Tensor, w: &[f32], bias: &[f32], cout: usize, k: usize) -> Vec<f32> {
    let sh = x.shape();
    let (b, cin, h, wd) = (sh[0], sh[1], sh[2], sh[3]);
    let p = (k / 2) as isize;
    let mut y = vec![0.0f32; b * cout * h * wd];
    for bi in 0..b {
        for o in 0..cout {
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = bias[o] as f64;
                    for ci in 0..cin {
                        for dr in 0..k {
                            for dc in 0..k {
                                let (rr, cc) = (r as isize + dr as isize - p, c as isize + dc as isize - p);
                                if rr < 0 || cc < 0 || rr >= h as isize || cc >= wd as isize {
                                    continue;
                                }
                                acc += w[((o * cin + ci) * k + dr) * k + dc] as f64
                                    * x.data()[((bi * cin + ci) * h + rr as usize) * wd + cc as usize] as f64;
                            }
                        }
                    }
                    y[((bi * cout + o) * h + r) * wd + c] = acc as f32;
                }
            }
        }
    }
    y
}

#[test]
fn trivial_group_is_plain_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 3, 10, 10], &mut rng);
    let mut conv = GroupConv::new("c", GroupConvKind::Lifting, 3, 4, 5, 1, 9);
    let y = conv.forward(&x).unwrap();
    assert_eq!(y.shape(), &[2, 4, 1, 10, 10]);
    let want = naive_conv(&x, &conv.weight.value, &conv.bias.value, 4, 5);
    for (a, b) in y.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn identity_kernel_passes_group_features_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random(&[1, 2, 4, 7, 7], &mut rng);
    let mut conv = GroupConv::new("c", GroupConvKind::Group, 2, 2, 3, 4, 0);
    conv.weight.value.iter_mut().for_each(|v| *v = 0.0);
    conv.bias.value.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..2 {
        // weight [cout, cin, N, k, k]: delta at centre, same channel, same group element
        conv.weight.value[((c * 2 + c) * 4) * 9 + 4] = 1.0;
    }
    let y = conv.forward(&f).unwrap();
    assert_eq!(y.data(), f.data());
}

#[test]
fn lifting_is_exactly_c4_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut conv = GroupConv::new("c", GroupConvKind::Lifting, 3, 4, 5, 4, 5);
    for g in 1..4 {
        let x = random(&[2, 3, 12, 12], &mut rng);
        let lhs = conv.forward(&rotate_image(&x, g, 4)).unwrap();
        let rhs = act(&conv.forward(&x).unwrap(), g, 4);
        assert!(rel_diff(&lhs, &rhs, None) < 1e-6, "g = {g}");
    }
}

#[test]
fn group_and_depthwise_convs_are_exactly_c4_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut gc = GroupConv::new("g", GroupConvKind::Group, 3, 2, 5, 4, 5);
    let mut dw = GroupConv::new("d", GroupConvKind::Depthwise, 3, 3, 5, 4, 5);
    for g in 1..4 {
        let f = random(&[2, 3, 4, 11, 11], &mut rng);
        let fg = act(&f, g, 4);
        assert!(rel_diff(&gc.forward(&fg).unwrap(), &act(&gc.forward(&f).unwrap(), g, 4), None) < 1e-6);
        assert!(rel_diff(&dw.forward(&fg).unwrap(), &act(&dw.forward(&f).unwrap(), g, 4), None) < 1e-6);
    }
}

#[test]
fn convnext_block_is_exactly_c4_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut block = ConvNextBlock::new("b", 3, 2, 5, 4, 6);
    let f = random(&[2, 3, 4, 10, 10], &mut rng);
    let lhs = block.forward(&act(&f, 1, 4)).unwrap();
    let rhs = act(&block.forward(&f).unwrap(), 1, 4);
    assert!(rel_diff(&lhs, &rhs, None) < 1e-6);
}

/// Overwrites 5×5 kernels with random, mildly anisotropic Gaussians of width
/// about 1.2 px. Narrower kernels alias under 45° resampling and wider ones
/// are clipped by the square support; white-noise kernels give a
/// commutator near 0.4.
fn smooth_kernels(w: &mut [f32], rng: &mut ChaCha8Rng) {
    for k in w.chunks_mut(25) {
        let (a, th) = (rng.random_range(-1.0..1.0), rng.random_range(0.0..std::f64::consts::PI));
        let sx = rng.random_range(1.15..1.25);
        let sy = sx * rng.random_range(0.9..1.0);
        for r in 0..5 {
            for c in 0..5 {
                let (y, x) = (r as f64 - 2.0, c as f64 - 2.0);
                let (u, v) = (x * th.cos() + y * th.sin(), -x * th.sin() + y * th.cos());
                k[r * 5 + c] = (a * (-(u * u / (2.0 * sx * sx) + v * v / (2.0 * sy * sy))).exp()) as f32;
            }
        }
    }
}

/// Measured relative commutators sit near 3e-2; bilinear resampling of a
/// 5×5 kernel alone contributes about 2e-2.
const C8_TOLERANCE: f64 = 4e-2;

#[test]
fn c8_commutator_within_interpolation_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = 33;
    let radius = Some(s as f64 / 2.0 - 4.0);
    let mut lift = GroupConv::new("l", GroupConvKind::Lifting, 2, 3, 5, 8, 7);
    let mut gc = GroupConv::new("g", GroupConvKind::Group, 3, 3, 5, 8, 7);
    smooth_kernels(&mut lift.weight.value, &mut rng);
    smooth_kernels(&mut gc.weight.value, &mut rng);
    for g in [1, 3, 5] {
        let x = smooth(&[2, 2, s, s], &mut rng);
        let lhs = lift.forward(&rotate_image(&x, g, 8)).unwrap();
        let rhs = act(&lift.forward(&x).unwrap(), g, 8);
        let e = rel_diff(&lhs, &rhs, radius);
        assert!(e < C8_TOLERANCE, "lifting g = {g}: {e}");

        let f = smooth(&[2, 3, 8, s, s], &mut rng);
        let lhs = gc.forward(&act(&f, g, 8)).unwrap();
        let rhs = act(&gc.forward(&f).unwrap(), g, 8);
        let e = rel_diff(&lhs, &rhs, radius);
        assert!(e < C8_TOLERANCE, "group g = {g}: {e}");
    }
}

#[test]
fn projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = Vec::new();
    for _ in 0..2 * 3 {
        let plane: Vec<f32> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..4 {
            data.extend_from_slice(&plane);
        }
    }
    let f = Tensor::from_vec(&[2, 3, 4, 5, 5], data).unwrap();
    let mean = project_invariant(&f, Projection::Mean).unwrap();
    let max = project_invariant(&f, Projection::Max).unwrap();
    let sum = project_invariant(&f, Projection::Sum).unwrap();
    for i in 0..mean.len() {
        assert!((mean.data()[i] - max.data()[i]).abs() < 1e-6);
        assert!((mean.data()[i] - sum.data()[i] / 4.0).abs() < 1e-6);
    }
    let single = random(&[2, 3, 1, 5, 5], &mut rng);
    assert_eq!(project_invariant(&single, Projection::Max).unwrap().data(), single.data());

    let mut lift = GroupConv::new("l", GroupConvKind::Lifting, 1, 2, 5, 4, 1);
    let x = random(&[1, 1, 9, 9], &mut rng);
    for mode in [Projection::Mean, Projection::Max, Projection::Sum] {
        let a = project_invariant(&lift.forward(&rotate_image(&x, 1, 4)).unwrap(), mode).unwrap();
        let b = rotate_image(&project_invariant(&lift.forward(&x).unwrap(), mode).unwrap(), 1, 4);
        assert!(rel_diff(&a, &b, None) < 1e-6);
    }
}

#[test]
fn pose_tie_and_trivial_group_rules() {
    let f = Tensor::from_vec(&[1, 2, 4, 3, 3], vec![1.0; 72]).unwrap();
    let poses = estimate_pose(&GroupFeatureMap::new(f, 4).unwrap());
    assert_eq!(poses[0].index(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random(&[3, 2, 1, 3, 3], &mut rng);
    assert!(estimate_pose(&GroupFeatureMap::new(g, 1).unwrap()).iter().all(|p| p.index() == 0));
}

#[test]
fn pose_shifts_with_the_feature_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let f = random(&[1, 3, 4, 6, 6], &mut rng);
        let p0 = estimate_pose(&GroupFeatureMap::new(f.clone(), 4).unwrap())[0].index();
        for g in 1..4 {
            let p = estimate_pose(&GroupFeatureMap::new(act(&f, g, 4), 4).unwrap())[0].index();
            assert_eq!(p, (p0 + g) % 4);
        }
    }
}

#[test]
fn canonicalize_identity_pose() {
    let rho = BlockRotation::new(8, 8);
    let mu: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    assert_eq!(canonicalize(&mu, PoseDescriptor::new(0, 8), &rho).unwrap(), mu);
    assert!(canonicalize(&mu[..6], PoseDescriptor::new(1, 8), &rho).is_err());
}

proptest! {
    #[test]
    fn block_rotation_inverse(v in proptest::collection::vec(-2.0f64..2.0, 9), g in 0usize..8) {
        let rho = BlockRotation::new(9, 8);
        let mut w = v.clone();
        rho.apply(g, &mut w);
        let n0: f64 = v.iter().map(|x| x * x).sum();
        let n1: f64 = w.iter().map(|x| x * x).sum();
        prop_assert!((n0 - n1).abs() < 1e-9);
        prop_assert_eq!(w[8], v[8]);
        rho.apply_inverse(g, &mut w);
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn block_rotation_is_a_homomorphism(v in proptest::collection::vec(-1.0f64..1.0, 8), g in 0usize..8, h in 0usize..8) {
        let rho = BlockRotation::new(8, 8);
        let mut a = v.clone();
        rho.apply(h, &mut a);
        rho.apply(g, &mut a);
        let mut b = v;
        rho.apply((g + h) % 8, &mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

fn equivariant(family: Family, variational: bool) -> ModelConfig {
    ModelConfig {
        family,
        variational,
        equivariant: true,
        latent_dim: 8,
        widths: [2, 3, 4],
        expansion: 2,
        channels: 1,
        group_order: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn encoder_canonical_mean_is_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for family in [Family::Gaussian, Family::Spherical] {
        let mut model = Model::new(equivariant(family, true), 3).unwrap();
        let x = random(&[3, 1, FRAME, FRAME], &mut rng);
        let base = model.encode(&x).unwrap();
        let turned = model.encode(&rotate_image(&x, 1, 4)).unwrap();
        for (a, b) in base.iter().zip(&turned) {
            assert_eq!(b.pose.unwrap().index(), (a.pose.unwrap().index() + 1) % 4);
            for (u, v) in a.canonical.iter().zip(&b.canonical) {
                assert!((u - v).abs() < 1e-4, "{:?} vs {:?}", a.canonical, b.canonical);
            }
            assert!((a.scale - b.scale).abs() < 1e-4 * a.scale.max(1.0));
            if family == Family::Spherical {
                let n: f64 = b.canonical.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn decoder_follows_latent_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = Model::new(equivariant(Family::Gaussian, false), 3).unwrap();
    let rho = model.representation().clone();
    let z: Vec<Vec<f64>> = (0..2).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let base = model.decode(&z).unwrap();
    for g in 1..4 {
        let zg: Vec<Vec<f64>> = z
            .iter()
            .map(|v| {
                let mut w = v.clone();
                rho.apply(g, &mut w);
                w
            })
            .collect();
        let lhs = model.decode(&zg).unwrap();
        let rhs = rotate_image(&base, g, 4);
        assert!(rel_diff(&lhs, &rhs, None) < 1e-5, "g = {g}");
    }
}
