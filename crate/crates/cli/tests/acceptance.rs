//! Acceptance checks. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits non-zero when any of them fails. Pass criterion numbers as
//! arguments to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use geolatent::equivariance::RotationMap;
use geolatent::harness::{self, Dataset, ProbeConfig, TrainConfig, TILE};
use geolatent::nets::{kl_gaussian_standard, spread_loss, Adam, Family, Model, ModelConfig, Tensor, FRAME};
use geolatent::patchkit::{synth_corpus, SynthTile};
use geolatent::riemann::{
    geodesic_path, hamiltonian, leapfrog_step, rhmc_sample, GaussianTarget, GeodesicOptions, MetricField, PhasePoint,
    RhmcConfig,
};
use geolatent::sphere::{kl_vmf_uniform, sample_vmf, sphere_surface_area, vmf_log_pdf, UnitVector, VmfParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny(family: Family, variational: bool, m: usize) -> ModelConfig {
    ModelConfig {
        family,
        variational,
        latent_dim: m,
        widths: [2, 3, 4],
        expansion: 2,
        channels: 1,
        group_order: 4,
        ..ModelConfig::default()
    }
}

fn dataset(tiles: &[&SynthTile]) -> Dataset {
    let images: Vec<_> = tiles.iter().map(|t| t.image.clone()).collect();
    let labels = tiles.iter().map(|t| t.class).collect();
    let ids = tiles.iter().map(|t| t.name.clone()).collect();
    Dataset::from_images(&images, labels, ids, 1).expect("synthetic tiles are valid")
}

/// Synthetic corpus split by slide: `slide04` is held out for testing.
fn corpus(n_per_class: usize, seed: u64) -> (Dataset, Dataset) {
    let tiles = synth_corpus(n_per_class, TILE, &mut rng(seed));
    let train: Vec<_> = tiles.iter().filter(|t| t.source_id != "slide04").collect();
    let test: Vec<_> = tiles.iter().filter(|t| t.source_id == "slide04").collect();
    (dataset(&train), dataset(&test))
}

// Bessel-ratio oracle A_m(κ) = I_{m/2}(κ) / I_{m/2−1}(κ), from scipy.special.ive.
const MEAN_RESULTANT_ORACLE: [(usize, f64, f64); 6] = [
    (3, 1.0, 0.313_035_285_499_331_24),
    (3, 10.0, 0.900_000_004_122_307_3),
    (3, 100.0, 0.990_000_000_000_000_1),
    (8, 1.0, 0.123_469_314_143_406_85),
    (8, 10.0, 0.697_511_367_233_064_4),
    (8, 100.0, 0.965_441_842_346_419_9),
];

fn criterion_1() -> Outcome {
    let n = 100_000;
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (i, &(m, kappa, oracle)) in MEAN_RESULTANT_ORACLE.iter().enumerate() {
        let p = VmfParams::new(UnitVector::basis(m, 0), kappa).unwrap();
        let zs = sample_vmf(&p, n, &mut rng(100 + i as u64)).unwrap();
        let mut mean = vec![0.0; m];
        for z in &zs {
            mean.iter_mut().zip(z.as_slice()).for_each(|(a, b)| *a += b / n as f64);
        }
        let r = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w_mean = mean[0];
        let w_var = zs.iter().map(|z| (z.as_slice()[0] - w_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (w_var / n as f64).sqrt();
        let z = (r - oracle).abs() / se;
        worst = worst.max(z);
        pass &= z <= 4.0;
    }
    outcome(pass, format!("worst deviation {worst:.2} SE (bound 4)"))
}

fn criterion_2() -> Outcome {
    let n = 100_000;
    let log_u = -(4.0 * PI).ln();
    let mut worst: f64 = 0.0;
    for (i, &kappa) in [0.5, 5.0, 20.0].iter().enumerate() {
        let p = VmfParams::new(UnitVector::basis(3, 0), kappa).unwrap();
        let mc = sample_vmf(&p, n, &mut rng(200 + i as u64))
            .unwrap()
            .iter()
            .map(|z| vmf_log_pdf(&p, z).unwrap() - log_u)
            .sum::<f64>()
            / n as f64;
        worst = worst.max((kl_vmf_uniform(&p) - mc).abs());
    }
    let mut worst_gauss: f64 = 0.0;
    let mut r = rng(210);
    for (mu, sigma) in [(vec![0.5, -1.0, 0.2], 0.7), (vec![0.0; 4], 1.3), (vec![2.0, 0.1], 0.3)] {
        let d = mu.len();
        let mut acc = 0.0;
        for _ in 0..n {
            let eps: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let z: Vec<f64> = mu.iter().zip(&eps).map(|(m, e)| m + sigma * e).collect();
            let log_q: f64 = eps.iter().map(|e| -0.5 * e * e - sigma.ln() - 0.5 * (2.0 * PI).ln()).sum();
            let log_p: f64 = z.iter().map(|v| -0.5 * v * v - 0.5 * (2.0 * PI).ln()).sum();
            acc += log_q - log_p;
        }
        worst_gauss = worst_gauss.max((kl_gaussian_standard(&mu, sigma) - acc / n as f64).abs());
    }
    outcome(
        worst < 1e-2 && worst_gauss < 1e-2,
        format!("vMF max |KL − MC| {worst:.2e}, Gaussian {worst_gauss:.2e} (bound 1e-2)"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng(300);
    let mut worst: f64 = 0.0;
    let mut shifts_ok = true;
    let map = RotationMap::for_group(FRAME, 1, 4);
    let mut count = 0;
    for (k, family) in [Family::Gaussian, Family::Spherical].into_iter().enumerate() {
        let cfg = ModelConfig { equivariant: true, ..tiny(family, true, 8) };
        let mut model = Model::new(cfg, 30 + k as u64).unwrap();
        for _ in 0..5 {
            let b = 10;
            let x = Tensor::from_vec(
                &[b, 1, FRAME, FRAME],
                (0..b * FRAME * FRAME).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let mut turned = x.clone();
            for (src, dst) in x.data().chunks(FRAME * FRAME).zip(turned.data_mut().chunks_mut(FRAME * FRAME)) {
                map.apply(src, dst);
            }
            let a = model.encode(&x).unwrap();
            let t = model.encode(&turned).unwrap();
            for (u, v) in a.iter().zip(&t) {
                let (pu, pv) = (u.pose.unwrap().index(), v.pose.unwrap().index());
                shifts_ok &= pv == (pu + 1) % 4;
                for (p, q) in u.canonical.iter().zip(&v.canonical) {
                    worst = worst.max((p - q).abs());
                }
                count += 1;
            }
        }
    }
    outcome(
        worst < 1e-4 && shifts_ok && count == 100,
        format!("{count} inputs, max |Δμ₀| {worst:.2e} (bound 1e-4), pose shift +1 mod 4: {shifts_ok}"),
    )
}

fn criterion_4() -> Outcome {
    let f = MetricField::constant(3, 0.01).unwrap();
    let (a, b) = ([0.0, 1.0, -1.0], [2.0, -1.0, 0.5]);
    let c = geodesic_path(&f, &a, &b, &GeodesicOptions::default()).unwrap();
    let last = (c.knots.len() - 1) as f64;
    let straight = c
        .knots
        .iter()
        .enumerate()
        .flat_map(|(i, k)| {
            let t = i as f64 / last;
            (0..3).map(move |j| (k[j] - (a[j] + t * (b[j] - a[j]))).abs())
        })
        .fold(0.0, f64::max);

    let g = MetricField::constant(2, 1.0).unwrap();
    let target = GaussianTarget::standard(2);
    let start = PhasePoint::new(vec![0.8, -0.3], vec![0.2, 0.9]).unwrap();
    let h0 = hamiltonian(&g, &start, &target).unwrap();
    let mut p = start.clone();
    let mut drift: f64 = 0.0;
    for _ in 0..100 {
        p = leapfrog_step(&g, &p, 0.01, &target).unwrap();
        drift = drift.max((hamiltonian(&g, &p, &target).unwrap() - h0).abs());
    }
    p.v.iter_mut().for_each(|v| *v = -*v);
    for _ in 0..100 {
        p = leapfrog_step(&g, &p, 0.01, &target).unwrap();
    }
    let reversal =
        p.z.iter()
            .zip(&start.z)
            .map(|(x, y)| (x - y).abs())
            .chain(p.v.iter().zip(&start.v).map(|(x, y)| (x + y).abs()))
            .fold(0.0, f64::max);

    let cfg = RhmcConfig { step: 0.3, n_leapfrog: 5, metropolis: true };
    let mut r = rng(400);
    let mut z = vec![0.0, 0.0];
    let mut xs = Vec::with_capacity(5000);
    for _ in 0..5000 {
        z = rhmc_sample(&g, &z, 1, &cfg, &target, &mut r).unwrap();
        xs.push(z.clone());
    }
    let var_err = (0..2)
        .map(|c| {
            let mean = xs.iter().map(|x| x[c]).sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (var - 1.0).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        straight < 1e-4 && reversal < 1e-5 && drift < 1e-3 && var_err < 0.1,
        format!(
            "geodesic {straight:.1e} (1e-4), reversal {reversal:.1e} (1e-5), drift {drift:.1e} (1e-3), \
             variance error {:.1}% (10%)",
            100.0 * var_err
        ),
    )
}

const SPREAD_WEIGHT: f64 = 1000.0;

fn criterion_5() -> Outcome {
    let s = 1.0 / 3f64.sqrt();
    let tetra: Vec<UnitVector> = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]]
        .iter()
        .map(|v| UnitVector::new(v.to_vec()).unwrap())
        .collect();
    let tetra_loss = spread_loss(&tetra).unwrap();

    let tiles = synth_corpus(50, TILE, &mut rng(500));
    let all: Vec<&SynthTile> = tiles.iter().collect();
    let data = dataset(&all);
    let norm = data.norm_stats();
    let tc = TrainConfig { epochs: 10, batch_size: 16, learning_rate: 5e-3, seed: 5 };
    let mut stats = Vec::new();
    for weight in [0.0, SPREAD_WEIGHT] {
        let cfg = ModelConfig { spread_loss_weight: weight, ..tiny(Family::Spherical, false, 3) };
        let ck = harness::train(&cfg, &tc, &data, &norm, None, |_| {}).unwrap();
        let mut model = ck.restore_model().unwrap();
        let rows = harness::export_latent_3d(&mut model, &data, &norm, 200).unwrap();
        let points: Vec<Vec<f64>> = rows.iter().map(|(p, _)| p.to_vec()).collect();
        stats.push((points.len(), harness::mean_pairwise_inner_product(&points)));
    }
    let (without, with) = (stats[0].1, stats[1].1);
    outcome(
        with < without && stats.iter().all(|s| s.0 == 200) && tetra_loss == -1.0 / 3.0,
        format!("mean inner product {without:.4} without, {with:.4} with spread; tetrahedron {tetra_loss}"),
    )
}

fn criterion_6() -> Outcome {
    let tiles = synth_corpus(2, TILE, &mut rng(600));
    let all: Vec<&SynthTile> = tiles.iter().collect();
    let data = dataset(&all);
    let norm = data.norm_stats();
    let mut failures = Vec::new();
    for m in [32, 64, 128, 256] {
        let cfg = ModelConfig { kappa_min: 100.0, ..tiny(Family::Spherical, true, m) };
        let mut model = Model::new(cfg, m as u64).unwrap();
        let mut adam = Adam::new();
        let mut r = rng(m as u64);
        let mut finite = true;
        for step in 0..50 {
            let idx: Vec<usize> = (0..4).map(|k| (4 * step + k) % data.len()).collect();
            match model.train_step(&data.batch(&idx, &norm), &mut r) {
                Ok(out) => finite &= out.loss.total.is_finite() && out.heads.iter().all(|h| h.scale >= 100.0),
                Err(_) => finite = false,
            }
            adam.step(&mut model, 5e-4);
        }
        if !finite {
            failures.push(m);
        }
    }
    let refused = Model::new(tiny(Family::Spherical, true, 512), 0).is_err();
    outcome(failures.is_empty() && refused, format!("non-finite at m={failures:?}; m=512 refused: {refused}"))
}

pub const TREND_DIMS: [usize; 4] = [8, 16, 32, 64];
const TREND_EPOCHS: u64 = 30;
const TREND_CORPUS: usize = 24;
const TREND_BATCH: usize = 16;
const TREND_LR: f64 = 5e-3;

fn criterion_7() -> Outcome {
    let (train, test) = corpus(TREND_CORPUS, 700);
    let norm = train.norm_stats();
    let families =
        [(Family::Gaussian, true), (Family::Gaussian, false), (Family::Spherical, true), (Family::Spherical, false)];
    let mut monotone = 0;
    let mut lines = Vec::new();
    for (family, variational) in families {
        for seed in 0..3u64 {
            let losses: Vec<f64> = TREND_DIMS
                .iter()
                .map(|&m| {
                    let cfg = tiny(family, variational, m);
                    let tc =
                        TrainConfig { epochs: TREND_EPOCHS, batch_size: TREND_BATCH, learning_rate: TREND_LR, seed };
                    let ck = harness::train(&cfg, &tc, &train, &norm, None, |_| {}).unwrap();
                    harness::eval_reconstruction(&mut ck.restore_model().unwrap(), &test, &norm).unwrap()
                })
                .collect();
            let ok = losses.windows(2).all(|w| w[1] <= w[0]);
            monotone += usize::from(ok);
            let tag = tiny(family, variational, 8).tag();
            let cells: Vec<String> = losses.iter().map(|v| format!("{v:.0}")).collect();
            lines.push(format!("{tag} s{seed} [{}]{}", cells.join(", "), if ok { "" } else { " violation" }));
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    outcome(monotone >= 11, format!("{monotone}/12 columns non-increasing in m (need 11)"))
}

fn criterion_8() -> Outcome {
    let tiles = synth_corpus(240, TILE, &mut rng(800));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut seen = std::collections::BTreeMap::new();
    for t in &tiles {
        let k = seen.entry(t.class).or_insert(0);
        if *k < 40 {
            train.push(t)
        } else {
            test.push(t)
        }
        *k += 1;
    }
    let (train, test) = (dataset(&train), dataset(&test));
    let norm = train.norm_stats();
    let tc = TrainConfig { epochs: 30, batch_size: 16, learning_rate: 5e-3, seed: 8 };
    let ck = harness::train(&tiny(Family::Spherical, true, 16), &tc, &train, &norm, None, |_| {}).unwrap();
    let mut model = ck.restore_model().unwrap();
    let pc = ProbeConfig { seed: 8, ..ProbeConfig::default() };
    let (real, _) = harness::linear_probe(&mut model, &train, &test, &norm, &pc).unwrap();

    let mut shuffled = train.clone();
    shuffled.labels.shuffle(&mut rng(801));
    let (chance, _) = harness::linear_probe(&mut model, &shuffled, &test, &norm, &pc).unwrap();

    let n = test.len() as f64;
    let bar = 0.25 + 3.0 * (0.25 * 0.75 / n).sqrt();
    outcome(
        (0.20..=0.30).contains(&chance.accuracy) && real.accuracy > bar,
        format!(
            "shuffled {:.3} (need [0.20, 0.30]), S-VAE m=16 {:.3} (need > {bar:.3}, n_test {n})",
            chance.accuracy, real.accuracy
        ),
    )
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let run = |args: &[&str]| -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_geolatent"))
            .current_dir(dir)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .env_remove("GEOLATENT_RUN_ROOT")
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    };
    let config = "schema_version = 1\n\n[data]\nmanifest = \"corpus/manifest.jsonl\"\n\n\
        [train]\nepochs = 5\nbatch_size = 8\nlearning_rate = 0.005\nseed = 3\n\n\
        [model]\nfamily = \"spherical\"\nvariational = true\nlatent_dim = 8\nwidths = [2, 3, 4]\n\
        expansion = 2\nchannels = 1\n";
    std::fs::write(dir.join("run.toml"), config).map_err(|e| e.to_string())?;
    run(&["synth", "--out", "corpus", "--n", "8", "--seed", "9"])?;
    run(&["preprocess", "corpus", "--test-sources", "slide04", "--seed", "9"])?;
    let run_dir = run(&["train", "--config", "run.toml", "--out", "runs"])?;
    run(&["eval", &run_dir])?;
    run(&["sample", &run_dir, "--n", "8", "--seed", "9"])?;
    Ok(())
}

fn criterion_9() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        if let Err(e) = pipeline(d.path()) {
            return outcome(false, format!("pipeline failed: {e}"));
        }
    }
    let find = |root: &Path, name: &str| -> Option<Vec<u8>> {
        let runs = std::fs::read_dir(root.join("runs")).ok()?.next()?.ok()?.path();
        let path = match name {
            "manifest" => root.join("corpus/manifest.jsonl"),
            "metrics" => runs.join("metrics.csv"),
            _ => runs.join("samples/grid.png"),
        };
        std::fs::read(path).ok()
    };
    let mut same = Vec::new();
    for name in ["manifest", "metrics", "grid"] {
        let (a, b) = (find(dirs[0].path(), name), find(dirs[1].path(), name));
        same.push((name, a.is_some() && a == b));
    }
    let detail: Vec<String> =
        same.iter().map(|(n, s)| format!("{n} {}", if *s { "identical" } else { "differs" })).collect();
    outcome(same.iter().all(|s| s.1), detail.join(", "))
}

fn criterion_10() -> Outcome {
    let a3 = sphere_surface_area(3, 1.0).unwrap();
    let areas: Vec<f64> = (1..=40).map(|m| sphere_surface_area(m, 1.0).unwrap()).collect();
    let peak = areas.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i + 1).unwrap();
    let decays = areas[peak - 1..].windows(2).all(|w| w[1] < w[0]);
    outcome(
        a3 == 4.0 * PI && peak == 7 && decays && areas[39] < 1e-3,
        format!("A(3) = {a3} (4π = {}), peak at m = {peak}, decreasing afterwards: {decays}", 4.0 * PI),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "vMF mean resultant length", criterion_1),
        (2, "KL oracles", criterion_2),
        (3, "C4 encoder invariance", criterion_3),
        (4, "Riemannian reductions", criterion_4),
        (5, "spread-loss geometry", criterion_5),
        (6, "spherical VAE stability grid", criterion_6),
        (7, "reconstruction trend", criterion_7),
        (8, "probe sanity", criterion_8),
        (9, "pipeline determinism", criterion_9),
        (10, "surface-area diagnostic", criterion_10),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        println!(
            "criterion {n}: {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
