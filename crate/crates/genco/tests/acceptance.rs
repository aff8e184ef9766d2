//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Comparative criteria share one cache of reference
//! runs. Run with `cargo test --test acceptance -- --nocapture` to see every
//! line.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use genco::data::PatternFamily;
use genco::losses::{
    adv_d_loss, adv_g_loss, daco_loss, generator_total_loss, pairwise_discrepancy,
    weco_loss, weight_discrepancy, GenLossMode,
};
use genco::metrics;
use genco::nets::{Activation, MlpSpec, NetworkParams};
use genco::spectral::{
    adjoint_reject, build_filter_bank, dft2, idft2, reject_and_reconstruct,
    sample_rejection_mask, Image, RejectionMask,
};
use genco::tensor::Tensor;
use genco::trainer::{
    evaluate, load_checkpoint, run_experiment, save_checkpoint, train_step, DatasetConfig,
    TrainConfig, TrainState,
};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn random_image(h: usize, w: usize, rng: &mut StdRng) -> Image {
    Image::new(h, w, 1, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Independent O(n^4) DFT oracle: direct double sum per output bin.
fn naive_dft2(img: &Image) -> Vec<num_complex::Complex64> {
    use num_complex::Complex64;
    let (h, w) = (img.h, img.w);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -std::f64::consts::TAU
                        * (u as f64 * y as f64 / h as f64 + v as f64 * x as f64 / w as f64);
                    acc += img.data[y * w + x] * Complex64::new(ang.cos(), ang.sin());
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

// ── criterion 1: spectral exactness ─────────────────────────────────────

#[test]
fn criterion_1_spectral_exactness() {
    let mut rng = StdRng::seed_from_u64(100);
    // P = 0 round trip through the operator, plus the raw transform round
    // trip, 100 images per size
    let mut max_err: f64 = 0.0;
    for size in [4usize, 8, 16, 32] {
        let bank = build_filter_bank(size, size, 64);
        for _ in 0..100 {
            let img = random_image(size, size, &mut rng);
            let out = reject_and_reconstruct(&img, &bank, &RejectionMask::keep_all(64)).unwrap();
            for (a, b) in out.data.iter().zip(&img.data) {
                max_err = max_err.max((a - b).abs());
            }
            let back = idft2(&dft2(&img));
            for (a, b) in back.iter().zip(&img.data) {
                max_err = max_err.max((a.re - b).abs()).max(a.im.abs());
            }
        }
    }
    assert!(max_err < 1e-9, "round-trip max abs error {max_err}");

    // masks partition exactly
    for (h, w, n) in [(4, 4, 64), (8, 8, 64), (16, 16, 64), (32, 32, 64), (5, 7, 16)] {
        let bank = build_filter_bank(h, w, n);
        for i in 0..h * w {
            let total: u32 = bank.masks.iter().map(|m| m[i] as u32).sum();
            assert_eq!(total, 1, "bin {i} of {h}x{w}");
        }
    }

    // forward DFT vs the naive oracle on sizes <= 8x8
    let mut dft_err: f64 = 0.0;
    for (h, w) in [(4, 4), (8, 8), (5, 7), (8, 4), (1, 2)] {
        for _ in 0..10 {
            let img = random_image(h, w, &mut rng);
            let fast = dft2(&img);
            let oracle = naive_dft2(&img);
            for (a, b) in fast.data.iter().zip(&oracle) {
                dft_err = dft_err.max((a - b).norm());
            }
        }
    }
    assert!(dft_err < 1e-9, "DFT vs naive oracle max err {dft_err}");
    println!(
        "criterion 1 PASS: round-trip err {max_err:.2e} < 1e-9, masks partition, \
         DFT vs naive oracle err {dft_err:.2e} < 1e-9"
    );
}

// ── criterion 2: projection properties ──────────────────────────────────

#[test]
fn criterion_2_projection_properties() {
    let mut rng = StdRng::seed_from_u64(200);
    let bank = build_filter_bank(8, 8, 64);
    let mut max_idem: f64 = 0.0;
    let mut max_adj: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.gen_range(0.0..=1.0);
        let mask = sample_rejection_mask(64, p, &mut rng);
        let x = random_image(8, 8, &mut rng);
        let y = random_image(8, 8, &mut rng);
        let rx = reject_and_reconstruct(&x, &bank, &mask).unwrap();
        let rrx = reject_and_reconstruct(&rx, &bank, &mask).unwrap();
        for (a, b) in rrx.data.iter().zip(&rx.data) {
            max_idem = max_idem.max((a - b).abs());
        }
        let ry = adjoint_reject(&y, &bank, &mask).unwrap();
        let lhs: f64 = rx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&ry.data).map(|(a, b)| a * b).sum();
        max_adj = max_adj.max((lhs - rhs).abs());
    }
    assert!(max_idem < 1e-9, "idempotence err {max_idem}");
    assert!(max_adj < 1e-9, "self-adjointness err {max_adj}");
    println!(
        "criterion 2 PASS: idempotence err {max_idem:.2e}, self-adjointness err {max_adj:.2e}, \
         100 trials"
    );
}

// ── criterion 3: gradient fidelity ──────────────────────────────────────

struct GradCheck {
    checked: usize,
    within: usize,
    max_rel: f64,
}

impl GradCheck {
    fn new() -> GradCheck {
        GradCheck {
            checked: 0,
            within: 0,
            max_rel: 0.0,
        }
    }

    /// Central finite differences on every parameter of `net` against the
    /// stored analytic gradients of `loss`.
    fn check(&mut self, net: &NetworkParams, loss: &dyn Fn() -> Tensor) {
        let eps = 1e-5;
        for (_, t) in &net.entries {
            let analytic = t.grad_or_zeros();
            let base = t.data();
            for i in 0..base.len() {
                let mut up = base.clone();
                up[i] += eps;
                t.set_data(up);
                let plus = loss().item();
                let mut dn = base.clone();
                dn[i] -= eps;
                t.set_data(dn);
                let minus = loss().item();
                t.set_data(base.clone());
                let numeric = (plus - minus) / (2.0 * eps);
                let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-8);
                self.checked += 1;
                if rel < 1e-4 {
                    self.within += 1;
                }
                self.max_rel = self.max_rel.max(rel);
            }
        }
    }

    fn assert_ok(&self, what: &str) {
        assert!(
            self.within as f64 >= 0.99 * self.checked as f64,
            "{what}: only {}/{} parameters within 1e-4",
            self.within,
            self.checked
        );
        assert!(self.max_rel < 1e-3, "{what}: max rel err {}", self.max_rel);
    }
}

fn small_batch(n: usize, dim: usize, rng: &mut StdRng) -> Tensor {
    Tensor::from_vec(vec![n, dim], (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap()
}

#[test]
fn criterion_3_gradient_fidelity() {
    let mut rng = StdRng::seed_from_u64(300);
    let d_spec = MlpSpec::new(vec![2, 16, 16, 1], Activation::LeakyRelu(0.2), Activation::Linear);
    let g_spec = MlpSpec::new(vec![3, 16, 16, 2], Activation::LeakyRelu(0.2), Activation::Linear);
    let mut report = Vec::new();

    // Eq. 1: discriminator loss through a random MLP
    {
        let d = NetworkParams::init(d_spec.clone(), &mut rng);
        let real = small_batch(4, 2, &mut rng);
        let fake = small_batch(4, 2, &mut rng);
        let loss = || {
            adv_d_loss(&d.forward(&real).unwrap(), &d.forward(&fake).unwrap()).unwrap()
        };
        d.zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&d, &loss);
        check.assert_ok("adv_d");
        report.push(format!("adv_d {:.1e}", check.max_rel));
    }

    // Eq. 2, both modes, through generator and discriminator
    for mode in [GenLossMode::NonSaturating, GenLossMode::Saturating] {
        let g = NetworkParams::init(g_spec.clone(), &mut rng);
        let d = NetworkParams::init(d_spec.clone(), &mut rng);
        let z = small_batch(4, 3, &mut rng);
        let loss = || {
            adv_g_loss(&d.forward(&g.forward(&z).unwrap()).unwrap(), mode).unwrap()
        };
        g.zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&g, &loss);
        check.assert_ok("adv_g");
        report.push(format!("adv_g {:.1e}", check.max_rel));
    }

    // Eq. 3: cosine, both operands live
    {
        let w1 = Tensor::from_vec(vec![12], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let w2 = Tensor::from_vec(vec![12], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let holder = |w: Tensor| NetworkParams {
            spec: MlpSpec::new(vec![1, 1], Activation::Linear, Activation::Linear),
            entries: vec![("w".into(), w)],
        };
        let (h1, h2) = (holder(w1), holder(w2));
        let loss = || {
            weight_discrepancy(&h1.entries[0].1, &h2.entries[0].1).unwrap()
        };
        h1.zero_grad();
        h2.zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&h1, &loss);
        check.check(&h2, &loss);
        check.assert_ok("weight_discrepancy");
        report.push(format!("cosine {:.1e}", check.max_rel));
    }

    // WeCo Eq. 6 w.r.t. the pushed discriminator (the anchor is detached
    // from the discrepancy by construction)
    {
        let d1 = NetworkParams::init(d_spec.clone(), &mut rng);
        let d2 = NetworkParams::init(d_spec.clone(), &mut rng);
        let real = small_batch(4, 2, &mut rng);
        let fake = small_batch(4, 2, &mut rng);
        let loss = || {
            weco_loss(
                &d1.forward(&real).unwrap(),
                &d1.forward(&fake).unwrap(),
                &d2.forward(&real).unwrap(),
                &d2.forward(&fake).unwrap(),
                &d1.flatten().unwrap(),
                &d2.flatten().unwrap(),
                1.0,
                true,
            )
            .unwrap()
            .3
        };
        d2.zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&d2, &loss);
        check.assert_ok("weco");
        report.push(format!("weco {:.1e}", check.max_rel));
    }

    // DaCo Eq. 9 w.r.t. both discriminators
    {
        let d1 = NetworkParams::init(d_spec.clone(), &mut rng);
        let d3 = NetworkParams::init(d_spec.clone(), &mut rng);
        let real = small_batch(4, 2, &mut rng);
        let fake = small_batch(4, 2, &mut rng);
        let real_rej = small_batch(4, 2, &mut rng);
        let fake_rej = small_batch(4, 2, &mut rng);
        let loss = || {
            daco_loss(
                &d1.forward(&real).unwrap(),
                &d1.forward(&fake).unwrap(),
                &d3.forward(&real_rej).unwrap(),
                &d3.forward(&fake_rej).unwrap(),
            )
            .unwrap()
            .2
        };
        d1.zero_grad();
        d3.zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&d1, &loss);
        check.check(&d3, &loss);
        check.assert_ok("daco");
        report.push(format!("daco {:.1e}", check.max_rel));
    }

    // Eq. 10 through a frozen rejection mask: gradient reaches the
    // generator through the projector's adjoint
    {
        let g = NetworkParams::init(g_spec.clone(), &mut rng);
        let d1 = NetworkParams::init(d_spec.clone(), &mut rng);
        let d2 = NetworkParams::init(d_spec.clone(), &mut rng);
        let d3 = NetworkParams::init(d_spec.clone(), &mut rng);
        let z = small_batch(4, 3, &mut rng);
        let bank = build_filter_bank(1, 2, 8);
        let masks: Vec<RejectionMask> =
            (0..4).map(|_| sample_rejection_mask(8, 0.25, &mut rng)).collect();
        let loss = || {
            let fake = g.forward(&z).unwrap();
            let bank = bank.clone();
            let masks = masks.clone();
            let rejected = fake
                .self_adjoint_map(std::rc::Rc::new(move |rows: &[f64]| {
                    let mut out = Vec::with_capacity(rows.len());
                    for (row, mask) in rows.chunks(2).zip(&masks) {
                        let img = Image::new(1, 2, 1, row.to_vec()).unwrap();
                        out.extend(reject_and_reconstruct(&img, &bank, mask).unwrap().data);
                    }
                    out
                }))
                .unwrap();
            generator_total_loss(
                &d1.forward(&fake).unwrap(),
                Some(&d2.forward(&fake).unwrap()),
                Some(&d3.forward(&rejected).unwrap()),
                GenLossMode::NonSaturating,
            )
            .unwrap()
        };
        g.zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&g, &loss);
        check.assert_ok("generator total through R");
        report.push(format!("g_total {:.1e}", check.max_rel));
    }

    // pairwise k = 4 w.r.t. the last (fully live) weight vector
    {
        let nets: Vec<NetworkParams> = (0..4)
            .map(|_| {
                NetworkParams::init(
                    MlpSpec::new(vec![2, 4, 1], Activation::LeakyRelu(0.2), Activation::Linear),
                    &mut rng,
                )
            })
            .collect();
        let loss = || {
            let flats: Vec<Tensor> = nets.iter().map(|n| n.flatten().unwrap()).collect();
            pairwise_discrepancy(&flats, 1.0, true).unwrap()
        };
        nets[3].zero_grad();
        loss().backward().unwrap();
        let mut check = GradCheck::new();
        check.check(&nets[3], &loss);
        check.assert_ok("pairwise k=4");
        report.push(format!("pairwise {:.1e}", check.max_rel));
    }

    println!(
        "criterion 3 PASS: finite-difference max rel errors per loss: {}",
        report.join(", ")
    );
}

// ── shared reference runs for the comparative criteria ──────────────────

#[derive(Clone, Copy, Debug)]
struct RunOutcome {
    proxy_fid: f64,
    gap_train_holdout: f64,
    final_cos: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Variant {
    Baseline,
    WecoOnly,
    DacoOnly,
    GenCo,
    WecoK4,
    GenCoAtP(u8), // P in percent
}

fn reference_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        steps: 2000,
        ..TrainConfig::default()
    }
}

fn apply_variant(cfg: &mut TrainConfig, variant: Variant) {
    match variant {
        Variant::Baseline => {
            cfg.weco_on = false;
            cfg.daco_on = false;
        }
        Variant::WecoOnly => cfg.daco_on = false,
        Variant::DacoOnly => cfg.weco_on = false,
        Variant::GenCo => {}
        Variant::WecoK4 => {
            cfg.daco_on = false;
            cfg.k_discriminators = 4;
        }
        Variant::GenCoAtP(pct) => cfg.p = pct as f64 / 100.0,
    }
}

fn run_variant(variant: Variant, seed: u64, steps: u64) -> RunOutcome {
    let mut cfg = reference_config(seed);
    cfg.steps = steps;
    apply_variant(&mut cfg, variant);
    let mut state = TrainState::new(cfg).unwrap();
    for _ in 0..steps {
        train_step(&mut state).unwrap();
    }
    let rec = evaluate(&mut state, None).unwrap();
    let final_cos = if state.weco_ds.len() > 1 {
        weight_discrepancy(
            &state.weco_ds[0].flatten().unwrap(),
            &state.weco_ds[1].flatten().unwrap(),
        )
        .unwrap()
        .item()
    } else {
        f64::NAN
    };
    RunOutcome {
        proxy_fid: rec.proxy_fid,
        gap_train_holdout: rec.gap.train_holdout,
        final_cos,
    }
}

/// Memoized reference runs; criteria 5, 6, 8 and 9 share these.
fn shared_run(variant: Variant, seed: u64) -> RunOutcome {
    static CACHE: OnceLock<Mutex<BTreeMap<(Variant, u64), RunOutcome>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&(variant, seed)) {
        return *hit;
    }
    let outcome = run_variant(variant, seed, 2000);
    cache.lock().unwrap().insert((variant, seed), outcome);
    outcome
}

// ── criterion 4: WeCo diversification ───────────────────────────────────

#[test]
fn criterion_4_weco_diversification() {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let with = {
            let mut cfg = reference_config(seed);
            cfg.steps = 500;
            cfg.daco_on = false;
            cfg.lambda = 1.0;
            apply_variant(&mut cfg, Variant::WecoOnly);
            let mut state = TrainState::new(cfg).unwrap();
            for _ in 0..500 {
                train_step(&mut state).unwrap();
            }
            weight_discrepancy(
                &state.weco_ds[0].flatten().unwrap(),
                &state.weco_ds[1].flatten().unwrap(),
            )
            .unwrap()
            .item()
            .abs()
        };
        let without = {
            let mut cfg = reference_config(seed);
            cfg.steps = 500;
            cfg.daco_on = false;
            cfg.lambda = 0.0;
            let mut state = TrainState::new(cfg).unwrap();
            for _ in 0..500 {
                train_step(&mut state).unwrap();
            }
            weight_discrepancy(
                &state.weco_ds[0].flatten().unwrap(),
                &state.weco_ds[1].flatten().unwrap(),
            )
            .unwrap()
            .item()
            .abs()
        };
        if with < without {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {with:.4} vs {without:.4}"));
    }
    assert!(wins >= 4, "|cosine| smaller with lambda=1 in only {wins}/5 seeds: {detail:?}");
    println!(
        "criterion 4 PASS: |cosine(W_D1, W_D2)| strictly smaller with lambda=1 in {wins}/5 seeds \
         ({})",
        detail.join("; ")
    );
}

// ── criterion 5: over-fitting mitigation ────────────────────────────────

#[test]
fn criterion_5_overfitting_mitigation() {
    let mut fid_wins = 0;
    let mut gap_wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let base = shared_run(Variant::Baseline, seed);
        let genco = shared_run(Variant::GenCo, seed);
        if genco.proxy_fid <= base.proxy_fid {
            fid_wins += 1;
        }
        if genco.gap_train_holdout <= base.gap_train_holdout {
            gap_wins += 1;
        }
        detail.push(format!(
            "seed {seed}: fid {:.3}/{:.3} gap {:.3}/{:.3}",
            genco.proxy_fid, base.proxy_fid, genco.gap_train_holdout, base.gap_train_holdout
        ));
    }
    assert!(gap_wins >= 4, "gap smaller in only {gap_wins}/5 seeds: {detail:?}");
    assert!(fid_wins >= 4, "proxy-FID smaller in only {fid_wins}/5 seeds: {detail:?}");
    println!(
        "criterion 5 PASS: gap <= baseline in {gap_wins}/5 seeds, proxy-FID <= baseline in \
         {fid_wins}/5 seeds (genco/baseline per seed: {})",
        detail.join("; ")
    );
}

// ── criterion 6: ablation ordering ──────────────────────────────────────

#[test]
fn criterion_6_ablation_ordering() {
    let collect = |variant: Variant| -> Vec<f64> {
        SEEDS.iter().map(|&s| shared_run(variant, s).proxy_fid).collect()
    };
    let m_base = median(collect(Variant::Baseline));
    let m_weco = median(collect(Variant::WecoOnly));
    let m_daco = median(collect(Variant::DacoOnly));
    let m_genco = median(collect(Variant::GenCo));
    let m_min = m_weco.min(m_daco);
    let m_max = m_weco.max(m_daco);
    // chain genco <= min <= max <= baseline; the middle terms may sit out
    // of order on one side
    let mut inversions = 0;
    if m_genco > m_min {
        inversions += 1;
    }
    if m_max > m_base {
        inversions += 1;
    }
    assert!(
        inversions <= 1,
        "ordering broken twice: genco {m_genco:.3}, weco {m_weco:.3}, daco {m_daco:.3}, \
         baseline {m_base:.3}"
    );
    println!(
        "criterion 6 PASS: median proxy-FID genco {m_genco:.3} | weco {m_weco:.3} daco \
         {m_daco:.3} | baseline {m_base:.3} ({inversions} inversion(s) allowed 1)"
    );
}

// ── criterion 7: DaCo vs rejection-as-augmentation ──────────────────────

#[test]
fn criterion_7_daco_beats_augmentation_only() {
    let tiny = |seed: u64, daco: bool| -> f64 {
        let mut cfg = reference_config(seed);
        cfg.steps = 1500;
        cfg.weco_on = false;
        cfg.daco_on = daco;
        cfg.r_as_augmentation_only = !daco;
        cfg.latent_dim = 16;
        cfg.dataset = DatasetConfig::TinyImages {
            family: PatternFamily::Gratings,
            size: 8,
            train: 64,
            holdout: 256,
        };
        let steps = cfg.steps;
        let mut state = TrainState::new(cfg).unwrap();
        for _ in 0..steps {
            train_step(&mut state).unwrap();
        }
        evaluate(&mut state, None).unwrap().proxy_fid
    };
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let daco = tiny(seed, true);
        let aug = tiny(seed, false);
        if daco <= aug {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {daco:.3} vs {aug:.3}"));
    }
    assert!(wins >= 3, "daco <= augmentation-only in only {wins}/5 seeds: {detail:?}");
    println!(
        "criterion 7 PASS: DaCo proxy-FID <= augmentation-only in {wins}/5 seeds ({})",
        detail.join("; ")
    );
}

// ── criterion 8: P-robustness ───────────────────────────────────────────

#[test]
fn criterion_8_p_robustness() {
    let medians: Vec<f64> = [10u8, 20, 30, 40, 50]
        .iter()
        .map(|&pct| {
            median(
                SEEDS
                    .iter()
                    .map(|&s| shared_run(Variant::GenCoAtP(pct), s).proxy_fid)
                    .collect(),
            )
        })
        .collect();
    let spread = medians.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - medians.iter().cloned().fold(f64::INFINITY, f64::min);

    let m_base = median(SEEDS.iter().map(|&s| shared_run(Variant::Baseline, s).proxy_fid).collect());
    let m_genco = median(SEEDS.iter().map(|&s| shared_run(Variant::GenCo, s).proxy_fid).collect());
    let margin = m_base - m_genco;
    assert!(
        spread < margin,
        "median proxy-FID spread over P {spread:.4} not below the baseline-GenCo gap \
         {margin:.4} (medians {medians:?})"
    );
    println!(
        "criterion 8 PASS: spread over P in {{0.1..0.5}} = {spread:.4} < baseline-GenCo margin \
         {margin:.4} (medians {medians:?})"
    );
}

// ── criterion 9: k-discriminator trend ──────────────────────────────────

#[test]
fn criterion_9_k_discriminator_trend() {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let k2 = shared_run(Variant::WecoOnly, seed).proxy_fid;
        let k4 = shared_run(Variant::WecoK4, seed).proxy_fid;
        if k4 <= k2 {
            wins += 1;
        }
        detail.push(format!("seed {seed}: k4 {k4:.3} vs k2 {k2:.3}"));
    }
    assert!(wins >= 3, "k=4 <= k=2 in only {wins}/5 seeds: {detail:?}");
    println!(
        "criterion 9 PASS: proxy-FID at k=4 <= k=2 in {wins}/5 seeds ({})",
        detail.join("; ")
    );
}

// ── criterion 10: determinism and round-trip ────────────────────────────

#[test]
fn criterion_10_determinism_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reference_config(7);
    cfg.steps = 400;
    cfg.eval_every = 100;

    // identical config+seed => byte-identical metrics CSV
    let a = run_experiment(cfg.clone(), &dir.path().join("a")).unwrap();
    let b = run_experiment(cfg.clone(), &dir.path().join("b")).unwrap();
    let bytes_a = std::fs::read(&a.metrics_csv).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b.metrics_csv).unwrap(), "metrics CSV bytes differ");

    // mid-run checkpoint resume == uninterrupted run, bit-exact
    let mut full = TrainState::new(cfg.clone()).unwrap();
    for _ in 0..400 {
        train_step(&mut full).unwrap();
    }
    let mut half = TrainState::new(cfg).unwrap();
    for _ in 0..200 {
        train_step(&mut half).unwrap();
    }
    let ckpt = dir.path().join("mid.bin");
    save_checkpoint(&half, &ckpt).unwrap();
    let mut resumed = load_checkpoint(&ckpt).unwrap();
    for _ in 0..200 {
        train_step(&mut resumed).unwrap();
    }
    let bits = |p: &NetworkParams| -> Vec<u64> {
        p.entries
            .iter()
            .flat_map(|(_, t)| t.data().into_iter().map(f64::to_bits))
            .collect()
    };
    assert_eq!(bits(&full.generator), bits(&resumed.generator), "generator drifted");
    for (x, y) in full.weco_ds.iter().zip(&resumed.weco_ds) {
        assert_eq!(bits(x), bits(y), "discriminator drifted");
    }
    assert_eq!(
        bits(full.daco_d.as_ref().unwrap()),
        bits(resumed.daco_d.as_ref().unwrap()),
        "frequency discriminator drifted"
    );
    let ema_bits = |s: &TrainState| -> Vec<u64> {
        s.ema
            .entries
            .iter()
            .flat_map(|(_, _, v)| v.iter().copied().map(f64::to_bits))
            .collect()
    };
    assert_eq!(ema_bits(&full), ema_bits(&resumed), "EMA drifted");
    assert_eq!(full.rngs, resumed.rngs, "RNG streams drifted");

    // and the same final metrics row
    let rec_full = evaluate(&mut full, None).unwrap();
    let rec_resumed = evaluate(&mut resumed, None).unwrap();
    assert_eq!(rec_full.proxy_fid.to_bits(), rec_resumed.proxy_fid.to_bits());
    println!(
        "criterion 10 PASS: byte-identical metrics CSV ({} bytes), mid-run checkpoint resume \
         bit-exact over 400 steps",
        bytes_a.len()
    );
}

// ── histogram sanity used by the score-diagnostics figures ──────────────

#[test]
fn histogram_shape_matches_displayed_range() {
    // 64 bins over [-4, 4] plus under/overflow, counts conserved
    let mut rng = StdRng::seed_from_u64(1000);
    let scores: Vec<f64> = (0..500).map(|_| rng.gen_range(-6.0..6.0)).collect();
    let hist = metrics::score_histogram(&scores, &[], &[]);
    assert_eq!(hist.real.bins.len(), 64);
    assert_eq!(hist.real.total(), 500);
}
