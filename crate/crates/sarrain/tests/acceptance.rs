//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;
use sarrain_core::corpus::{corpus_swath, CorpusConfig};
use sarrain_core::dataset::{extract_patches, split_balanced, ExtractRules, Patch, SwathHistogram, SwathLayers, N_REFL_BINS};
use sarrain_core::evaluate::{activation_difference, baseline_sweep, threshold_grid, Scores};
use sarrain_core::glm::{cluster_events, group_flashes, haversine_km, Connectivity, LightningEvent, FLASH_MAX_DISTANCE_KM, FLASH_MAX_DT_S};
use sarrain_core::koch::{highpass_bank, koch_forward, FilterBankSpec, FilterResponses, KochParams, DEFAULT_CALIBRATION_SPREAD};
use sarrain_core::labels::{dbz_from_rainrate, displace, register, ClassMasks, ZrParams, THRESHOLDS_DBZ};
use sarrain_core::metrics::{confusion, macro_f1, mean_std, ConfusionMatrix, DEFAULT_CUT};
use sarrain_core::preproc::{incidence_normalize, GmfSpec};
use sarrain_core::raster::tile_windows;
use sarrain_core::synth::{gen_scene, ContrastModel, SceneConfig};
use sarrain_core::train::{grad_check, train_runs, TrainConfig, TrainingSample};
use sarrain_core::{Grid, GridGeometry};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scene_cfg(seed: u64, cells: usize) -> SceneConfig {
    SceneConfig {
        seed,
        size_px: 128,
        n_cells: cells,
        wind_mps: 4.0 + (seed % 7) as f64,
        speckle_looks: 100,
        contrast: ContrastModel { texture: 0.5, ..ContrastModel::default() },
        ..SceneConfig::default()
    }
}

fn scene_patches(seed: u64, gmf: &GmfSpec) -> Vec<(Patch, ClassMasks)> {
    let s = gen_scene(&scene_cfg(seed, 4), gmf).unwrap();
    let layers = SwathLayers {
        swath_id: format!("scene{seed}"),
        sigma0_norm: incidence_normalize(&s.sigma0, gmf).unwrap(),
        incidence_deg: s.sigma0.incidence_deg().to_vec(),
        reflectivity: s.reflectivity,
        wind: s.wind,
        land: s.land,
    };
    let rules = ExtractRules { tile_px: 64, ..ExtractRules::default() };
    extract_patches(&layers, &rules)
        .unwrap()
        .patches
        .into_iter()
        .map(|p| {
            let m = p.masks(THRESHOLDS_DBZ).unwrap();
            (p, m)
        })
        .collect()
}

fn background_init(gmf: &GmfSpec, bank: &FilterBankSpec) -> KochParams {
    let bg: Vec<FilterResponses> = (1000..1005)
        .map(|k| {
            let s = gen_scene(&scene_cfg(k, 0), gmf).unwrap();
            highpass_bank(&incidence_normalize(&s.sigma0, gmf).unwrap(), bank).unwrap()
        })
        .collect();
    let refs: Vec<&FilterResponses> = bg.iter().collect();
    KochParams::calibrated(&refs, bank.clone(), 400.0, DEFAULT_CALIBRATION_SPREAD).unwrap()
}

fn zr_thresholds() -> Outcome {
    let want = [(1.0, 24.7), (3.0, 31.5), (10.0, 38.8)];
    let got: Vec<f64> = want.iter().map(|&(r, _)| dbz_from_rainrate(r, ZrParams::default()).unwrap()).collect();
    let pass = want.iter().zip(&got).all(|(&(_, z), &g)| (g - z).abs() <= 0.1);
    outcome(pass, format!("1/3/10 mm/h -> {:.3} / {:.3} / {:.3} dBZ", got[0], got[1], got[2]))
}

fn gradients(gmf: &GmfSpec, bank: &FilterBankSpec) -> Outcome {
    let init = background_init(gmf, bank);
    let pool: Vec<(Patch, ClassMasks)> = (0..10).flat_map(|k| scene_patches(k, gmf)).collect();
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, m) = &pool[rng.random_range(0..pool.len())];
        let sample = TrainingSample::new(&p.sigma0_norm, m, bank).unwrap();
        let mut q = init.clone();
        for k in 0..3 {
            for j in 0..4 {
                q.gain[k][j] *= rng.random_range(0.5..1.5);
                q.bias[k][j] = rng.random_range(0.2..0.8);
            }
        }
        worst = worst.max(grad_check(&q, &sample, 1e-4).unwrap().max_rel_err);
    }
    outcome(worst < 1e-4, format!("100 instances at 64x64, 24 parameters, max relative error {worst:.2e}"))
}

fn sigmoid_vs_clip(gmf: &GmfSpec, bank: &FilterBankSpec) -> Outcome {
    let init = background_init(gmf, bank);
    let resp: Vec<FilterResponses> = (0..50)
        .map(|k| {
            let s = gen_scene(&scene_cfg(k, 4), gmf).unwrap();
            highpass_bank(&incidence_normalize(&s.sigma0, gmf).unwrap(), bank).unwrap()
        })
        .collect();
    let refs: Vec<&FilterResponses> = resp.iter().collect();
    let d = activation_difference(&refs, &init).unwrap();
    outcome(
        d.aggregate <= 0.02,
        format!("50 scenes, aggregate relative difference {:.2}% (per-pixel mean {:.2}%)", 100.0 * d.aggregate, 100.0 * d.per_pixel),
    )
}

fn tiling() -> Outcome {
    let sizes: Vec<usize> = (2..=8).map(|k| k * 128).collect();
    let mut checked = 0;
    let mut bad = Vec::new();
    for &rows in &sizes {
        for &cols in &sizes {
            let mut cover = vec![0u8; rows * cols];
            for (r0, c0) in tile_windows(rows, cols, 256, 128).unwrap() {
                for r in r0..r0 + 256 {
                    for c in c0..c0 + 256 {
                        cover[r * cols + c] += 1;
                    }
                }
            }
            let interior_ok = (128..rows - 128).all(|r| (128..cols - 128).all(|c| cover[r * cols + c] == 4));
            if !interior_ok || cover.contains(&0) {
                bad.push((rows, cols));
            }
            checked += 1;
        }
    }
    outcome(bad.is_empty(), format!("{checked} grids 256..1024 px, tile 256 stride 128, failures {bad:?}"))
}

fn training(gmf: &GmfSpec, bank: &FilterBankSpec) -> Outcome {
    let init = background_init(gmf, bank);
    let set = |seeds: std::ops::Range<u64>| -> Vec<(Patch, ClassMasks)> { seeds.flat_map(|k| scene_patches(k, gmf)).collect() };
    let (train_p, val_p, test_p) = (set(0..30), set(30..35), set(35..40));
    let samples = |v: &[(Patch, ClassMasks)]| -> Vec<TrainingSample> {
        v.iter().map(|(p, m)| TrainingSample::new(&p.sigma0_norm, m, bank).unwrap()).collect()
    };
    let (tr, va) = (samples(&train_p), samples(&val_p));

    let test_resp: Vec<FilterResponses> = test_p.iter().map(|(p, _)| highpass_bank(&p.sigma0_norm, bank).unwrap()).collect();
    let items: Vec<(&FilterResponses, &ClassMasks)> = test_resp.iter().zip(test_p.iter().map(|(_, m)| m)).collect();
    let (base_f1, base_t, base_k) = baseline_sweep(&items, &init, &threshold_grid(0.025)).unwrap().best_multiclass();

    let runs = train_runs(&tr, &va, &TrainConfig { runs: 5, ..TrainConfig::default() }, &init).unwrap();
    let mut f1s = Vec::new();
    let mut pass = true;
    for run in &runs {
        let mut scores = Scores::default();
        for (p, m) in &test_p {
            scores.add(&koch_forward(&p.sigma0_norm, &run.params).unwrap(), m, DEFAULT_CUT).unwrap();
        }
        let f1 = scores.macro_f1().unwrap();
        let h = &run.history;
        pass &= f1 > base_f1 && h.final_train_loss <= 0.5 * h.initial_train_loss;
        f1s.push(f1);
    }
    let (m, s) = mean_std(&f1s);
    let ratios: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.history.final_train_loss / r.history.initial_train_loss)).collect();
    outcome(
        pass,
        format!(
            "{} train patches; trained macro F1 {m:.4} ({s:.4}) vs baseline {base_f1:.4} (t={base_t:.3}, class {}); loss ratios [{}]",
            tr.len(),
            base_k + 1,
            ratios.join(", ")
        ),
    )
}

fn brute_macro_f1(truth: &[usize], pred: &[usize], valid: &[bool], n: usize) -> Option<f64> {
    let (mut rs, mut ps, mut k) = (0.0, 0.0, 0usize);
    for c in 0..n {
        let mut tp = 0u64;
        let mut t = 0u64;
        let mut p = 0u64;
        for i in 0..truth.len() {
            if !valid[i] {
                continue;
            }
            t += u64::from(truth[i] == c);
            p += u64::from(pred[i] == c);
            tp += u64::from(truth[i] == c && pred[i] == c);
        }
        if t == 0 && p == 0 {
            continue;
        }
        k += 1;
        if t > 0 {
            rs += tp as f64 / t as f64;
        }
        if p > 0 {
            ps += tp as f64 / p as f64;
        }
    }
    if k == 0 {
        return None;
    }
    let (r, p) = (rs / k as f64, ps / k as f64);
    Some(if r + p == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

fn metric_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (rows, cols) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let n = rng.random_range(2..=4);
        let geo = GridGeometry::new(rows, cols, 400.0).unwrap();
        let truth: Vec<usize> = (0..rows * cols).map(|_| rng.random_range(0..n)).collect();
        let pred: Vec<usize> = (0..rows * cols).map(|_| rng.random_range(0..n)).collect();
        let valid: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.85)).collect();
        let g = |v: &[usize]| Grid::new(geo, v.iter().map(|&x| x as f32).collect()).unwrap();
        let vm = Grid::mask_from_fn(geo, |r, c| valid[r * cols + c]).unwrap();
        let cm = confusion(&g(&pred), &g(&truth), n, Some(&vm)).unwrap();
        let mut brute = ConfusionMatrix::new(n);
        for i in (0..truth.len()).filter(|&i| valid[i]) {
            brute.add(truth[i], pred[i]);
        }
        let same_f1 = match (macro_f1(&cm).ok(), brute_macro_f1(&truth, &pred, &valid, n)) {
            (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
            (None, None) => true,
            _ => false,
        };
        if cm != brute || !same_f1 {
            mismatches += 1;
        }
    }
    let hand = macro_f1(&ConfusionMatrix::from_counts(2, vec![90, 10, 30, 70]).unwrap()).unwrap();
    outcome(
        mismatches == 0 && (hand - 0.80620).abs() < 5e-6,
        format!("1000 random grids, {mismatches} mismatches; [[90,10],[30,70]] -> {hand:.5}"),
    )
}

fn brute_flashes(ev: &[LightningEvent]) -> Vec<Vec<usize>> {
    let n = ev.len();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                let linked = (ev[i].time_s - ev[j].time_s).abs() < FLASH_MAX_DT_S
                    && haversine_km(ev[i].lat, ev[i].lon, ev[j].lat, ev[j].lon) < FLASH_MAX_DISTANCE_KM;
                if linked && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    groups_of(&label)
}

fn groups_of(label: &[usize]) -> Vec<Vec<usize>> {
    let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in label.iter().enumerate() {
        by.entry(l).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = by.into_values().collect();
    out.sort();
    out
}

fn brute_clusters(ev: &[LightningEvent], geo: &GridGeometry) -> Vec<Vec<usize>> {
    let px: Vec<Option<(usize, usize)>> = ev.iter().map(|e| geo.locate(e.lat, e.lon)).collect();
    let idx: Vec<usize> = (0..ev.len()).filter(|&i| px[i].is_some()).collect();
    let mut label: Vec<usize> = (0..ev.len()).collect();
    loop {
        let mut changed = false;
        for &i in &idx {
            for &j in &idx {
                let ((ri, ci), (rj, cj)) = (px[i].unwrap(), px[j].unwrap());
                if ri.abs_diff(rj) <= 1 && ci.abs_diff(cj) <= 1 && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<usize> = idx.iter().map(|&i| label[i]).collect();
    let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &i) in idx.iter().enumerate() {
        by.entry(kept[k]).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = by.into_values().collect();
    out.sort();
    out
}

fn glm_grouping() -> Outcome {
    let mut rng = StdRng::seed_from_u64(13);
    let geo = GridGeometry::with_origin(40, 40, 2000.0, 30.0, -80.0).unwrap();
    // Degrees of latitude spanning exactly the flash distance.
    let dlat = FLASH_MAX_DISTANCE_KM / haversine_km(0.0, 0.0, 1.0, 0.0);
    let (mut flash_bad, mut cluster_bad) = (0, 0);
    for set in 0..500 {
        let n = rng.random_range(1..=200);
        let mut ev: Vec<LightningEvent> = Vec::with_capacity(n);
        for _ in 0..n {
            let e = if set % 5 == 0 && !ev.is_empty() && rng.random_bool(0.5) {
                // Boundary partner of an earlier event.
                let b = ev[rng.random_range(0..ev.len())];
                match rng.random_range(0..3) {
                    0 => LightningEvent { time_s: b.time_s + FLASH_MAX_DT_S, ..b },
                    1 => LightningEvent { lat: b.lat + dlat, ..b },
                    _ => LightningEvent { time_s: b.time_s + 0.5 * FLASH_MAX_DT_S, lat: b.lat - dlat, ..b },
                }
            } else {
                LightningEvent {
                    time_s: rng.random_range(0.0..20.0),
                    lat: rng.random_range(29.0..30.5),
                    lon: rng.random_range(-80.2..-79.0),
                }
            };
            ev.push(e);
        }
        ev.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        let mut fast: Vec<Vec<usize>> = group_flashes(&ev).unwrap().into_iter().map(|f| f.members).collect();
        fast.sort();
        flash_bad += usize::from(fast != brute_flashes(&ev));
        let mut cl: Vec<Vec<usize>> = cluster_events(&ev, &geo, Connectivity::Eight).clusters.into_iter().map(|c| c.members).collect();
        cl.sort();
        cluster_bad += usize::from(cl != brute_clusters(&ev, &geo));
    }
    let at = |t: f64, lat: f64| LightningEvent { time_s: t, lat, lon: -80.0 };
    let split_dt = group_flashes(&[at(0.0, 30.0), at(FLASH_MAX_DT_S, 30.0)]).unwrap().len() == 2;
    let joined_dt = group_flashes(&[at(0.0, 30.0), at(FLASH_MAX_DT_S - 1e-6, 30.0)]).unwrap().len() == 1;
    let far = dlat * 1.000_001;
    let split_d = group_flashes(&[at(0.0, 30.0), at(0.0, 30.0 + far)]).unwrap().len() == 2;
    let joined_d = group_flashes(&[at(0.0, 30.0), at(0.0, 30.0 + dlat * 0.999_999)]).unwrap().len() == 1;
    let edges = split_dt && joined_dt && split_d && joined_d;
    outcome(
        flash_bad == 0 && cluster_bad == 0 && edges,
        format!("500 event sets: flash mismatches {flash_bad}, cluster mismatches {cluster_bad}; 330 ms / 16.5 km edges {}", if edges { "ok" } else { "wrong" }),
    )
}

fn registration(gmf: &GmfSpec, bank: &FilterBankSpec) -> Outcome {
    let mut rng = StdRng::seed_from_u64(17);
    let (mut exact, mut near) = (0, 0);
    for t in 0..100u64 {
        let s = gen_scene(&scene_cfg(500 + t, 4), gmf).unwrap();
        let feature = highpass_bank(&incidence_normalize(&s.sigma0, gmf).unwrap(), bank).unwrap().heterogeneity();
        let (dr, dc) = (rng.random_range(-16..=16), rng.random_range(-16..=16));
        let radar = displace(&feature, dr, dc).unwrap();
        let off = register(&feature, &radar, 16).unwrap();
        exact += usize::from((off.d_row, off.d_col) == (dr, dc));
        // Unit-mean multiplicative noise with a 10% standard deviation.
        let spread = 0.1 * 3f64.sqrt();
        let noisy = radar.map(|v| if radar.is_nodata_value(v) { v } else { v * (1.0 + rng.random_range(-spread..spread)) as f32 });
        let off = register(&feature, &noisy, 16).unwrap();
        near += usize::from((off.d_row - dr).abs() <= 1 && (off.d_col - dc).abs() <= 1);
    }
    outcome(exact == 100 && near >= 95, format!("100 trials, shifts up to 16 px: exact {exact}/100 noise-free, within 1 px {near}/100 at 10% noise"))
}

/// Not a criterion: how often the SAR feature locates a shifted radar mask
/// on corpus patches.
fn registration_on_corpus(gmf: &GmfSpec, bank: &FilterBankSpec) -> String {
    let cfg = CorpusConfig { n_swaths: 20, max_shift_px: 8, ..CorpusConfig::default() };
    let (mut n, mut near) = (0, 0);
    for k in 0..cfg.n_swaths {
        for cp in corpus_swath(&cfg, k, gmf).unwrap().patches {
            let want = cp.injected.unwrap();
            if let Ok(off) = cp.patch.estimate_offset(bank, THRESHOLDS_DBZ[0], 8) {
                near += usize::from((off.d_row - want.d_row).abs() <= 1 && (off.d_col - want.d_col).abs() <= 1);
            }
            n += 1;
        }
    }
    format!("SAR heterogeneity vs radar mask on {n} corpus patches: within 1 px {near}/{n}")
}

fn balanced_split(gmf: &GmfSpec) -> Outcome {
    let cfg = CorpusConfig::default();
    let hist: Vec<SwathHistogram> = (0..cfg.n_swaths)
        .map(|k| {
            let sw = corpus_swath(&cfg, k, gmf).unwrap();
            let refs: Vec<&Patch> = sw.patches.iter().map(|p| &p.patch).collect();
            SwathHistogram::from_patches(&sw.swath_id, &refs, THRESHOLDS_DBZ).unwrap()
        })
        .collect();
    let targets = [0.79, 0.10, 0.11];
    let split = split_balanced(&hist, targets, 0).unwrap();
    let mut worst = 0.0f64;
    for (s, &t) in targets.iter().enumerate() {
        for b in 0..N_REFL_BINS {
            if let Some(v) = split.shares[s][b] {
                worst = worst.max((v - t).abs());
            }
        }
    }
    outcome(
        worst <= 0.03,
        format!("{} swaths split {:?}, largest class-share deviation {:.2} points", hist.len(), split.swath_counts, 100.0 * worst),
    )
}

fn main() {
    let gmf = GmfSpec::cmod5n();
    let bank = FilterBankSpec::default();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("Z-R thresholds", Box::new(zr_thresholds)),
        ("gradient correctness", Box::new(|| gradients(&gmf, &bank))),
        ("sigmoid-vs-clip equivalence", Box::new(|| sigmoid_vs_clip(&gmf, &bank))),
        ("tiling invariant", Box::new(tiling)),
        ("training improves over baseline", Box::new(|| training(&gmf, &bank))),
        ("metric oracle", Box::new(metric_oracle)),
        ("GLM flash grouping", Box::new(glm_grouping)),
        ("registration recovery", Box::new(|| registration(&gmf, &bank))),
        ("balanced split", Box::new(|| balanced_split(&gmf))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    println!("INFO {}", registration_on_corpus(&gmf, &bank));
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
