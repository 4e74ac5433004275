//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all with `cargo test --test acceptance`, or a subset by number:
//! `cargo test --test acceptance -- 7 12`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use geopose::cli::{cmd_estimate, cmd_evaluate, cmd_generate};
use geopose::coarse::template::render_template;
use geopose::coarse::{build_template_set, estimate_coarse_pose_detailed, medoid_vote, CandidateMap, CoarseConfig, FlowCorruption, VoteMode};
use geopose::eval::{average_recall, mspd, mssd, symmetric_rotation_error, vsd, EvalRecord, MetricThresholds};
use geopose::flow::{CorrelationMode, CorrelationVolume, FEATURE_DIM};
use geopose::geometry::sampling::random_rotation;
use geopose::geometry::{solve_pnp_ransac, CameraIntrinsics, Correspondence, Pose, RansacConfig};
use geopose::losses::{bce_loss, geo_loss, pose_loss, sequence_loss, LossValue};
use geopose::pipeline::ablation::compare_outcomes;
use geopose::pipeline::scene::object_mesh;
use geopose::pipeline::{run_variants, Outcome, RunConfig, SceneDir, SceneSource, Stage, SyntheticSuite, Variant};
use geopose::refine::attention::{attention_weights, temperature};
use geopose::refine::encoding::{decode_point, encode_point};
use geopose::refine::{
    cg_attention, convex_upsample, micro_set, refine_pose, train_geo_head, AttentionMode, EncodedGeometryMap,
    EncodingConfig, GeometryNet, GeometrySource, MicroTrainConfig, QueryView, Tensor,
};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCH_SEED: u64 = 2024;

/// Outcome of one criterion: pass flag and the measured values.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

// 1. Medoid against an O(n²) brute force.
fn medoid_oracle() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut agree, mut total) = (0usize, 0usize);
    for _ in 0..100 {
        let mut cands = CandidateMap::new(16, 16);
        for list in cands.lists.iter_mut() {
            let n = rng.gen_range(0..=8);
            *list = (0..n).map(|_| [rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)]).collect();
        }
        let g = medoid_vote(&cands);
        for (i, list) in cands.lists.iter().enumerate() {
            total += 1;
            let expected = (0..list.len())
                .map(|a| {
                    let s: f64 = list
                        .iter()
                        .map(|b| {
                            let d = |k: usize| (list[a][k] as f64 - b[k] as f64).powi(2);
                            (d(0) + d(1) + d(2)).sqrt()
                        })
                        .sum();
                    (a, s)
                })
                .fold(None::<(usize, f64)>, |best, (a, s)| match best {
                    Some((_, bs)) if bs <= s => best,
                    _ => Some((a, s)),
                })
                .map(|(a, _)| list[a]);
            let ok = match expected {
                None => !g.mask[i],
                Some(c) => g.mask[i] && g.coords[i] == c,
            };
            agree += ok as usize;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(agree == total && secs < 5.0, format!("{agree}/{total} pixels agree, {secs:.2} s (need all, < 5 s)"))
}

// 2. PnP with RANSAC under 30% outliers.
fn pnp_robustness() -> Verdict {
    let t = Instant::now();
    let cam = CameraIntrinsics::new(572.0, 572.0, 319.5, 239.5, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut good = 0;
    for k in 0..200 {
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect();
        let diameter = pts
            .iter()
            .flat_map(|a| pts.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        let gt = Pose::new(
            random_rotation(&mut rng),
            Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.3..0.3), rng.gen_range(3.0..5.0)),
        )
        .unwrap();
        let corr: Vec<Correspondence> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let px = if i < 15 {
                    Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0))
                } else {
                    cam.project_camera_point(&gt.transform_point(p)).unwrap()
                };
                Correspondence::new(px, *p)
            })
            .collect();
        if let Ok(sol) = solve_pnp_ransac(&corr, &cam, &RansacConfig::default(), k) {
            good += (sol.pose.rotation_error(&gt) < 1e-3 && sol.pose.translation_error(&gt) < 1e-3 * diameter) as usize;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(good >= 198 && secs < 30.0, format!("{good}/200 within 1e-3 rad and 1e-3 d, {secs:.2} s (need >= 99%, < 30 s)"))
}

// 3. Positional encoding round trip, clean and with channel noise.
fn encoding_round_trip() -> Verdict {
    let d = 0.8;
    let cfg = EncodingConfig::for_diameter(5, d);
    let r = d / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut buf = vec![0.0; cfg.channels()];
    let (mut worst, mut noisy) = (0.0f64, Vec::with_capacity(100_000));
    for _ in 0..100_000 {
        let c = [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)];
        encode_point(&c, &cfg, &mut buf);
        let err = |p: Option<[f64; 3]>| {
            p.map_or(f64::INFINITY, |p| (0..3).map(|k| (p[k] - c[k]).abs()).fold(0.0, f64::max))
        };
        worst = worst.max(err(decode_point(&buf, &cfg)));
        for v in buf.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        noisy.push(err(decode_point(&buf, &cfg)));
    }
    noisy.sort_by(f64::total_cmp);
    let p95 = noisy[(0.95 * noisy.len() as f64) as usize];
    verdict(
        worst < 1e-6 * r && p95 < 0.01 * r,
        format!("clean max {:.2e}·(d/2) (need < 1e-6), noisy p95 {:.2e}·(d/2) (need < 1e-2)", worst / r, p95 / r),
    )
}

// 4. Attention rows and convex upsampling.
fn attention_and_upsampling() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h, c) = (7, 5, 6);
    let tau = temperature(FEATURE_DIM);
    let (mut row_err, mut ref_err) = (0.0f64, 0.0f64);
    for mode in [CorrelationMode::Full, CorrelationMode::Windowed(2)] {
        for _ in 0..20 {
            let row_len = match mode {
                CorrelationMode::Full => w * h,
                CorrelationMode::Windowed(r) => (2 * r + 1) * (2 * r + 1),
            };
            let vals: Vec<f32> = (0..w * h * row_len).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let corr = CorrelationVolume::from_values(w, h, mode, vals).unwrap();
            let mut value = EncodedGeometryMap::zeros(w, h, c);
            value.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            value.mask.iter_mut().for_each(|m| *m = true);
            let out = cg_attention(&corr, &value).unwrap();
            for p in 0..w * h {
                let s: f64 = attention_weights(&corr, p, tau).iter().map(|x| x.1).sum();
                row_err = row_err.max((s - 1.0).abs());
                // Dense softmax over the valid keys, then a matrix product.
                let mut logits = vec![f64::NEG_INFINITY; w * h];
                for j in 0..row_len {
                    if let Some(k) = corr.key(p, j) {
                        logits[k] = corr.row(p)[j] as f64 / tau;
                    }
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for ch in 0..c {
                    let r: f64 = (0..w * h).map(|k| e[k] / z * value.values[k * c + ch]).sum();
                    ref_err = ref_err.max((r - out.values[p * c + ch]).abs());
                }
            }
        }
    }
    let (mut const_err, mut bound_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let (cw, ch, cc) = (5, 4, 3);
        let mask = Tensor::from_fn(cw, ch, 576, |_, _, _| rng.gen_range(-8.0..8.0));
        let k = rng.gen_range(-3.0..3.0);
        let fine = convex_upsample(&Tensor::from_fn(cw, ch, cc, |_, _, _| k), &mask).unwrap();
        const_err = const_err.max(fine.data.iter().map(|v| (v - k).abs()).fold(0.0, f64::max));
        let coarse = Tensor::from_fn(cw, ch, cc, |_, _, _| rng.gen_range(-1.0..1.0));
        let fine = convex_upsample(&coarse, &mask).unwrap();
        for y in 0..ch * 8 {
            for x in 0..cw * 8 {
                for k in 0..cc {
                    let (bx, by) = (x / 8, y / 8);
                    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
                    for ny in by.saturating_sub(1)..=(by + 1).min(ch - 1) {
                        for nx in bx.saturating_sub(1)..=(bx + 1).min(cw - 1) {
                            let v = coarse.at(nx, ny, k);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    let v = fine.at(x, y, k);
                    bound_err = bound_err.max((lo - v).max(v - hi).max(0.0));
                }
            }
        }
    }
    verdict(
        row_err <= 1e-6 && ref_err <= 1e-6 && const_err <= 1e-12 && bound_err <= 1e-12,
        format!(
            "row sums {row_err:.1e}, dense reference {ref_err:.1e} (need <= 1e-6); constant {const_err:.1e}, bounds {bound_err:.1e} (need <= 1e-12)"
        ),
    )
}

fn fd_check(value: impl Fn(f64, usize) -> f64, analytic: &[f64], skip: impl Fn(usize) -> bool, h: f64) -> f64 {
    (0..analytic.len())
        .filter(|&i| !skip(i))
        .map(|i| rel_err((value(h, i) - value(-h, i)) / (2.0 * h), analytic[i]))
        .fold(0.0, f64::max)
}

// 5. Analytic loss gradients against central differences.
fn gradient_verification() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut geo, mut pose, mut bce) = (0.0f64, 0.0f64, 0.0f64);
    let mesh = object_mesh(3, 5).unwrap();
    for _ in 0..100 {
        let (w, h, c) = (4, 3, 6);
        let mut gt = EncodedGeometryMap::zeros(w, h, c);
        gt.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        gt.mask.iter_mut().for_each(|m| *m = rng.gen_bool(0.7));
        gt.mask[0] = true;
        let mut pred = gt.clone();
        pred.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let g = geo_loss(&pred, &gt).unwrap().gradient.unwrap();
        let f = |d: f64, i: usize| {
            let mut p = pred.clone();
            p.values[i] += d;
            geo_loss(&p, &gt).unwrap().value
        };
        geo = geo.max(fd_check(f, &g, |i| (pred.values[i] - gt.values[i]).abs() <= 1e-3, 1e-6));

        let gt_pose = Pose::new(random_rotation(&mut rng), Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(2.0..4.0))).unwrap();
        let tangent: [f64; 6] = std::array::from_fn(|k| if k < 3 { rng.gen_range(-0.5..0.5) } else { rng.gen_range(-0.3..0.3) });
        let p = gt_pose.retract(&tangent);
        let g = pose_loss(&p, &gt_pose, &mesh).gradient.unwrap();
        let f = |d: f64, i: usize| {
            let mut e = [0.0; 6];
            e[i] = d;
            pose_loss(&p.retract(&e), &gt_pose, &mesh).value
        };
        pose = pose.max(fd_check(f, &g, |_| false, 1e-6));

        let n = 16;
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let g = bce_loss(&logits, &labels).unwrap().gradient.unwrap();
        let f = |d: f64, i: usize| {
            let mut z = logits.clone();
            z[i] += d;
            bce_loss(&z, &labels).unwrap().value
        };
        bce = bce.max(fd_check(f, &g, |_| false, 1e-5));
    }
    verdict(
        geo < 1e-4 && pose < 1e-4 && bce < 1e-4,
        format!("max relative error geo {geo:.1e}, pose {pose:.1e}, bce {bce:.1e} (need < 1e-4)"),
    )
}

// 6. Discounted sequence loss on hand cases.
fn sequence_loss_cases() -> Verdict {
    let ones = vec![LossValue::scalar(1.0); 3];
    let a = sequence_loss(&ones, 0.5).unwrap().value;
    let seq = [LossValue::scalar(0.25), LossValue::scalar(2.0), LossValue::scalar(0.5)];
    let b = sequence_loss(&seq, 1.0).unwrap().value;
    let c = sequence_loss(&[LossValue::scalar(0.37)], 0.8).unwrap().value;
    verdict(
        a == 1.75 && b == 2.75 && c == 0.37,
        format!("[1,1,1] at 0.5 -> {a}, sum case -> {b} (2.75), single -> {c} (0.37)"),
    )
}

// 7. Queries rendered at template poses.
fn plant_the_answer() -> Verdict {
    let cfg = RunConfig::default();
    let cam = cfg.scene.camera().unwrap();
    let coarse = CoarseConfig {
        n_templates: 32,
        ..CoarseConfig::default()
    };
    let (mut good, mut worst_r, mut worst_t) = (0, 0.0f64, 0.0f64);
    let mut trials = 0;
    for object in 0..5 {
        let mesh = object_mesh(object, 7).unwrap();
        let set = build_template_set(&mesh, &cam, &coarse, 7 + object as u64).unwrap();
        for k in 0..10 {
            let t = &set[(k * 3 + object) % set.len()];
            let q = render_template(&mesh, &t.pose, &cam, &coarse).unwrap();
            trials += 1;
            let Ok(r) = estimate_coarse_pose_detailed(&q.image, &q.geometry.mask, &set, None, &mesh.symmetries, &q.cam, &coarse, k as u64) else {
                continue;
            };
            let er = symmetric_rotation_error(&r.pose, &t.pose, &mesh.symmetries);
            let et = r.pose.translation_error(&t.pose) / mesh.diameter;
            worst_r = worst_r.max(er);
            worst_t = worst_t.max(et);
            good += (er < 1e-3 && et < 1e-3) as usize;
        }
    }
    verdict(
        good * 100 >= 95 * trials,
        format!("{good}/{trials} within 1e-3 rad and 1e-3 d (need >= 95%); worst {worst_r:.1e} rad, {worst_t:.1e} d"),
    )
}

/// The shared benchmark: coarse variants over 10 objects × 20 poses.
struct Bench {
    cfg: RunConfig,
    suite: SyntheticSuite,
    labels: Vec<String>,
    outcomes: Vec<Vec<Outcome>>,
    elapsed: Duration,
}

fn bench() -> &'static Bench {
    static B: std::sync::OnceLock<Bench> = std::sync::OnceLock::new();
    B.get_or_init(|| {
        let cfg = RunConfig {
            seed: BENCH_SEED,
            stage: Stage::Coarse,
            ..RunConfig::default()
        };
        let suite = SyntheticSuite::generate(&cfg).unwrap();
        let nets = cfg.networks().unwrap();
        let base = Variant::from_config("N128 k4", &cfg);
        let mut k1 = base.clone();
        k1.label = "k1".into();
        k1.coarse.k_selected = 1;
        let mut n64 = base.clone();
        n64.label = "N64".into();
        n64.coarse.n_templates = 64;
        let corruption = Some(FlowCorruption {
            fraction: 0.25,
            offset_px: 20.0,
            seed: 99,
        });
        let mut med = base.clone();
        med.label = "medoid+corrupt".into();
        med.coarse.corruption = corruption;
        let mut mean = med.clone();
        mean.label = "mean+corrupt".into();
        mean.coarse.vote = VoteMode::Mean;
        let variants = vec![base, k1, n64, med, mean];
        let t = Instant::now();
        let outcomes = run_variants(&suite, &variants, &nets, cfg.seed, 1).unwrap();
        Bench {
            cfg,
            suite,
            labels: variants.into_iter().map(|v| v.label).collect(),
            outcomes,
            elapsed: t.elapsed(),
        }
    })
}

// 8. Coarse accuracy on the procedural benchmark.
fn coarse_realism() -> Verdict {
    let b = bench();
    let (mut rot, mut tr) = (Vec::new(), Vec::new());
    for (o, e) in b.outcomes[0].iter().zip(&b.suite.entries) {
        let mesh = &b.suite.meshes[e.object];
        match o.estimate {
            Some(p) => {
                rot.push(symmetric_rotation_error(&p, &e.gt, &mesh.symmetries).to_degrees());
                tr.push(p.translation_error(&e.gt) / mesh.diameter);
            }
            None => {
                rot.push(180.0);
                tr.push(f64::INFINITY);
            }
        }
    }
    let (mr, mt) = (median(rot), median(tr));
    let mins = b.elapsed.as_secs_f64() / 60.0;
    verdict(
        mr < 10.0 && mt < 0.05 && mins < 15.0,
        format!(
            "{} trials: median rotation {mr:.3} deg (< 10), translation {:.3}% d (< 5%); {mins:.1} min for all five coarse variants (< 15)",
            b.outcomes[0].len(),
            mt * 100.0
        ),
    )
}

// 9. Refinement against the coarse stage; oracle geometry fixed point.
fn refinement_improves() -> Verdict {
    let b = bench();
    let th = MetricThresholds::synthetic();
    let nets = b.cfg.networks().unwrap();
    let mut warp_cfg = b.cfg.refine.clone();
    warp_cfg.geometry = GeometrySource::FlowWarp;
    let mut oracle_cfg = b.cfg.refine.clone();
    oracle_cfg.geometry = GeometrySource::Oracle;
    let mut refined = b.outcomes[0].clone();
    let (mut oracle_good, mut fixed, mut trials, mut max_move) = (0, 0, 0, 0.0f64);
    for (o, e) in refined.iter_mut().zip(&b.suite.entries) {
        let Some(p0) = o.coarse else { continue };
        let mesh = &b.suite.meshes[e.object];
        let q = b.suite.query(e, &b.cfg.coarse).unwrap();
        let view = QueryView {
            image: &q.image,
            mask: &q.mask,
            cam: &q.cam,
            gt_geometry: Some(&q.gt_geometry),
            gt_pose: Some(e.gt),
        };
        let seed = e.id as u64;
        if let Ok((p, _)) = refine_pose(&view, &p0, mesh, &nets, &warp_cfg, seed) {
            o.estimate = Some(p);
        }
        trials += 1;
        if let Ok((p, trace)) = refine_pose(&view, &p0, mesh, &nets, &oracle_cfg, seed) {
            let d = mesh.diameter;
            oracle_good += (p.rotation_error(&e.gt) < 1e-3 && p.translation_error(&e.gt) < 1e-3 * d) as usize;
            let first = Pose::from_row_major(trace.iterations[0].pose.as_slice().try_into().unwrap()).unwrap();
            let moved = trace.iterations[1..]
                .iter()
                .map(|it| {
                    let q = Pose::from_row_major(it.pose.as_slice().try_into().unwrap()).unwrap();
                    q.rotation_error(&first).max(q.translation_error(&first) / d)
                })
                .fold(0.0, f64::max);
            max_move = max_move.max(moved);
            fixed += (moved < 1e-6) as usize;
        }
    }
    let labeled = vec![("coarse".to_string(), b.outcomes[0].as_slice()), ("refined".to_string(), refined.as_slice())];
    let (rows, _) = compare_outcomes(&b.suite, &labeled, &th, 9).unwrap();
    let (c, r) = (rows[0].recall.ar, rows[1].recall.ar);
    let d = rows[1].delta_vs_first;
    verdict(
        r > c && oracle_good * 100 >= 95 * trials && fixed == trials,
        format!(
            "AR (synthetic grid) coarse {c:.4} -> refined {r:.4}, delta {:+.4} [{:+.4}, {:+.4}]; oracle {oracle_good}/{trials} within 1e-3 (>= 95%), fixed point {fixed}/{trials} (max later move {max_move:.1e})",
            d.mean, d.lo, d.hi
        ),
    )
}

// 10. Ablation directions with bootstrap intervals.
fn ablation_directions() -> Verdict {
    let b = bench();
    let th = MetricThresholds::synthetic();
    let labeled: Vec<(String, &[Outcome])> = b.labels.iter().cloned().zip(b.outcomes.iter().map(|o| o.as_slice())).collect();
    let (rows, _) = compare_outcomes(&b.suite, &labeled, &th, 10).unwrap();
    let ar = |i: usize| rows[i].recall.ar;
    let ci = |i: usize, j: usize| {
        let sub = vec![labeled[j].clone(), labeled[i].clone()];
        let (r, _) = compare_outcomes(&b.suite, &sub, &th, 10).unwrap();
        let d = r[1].delta_vs_first;
        format!("{:+.4} [{:+.4}, {:+.4}]", d.mean, d.lo, d.hi)
    };
    let (a, bb, c) = (ar(0) >= ar(1), ar(3) >= ar(4), ar(0) >= ar(2));
    verdict(
        a && bb && c && b.suite.entries.len() >= 200,
        format!(
            "{} trials, synthetic grid. (a) k4 {:.4} vs k1 {:.4}, diff {}; (b) medoid {:.4} vs mean {:.4} with 25% corrupted flows, diff {}; (c) N128 {:.4} vs N64 {:.4}, diff {}",
            b.suite.entries.len(),
            ar(0),
            ar(1),
            ci(0, 1),
            ar(3),
            ar(4),
            ci(3, 4),
            ar(0),
            ar(2),
            ci(0, 2)
        ),
    )
}

// 11. Finite-difference micro-training of the geometry network.
fn micro_training() -> Verdict {
    let t = Instant::now();
    let set = micro_set(8, 64, 5, 11).unwrap();
    let mut net = GeometryNet::new(5, 11);
    let params = net.param_count();
    let h = train_geo_head(&mut net, &set, AttentionMode::CorrelationGuided, &MicroTrainConfig::default()).unwrap();
    let ratio = h[h.len() - 1] / h[0];
    let mins = t.elapsed().as_secs_f64() / 60.0;
    verdict(
        ratio < 0.5 && params < 200_000 && mins < 10.0,
        format!(
            "{params} params, L_geo {:.4} -> {:.4} in {} steps, ratio {ratio:.3} (need < 0.5), {mins:.1} min",
            h[0],
            h[h.len() - 1],
            h.len() - 1
        ),
    )
}

// 12. Metric identities and the hand worksheet.
fn metric_correctness() -> Verdict {
    let cam = RunConfig::default().scene.camera().unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for object in [0, 1, 2] {
        let mesh = object_mesh(object, 4).unwrap();
        let gt = Pose::from_axis_angle(Vector3::new(0.4, -0.3, 0.2), Vector3::new(0.05, -0.02, 3.0));
        for s in &mesh.symmetries {
            let pred = gt.compose(s);
            let d = mesh.diameter;
            worst = worst
                .max(mssd(&pred, &gt, &mesh))
                .max(mspd(&pred, &gt, &mesh, &cam).unwrap())
                .max(vsd(&pred, &gt, &mesh, &cam, 0.05 * d, 0.03 * d).unwrap());
            checked += 1;
        }
    }
    let (t, f) = (true, false);
    let rec = |v: &[bool], s: &[bool], p: &[bool]| EvalRecord {
        object: 0,
        gt: Pose::identity(),
        estimate: Some(Pose::identity()),
        errors: None,
        vsd_pass: v.to_vec(),
        mssd_pass: s.to_vec(),
        mspd_pass: p.to_vec(),
    };
    let recs = vec![
        rec(&[t, t, f, t], &[t, t], &[t, t]),
        rec(&[f, t, f, f], &[f, t], &[t, t]),
        rec(&[f, f, f, f], &[f, f], &[f, t]),
        rec(&[t, t, t, t], &[f, f], &[f, f]),
    ];
    // VSD 8/16, MSSD 3/8, MSPD 5/8.
    let manual = (0.5 + 0.375 + 0.625) / 3.0;
    let s = average_recall(&recs).unwrap();
    verdict(
        worst < 1e-9 && s.ar == manual && s.vsd_recall == 0.5,
        format!("{checked} symmetric/identical pairs, largest metric {worst:.1e} (need 0 up to 1e-9); worksheet AR {} vs manual {manual}", s.ar),
    )
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

// 13. Two seeded generate + estimate + evaluate runs.
fn determinism() -> Verdict {
    let cfg = RunConfig::from_json(r#"{"seed": 13, "scene": {"objects": 2, "poses_per_object": 3}, "coarse": {"n_templates": 16}}"#).unwrap();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let scene_dir = dir.path().join("scene");
        cmd_generate(&cfg, &scene_dir).unwrap();
        let scene = SceneDir::open(&scene_dir).unwrap();
        cmd_estimate(&cfg, &scene, &dir.path().join("run")).unwrap();
        cmd_evaluate(&cfg, &scene, &dir.path().join("run/estimates.json"), &dir.path().join("eval")).unwrap();
        let all = files(dir.path());
        (all, dir)
    };
    let (a, _da) = run();
    let (b, _db) = run();
    let same = a == b;
    let reports = a.iter().filter(|(n, _)| n.ends_with(".json") || n.ends_with(".csv")).count();
    verdict(same && !a.is_empty(), format!("{} files ({reports} JSON/CSV reports) byte-identical across runs: {same}", a.len()))
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Verdict)> = vec![
        (1, "medoid oracle equivalence", medoid_oracle),
        (2, "PnP/RANSAC robustness", pnp_robustness),
        (3, "positional-encoding round trip", encoding_round_trip),
        (4, "attention and upsampling contracts", attention_and_upsampling),
        (5, "gradient verification", gradient_verification),
        (6, "sequence loss arithmetic", sequence_loss_cases),
        (7, "plant-the-answer coarse stage", plant_the_answer),
        (8, "coarse stage at scale-down realism", coarse_realism),
        (9, "refinement improves coarse", refinement_improves),
        (10, "ablation direction checks", ablation_directions),
        (11, "micro-training sanity", micro_training),
        (12, "metric correctness", metric_correctness),
        (13, "determinism", determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!(
            "{} criterion {n:>2} ({name}): {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
