//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs everything by default; numeric arguments select criteria, e.g.
//! `cargo test --test acceptance -- 4 7`.

use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Float;
use tbp_core::catalog::{
    catalog_to_string, dedup_solutions, parse_catalog, scale_invariant_period, validate_catalog,
    Provenance, SolutionRecord, DEFAULT_TSTAR_TOL_LOG10,
};
use tbp_core::correct::{
    agreed_digits_between, canm_correct, newton_refine, CanmOptions, CorrectionResult,
    RefineOptions, Triplet,
};
use tbp_core::dynamics::{
    angular_momentum, energy, initial_ext_state, initial_state, symmetric_configuration, State,
    VelocityPair, DIM,
};
use tbp_core::pipeline::{run_stage, PipelineConfig, Stage, StageJob};
use tbp_core::precision::{
    format_trimmed, log10_abs, suggested_order, Context, PrecisionConfig, Preset,
};
use tbp_core::scan::{find_candidates, scan_grid, CandidateTriplet, GridSpec};
use tbp_core::taylor::{integrate, IntegrationStatus};
use tbp_core::topology::{
    canonical_signature, classify, free_reduce, is_satellite, Letter, SyzygyOptions,
};

/// Figure-eight as refined by this pipeline at 96 digits (regression pin).
const EIGHT: [&str; 3] = [
    "0.3471168881189269382427769203203008662474073371707833534398872083456364",
    "0.5327249453880302292620279876919262703549110901882196558216145751450187",
    "6.3259139829262116775890003339670470632926499098941470921742418960927027",
];
const EIGHT_SIGNATURE: &str = "1+2-3+1-2+3-";
const PIN_LOG10: f64 = -65.0;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (usize, &'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 10] = [
        (1, "conservation", conservation),
        (2, "reversibility", reversibility),
        (3, "variational", variational),
        (4, "figure-eight end-to-end", figure_eight),
        (5, "quadratic convergence", quadratic_convergence),
        (6, "two-preset verification", two_preset_verification),
        (7, "T* and dedup", tstar_dedup),
        (8, "topology properties", topology_properties),
        (9, "determinism", determinism),
        (10, "full-preset smoke", full_preset_smoke),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n:>2} {name}: {} ({}; {:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn window_point(rng: &mut ChaCha8Rng, ctx: &Context) -> VelocityPair {
    let vx = ctx.real(rng.gen_range(0.30..0.40));
    let vy = ctx.real(rng.gen_range(0.50..0.60));
    VelocityPair::new(vx, vy).unwrap()
}

fn diff_log10(a: &Float, b: &Float) -> f64 {
    log10_abs(&Float::with_val(a.prec().max(b.prec()), a - b))
}

fn max_component_log10(a: &State, b: &State) -> f64 {
    a.u.iter()
        .zip(&b.u)
        .map(|(x, y)| diff_log10(x, y))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn pinned(ctx: &Context) -> Triplet {
    Triplet::parse(EIGHT[0], EIGHT[1], EIGHT[2], ctx).unwrap()
}

fn conservation() -> Verdict {
    let cfg = PrecisionConfig::new(64, 80).unwrap();
    let ctx = cfg.context();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let t_end = ctx.real(70);
    let (mut worst_e, mut worst_l) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut done, mut skipped) = (0, 0);
    while done < 20 && skipped < 20 {
        let s = initial_state(&window_point(&mut rng, &ctx), &ctx);
        let out = integrate(&s, &t_end, &cfg, &mut []).unwrap();
        if out.status != IntegrationStatus::ReachedEnd {
            skipped += 1;
            continue;
        }
        let f = &out.final_state;
        worst_e = worst_e.max(diff_log10(&energy(f).unwrap(), &energy(&s).unwrap()));
        worst_l = worst_l.max(diff_log10(&angular_momentum(f), &angular_momentum(&s)));
        done += 1;
    }
    verdict(
        done == 20 && worst_e <= -50.0 && worst_l <= -50.0,
        format!(
            "{done} runs, {skipped} collisions skipped, max |dE| 1e{worst_e:.1}, max |dL| 1e{worst_l:.1}"
        ),
    )
}

fn reversibility() -> Verdict {
    let cfg = PrecisionConfig::new(64, 80).unwrap();
    let ctx = cfg.context();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let t = ctx.real(10);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..3 {
        let s = initial_state(&window_point(&mut rng, &ctx), &ctx);
        let fwd = integrate(&s, &t, &cfg, &mut []).unwrap();
        let mut back = fwd.final_state.reverse_velocities();
        back.t = ctx.zero();
        let ret = integrate(&back, &t, &cfg, &mut []).unwrap();
        if fwd.status != IntegrationStatus::ReachedEnd || ret.status != IntegrationStatus::ReachedEnd
        {
            return verdict(false, "integration aborted".into());
        }
        worst = worst.max(max_component_log10(&ret.final_state.reverse_velocities(), &s));
    }
    verdict(worst <= -45.0, format!("3 runs, max return error 1e{worst:.1}"))
}

fn variational() -> Verdict {
    let cfg = PrecisionConfig::new(60, suggested_order(60)).unwrap();
    let ctx = cfg.context();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let t = ctx.real(5);
    let delta = ctx.pow10(-20);
    let end = |vx: &Float, vy: &Float| {
        integrate(&symmetric_configuration(vx, vy, &ctx), &t, &cfg, &mut [])
            .unwrap()
            .final_state
            .u
    };
    let mut worst_digits = f64::INFINITY;
    for _ in 0..5 {
        let v = window_point(&mut rng, &ctx);
        let ext = integrate(&initial_ext_state(&v.vx, &v.vy, &ctx), &t, &cfg, &mut [])
            .unwrap()
            .final_state;
        let blocks = [
            (ext.sensitivity_vx().to_vec(), (delta.clone(), ctx.zero())),
            (ext.sensitivity_vy().to_vec(), (ctx.zero(), delta.clone())),
        ];
        for (sens, (dx, dy)) in blocks {
            let plus = end(&(v.vx.clone() + &dx), &(v.vy.clone() + &dy));
            let minus = end(&(v.vx.clone() - &dx), &(v.vy.clone() - &dy));
            let two_delta = Float::with_val(ctx.bits(), &delta * 2u32);
            let mut err = f64::NEG_INFINITY;
            let mut scale = f64::NEG_INFINITY;
            for k in 0..DIM {
                let fd = Float::with_val(ctx.bits(), &plus[k] - &minus[k]) / &two_delta;
                err = err.max(diff_log10(&fd, &sens[k]));
                scale = scale.max(log10_abs(&sens[k]));
            }
            worst_digits = worst_digits.min(scale - err);
        }
    }
    verdict(
        worst_digits >= 15.0,
        format!("5 initial conditions, worst block agreement {worst_digits:.1} digits"),
    )
}

struct Corrected {
    candidate: CandidateTriplet,
    canm: CorrectionResult,
}

/// Scan of the desk window plus CANM on candidates in order of increasing
/// return proximity, shared by criteria 4 and 7.
struct Search {
    candidates: Vec<CandidateTriplet>,
    corrected: Vec<Corrected>,
}

fn search() -> &'static std::sync::Mutex<Option<Search>> {
    static SEARCH: std::sync::OnceLock<std::sync::Mutex<Option<Search>>> =
        std::sync::OnceLock::new();
    SEARCH.get_or_init(|| std::sync::Mutex::new(None))
}

fn with_search<R>(f: impl FnOnce(&mut Search) -> R) -> R {
    let mut guard = search().lock().unwrap_or_else(|p| p.into_inner());
    let s = guard.get_or_insert_with(|| {
        let cfg = Preset::DeskScan.config();
        let ctx = cfg.context();
        let spec = GridSpec::new("0.30", "0.40", "0.50", "0.60", "0.00390625").unwrap();
        let grid = scan_grid(&spec, &ctx.real(10), &cfg, 8, 1);
        let mut candidates = find_candidates(&grid, &ctx.parse("0.7").unwrap());
        candidates.sort_by(|a, b| a.p_min.partial_cmp(&b.p_min).unwrap());
        Search {
            candidates,
            corrected: Vec::new(),
        }
    });
    f(s)
}

/// Corrects the next untried candidate; `None` when all are used.
fn correct_next(s: &mut Search) -> Option<usize> {
    let next = s.corrected.len();
    let candidate = s.candidates.get(next)?.clone();
    let canm = canm_correct(
        &Triplet::from(&candidate),
        &Preset::DeskCorrect.config(),
        &CanmOptions::default(),
    );
    s.corrected.push(Corrected { candidate, canm });
    Some(next)
}

fn near_eight(t: &Triplet) -> bool {
    (t.vx.to_f64() - 0.3471).abs() < 1e-3 && (t.vy.to_f64() - 0.5327).abs() < 1e-3
}

fn refine(t: &Triplet) -> CorrectionResult {
    newton_refine(t, &Preset::DeskRefine.config(), &RefineOptions::default())
}

fn figure_eight() -> Verdict {
    with_search(|s| {
        if s.candidates.is_empty() {
            return verdict(false, "scan produced no candidate".into());
        }
        let n = s.candidates.len();
        let first = s.corrected.len();
        let idx = match (first..n).find_map(|_| {
            let i = correct_next(s)?;
            s.corrected[i].canm.converged().then_some(i)
        }) {
            Some(i) => i,
            None => return verdict(false, format!("{n} candidates, CANM never converged")),
        };
        let c = &s.corrected[idx];
        let r = refine(&c.canm.triplet);
        let norm = log10_abs(&r.final_norm);
        let near = near_eight(&r.triplet);
        let ctx = Preset::DeskRefine.config().context();
        let pin = pinned(&ctx);
        let pin_err = [
            diff_log10(&r.triplet.vx, &pin.vx),
            diff_log10(&r.triplet.vy, &pin.vy),
            diff_log10(&r.triplet.t, &pin.t),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
        verdict(
            r.converged() && norm < -50.0 && near && pin_err <= PIN_LOG10,
            format!(
                "{n} candidates; candidate {} ({}, {}) CANM {} in {} iterations; refined |F| 1e{norm:.1}; \
                 vx={} vy={} T={}; pin error 1e{pin_err:.1}",
                idx + 1,
                format_trimmed(&c.candidate.vx, 10),
                format_trimmed(&c.candidate.vy, 10),
                c.canm.status,
                c.canm.iterations,
                format_trimmed(&r.triplet.vx, 12),
                format_trimmed(&r.triplet.vy, 12),
                format_trimmed(&r.triplet.t, 12),
            ),
        )
    })
}

fn quadratic_convergence() -> Verdict {
    let cfg = Preset::DeskRefine.config();
    let ctx = cfg.context();
    let base = pinned(&ctx);
    let opts = RefineOptions {
        target_norm: Some(ctx.pow10(-300)),
        max_iter: 4,
        growth_limit: 2,
    };
    let floor = -(f64::from(cfg.decimal_digits)) + 16.0;
    let mut fits = Vec::new();
    let mut detail = Vec::new();
    for (dx, dy, dt) in [(1.0, -1.0, 1.0), (-2.0, 1.0, 0.5), (0.5, 2.0, -1.0)] {
        let step = ctx.pow10(-6);
        let start = Triplet::new(
            base.vx.clone() + Float::with_val(ctx.bits(), &step * dx),
            base.vy.clone() + Float::with_val(ctx.bits(), &step * dy),
            base.t.clone() + Float::with_val(ctx.bits(), &step * dt),
        );
        let r = newton_refine(&start, &cfg, &opts);
        let logs: Vec<f64> = r.norm_history.iter().map(log10_abs).collect();
        let cs: Vec<f64> = logs
            .windows(2)
            .filter(|w| w[1] > floor)
            .map(|w| w[1] - 2.0 * w[0])
            .collect();
        detail.push(format!(
            "norms [{}] log10 C [{}]",
            logs.iter().map(|l| format!("{l:.1}")).collect::<Vec<_>>().join(" "),
            cs.iter().map(|c| format!("{c:.2}")).collect::<Vec<_>>().join(" ")
        ));
        if cs.len() < 2 {
            return verdict(false, format!("fewer than three norms above the floor: {}", detail.join("; ")));
        }
        fits.push(cs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    // Smallest C satisfying the bound on every step of a run; stable means
    // the runs agree within one decade.
    let hi = fits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = fits.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        hi - lo <= 1.0,
        format!(
            "fitted log10 C per run [{}], spread {:.2} decades; {}",
            fits.iter().map(|c| format!("{c:.2}")).collect::<Vec<_>>().join(" "),
            hi - lo,
            detail.join("; ")
        ),
    )
}

fn two_preset_verification() -> Verdict {
    let a_cfg = Preset::DeskRefine.config();
    let b_cfg = Preset::DeskVerify.config();
    let a = newton_refine(&pinned(&a_cfg.context()), &a_cfg, &RefineOptions::default());
    let b = newton_refine(&pinned(&b_cfg.context()), &b_cfg, &RefineOptions::default());
    if !a.converged() || !b.converged() {
        return verdict(false, format!("refinements ended {} and {}", a.status, b.status));
    }
    let cap = a_cfg.decimal_digits;
    let digits = [
        agreed_digits_between(&a.triplet.vx, &b.triplet.vx, cap),
        agreed_digits_between(&a.triplet.vy, &b.triplet.vy, cap),
        agreed_digits_between(&a.triplet.t, &b.triplet.t, cap),
    ];
    let agreed = *digits.iter().min().unwrap();
    verdict(
        agreed >= 80,
        format!("vx/vy/T agree on {digits:?} digits, minimum {agreed}"),
    )
}

fn record_for(c: &Corrected, refined: &CorrectionResult) -> SolutionRecord {
    let cfg = Preset::DeskRefine.config();
    let ctx = cfg.context();
    let t = &refined.triplet;
    let v = VelocityPair::new(ctx.convert(&t.vx), ctx.convert(&t.vy)).unwrap();
    let sig = classify(&v, &t.t, &cfg, &SyzygyOptions::default()).unwrap();
    let mut prov = Provenance::new("new");
    prov.grid_point = Some([
        format_trimmed(&c.candidate.vx, 20),
        format_trimmed(&c.candidate.vy, 20),
    ]);
    SolutionRecord::build(
        t,
        &format_trimmed(&refined.final_norm, 6),
        0,
        &sig,
        80,
        prov,
    )
    .unwrap()
}

fn tstar_dedup() -> Verdict {
    with_search(|s| {
        let mut eights: Vec<(usize, CorrectionResult)> = Vec::new();
        let mut records = Vec::new();
        let mut i = 0;
        while eights.len() < 2 && i < 6 {
            if i == s.corrected.len() && correct_next(s).is_none() {
                break;
            }
            let c = &s.corrected[i];
            if c.canm.converged() {
                let r = refine(&c.canm.triplet);
                if r.converged() {
                    records.push(record_for(c, &r));
                    if near_eight(&r.triplet) {
                        eights.push((i, r));
                    }
                }
            }
            i += 1;
        }
        if eights.len() < 2 {
            return verdict(
                false,
                format!("only {} candidates reached the figure-eight", eights.len()),
            );
        }
        let ts: Vec<Float> = eights
            .iter()
            .map(|(_, r)| scale_invariant_period(&r.triplet.vx, &r.triplet.vy, &r.triplet.t).unwrap())
            .collect();
        let rel = diff_log10(&ts[0], &ts[1]) - log10_abs(&ts[0]);
        let out = dedup_solutions(&records, DEFAULT_TSTAR_TOL_LOG10).unwrap();
        let reps = out.representatives();
        let eight_groups: Vec<&SolutionRecord> = reps
            .iter()
            .filter(|r| r.t_star.starts_with("9.237681250"))
            .collect();
        let merged = eight_groups.len() == 1
            && eight_groups[0].provenance.extra.get("representations")
                == Some(&serde_json::Value::from(2u64));
        let text = catalog_to_string(&reps);
        let valid = parse_catalog(&text)
            .map_err(|e| e.to_string())
            .and_then(|c| validate_catalog(&c).map_err(|e| e.to_string()));
        verdict(
            rel < -40.0 && merged && valid.is_ok() && out.conflicts.is_empty(),
            format!(
                "candidates {} and {} give the figure-eight, T* relative difference 1e{rel:.1}; \
                 {} refined records dedup to {} solutions, figure-eight merged: {merged}; catalog validation: {}",
                eights[0].0 + 1,
                eights[1].0 + 1,
                records.len(),
                reps.len(),
                valid.map(|_| "ok".to_string()).unwrap_or_else(|e| e)
            ),
        )
    })
}

fn random_word(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Letter> {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| {
            let middle = rng.gen_range(1..=3u8);
            if rng.gen_bool(0.5) {
                Letter::plus(middle)
            } else {
                Letter::minus(middle)
            }
        })
        .collect()
}

/// Cancels adjacent inverse pairs in random order until none remain.
fn random_order_reduce(rng: &mut ChaCha8Rng, mut w: Vec<Letter>) -> Vec<Letter> {
    loop {
        let spots: Vec<usize> = (0..w.len().saturating_sub(1))
            .filter(|&i| w[i + 1] == w[i].inverse())
            .collect();
        if spots.is_empty() {
            return w;
        }
        let i = spots[rng.gen_range(0..spots.len())];
        w.drain(i..i + 2);
    }
}

fn primitive_word(rng: &mut ChaCha8Rng) -> Vec<Letter> {
    loop {
        let w = random_word(rng, 9);
        let w = free_reduce(&w);
        let cyclic = w.len() >= 2 && w[0] != w[w.len() - 1].inverse();
        if cyclic && is_satellite(&w).is_none() {
            return w;
        }
    }
}

fn topology_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let mut failures = Vec::new();

    for _ in 0..10_000 {
        let w = random_word(&mut rng, 30);
        let r = free_reduce(&w);
        if free_reduce(&r) != r || random_order_reduce(&mut rng, w.clone()) != r {
            failures.push(format!("reduction of {w:?}"));
            break;
        }
    }

    let perms: [[u8; 3]; 6] = [[1, 2, 3], [1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1]];
    for _ in 0..1_000 {
        let mut w = random_word(&mut rng, 16);
        if w.is_empty() {
            w.push(Letter::plus(1));
        }
        let perm = perms[rng.gen_range(0..6)];
        let rot = rng.gen_range(0..w.len());
        let mut g: Vec<Letter> = (0..w.len())
            .map(|k| {
                let l = w[(k + rot) % w.len()];
                Letter::new(perm[(l.middle - 1) as usize], l.sign)
            })
            .collect();
        if rng.gen_bool(0.5) {
            g = g.iter().rev().map(|l| l.inverse()).collect();
        }
        if canonical_signature(&g) != canonical_signature(&w) {
            failures.push("canonical form not invariant".into());
            break;
        }
    }

    for _ in 0..200 {
        let w = primitive_word(&mut rng);
        let k = rng.gen_range(2..=4);
        let power: Vec<Letter> = w.iter().cycle().take(w.len() * k).copied().collect();
        match is_satellite(&power) {
            Some((root, e)) if e == k && canonical_signature(&root) == canonical_signature(&w) => {}
            _ => {
                failures.push("satellite of a constructed power".into());
                break;
            }
        }
    }

    let cfg = Preset::DeskRefine.config();
    let ctx = cfg.context();
    let eight = pinned(&ctx);
    let v = VelocityPair::new(eight.vx.clone(), eight.vy.clone()).unwrap();
    let sigs: Vec<_> = [16, 32]
        .into_iter()
        .map(|m| {
            classify(
                &v,
                &eight.t,
                &cfg,
                &SyzygyOptions {
                    samples_per_step: m,
                    with_reversal: true,
                },
            )
            .unwrap()
        })
        .collect();
    if sigs[0].raw != sigs[1].raw || sigs[0].canonical_text() != EIGHT_SIGNATURE {
        failures.push(format!(
            "figure-eight {} vs {}",
            sigs[0].canonical_text(),
            sigs[1].canonical_text()
        ));
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "10^4 reductions, 10^3 group elements, 200 powers; figure-eight {} ({} syzygies) at 16 and 32 samples",
                sigs[0].canonical_text(),
                sigs[0].raw.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

const DESK_WINDOW: &str = "profile = desk
window.vx_lo = 0.3378125
window.vx_hi = 0.3534375
window.vy_lo = 0.5278125
window.vy_hi = 0.5434375
";

/// Full desk pipeline through stage files; returns the catalog and figures.
fn desk_pipeline(dir: &Path, workers: usize, shards: usize) -> Vec<(String, String)> {
    let config = PipelineConfig::parse(DESK_WINDOW).unwrap();
    let job = |stage, inputs: Vec<PathBuf>, index: usize, count: usize| {
        let mut j = StageJob::new(stage, config.clone());
        j.workers = Some(workers);
        j.shard_index = index;
        j.shard_count = count;
        j.inputs = inputs;
        j
    };
    let exec = |j: StageJob, name: &str| -> (PathBuf, String) {
        let path = dir.join(name);
        let text = run_stage(&j).unwrap().text;
        fs::write(&path, &text).unwrap();
        (path, text)
    };
    let sharded = |stage, input: Option<&PathBuf>, name: &str| -> Vec<PathBuf> {
        (0..shards)
            .map(|i| {
                let inputs = input.into_iter().cloned().collect();
                exec(job(stage, inputs, i, shards), &format!("{name}.{i}")).0
            })
            .collect()
    };
    let merged = |parts: Vec<PathBuf>, name: &str| exec(job(Stage::Merge, parts, 0, shards), name).0;

    let cells = merged(sharded(Stage::Scan, None, "cells"), "cells");
    let (cands, _) = exec(job(Stage::Candidates, vec![cells], 0, 1), "candidates");
    let corr = merged(sharded(Stage::Correct, Some(&cands), "correct"), "correct");
    let refd = merged(sharded(Stage::Refine, Some(&corr), "refine"), "refine");
    let ver = merged(sharded(Stage::Verify, Some(&refd), "verify"), "verify");
    let classified = sharded(Stage::Classify, Some(&ver), "classify");
    let (catalog, catalog_text) = exec(job(Stage::Dedup, classified, 0, 1), "catalog.jsonl");
    let mut artifacts = vec![("catalog.jsonl".to_string(), catalog_text.clone())];
    for (stage, name) in [(Stage::Report, "report.txt"), (Stage::RenderScatter, "scatter.svg")] {
        artifacts.push((name.into(), exec(job(stage, vec![catalog.clone()], 0, 1), name).1));
    }
    for k in 0..catalog_text.lines().count() {
        let name = format!("orbit{k}.svg");
        let mut j = job(Stage::RenderOrbit, vec![catalog.clone()], 0, 1);
        j.record = k;
        artifacts.push((name.clone(), exec(j, &name).1));
    }
    artifacts
}

fn determinism() -> Verdict {
    let runs = [(1, 1), (1, 1), (8, 1), (8, 7)];
    let mut outputs = Vec::new();
    for (workers, shards) in runs {
        let dir = tempfile::tempdir().unwrap();
        outputs.push(desk_pipeline(dir.path(), workers, shards));
    }
    let reference = &outputs[0];
    let solutions = reference[0].1.lines().count();
    let mut mismatches = Vec::new();
    for (o, (workers, shards)) in outputs.iter().zip(runs).skip(1) {
        if o != reference {
            mismatches.push(format!("workers={workers} shards={shards}"));
        }
    }
    verdict(
        mismatches.is_empty() && solutions > 0,
        format!(
            "{} runs (workers, shards) = {runs:?}; {} artifacts each, {solutions} solutions; {}",
            runs.len(),
            reference.len(),
            if mismatches.is_empty() {
                "byte-identical".to_string()
            } else {
                format!("differ: {}", mismatches.join(", "))
            }
        ),
    )
}

fn full_preset_smoke() -> Verdict {
    let cfg = Preset::FullSearch.config();
    let ctx = cfg.context();
    let spec = GridSpec::full();
    let (nx, _) = spec.dims();
    // Grid cell (711, 1091): vx = 711/2048, vy = 1091/2048.
    let v = spec.point(1091 * nx + 711, &ctx);
    let s = initial_state(&v, &ctx);
    let out = integrate(&s, &ctx.real(70), &cfg, &mut []).unwrap();
    let f = &out.final_state;
    let de = diff_log10(&energy(f).unwrap(), &energy(&s).unwrap());
    let dl = diff_log10(&angular_momentum(f), &angular_momentum(&s));
    verdict(
        out.status == IntegrationStatus::ReachedEnd && de <= -120.0 && dl <= -120.0,
        format!(
            "({}, {}) at {} digits / order {}: {} after {} steps, |dE| 1e{de:.1}, |dL| 1e{dl:.1}",
            format_trimmed(&v.vx, 12),
            format_trimmed(&v.vy, 12),
            cfg.decimal_digits,
            cfg.taylor_order,
            out.status.code(),
            out.stats.steps
        ),
    )
}
