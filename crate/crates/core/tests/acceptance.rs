//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use ciao_core::l1d::{AccessOutcome, CacheModel};
use ciao_core::scheduler::CiaoAction;
use ciao_core::smem::{translate, SmemLocation, TranslationUnit};
use ciao_core::stats::Structure;
use ciao_core::vta::{irs_value, InterferenceEntry};
use ciao_core::workloads::{gen_thrash, ClassParams, WorkloadClass};
use ciao_core::{
    default_config, run_matrix, run_with, MemSpace, Policy, RunOptions, SimConfig, SimStats, Trace, TraceRecord, WarpId,
};
use common::{random_loads, RefDirect, RefLru};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run_all(cells: &[(&Trace, SimConfig)], opts: &RunOptions) -> Vec<SimStats> {
    run_matrix(cells, opts)
        .into_iter()
        .map(|r| r.expect("run failed"))
        .collect()
}

// 1 --------------------------------------------------------------------------

fn cache_oracle() -> Outcome {
    let cfg = default_config();
    let mut mismatches = 0u64;
    let mut loads = 0u64;
    let mut hits = 0u64;
    for seed in 0..10u64 {
        // Footprints from 2x to 16x the cache keep both hits and misses common.
        let blocks = 256 << (seed % 4);
        let trace = random_loads(seed, 48, 100_000, blocks);
        let mut model = CacheModel::new(&cfg);
        let mut reference = RefLru::new(cfg.l1d_sets() as usize, cfg.l1d_ways, cfg.xor_hashing);
        for r in &trace.records {
            let a = r.addr.unwrap();
            let got = model.access(r.warp, a, false, MemSpace::Global, 0).unwrap();
            for e in model.mshr_mut().drain_ready(u64::MAX) {
                model.fill(&e);
            }
            let hit = reference.access(a.0 >> 7);
            mismatches += ((got.outcome == AccessOutcome::Hit) != hit) as u64;
            hits += hit as u64;
            loads += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{loads} loads over 10 seeds, {hits} reference hits, {mismatches} mismatches"),
    )
}

// 2 --------------------------------------------------------------------------

fn counter_protocol() -> Outcome {
    // (counter, same interferer) -> (keeps interferer, next counter)
    let table = [
        ((0, true), (true, 1)),
        ((1, true), (true, 2)),
        ((2, true), (true, 3)),
        ((3, true), (true, 3)),
        ((0, false), (false, 0)),
        ((1, false), (false, 0)),
        ((2, false), (true, 1)),
        ((3, false), (true, 2)),
    ];
    let (old, new) = (WarpId(5), WarpId(9));
    let mut bad = Vec::new();
    for ((counter, same), (keeps, next)) in table {
        let mut e = InterferenceEntry {
            interferer: old,
            counter,
        };
        e.observe(if same { old } else { new });
        let want = if keeps { old } else { new };
        if e.interferer != want || e.counter != next {
            bad.push(format!("({counter},{same})"));
        }
        if !keeps && counter != 0 && counter != 1 {
            bad.push(format!("replaced above 00 at ({counter},{same})"));
        }
    }
    check(bad.is_empty(), format!("8 transitions, mismatches: {bad:?}"))
}

// 3 --------------------------------------------------------------------------

fn rational_abs(x: BigRational) -> BigRational {
    if x < BigRational::from_integer(0.into()) {
        -x
    } else {
        x
    }
}

/// Whether `x` is a double nearest to `exact`.
fn nearest(exact: &BigRational, x: f64) -> bool {
    let r = |v: f64| BigRational::from_float(v).unwrap();
    let err = rational_abs(r(x) - exact);
    let up = f64::from_bits(x.to_bits() + 1);
    let down = if x > 0.0 { f64::from_bits(x.to_bits() - 1) } else { 0.0 };
    rational_abs(r(up) - exact) >= err && rational_abs(r(down) - exact) >= err
}

fn irs_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut wrong = 0;
    for _ in 0..1000 {
        let hits = rng.gen_range(0..1u64 << 24);
        let insts = rng.gen_range(1..1u64 << 32);
        let active = rng.gen_range(1..=64usize);
        let got = irs_value(hits, insts, active).unwrap();
        let exact = BigRational::new((hits * active as u64).into(), insts.into());
        wrong += !nearest(&exact, got) as u32;
    }
    check(wrong == 0, format!("1000 triples, {wrong} differ from the exact ratio"))
}

// 4 --------------------------------------------------------------------------

fn translation_window() -> Outcome {
    let mut problems = Vec::new();
    for rows in [1u16, 7, 32, 33, 93, 128, 186, 248] {
        let tu = TranslationUnit::new(0, rows, rows);
        let mut data_locs = HashSet::new();
        let mut tag_locs = HashSet::new();
        // (fold quotient, bits above 15, G, R) -> block
        let mut class_map: HashMap<(u64, u64, u8, u8), u64> = HashMap::new();
        for a in 0..1u64 << 16 {
            let t = translate(ciao_core::GlobalAddress(a), &tu).unwrap();
            if t.data.g == t.tag_loc.g {
                problems.push(format!("rows {rows}: {a:#x} data and tag share group"));
            }
            for l in [t.data, t.tag_loc] {
                if SmemLocation::unpack(l.pack()) != l {
                    problems.push(format!("rows {rows}: {l:?} does not round trip"));
                }
            }
            data_locs.insert((t.data.r, t.data.g, t.data.b));
            tag_locs.insert((t.tag_loc.r, t.tag_loc.g, t.tag_loc.b));
            if a % 128 == 0 {
                let quotient = ((a >> 8) & 0xFF) / rows as u64;
                let key = (quotient, a >> 16, t.data.g, t.data.r);
                if let Some(prev) = class_map.insert(key, a >> 7) {
                    problems.push(format!("rows {rows}: blocks {prev} and {} collide", a >> 7));
                }
            }
        }
        if !data_locs.is_disjoint(&tag_locs) {
            problems.push(format!("rows {rows}: tag and data locations overlap"));
        }
    }
    let lossless = (0..=u16::MAX).all(|b| SmemLocation::unpack(b).pack() == b);
    if !lossless {
        problems.push("pack/unpack".into());
    }
    problems.truncate(5);
    check(
        problems.is_empty(),
        format!("65536 addresses x 8 row counts, problems: {problems:?}"),
    )
}

// 5 --------------------------------------------------------------------------

/// Bursts of cross-warp conflicts separated by quiet ALU phases, so warps are
/// isolated and later redirected back.
fn phased_trace(seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warps = 8;
    let streams = (0..warps)
        .map(|w| {
            let warp = WarpId::new(w);
            let mut s = Vec::new();
            for phase in 0..4 {
                if phase % 2 == 0 {
                    for _ in 0..600 {
                        s.push(TraceRecord::load(warp, rng.gen_range(0..64u64) * 128));
                    }
                } else {
                    for _ in 0..rng.gen_range(800..1600) {
                        s.push(TraceRecord::alu(warp));
                    }
                }
            }
            s
        })
        .collect();
    Trace::interleave(streams)
}

fn small_dm_config() -> SimConfig {
    SimConfig {
        l1d_size_bytes: 2048,
        l1d_ways: 1,
        high_epoch_insts: 200,
        low_epoch_insts: 40,
        ..default_config()
    }
}

fn coherence() -> Outcome {
    let traces: Vec<Trace> = (0..10).map(phased_trace).collect();
    let cfg = small_dm_config().with_policy(Policy::CiaoP);
    let cells: Vec<_> = traces.iter().map(|t| (t, cfg.clone())).collect();
    let opts = RunOptions {
        audit_coherence: true,
        ..RunOptions::default()
    };
    let runs = run_all(&cells, &opts);
    let violations: u64 = runs.iter().map(|s| s.coherence_violations).sum();
    let isolations: Vec<usize> = runs.iter().map(|s| s.action_count(CiaoAction::Isolate)).collect();
    let unredirects: Vec<usize> = runs.iter().map(|s| s.action_count(CiaoAction::Unredirect)).collect();
    let mixed = isolations.iter().zip(&unredirects).all(|(&i, &u)| i > 0 && u > 0);
    check(
        violations == 0 && mixed,
        format!(
            "10 CIAO-P runs, isolations {isolations:?}, redirects back {unredirects:?}, {violations} violating cycles"
        ),
    )
}

// 6 --------------------------------------------------------------------------

/// Warp 0 (the victim) loops over lines that warp 1 (the aggressor) keeps
/// evicting, then runs a long ALU tail so its IRS decays.
fn scripted_trace() -> Trace {
    let lines = 6u64;
    let victim = WarpId(0);
    let aggressor = WarpId(1);
    let mut v = Vec::new();
    let mut a = Vec::new();
    let mut next = 32;
    for _ in 0..40 {
        for b in 0..lines {
            v.push(TraceRecord::load(victim, b * 128));
            // A fresh block in the same direct-mapped set, never reused.
            a.push(TraceRecord::load(aggressor, (b + next) * 128));
        }
        next += 32;
    }
    v.extend((0..120_000).map(|_| TraceRecord::alu(victim)));
    a.extend((0..30_000).map(|_| TraceRecord::alu(aggressor)));
    Trace::interleave(vec![v, a])
}

fn scripted_config() -> SimConfig {
    SimConfig {
        l1d_size_bytes: 4096,
        l1d_ways: 1,
        xor_hashing: false,
        high_epoch_insts: 400,
        low_epoch_insts: 50,
        ..default_config()
    }
    .with_policy(Policy::CiaoC)
}

fn trajectory() -> Outcome {
    let cfg = scripted_config();
    let s = run_with(&scripted_trace(), &cfg, &RunOptions::default()).unwrap();
    let got: Vec<(CiaoAction, Option<WarpId>)> = s.epochs.iter().map(|e| (e.action, e.target)).collect();
    let a = Some(WarpId(1));
    let want = vec![
        (CiaoAction::Isolate, a),
        (CiaoAction::Stall, a),
        (CiaoAction::Reactivate, a),
        (CiaoAction::Unredirect, a),
    ];
    let released_cool = s
        .epochs
        .iter()
        .filter(|e| e.action == CiaoAction::Reactivate)
        .all(|e| e.irs <= cfg.low_cutoff);
    let triggers_ok = s.epochs.iter().all(|e| e.acting == WarpId(0));
    check(
        got == want && released_cool && triggers_ok,
        format!(
            "events {:?}",
            s.epochs
                .iter()
                .map(|e| format!("{}({}) at {} irs {:.4}", e.action, e.target.unwrap().0, e.cycle, e.irs))
                .collect::<Vec<_>>()
        ),
    )
}

// 7 --------------------------------------------------------------------------

fn thrash_config() -> SimConfig {
    SimConfig {
        l1d_size_bytes: 4096,
        l1d_ways: 1,
        ..default_config()
    }
}

/// Hit rates of the second half of each warp's loads when warp 0 keeps the
/// L1D to itself and warp 1 is served by the shared-memory cache (or both
/// share the L1D when `isolated` is false).
fn two_cache_oracle(trace: &Trace, cfg: &SimConfig, isolated: bool) -> f64 {
    let rows = ciao_core::smem::cache_rows_for(cfg.smem_rows() - cfg.cta_smem_rows()) as u64;
    let mut l1d = RefLru::new(cfg.l1d_sets() as usize, cfg.l1d_ways, cfg.xor_hashing);
    let mut smem = RefDirect::new(rows as usize * 2);
    let streams = trace.per_warp();
    let mut outcomes = Vec::new();
    for (w, s) in streams.iter().enumerate() {
        let mut hits = Vec::new();
        for r in s {
            let a = r.addr.unwrap().0;
            let hit = if isolated && w == 1 {
                smem.access(((((a >> 8) & 0xFF) % rows) * 2 + ((a >> 7) & 1)) as usize, a >> 7)
            } else {
                l1d.access(a >> 7)
            };
            hits.push(hit);
        }
        outcomes.push(hits);
    }
    if !isolated {
        // Shared cache: replay in round-robin order instead.
        let mut l1d = RefLru::new(cfg.l1d_sets() as usize, cfg.l1d_ways, cfg.xor_hashing);
        let hits: Vec<bool> = trace
            .records
            .iter()
            .map(|r| l1d.access(r.addr.unwrap().0 >> 7))
            .collect();
        return second_half_rate(&hits);
    }
    let all: Vec<bool> = outcomes.iter().flat_map(|h| h[h.len() / 2..].to_vec()).collect();
    all.iter().filter(|&&h| h).count() as f64 / all.len() as f64
}

fn second_half_rate(hits: &[bool]) -> f64 {
    let tail = &hits[hits.len() / 2..];
    tail.iter().filter(|&&h| h).count() as f64 / tail.len() as f64
}

fn steady_state(s: &SimStats, structures: &[Structure]) -> f64 {
    let acc = s.accesses.as_ref().unwrap();
    let loads: Vec<bool> = acc
        .iter()
        .filter(|r| !r.is_store)
        .map(|r| r.outcome == AccessOutcome::Hit && structures.contains(&r.structure))
        .collect();
    second_half_rate(&loads)
}

fn thrash_rescue() -> Outcome {
    let cfg = thrash_config();
    let trace = gen_thrash(2, cfg.l1d_sets() as usize, 400, 1, &cfg).unwrap();
    let oracle_shared = two_cache_oracle(&trace, &cfg, false);
    let oracle_isolated = two_cache_oracle(&trace, &cfg, true);
    let opts = RunOptions {
        record_accesses: true,
        ..RunOptions::default()
    };
    let runs = run_all(
        &[(&trace, cfg.clone()), (&trace, cfg.clone().with_policy(Policy::CiaoP))],
        &opts,
    );
    let gto = steady_state(&runs[0], &[Structure::L1d]);
    let ciao = steady_state(&runs[1], &[Structure::L1d, Structure::Smem]);
    check(
        gto < 0.10 && ciao > 0.90 && oracle_shared < 0.10 && oracle_isolated > 0.90,
        format!(
            "steady-state hit rate GTO {gto:.4} (shared-cache oracle {oracle_shared:.4}), CIAO-P {ciao:.4} (isolated-caches oracle {oracle_isolated:.4})"
        ),
    )
}

// 8 --------------------------------------------------------------------------

fn preset(class: WorkloadClass, seed: u64) -> Trace {
    ClassParams { seed, ..class.preset() }.generate().unwrap()
}

fn ipc_table(class: WorkloadClass, policies: &[Policy]) -> Vec<Vec<f64>> {
    let traces: Vec<Trace> = (1..=3).map(|seed| preset(class, seed)).collect();
    let cells: Vec<_> = traces
        .iter()
        .flat_map(|t| policies.iter().map(move |&p| (t, default_config().with_policy(p))))
        .collect();
    let runs = run_all(&cells, &RunOptions::default());
    runs.chunks(policies.len())
        .map(|c| c.iter().map(|s| s.ipc).collect())
        .collect()
}

fn orderings() -> Outcome {
    let sws = ipc_table(WorkloadClass::Sws, &[Policy::CiaoT, Policy::CiaoP]);
    let lws = ipc_table(WorkloadClass::Lws, &[Policy::CiaoT, Policy::CiaoP, Policy::CiaoC]);
    let ci = ipc_table(WorkloadClass::Ci, &[Policy::Gto, Policy::CiaoC]);
    let sws_ok = sws.iter().all(|r| r[1] >= r[0]);
    let lws_ok = lws.iter().all(|r| r[0] >= r[1] && r[2] >= r[0].max(r[1]));
    let ci_ok = ci.iter().all(|r| r[1] >= 0.95 * r[0]);
    let fmt = |t: &[Vec<f64>]| {
        t.iter()
            .map(|r| r.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    check(
        sws_ok && lws_ok && ci_ok,
        format!(
            "SWS T/P {} [{}]; LWS T/P/C {} [{}]; CI GTO/C {} [{}]",
            fmt(&sws),
            pass_word(sws_ok),
            fmt(&lws),
            pass_word(lws_ok),
            fmt(&ci),
            pass_word(ci_ok)
        ),
    )
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

// 9 --------------------------------------------------------------------------

fn baseline_sanity() -> Outcome {
    let trace = preset(WorkloadClass::Lws, 1);
    let limits = [1usize, 2, 4, 8, 16, 24, 32, 48];
    let mut cells = vec![(&trace, default_config())];
    for &l in &limits {
        cells.push((
            &trace,
            SimConfig {
                best_swl_limit: Some(l),
                ..default_config().with_policy(Policy::BestSwl)
            },
        ));
    }
    let opts = RunOptions {
        record_schedule: true,
        ..RunOptions::default()
    };
    let runs = run_all(&cells, &opts);
    let gto = &runs[0];
    let full = runs.last().unwrap();
    let same_schedule = gto.schedule == full.schedule;
    let ipcs: Vec<f64> = runs[1..].iter().map(|s| s.ipc).collect();
    let best = ipcs.iter().cloned().fold(f64::MIN, f64::max);
    let rising = ipcs.windows(2).all(|w| w[1] >= w[0]);
    let falling = ipcs.windows(2).all(|w| w[1] <= w[0]);
    let shape = if rising && falling {
        "flat"
    } else if rising || falling {
        "monotone"
    } else {
        "non-monotone"
    };
    check(
        same_schedule && best >= gto.ipc && shape != "monotone",
        format!(
            "limit=48 schedule matches GTO: {same_schedule}; sweep {:?} is {shape}, best {best:.4} vs GTO {:.4}",
            limits
                .iter()
                .zip(&ipcs)
                .map(|(l, x)| format!("{l}:{x:.4}"))
                .collect::<Vec<_>>(),
            gto.ipc
        ),
    )
}

// 10 -------------------------------------------------------------------------

fn epoch_sensitivity() -> Outcome {
    let trace = preset(WorkloadClass::Lws, 1);
    let epochs = [1000u64, 5000, 50_000];
    let cells: Vec<_> = epochs
        .iter()
        .map(|&e| {
            (
                &trace,
                SimConfig {
                    high_epoch_insts: e,
                    ..default_config().with_policy(Policy::CiaoC)
                },
            )
        })
        .collect();
    let ipcs: Vec<f64> = run_all(&cells, &RunOptions::default()).iter().map(|s| s.ipc).collect();
    let base = ipcs[1];
    let change = ipcs.iter().map(|x| (x - base).abs() / base).fold(0.0, f64::max);
    check(
        change < 0.25,
        format!(
            "CIAO-C IPC {:?}, largest change from the 5000-instruction default {:.1}%",
            epochs
                .iter()
                .zip(&ipcs)
                .map(|(e, x)| format!("{e}:{x:.4}"))
                .collect::<Vec<_>>(),
            change * 100.0
        ),
    )
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        (1, "cache oracle equivalence", cache_oracle, Duration::from_secs(10)),
        (
            2,
            "interference counter protocol",
            counter_protocol,
            Duration::from_secs(1),
        ),
        (3, "IRS exactness", irs_exact, Duration::from_secs(1)),
        (4, "translation unit window", translation_window, Duration::from_secs(5)),
        (5, "coherence exclusivity", coherence, Duration::from_secs(30)),
        (6, "state-machine trajectory", trajectory, Duration::from_secs(5)),
        (7, "thrashing rescue", thrash_rescue, Duration::from_secs(5)),
        (8, "directional orderings", orderings, Duration::from_secs(60)),
        (9, "baseline sanity", baseline_sanity, Duration::from_secs(60)),
        (10, "epoch sensitivity", epoch_sensitivity, Duration::from_secs(60)),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, name, f, budget) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        failed += !pass as u32;
        println!(
            "criterion {n:>2} {}: {name}: {} ({:.2}s, budget {}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
