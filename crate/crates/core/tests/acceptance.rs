//! Acceptance suite: one test per criterion, each printing a pass line with
//! its measured statistics. Monte-Carlo thresholds are desk-scale stand-ins
//! for the underlying high-probability guarantees.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weighfind::coins::{find_with_verification, rbs_coins, CoinConfig, CoinProblem, RoundDiag};
use weighfind::family::{ceil_log2, SubsetFamily};
use weighfind::graphs::{
    algorithm_b, reconstruct_bipartite, reconstruct_general, GraphConfig, GraphCtx, GraphReport,
    DELTA,
};
use weighfind::harness::{
    gen_bipartite, gen_coins, gen_general, mix_seed, rows_to_csv, run_suite, ExperimentSpec,
    Kind, Profile,
};
use weighfind::matrix::MatrixPlan;
use weighfind::oracle::{
    coin_query, graph_query, lift_query, zero_tol, GeneralInstance, QueryLedger,
};

// ---------------------------------------------------------------------------
// shared suites (computed once, reused by several criteria)

struct CoinTrial {
    exact: bool,
    false_positives: usize,
    /// "rbs" phase count of each underlying search run.
    rbs_per_repeat: Vec<u64>,
    rounds: Vec<RoundDiag>,
    queries_total: u64,
}

const COIN_N: usize = 4096;
const COIN_M: usize = 64;
const COIN_TRIALS: usize = 200;
const COIN_SEED: u64 = 0xC0;

fn coin_suite() -> &'static Vec<CoinTrial> {
    static SUITE: OnceLock<Vec<CoinTrial>> = OnceLock::new();
    SUITE.get_or_init(|| {
        let spec = ExperimentSpec::coins(COIN_N, COIN_M, 1.0, 4.0, 0.0, COIN_TRIALS, COIN_SEED);
        let mut out = Vec::with_capacity(COIN_TRIALS);
        for t in 0..COIN_TRIALS {
            let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
            let mut run_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "run"));
            let inst = gen_coins(&spec, &mut gen_rng).unwrap();
            let mut led = QueryLedger::new();
            let truth_w = inst.weights().clone();
            let rep = {
                let inst_ref = &inst;
                let led_ref = &mut led;
                let mut p = CoinProblem {
                    cfg: CoinConfig::new(COIN_N, COIN_M, 1.0, 4.0, 0.0),
                    weigh: Box::new(move |set| coin_query(inst_ref, set, led_ref, "oracle")),
                    truth: Some(Box::new(move |c| truth_w.get(&c).copied().unwrap_or(0.0))),
                };
                let ground: Vec<usize> = (1..=COIN_N).collect();
                find_with_verification(&mut p, &ground, 2, &mut run_rng)
            };
            let truth: BTreeSet<usize> = inst.counterfeit_ids().collect();
            out.push(CoinTrial {
                exact: rep.declared == truth,
                false_positives: rep.declared.difference(&truth).count(),
                rbs_per_repeat: rep
                    .repeat_phase_counts
                    .iter()
                    .map(|c| c.get("rbs").copied().unwrap_or(0))
                    .collect(),
                rounds: rep.rounds,
                queries_total: rep.queries.total(),
            });
        }
        out
    })
}

struct GraphTrial {
    exact: bool,
    false_positives: usize,
    phases: BTreeMap<String, (u64, usize)>,
}

const GRAPH_N: usize = 512;
const GRAPH_M: usize = 128;
const GRAPH_TRIALS: usize = 100;

fn graph_trial(spec: &ExperimentSpec, t: usize) -> (GraphTrial, GraphReport) {
    let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
    let mut run_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "run"));
    let (inst, _) = gen_bipartite(spec, &mut gen_rng).unwrap();
    let mut led = QueryLedger::new();
    let rep = {
        let inst_ref = &inst;
        let led_ref = &mut led;
        reconstruct_bipartite(
            Box::new(move |a: &[usize], b: &[usize]| graph_query(inst_ref, a, b, led_ref, "o")),
            GraphConfig::bipartite(inst.nx(), inst.ny(), spec.m, spec.alpha, spec.beta),
            &mut run_rng,
        )
    };
    let truth = inst.edges();
    let exact = rep.edges.len() == truth.len()
        && rep.edges.iter().all(|(k, &w)| {
            truth
                .get(k)
                .map_or(false, |&tw| (w - tw).abs() <= 1e-9 * tw.abs().max(1.0))
        });
    let trial = GraphTrial {
        exact,
        false_positives: rep.edges.keys().filter(|k| !truth.contains_key(k)).count(),
        phases: rep
            .phases
            .iter()
            .map(|(k, p)| (k.clone(), (p.queries, p.edges_found)))
            .collect(),
    };
    (trial, rep)
}

fn bipartite_suite(profile: Profile, seed: u64) -> Vec<GraphTrial> {
    let mut spec = ExperimentSpec::coins(GRAPH_N, GRAPH_M, 1.0, 4.0, 0.0, GRAPH_TRIALS, seed);
    spec.kind = Kind::Bipartite;
    spec.profile = profile;
    (0..GRAPH_TRIALS).map(|t| graph_trial(&spec, t).0).collect()
}

fn bipartite_suites() -> &'static (Vec<GraphTrial>, Vec<GraphTrial>) {
    static SUITES: OnceLock<(Vec<GraphTrial>, Vec<GraphTrial>)> = OnceLock::new();
    SUITES.get_or_init(|| {
        (
            bipartite_suite(Profile::Uniform, 0xB1),
            bipartite_suite(Profile::StarMix, 0xB2),
        )
    })
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_coin_soundness() {
    let suite = coin_suite();
    let fp: usize = suite.iter().map(|t| t.false_positives).sum();
    let exact = suite.iter().filter(|t| t.exact).count();
    assert_eq!(fp, 0, "false positives must never survive verification");
    let rate = exact as f64 / suite.len() as f64;
    assert!(rate >= 0.95, "exact-recovery rate {rate} below 0.95");
    println!(
        "criterion 01 coin soundness: pass — {exact}/{} exact, 0 false positives",
        suite.len()
    );
}

#[test]
fn criterion_02_coin_budgets() {
    // cleanup-phase cap within full runs
    let cap = ((ceil_log2(COIN_N) + 3) as f64 * (COIN_M as f64).powf(0.8)).floor() as u64;
    let mut worst = 0u64;
    for t in coin_suite() {
        for &rbs in &t.rbs_per_repeat {
            assert!(rbs <= cap, "cleanup phase charged {rbs} > cap {cap}");
            worst = worst.max(rbs);
        }
    }
    // standalone randomized binary search cap
    let (n, m) = (1024usize, 8usize);
    let budget = ((ceil_log2(n) + 3) * m as u32) as u64;
    for seed in 0..50u64 {
        let spec = ExperimentSpec::coins(n, m, 1.0, 4.0, 0.0, 1, seed);
        let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0, "gen"));
        let mut run_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0, "run"));
        let inst = gen_coins(&spec, &mut gen_rng).unwrap();
        let mut led = QueryLedger::new();
        let pool: Vec<usize> = (1..=n).collect();
        let out = rbs_coins(
            |set| coin_query(&inst, set, &mut led, "rbs"),
            &pool,
            m,
            budget,
            zero_tol(1.0),
            &mut run_rng,
        )
        .unwrap();
        assert!(out.queries <= budget, "standalone search charged {} > {budget}", out.queries);
        assert_eq!(out.queries, led.total());
    }
    println!("criterion 02 coin budgets: pass — worst cleanup charge {worst} <= {cap}");
}

#[test]
fn criterion_03_tail_bound() {
    let mut audited_rounds = 0u64;
    let mut checked = 0u64;
    for t in coin_suite() {
        for r in &t.rounds {
            if r.audit_bd == Some(true) {
                audited_rounds += 1;
                checked += r.tail_checked;
                assert_eq!(
                    r.tail_violations, 0,
                    "tail sum reached alpha/2 in an audited round (q={})",
                    r.q
                );
            }
        }
    }
    assert!(audited_rounds > 0 && checked > 0, "no audited rounds to check");
    println!(
        "criterion 03 tail bound: pass — {checked} tail sums over {audited_rounds} audited rounds, 0 violations"
    );
}

#[test]
fn criterion_04_family_audit() {
    let builds = 100;
    let q = 256usize;
    let n = 4096usize;
    let spec = ExperimentSpec::coins(n, q, 1.0, 4.0, 0.0, builds, 0xFA);
    let ground: Vec<usize> = (1..=n).collect();
    let mut bcd_ok = 0;
    for t in 0..builds {
        let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
        let mut fam_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "family"));
        let inst = gen_coins(&spec, &mut gen_rng).unwrap();
        let fam = SubsetFamily::build(&ground, q, n, &mut fam_rng).unwrap();
        fam.check_structure(&ground).unwrap();
        let audit = fam.audit(&inst);
        assert!(audit.pass_e, "deepest-level cells must be counterfeit-singletons");
        if audit.pass_b() && audit.pass_c() && audit.pass_d {
            bcd_ok += 1;
        }
    }
    assert!(
        bcd_ok >= 99,
        "per-level bounds held in only {bcd_ok}/{builds} builds"
    );
    println!(
        "criterion 04 family audit: pass — b/c/d in {bcd_ok}/{builds} builds, e + structure in all"
    );
}

#[test]
fn criterion_05_matrix_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3A);
    let mut worst = 0.0f64;
    for &gamma in &[1u32, 3, 7] {
        for &m in &[1usize, 4, 16, 64] {
            let plan = MatrixPlan::identity(gamma, m);
            for _ in 0..100 {
                let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let r = plan.resolution_residual(&w).unwrap();
                assert!(r < 1e-9, "residual {r} at gamma={gamma}, m={m}");
                worst = worst.max(r);
            }
        }
    }
    println!("criterion 05 matrix resolution: pass — worst residual {worst:.3e} < 1e-9");
}

#[test]
fn criterion_06_bipartite_reconstruction() {
    let (uniform, star) = bipartite_suites();
    for (name, suite) in [("uniform", uniform), ("star-mix", star)] {
        let fp: usize = suite.iter().map(|t| t.false_positives).sum();
        assert_eq!(fp, 0, "{name}: declared edges must be real");
        let exact = suite.iter().filter(|t| t.exact).count();
        let rate = exact as f64 / suite.len() as f64;
        assert!(rate >= 0.90, "{name}: exact rate {rate} below 0.90");
        println!(
            "criterion 06 bipartite ({name}): pass — {exact}/{} exact, 0 false positives",
            suite.len()
        );
    }
}

#[test]
fn criterion_07_graph_budgets() {
    let n = GRAPH_N;
    let mf = GRAPH_M as f64;
    let a3_cap = ((6 * ceil_log2(n) + 15) as f64 * mf.powf(1.0 - 3.0 * DELTA)).floor() as u64;
    let b1_cap = ((2 * ceil_log2(n) + 5) as f64 * mf.powf(1.0 - DELTA / 2.0)).floor() as u64;
    let (uniform, star) = bipartite_suites();
    let mut worst_a3 = 0u64;
    let mut worst_b1 = 0u64;
    for t in uniform.iter().chain(star.iter()) {
        if let Some(&(q, _)) = t.phases.get("a3") {
            assert!(q <= a3_cap, "sweep phase charged {q} > {a3_cap}");
            worst_a3 = worst_a3.max(q);
        }
        if let Some(&(q, _)) = t.phases.get("b1") {
            // the large-degree pass runs once per side under one phase name
            assert!(q <= 2 * b1_cap, "two sampling passes charged {q} > {}", 2 * b1_cap);
            worst_b1 = worst_b1.max(q);
        }
    }
    // single-invocation caps, standalone
    let m = 32usize;
    let n_small = 128usize;
    let b_cap = ((2 * ceil_log2(n_small) + 5) as f64 * (m as f64).powf(1.0 - DELTA / 2.0))
        .floor() as u64;
    for seed in 0..20u64 {
        let mut spec = ExperimentSpec::coins(n_small, m, 1.0, 4.0, 0.0, 1, seed ^ 0x70);
        spec.kind = Kind::Bipartite;
        let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0, "gen"));
        let mut run_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0, "run"));
        let (inst, _) = gen_bipartite(&spec, &mut gen_rng).unwrap();
        let mut led = QueryLedger::new();
        let mut ctx = {
            let inst_ref = &inst;
            let led_ref = &mut led;
            GraphCtx::new(
                GraphConfig::bipartite(n_small, n_small, m, 1.0, 4.0),
                Box::new(move |a: &[usize], b: &[usize]| {
                    graph_query(inst_ref, a, b, led_ref, "o")
                }),
            )
        };
        algorithm_b(&mut ctx, false, m, &mut run_rng).unwrap();
        let b1 = ctx.led.counts().get("b1").copied().unwrap_or(0);
        assert!(b1 <= b_cap, "one sampling pass charged {b1} > {b_cap}");
    }
    println!(
        "criterion 07 graph budgets: pass — worst sweep {worst_a3} <= {a3_cap}, worst sampling {worst_b1} <= {}",
        2 * b1_cap
    );
}

#[test]
fn criterion_08_general_graphs() {
    // cross-weight identity against brute force, intersection edges twice
    let mut rng = ChaCha8Rng::seed_from_u64(0x11F7);
    for _ in 0..1000 {
        let n = rng.gen_range(4..=32);
        let m = rng.gen_range(0..=n);
        let mut edges = BTreeMap::new();
        while edges.len() < m {
            let u = rng.gen_range(1..=n);
            let v = rng.gen_range(1..=n);
            if u != v {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                edges.insert((u.min(v), u.max(v)), sign * rng.gen_range(1.0..4.0));
            }
        }
        let inst = GeneralInstance::new(n, edges, 1.0, 4.0).unwrap();
        let a: Vec<usize> = (1..=n).filter(|_| rng.gen_bool(0.5)).collect();
        let b: Vec<usize> = (1..=n).filter(|_| rng.gen_bool(0.5)).collect();
        let mut led = QueryLedger::new();
        let got = lift_query(&inst, &a, &b, &mut led, "t").unwrap();
        assert_eq!(led.total(), 4, "each cross-query must charge four set queries");
        let want: f64 = inst
            .edges()
            .iter()
            .map(|(&(u, v), &w)| {
                let uv = a.contains(&u) && b.contains(&v);
                let vu = a.contains(&v) && b.contains(&u);
                w * (uv as u8 + vu as u8) as f64
            })
            .sum();
        assert!(
            (got - want).abs() <= 1e-9 * want.abs().max(1.0),
            "cross-weight mismatch: {got} vs {want}"
        );
    }

    // full reconstruction through the double cover
    let trials = 100;
    let mut spec = ExperimentSpec::coins(256, 64, 1.0, 4.0, 0.0, trials, 0x6E);
    spec.kind = Kind::General;
    let mut exact = 0;
    let mut fp = 0usize;
    for t in 0..trials {
        let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
        let mut run_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "run"));
        let (inst, _) = gen_general(&spec, &mut gen_rng).unwrap();
        let mut led = QueryLedger::new();
        let rep = {
            let inst_ref = &inst;
            let led_ref = &mut led;
            reconstruct_general(
                Box::new(move |a: &[usize], b: &[usize]| {
                    lift_query(inst_ref, a, b, led_ref, "o")
                }),
                256,
                64,
                1.0,
                4.0,
                &mut run_rng,
            )
        };
        assert_eq!(
            led.total(),
            4 * rep.queries.total(),
            "underlying charge must be four per cross-query"
        );
        let truth = inst.edges();
        fp += rep.edges.keys().filter(|k| !truth.contains_key(k)).count();
        if rep.edges.len() == truth.len()
            && rep.edges.iter().all(|(k, &w)| {
                truth
                    .get(k)
                    .map_or(false, |&tw| (w - tw).abs() <= 1e-9 * tw.abs().max(1.0))
            })
        {
            exact += 1;
        }
    }
    assert_eq!(fp, 0, "declared edges must be real");
    let rate = exact as f64 / trials as f64;
    assert!(rate >= 0.90, "exact rate {rate} below 0.90");
    println!(
        "criterion 08 general graphs: pass — 1000 cross-weight checks, {exact}/{trials} exact reconstructions"
    );
}

#[test]
fn criterion_09_query_scaling() {
    let n = 1 << 14;
    let mut ratios = Vec::new();
    for &m in &[64usize, 256] {
        let spec = ExperimentSpec::coins(n, m, 1.0, 4.0, 0.0, 3, 0x9C);
        let out = run_suite(&spec).unwrap();
        assert!(
            out.summary.ratio_base <= 8.0,
            "m={m}: normalized ratio {} above 8",
            out.summary.ratio_base
        );
        assert!(out.summary.success_rate >= 0.5, "m={m}: scaling runs mostly failed");
        ratios.push((m, out.summary.ratio_base));
    }
    println!(
        "criterion 09 query scaling: pass — ratios {:?} all <= 8 at n=2^14",
        ratios
    );
}

#[test]
fn criterion_10_determinism() {
    for kind in [Kind::Coins, Kind::Bipartite, Kind::General] {
        let mut spec = ExperimentSpec::coins(64, 4, 1.0, 4.0, 0.0, 3, 0xDE);
        spec.kind = kind;
        let a = rows_to_csv(&run_suite(&spec).unwrap().rows).unwrap();
        let b = rows_to_csv(&run_suite(&spec).unwrap().rows).unwrap();
        assert_eq!(a, b, "{kind:?}: identical runs must emit identical bytes");
    }
    println!("criterion 10 determinism: pass — byte-identical reruns for all three kinds");
}
