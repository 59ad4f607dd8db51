//! Instance generation and seeded experiment orchestration.
//!
//! All randomness flows from the spec seed through per-trial, per-purpose
//! child seeds, so identical specs reproduce identical reports byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coins::{find_with_verification, CoinConfig, CoinProblem, TraceRow};
use crate::graphs::{reconstruct_bipartite, reconstruct_general, GraphConfig};
use crate::oracle::{
    coin_query, graph_query, lift_query, BipartiteInstance, CoinInstance, Error,
    GeneralInstance, QueryLedger, Result,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Coins,
    Bipartite,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Uniform,
    StarMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Identity,
    Compressed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    pub plan: PlanKind,
    /// None picks the per-kind default cap multiplier.
    pub eta: Option<f64>,
    pub profile: Profile,
    /// Verification repeats for coin runs.
    pub mu: usize,
}

impl ExperimentSpec {
    pub fn coins(n: usize, m: usize, alpha: f64, beta: f64, eps: f64, trials: usize, seed: u64) -> Self {
        Self {
            kind: Kind::Coins,
            n,
            m,
            alpha,
            beta,
            eps,
            trials,
            seed,
            plan: PlanKind::Identity,
            eta: None,
            profile: Profile::Uniform,
            mu: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidArg("trials must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && 2.0 * self.alpha < self.beta) {
            return Err(Error::InvalidArg("need 0 < alpha and 2*alpha < beta".into()));
        }
        if !(0.0..0.5).contains(&self.eps) {
            return Err(Error::InvalidArg("eps must lie in [0, 1/2)".into()));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for (trial, purpose), so phases are independently reproducible.
pub fn mix_seed(seed: u64, trial: u64, tag: &str) -> u64 {
    let mut h = splitmix(seed ^ splitmix(trial.wrapping_add(1)));
    for &b in tag.as_bytes() {
        h = splitmix(h ^ b as u64);
    }
    h
}

/// m counterfeit coins at distinct uniform ids; weights uniform on
/// +/-[alpha, beta) except for floor(eps*m) of them on +/-(0, alpha).
pub fn gen_coins(spec: &ExperimentSpec, rng: &mut impl Rng) -> Result<CoinInstance> {
    spec.validate()?;
    if spec.m > spec.n {
        return Err(Error::InvalidArg("m exceeds n".into()));
    }
    let ids = index_sample(rng, spec.n, spec.m);
    let k_small = (spec.eps * spec.m as f64).floor() as usize;
    let mut weights = BTreeMap::new();
    for (k, idx) in ids.into_iter().enumerate() {
        let mag = if k < spec.m - k_small {
            rng.gen_range(spec.alpha..spec.beta)
        } else {
            loop {
                let w = rng.gen_range(0.0..spec.alpha);
                if w > 0.0 {
                    break w;
                }
            }
        };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        weights.insert(idx + 1, sign * mag);
    }
    CoinInstance::new(spec.n, weights, spec.alpha, spec.beta, spec.eps)
}

fn edge_weight(spec: &ExperimentSpec, rng: &mut impl Rng) -> f64 {
    let mag = rng.gen_range(spec.alpha..spec.beta);
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Degree cap for the uniform profile: instances are redrawn until the max
/// degree is at most 8, keeping the bounded-degree pass's precondition
/// satisfied at desk scale. Returns the resample count.
pub const UNIFORM_MAX_DEGREE: usize = 8;

pub fn gen_bipartite(spec: &ExperimentSpec, rng: &mut impl Rng) -> Result<(BipartiteInstance, u64)> {
    spec.validate()?;
    let (nx, ny) = (spec.n, spec.n);
    if spec.m > nx * ny {
        return Err(Error::InvalidArg("m exceeds possible edges".into()));
    }
    let mut resamples = 0u64;
    loop {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(spec.m);
        match spec.profile {
            Profile::Uniform => {
                for idx in index_sample(rng, nx * ny, spec.m) {
                    pairs.push((idx / ny + 1, idx % ny + 1));
                }
            }
            Profile::StarMix => {
                let hub = rng.gen_range(1..=nx);
                let hub_deg = (spec.m / 2).min(ny);
                for yi in index_sample(rng, ny, hub_deg) {
                    pairs.push((hub, yi + 1));
                }
                let mut seen: BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
                while pairs.len() < spec.m {
                    let x = rng.gen_range(1..=nx);
                    let y = rng.gen_range(1..=ny);
                    if x == hub || !seen.insert((x, y)) {
                        continue;
                    }
                    pairs.push((x, y));
                }
            }
        }
        if spec.profile == Profile::Uniform {
            let mut dx: BTreeMap<usize, usize> = BTreeMap::new();
            let mut dy: BTreeMap<usize, usize> = BTreeMap::new();
            for &(x, y) in &pairs {
                *dx.entry(x).or_insert(0) += 1;
                *dy.entry(y).or_insert(0) += 1;
            }
            let max_deg = dx.values().chain(dy.values()).copied().max().unwrap_or(0);
            if max_deg > UNIFORM_MAX_DEGREE {
                resamples += 1;
                continue;
            }
        }
        let edges: BTreeMap<(usize, usize), f64> = pairs
            .into_iter()
            .map(|p| (p, edge_weight(spec, rng)))
            .collect();
        return Ok((
            BipartiteInstance::new(nx, ny, edges, spec.alpha, spec.beta)?,
            resamples,
        ));
    }
}

pub fn gen_general(spec: &ExperimentSpec, rng: &mut impl Rng) -> Result<(GeneralInstance, u64)> {
    spec.validate()?;
    let n = spec.n;
    if spec.m > n * (n - 1) / 2 {
        return Err(Error::InvalidArg("m exceeds possible edges".into()));
    }
    let mut resamples = 0u64;
    loop {
        let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
        match spec.profile {
            Profile::Uniform => {
                while seen.len() < spec.m {
                    let u = rng.gen_range(1..=n);
                    let v = rng.gen_range(1..=n);
                    if u != v {
                        seen.insert((u.min(v), u.max(v)));
                    }
                }
            }
            Profile::StarMix => {
                let hub = rng.gen_range(1..=n);
                let hub_deg = (spec.m / 2).min(n - 1);
                let mut others: Vec<usize> = (1..=n).filter(|&v| v != hub).collect();
                for k in index_sample(rng, others.len(), hub_deg) {
                    let v = others[k];
                    seen.insert((hub.min(v), hub.max(v)));
                }
                others.retain(|&v| v != hub);
                while seen.len() < spec.m {
                    let u = rng.gen_range(1..=n);
                    let v = rng.gen_range(1..=n);
                    if u == v || u == hub || v == hub {
                        continue;
                    }
                    seen.insert((u.min(v), u.max(v)));
                }
            }
        }
        if spec.profile == Profile::Uniform {
            let mut deg: BTreeMap<usize, usize> = BTreeMap::new();
            for &(u, v) in &seen {
                *deg.entry(u).or_insert(0) += 1;
                *deg.entry(v).or_insert(0) += 1;
            }
            if deg.values().copied().max().unwrap_or(0) > UNIFORM_MAX_DEGREE {
                resamples += 1;
                continue;
            }
        }
        let edges: BTreeMap<(usize, usize), f64> = seen
            .into_iter()
            .map(|p| (p, edge_weight(spec, rng)))
            .collect();
        return Ok((GeneralInstance::new(n, edges, spec.alpha, spec.beta)?, resamples));
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub declared: usize,
    pub true_count: usize,
    pub false_positives: usize,
    pub queries_total: u64,
    /// "phase=count" pairs joined with ';' in phase-name order.
    pub phases: String,
    pub capped: bool,
    /// Not part of the CSV surface (not deterministic).
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub spec: ExperimentSpec,
    pub success_rate: f64,
    pub false_positive_total: u64,
    pub capped_runs: u64,
    pub queries_mean: f64,
    pub queries_min: u64,
    pub queries_p50: u64,
    pub queries_p90: u64,
    pub queries_max: u64,
    pub phase_means: BTreeMap<String, f64>,
    /// mean queries / (m log2(beta/alpha) log2 n)
    pub ratio_base: f64,
    /// mean queries / (m log2(beta/alpha) log2 n / log2 m)
    pub ratio_over_logm: f64,
    pub resamples: u64,
    pub wall_ms_mean: f64,
}

pub struct SuiteOutput {
    pub rows: Vec<TrialRow>,
    pub summary: Summary,
    pub traces: Vec<TraceRow>,
}

fn phases_string(led: &QueryLedger) -> String {
    led.counts()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn weights_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn run_trial(spec: &ExperimentSpec, trial: usize, want_trace: bool) -> Result<(TrialRow, Vec<TraceRow>)> {
    let gen_seed = mix_seed(spec.seed, trial as u64, "gen");
    let run_seed = mix_seed(spec.seed, trial as u64, "run");
    let mut gen_rng = ChaCha8Rng::seed_from_u64(gen_seed);
    let mut run_rng = ChaCha8Rng::seed_from_u64(run_seed);
    let started = Instant::now();

    let (row, traces) = match spec.kind {
        Kind::Coins => {
            let inst = gen_coins(spec, &mut gen_rng)?;
            let mut led = QueryLedger::new();
            let mut cfg = CoinConfig::new(spec.n, spec.m, spec.alpha, spec.beta, spec.eps);
            if let Some(eta) = spec.eta {
                cfg.eta = eta;
            }
            cfg.use_compressed_plan = spec.plan == PlanKind::Compressed;
            cfg.record_trace = want_trace;
            let truth_w = inst.weights().clone();
            let rep = {
                let inst_ref = &inst;
                let led_ref = &mut led;
                let mut p = CoinProblem {
                    cfg,
                    weigh: Box::new(move |set| coin_query(inst_ref, set, led_ref, "oracle")),
                    truth: Some(Box::new(move |c| {
                        truth_w.get(&c).copied().unwrap_or(0.0)
                    })),
                };
                let ground: Vec<usize> = (1..=spec.n).collect();
                find_with_verification(&mut p, &ground, spec.mu, &mut run_rng)
            };
            let truth: BTreeSet<usize> = inst.counterfeit_ids().collect();
            let fp = rep.declared.difference(&truth).count();
            let row = TrialRow {
                trial,
                seed: run_seed,
                success: rep.declared == truth,
                declared: rep.declared.len(),
                true_count: truth.len(),
                false_positives: fp,
                queries_total: rep.queries.total(),
                phases: phases_string(&rep.queries),
                capped: rep.capped,
                wall_ms: 0.0,
            };
            (row, rep.trace)
        }
        Kind::Bipartite => {
            let (inst, _resamples) = gen_bipartite(spec, &mut gen_rng)?;
            let mut led = QueryLedger::new();
            let mut cfg =
                GraphConfig::bipartite(inst.nx(), inst.ny(), spec.m, spec.alpha, spec.beta);
            if let Some(eta) = spec.eta {
                cfg.eta = eta;
            }
            let rep = {
                let inst_ref = &inst;
                let led_ref = &mut led;
                reconstruct_bipartite(
                    Box::new(move |a: &[usize], b: &[usize]| {
                        graph_query(inst_ref, a, b, led_ref, "oracle")
                    }),
                    cfg,
                    &mut run_rng,
                )
            };
            let truth = inst.edges();
            let fp = rep.edges.keys().filter(|k| !truth.contains_key(k)).count();
            let success = rep.edges.len() == truth.len()
                && rep
                    .edges
                    .iter()
                    .all(|(k, &w)| truth.get(k).map_or(false, |&t| weights_close(w, t)));
            let row = TrialRow {
                trial,
                seed: run_seed,
                success,
                declared: rep.edges.len(),
                true_count: truth.len(),
                false_positives: fp,
                queries_total: rep.queries.total(),
                phases: phases_string(&rep.queries),
                capped: rep.capped,
                wall_ms: 0.0,
            };
            (row, Vec::new())
        }
        Kind::General => {
            let (inst, _resamples) = gen_general(spec, &mut gen_rng)?;
            let mut led = QueryLedger::new();
            let rep = {
                let inst_ref = &inst;
                let led_ref = &mut led;
                reconstruct_general(
                    Box::new(move |a: &[usize], b: &[usize]| {
                        lift_query(inst_ref, a, b, led_ref, "oracle")
                    }),
                    spec.n,
                    spec.m,
                    spec.alpha,
                    spec.beta,
                    &mut run_rng,
                )
            };
            let truth = inst.edges();
            let fp = rep.edges.keys().filter(|k| !truth.contains_key(k)).count();
            let success = rep.edges.len() == truth.len()
                && rep
                    .edges
                    .iter()
                    .all(|(k, &w)| truth.get(k).map_or(false, |&t| weights_close(w, t)));
            let row = TrialRow {
                trial,
                seed: run_seed,
                success,
                declared: rep.edges.len(),
                true_count: truth.len(),
                // cross-query count; underlying additive charge is 4x
                queries_total: rep.queries.total(),
                false_positives: fp,
                phases: phases_string(&rep.queries),
                capped: rep.capped,
                wall_ms: 0.0,
            };
            (row, Vec::new())
        }
    };
    let mut row = row;
    row.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((row, traces))
}

pub fn run_suite(spec: &ExperimentSpec) -> Result<SuiteOutput> {
    run_suite_with(spec, false)
}

pub fn run_suite_with(spec: &ExperimentSpec, want_trace: bool) -> Result<SuiteOutput> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.trials);
    let mut traces = Vec::new();
    let mut resamples = 0u64;
    for t in 0..spec.trials {
        // count generator resamples without burning the run rng
        let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
        match spec.kind {
            Kind::Coins => {}
            Kind::Bipartite => resamples += gen_bipartite(spec, &mut gen_rng)?.1,
            Kind::General => resamples += gen_general(spec, &mut gen_rng)?.1,
        }
        let (row, tr) = run_trial(spec, t, want_trace)?;
        rows.push(row);
        traces.extend(tr);
    }

    let nt = rows.len() as f64;
    let mut totals: Vec<u64> = rows.iter().map(|r| r.queries_total).collect();
    totals.sort_unstable();
    let pct = |p: f64| totals[(((totals.len() - 1) as f64) * p).round() as usize];
    let mut phase_sums: BTreeMap<String, u64> = BTreeMap::new();
    for r in &rows {
        for part in r.phases.split(';').filter(|s| !s.is_empty()) {
            let (k, v) = part.split_once('=').unwrap();
            *phase_sums.entry(k.to_owned()).or_insert(0) += v.parse::<u64>().unwrap();
        }
    }
    let queries_mean = totals.iter().sum::<u64>() as f64 / nt;
    let denom_base = spec.m as f64 * (spec.beta / spec.alpha).log2() * (spec.n as f64).log2();
    let denom_logm = denom_base / (spec.m.max(2) as f64).log2();
    let summary = Summary {
        spec: spec.clone(),
        success_rate: rows.iter().filter(|r| r.success).count() as f64 / nt,
        false_positive_total: rows.iter().map(|r| r.false_positives as u64).sum(),
        capped_runs: rows.iter().filter(|r| r.capped).count() as u64,
        queries_mean,
        queries_min: totals[0],
        queries_p50: pct(0.5),
        queries_p90: pct(0.9),
        queries_max: *totals.last().unwrap(),
        phase_means: phase_sums
            .into_iter()
            .map(|(k, v)| (k, v as f64 / nt))
            .collect(),
        ratio_base: queries_mean / denom_base,
        ratio_over_logm: queries_mean / denom_logm,
        resamples,
        wall_ms_mean: rows.iter().map(|r| r.wall_ms).sum::<f64>() / nt,
    };
    Ok(SuiteOutput { rows, summary, traces })
}

/// Writes the trial rows as CSV with a fixed column set; byte-identical for
/// identical specs.
pub fn rows_to_csv(rows: &[TrialRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "trial",
        "seed",
        "success",
        "declared",
        "true_count",
        "false_positives",
        "queries_total",
        "phases",
        "capped",
    ])
    .map_err(csv_err)?;
    for r in rows {
        wtr.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            r.declared.to_string(),
            r.true_count.to_string(),
            r.false_positives.to_string(),
            r.queries_total.to_string(),
            r.phases.clone(),
            r.capped.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn traces_to_csv(traces: &[TraceRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["q", "i", "step", "s", "action", "queries"]).map_err(csv_err)?;
    for t in traces {
        wtr.write_record([
            t.q.to_string(),
            t.i.to_string(),
            t.step.to_string(),
            t.s.to_string(),
            t.action.to_string(),
            t.queries.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArg(format!("csv write failed: {e}"))
}

pub fn write_outputs(out: &SuiteOutput, csv_path: Option<&Path>, json_path: Option<&Path>) -> Result<()> {
    if let Some(p) = csv_path {
        std::fs::write(p, rows_to_csv(&out.rows)?)?;
    }
    if let Some(p) = json_path {
        std::fs::write(p, serde_json::to_string_pretty(&out.summary)?)?;
    }
    Ok(())
}
