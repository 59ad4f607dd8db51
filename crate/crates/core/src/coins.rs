//! Counterfeit-coin search by additive weighings.
//!
//! The main routine alternates rounds of a layered random partition with a
//! guess-and-verify walk per level, shrinking the working parameter q by 5/6
//! each round, then finishes with a randomized binary search over the few
//! remaining coins. Query accounting is exact: every weighing charges one
//! query to a phase-labeled ledger, and the whole run is capped at
//! eta * m * log2(beta/alpha) * log2(n) / log2(m).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::family::{ceil_log2, SubsetFamily};
use crate::matrix::MatrixPlan;
use crate::oracle::{zero_tol, Error, QueryLedger, Result};

pub type WeighFn<'a> = Box<dyn FnMut(&[usize]) -> Result<f64> + 'a>;
pub type TruthFn<'a> = Box<dyn Fn(usize) -> f64 + 'a>;

#[derive(Debug, Clone)]
pub struct CoinConfig {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    /// Overall query-cap multiplier; the run is stopped once it has charged
    /// eta * m * log2(beta/alpha) * log2(n) / log2(m) queries (m >= 2).
    pub eta: f64,
    pub use_compressed_plan: bool,
    /// Record a step-by-step walk trace in the run report.
    pub record_trace: bool,
}

impl CoinConfig {
    pub fn new(n: usize, m: usize, alpha: f64, beta: f64, eps: f64) -> Self {
        Self { n, m, alpha, beta, eps, eta: 64.0, use_compressed_plan: false, record_trace: false }
    }

    pub fn total_cap(&self) -> Option<u64> {
        if self.m < 2 {
            return None;
        }
        let cap = self.eta * self.m as f64 * (self.beta / self.alpha).log2()
            * (self.n as f64).log2()
            / (self.m as f64).log2();
        Some(cap.floor() as u64)
    }

    pub fn plan_for(&self, gamma: u32, slots: usize) -> MatrixPlan {
        if self.use_compressed_plan {
            if let Ok(p) = MatrixPlan::compressed(gamma, slots) {
                return p;
            }
        }
        MatrixPlan::identity(gamma, slots)
    }
}

/// The oracle, configuration, and optional ground truth for one search.
/// `weigh` answers the sum of hidden weights over a set of coin ids; `truth`
/// (when present) enables white-box diagnostics and charges nothing.
pub struct CoinProblem<'a> {
    pub cfg: CoinConfig,
    pub weigh: WeighFn<'a>,
    pub truth: Option<TruthFn<'a>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RoundDiag {
    pub q: usize,
    /// Family audit passed parts (b) and (d); None when no ground truth.
    pub audit_bd: Option<bool>,
    pub walk_tests: u64,
    pub corrections: u64,
    /// Correction episodes at s <= 2|J| (the ones that rewrite a guess).
    pub episodes: u64,
    /// Episodes whose least wrong index was s-1, s, or absent.
    pub good_episodes: u64,
    pub tail_checked: u64,
    pub tail_violations: u64,
    pub declared: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub q: usize,
    pub i: u32,
    pub step: u64,
    pub s: i64,
    pub action: &'static str,
    pub queries: u64,
}

#[derive(Debug, Serialize)]
pub struct CoinRunReport {
    pub declared: BTreeSet<usize>,
    pub queries: QueryLedger,
    pub rounds: Vec<RoundDiag>,
    pub trace: Vec<TraceRow>,
    pub verified: bool,
    pub capped: bool,
    pub rbs_exhausted: bool,
    /// Per-phase query counts of each underlying search run (one entry per
    /// verification repeat), before merging into `queries`.
    pub repeat_phase_counts: Vec<BTreeMap<String, u64>>,
}

/// gamma_i = max(ceil(log2(6 beta/alpha)), ceil(log2(3 beta (i + 2 log2 q) / (i alpha)))).
pub fn gamma_i(i: u32, q: usize, alpha: f64, beta: f64) -> u32 {
    let a = (6.0 * beta / alpha).log2().ceil();
    let b = (3.0 * beta * (i as f64 + 2.0 * (q as f64).log2()) / (i as f64 * alpha))
        .log2()
        .ceil();
    a.max(b).max(1.0) as u32
}

/// Deterministic binary search for one nonzero-weight coin in `set`.
/// `total`, when known, is the weight of `set` and saves the final singleton
/// query; at most ceil(log2 |set|) queries are charged.
pub fn det_binary_search(
    weigh: &mut impl FnMut(&[usize]) -> Result<f64>,
    set: &[usize],
    total: Option<f64>,
    tau: f64,
) -> Result<(usize, f64)> {
    let mut cur: Vec<usize> = set.to_vec();
    let mut total = total;
    loop {
        match cur.len() {
            0 => return Err(Error::NotFound),
            1 => {
                let w = match total {
                    Some(w) => w,
                    None => weigh(&cur)?,
                };
                return if w.abs() > tau {
                    Ok((cur[0], w))
                } else {
                    Err(Error::NotFound)
                };
            }
            _ => {
                let half = (cur.len() + 1) / 2;
                let first = &cur[..half];
                let w1 = weigh(first)?;
                if w1.abs() > tau {
                    cur = first.to_vec();
                    total = Some(w1);
                } else {
                    if let Some(t) = total {
                        if (t - w1).abs() <= tau {
                            return Err(Error::NotFound);
                        }
                    }
                    total = total.map(|t| t - w1);
                    cur = cur[half..].to_vec();
                }
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct RbsOutcome {
    pub found: Vec<(usize, f64)>,
    pub queries: u64,
    pub exhausted: bool,
}

/// Randomized binary search: repeatedly weighs a uniform half-sample of the
/// pool and extracts one nonzero coin per hit. Stops on the query budget, on
/// finding `m_bound` coins, or after ceil(log2 m_bound)+3 consecutive
/// zero-weight samples.
pub fn rbs_coins(
    mut weigh: impl FnMut(&[usize]) -> Result<f64>,
    pool: &[usize],
    m_bound: usize,
    budget: u64,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<RbsOutcome> {
    let mut out = RbsOutcome::default();
    let mut pool: Vec<usize> = pool.to_vec();
    let sweep = ceil_log2(m_bound.max(2)) + 3;
    let mut zero_streak = 0u32;
    // one budget-checked oracle call; Ok(None) means the budget ran out
    // (local or upstream) and the search must stop with partial results
    let mut charged =
        |set: &[usize], used: &mut u64| -> Result<Option<f64>> {
            if *used >= budget {
                return Ok(None);
            }
            match weigh(set) {
                Ok(w) => {
                    *used += 1;
                    Ok(Some(w))
                }
                Err(Error::BudgetExhausted { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
    while out.found.len() < m_bound && !pool.is_empty() {
        let sample: Vec<usize> = pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let w = match charged(&sample, &mut out.queries)? {
            Some(w) => w,
            None => {
                out.exhausted = true;
                break;
            }
        };
        if w.abs() <= tau {
            zero_streak += 1;
            if zero_streak >= sweep {
                break;
            }
            continue;
        }
        zero_streak = 0;
        // deterministic halving over the hit sample, reusing the known total
        let mut cur = sample;
        let mut total = w;
        let hit = loop {
            if cur.len() == 1 {
                break Some((cur[0], total));
            }
            let half = (cur.len() + 1) / 2;
            let w1 = match charged(&cur[..half], &mut out.queries)? {
                Some(w1) => w1,
                None => {
                    out.exhausted = true;
                    break None;
                }
            };
            if w1.abs() > tau {
                cur.truncate(half);
                total = w1;
            } else {
                if (total - w1).abs() <= tau {
                    break None; // cancellation: both halves read as zero
                }
                total -= w1;
                cur.drain(..half);
            }
        };
        if let Some((c, wc)) = hit {
            pool.retain(|&p| p != c);
            out.found.push((c, wc));
        }
        if out.exhausted {
            break;
        }
    }
    Ok(out)
}

/// Per-level guessing and random-walk state. Working labels 1..2|J| address
/// the children of the surviving parent cells: label 2r-1 / 2r maps to cell
/// 2p_r - 1 / 2p_r at the current level, where p_r is the r-th parent.
#[derive(Debug)]
pub struct WalkState {
    pub i: u32,
    pub q: usize,
    pub parents: Vec<u64>,
    pub w_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub s: i64,
    pub gamma: u32,
    pub alpha: f64,
    pub tau: f64,
}

impl WalkState {
    pub fn child_cell(&self, j: usize) -> u64 {
        let r = (j + 1) / 2;
        let p = self.parents[r - 1];
        if j % 2 == 0 {
            2 * p
        } else {
            2 * p - 1
        }
    }

    /// Inductive guessing from slot `from_r`: u_{2r} = w_prev[r] when
    /// |x_r - sum_{k<r} a_{rk} u_{2k}| >= alpha/2, else 0, and
    /// u_{2r-1} = w_prev[r] - u_{2r}.
    pub fn guess(&mut self, plan: &MatrixPlan, from_r: usize) {
        for r in from_r..=self.parents.len() {
            let mut acc = 0.0;
            for k in 1..r {
                let a = plan.coeff(r, k);
                if a != 0.0 {
                    acc += a * self.u[2 * k - 1];
                }
            }
            let u2r = if (self.x[r - 1] - acc).abs() >= self.alpha / 2.0 {
                self.w_prev[r - 1]
            } else {
                0.0
            };
            self.u[2 * r - 1] = u2r;
            self.u[2 * r - 2] = self.w_prev[r - 1] - u2r;
        }
    }

    pub fn test_weighings(&self) -> u32 {
        ceil_log2(self.i as usize * self.i as usize + 1) + 3
    }

    /// One random test at the current s: a burst of weighings over random
    /// unions of cells currently guessed zero with label <= min(s, 2|J|).
    /// Every weighing is charged, including empty selections.
    pub fn random_test(
        &self,
        fam: &SubsetFamily,
        weigh: &mut impl FnMut(&[usize]) -> Result<f64>,
        rng: &mut impl Rng,
    ) -> Result<bool> {
        let lim = self.s.min(self.u.len() as i64);
        let mut pass = true;
        for _ in 0..self.test_weighings() {
            let mut set = Vec::new();
            for j in 1..=self.u.len() {
                if (j as i64) <= lim && self.u[j - 1] == 0.0 && rng.gen_bool(0.5) {
                    set.extend_from_slice(fam.cell(self.i, self.child_cell(j)));
                }
            }
            if weigh(&set)?.abs() > self.tau {
                pass = false;
            }
        }
        Ok(pass)
    }

    /// After a failed test: when s <= 2|J|, re-weigh cell A_{i,s}, overwrite
    /// u_s and its sibling, and re-propagate the guesses above s without new
    /// queries; when s > 2|J|, change nothing. Either way s decreases by 2.
    pub fn correction_step(
        &mut self,
        fam: &SubsetFamily,
        plan: &MatrixPlan,
        weigh: &mut impl FnMut(&[usize]) -> Result<f64>,
    ) -> Result<bool> {
        let mut corrected = false;
        if self.s >= 2 && self.s <= self.u.len() as i64 {
            assert!(self.s % 2 == 0, "correction position must be even");
            let s = self.s as usize;
            let w = weigh(fam.cell(self.i, self.child_cell(s)))?;
            self.u[s - 1] = w;
            self.u[s - 2] = self.w_prev[s / 2 - 1] - w;
            self.guess(plan, s / 2 + 1);
            corrected = true;
        }
        self.s -= 2;
        Ok(corrected)
    }

    pub fn walk_bound(&self) -> f64 {
        self.u.len() as f64 + 8.0 * (self.i * self.i) as f64 * (self.q as f64).log2()
    }

    /// Least working label whose guess disagrees with the true cell weight.
    pub fn least_wrong(&self, fam: &SubsetFamily, truth: &TruthFn<'_>) -> Option<usize> {
        (1..=self.u.len()).find(|&j| {
            let true_w: f64 = fam
                .cell(self.i, self.child_cell(j))
                .iter()
                .map(|&c| truth(c))
                .sum();
            (self.u[j - 1] - true_w).abs() > self.tau
        })
    }
}

struct Runner<'p, 'a> {
    weigh: &'p mut WeighFn<'a>,
    led: QueryLedger,
}

impl Runner<'_, '_> {
    fn weigh(&mut self, set: &[usize], phase: &str) -> Result<f64> {
        self.led.charge(phase, 1)?;
        (self.weigh)(set)
    }
}

fn run_round(
    runner: &mut Runner,
    cfg: &CoinConfig,
    truth: &Option<TruthFn<'_>>,
    ground: &[usize],
    q: usize,
    trace: &mut Vec<TraceRow>,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, RoundDiag)> {
    let alpha = cfg.alpha;
    let tau = zero_tol(alpha);
    let fam = SubsetFamily::build(ground, q, cfg.n, rng)?;
    let mut diag = RoundDiag { q, ..RoundDiag::default() };
    let audit_bd = truth.as_ref().map(|t| {
        let rep = fam.audit_with(|c| t(c), alpha);
        rep.pass_b() && rep.pass_d
    });
    diag.audit_bd = audit_bd;

    // level 0: weigh every cell, keep those with |w| >= alpha
    let mut w_cur: Vec<(u64, f64)> = Vec::new();
    for j in 1..=(1u64 << fam.lq()) {
        let w = runner.weigh(fam.cell(0, j), "level0")?;
        if w.abs() >= alpha {
            w_cur.push((j, w));
        }
    }

    if fam.depth() == 0 {
        let declared: Vec<usize> = w_cur
            .iter()
            .flat_map(|&(j, _)| fam.cell(0, j).iter().copied())
            .collect();
        diag.declared = declared.len();
        return Ok((declared, diag));
    }

    for i in 1..=fam.depth() {
        if w_cur.is_empty() {
            break;
        }
        let parents: Vec<u64> = w_cur.iter().map(|&(j, _)| j).collect();
        let w_prev: Vec<f64> = w_cur.iter().map(|&(_, w)| w).collect();
        let nj = parents.len();
        let gamma = gamma_i(i, q, alpha, cfg.beta);
        let plan = cfg.plan_for(gamma, nj);

        let mut st = WalkState {
            i,
            q,
            parents,
            w_prev,
            x: Vec::new(),
            u: vec![0.0; 2 * nj],
            s: -2,
            gamma,
            alpha,
            tau,
        };
        // resolve x_r for the even children through the non-adaptive plan
        let x = {
            let st_ref = &st;
            let mut wg = |slots: &[usize]| {
                let set: Vec<usize> = slots
                    .iter()
                    .flat_map(|&r| fam.cell(i, 2 * st_ref.parents[r - 1]).iter().copied())
                    .collect();
                runner.weigh(&set, "matrix")
            };
            plan.execute_and_resolve(&mut wg)?
        };
        st.x = x;
        st.guess(&plan, 1);

        if i < fam.split_end() {
            let bound = st.walk_bound();
            let mut step = 0u64;
            while (st.s as f64) <= bound {
                let mut wg = |set: &[usize]| runner.weigh(set, "walk");
                diag.walk_tests += 1;
                step += 1;
                let s_before = st.s;
                if st.random_test(&fam, &mut wg, rng)? {
                    st.s += 2 * (st.i * st.i) as i64;
                    if cfg.record_trace {
                        trace.push(TraceRow {
                            q,
                            i,
                            step,
                            s: s_before,
                            action: "test-pass",
                            queries: runner.led.total(),
                        });
                    }
                } else {
                    if st.s >= 2 && st.s <= st.u.len() as i64 {
                        diag.episodes += 1;
                        if let Some(t) = truth.as_ref() {
                            match st.least_wrong(&fam, t) {
                                None => diag.good_episodes += 1,
                                Some(j) => {
                                    if j as i64 == st.s || j as i64 == st.s - 1 {
                                        diag.good_episodes += 1;
                                    }
                                }
                            }
                        } else {
                            diag.good_episodes += 1;
                        }
                    }
                    if st.correction_step(&fam, &plan, &mut wg)? {
                        diag.corrections += 1;
                    }
                    if cfg.record_trace {
                        trace.push(TraceRow {
                            q,
                            i,
                            step,
                            s: s_before,
                            action: "correct",
                            queries: runner.led.total(),
                        });
                    }
                }
            }
        }

        // white-box tail check for the resolution recurrence
        if let (Some(t), Some(true)) = (truth.as_ref(), audit_bd) {
            for r in 1..=nj {
                let mut tail = 0.0;
                for k in 1..=plan.tail_len(r) as usize {
                    if r + k <= nj {
                        let cell = fam.cell(i, 2 * st.parents[r + k - 1]);
                        let w: f64 = cell.iter().map(|&c| t(c)).sum();
                        tail += w / f64::powi(2.0, (k as u32 * st.gamma) as i32);
                    }
                }
                diag.tail_checked += 1;
                if tail.abs() >= alpha / 2.0 {
                    diag.tail_violations += 1;
                }
            }
        }

        // map working labels back to level-i cell indices and filter by alpha
        w_cur = (1..=st.u.len())
            .filter(|&jj| st.u[jj - 1].abs() >= alpha)
            .map(|jj| (st.child_cell(jj), st.u[jj - 1]))
            .collect();
    }

    let declared: Vec<usize> = w_cur
        .iter()
        .flat_map(|&(j, _)| fam.cell(fam.depth(), j).iter().copied())
        .collect();
    diag.declared = declared.len();
    Ok((declared, diag))
}

/// Full search: shrinking-q rounds followed by a randomized-binary-search
/// cleanup over the remaining coins. Budget exhaustion yields a partial
/// report with `capped` set instead of an error.
pub fn find_counterfeit(
    p: &mut CoinProblem,
    ground: &[usize],
    rng: &mut impl Rng,
) -> CoinRunReport {
    let cfg = p.cfg.clone();
    let tau = zero_tol(cfg.alpha);
    let mut runner = Runner {
        weigh: &mut p.weigh,
        led: {
            let mut l = QueryLedger::new();
            l.set_total_cap(cfg.total_cap());
            l
        },
    };
    let mut pool: Vec<usize> = ground.to_vec();
    pool.sort_unstable();
    let mut declared: BTreeSet<usize> = BTreeSet::new();
    let mut rounds = Vec::new();
    let mut trace = Vec::new();
    let mut capped = false;
    let threshold = (cfg.m as f64).powf(0.8) + 2.0 * cfg.eps * cfg.m as f64;

    let mut q = cfg.m;
    while q >= 2 && (q as f64) > threshold && !pool.is_empty() {
        match run_round(&mut runner, &cfg, &p.truth, &pool, q, &mut trace, rng) {
            Ok((dec, diag)) => {
                rounds.push(diag);
                for c in dec {
                    declared.insert(c);
                    pool.retain(|&p| p != c);
                }
            }
            Err(Error::BudgetExhausted { .. }) => {
                capped = true;
                break;
            }
            Err(e) => panic!("internal error during coin round: {e}"),
        }
        let next = (5 * q + 5) / 6; // ceil(5q/6)
        q = if next == q { q - 1 } else { next };
    }

    // cleanup: randomized binary search under the dedicated budget
    let mut rbs_exhausted = false;
    if !capped && !pool.is_empty() {
        let budget = ((ceil_log2(cfg.n) + 3) as f64 * threshold).floor() as u64;
        let wg = |set: &[usize]| -> Result<f64> {
            runner.led.charge("rbs", 1)?;
            (runner.weigh)(set)
        };
        match rbs_coins(wg, &pool, cfg.m, budget, tau, rng) {
            Ok(out) => {
                rbs_exhausted = out.exhausted;
                for (c, _) in out.found {
                    declared.insert(c);
                }
            }
            Err(e) => panic!("internal error during cleanup search: {e}"),
        }
    }
    capped = capped || runner.led.total_cap().map_or(false, |c| runner.led.total() >= c);

    let repeat_phase_counts = vec![runner.led.counts().clone()];
    CoinRunReport {
        declared,
        queries: runner.led,
        rounds,
        trace,
        verified: false,
        capped,
        rbs_exhausted,
        repeat_phase_counts,
    }
}

/// Repeats the search up to `mu` times, keeping only coins whose singleton
/// weighing is nonzero, and removing confirmed coins from later repeats.
/// Stops early once a repeat confirms nothing new.
pub fn find_with_verification(
    p: &mut CoinProblem,
    ground: &[usize],
    mu: usize,
    rng: &mut impl Rng,
) -> CoinRunReport {
    let tau = zero_tol(p.cfg.alpha);
    let mut confirmed: BTreeSet<usize> = BTreeSet::new();
    let mut master = QueryLedger::new();
    let mut rounds = Vec::new();
    let mut trace = Vec::new();
    let mut capped = false;
    let mut rbs_exhausted = false;
    let mut repeat_phase_counts = Vec::new();

    for _ in 0..mu.max(1) {
        let pool: Vec<usize> = ground
            .iter()
            .copied()
            .filter(|c| !confirmed.contains(c))
            .collect();
        if pool.is_empty() {
            break;
        }
        let rep = find_counterfeit(p, &pool, rng);
        for (phase, &k) in rep.queries.counts() {
            master.charge(phase, k).expect("uncapped master ledger");
        }
        rounds.extend(rep.rounds);
        trace.extend(rep.trace);
        capped |= rep.capped;
        rbs_exhausted |= rep.rbs_exhausted;
        repeat_phase_counts.extend(rep.repeat_phase_counts);
        let mut new_confirmed = 0;
        for &c in &rep.declared {
            master.charge("verify", 1).expect("uncapped master ledger");
            let w = (p.weigh)(&[c]).expect("verification weighing failed");
            if w.abs() > tau && confirmed.insert(c) {
                new_confirmed += 1;
            }
        }
        if new_confirmed == 0 {
            break;
        }
    }

    CoinRunReport {
        declared: confirmed,
        queries: master,
        rounds,
        trace,
        verified: true,
        capped,
        rbs_exhausted,
        repeat_phase_counts,
    }
}
