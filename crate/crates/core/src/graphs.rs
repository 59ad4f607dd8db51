//! Hidden weighted-graph reconstruction through cross-queries.
//!
//! The bipartite pipeline samples a subgraph and weighs out every vertex of
//! noticeable sampled degree (large-degree pass, run once per side), removes
//! those vertices, and covers the bounded-degree residual with a random
//! partition whose cells are treated as coin-weighing problems, finishing with
//! a randomized binary search sweep. General graphs go through the double
//! cover, every cross-query expanding to four additive queries.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coins::{find_with_verification, CoinConfig, CoinProblem};
use crate::family::ceil_log2;
use crate::oracle::{zero_tol, Error, QueryLedger, Result};

pub const DELTA: f64 = 0.05;

pub type CrossFn<'a> = Box<dyn FnMut(&[usize], &[usize]) -> Result<f64> + 'a>;

#[derive(Debug, Clone)]
pub struct GraphConfig {
    pub nx: usize,
    pub ny: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Overall cap multiplier; the run stops after
    /// eta * m * log2(beta/alpha) * log2(n) / log2(m) charged query units.
    pub eta: f64,
    /// Query units charged per cross-query: 1 natively, 4 through the
    /// double-cover expansion.
    pub unit: u64,
}

impl GraphConfig {
    pub fn bipartite(nx: usize, ny: usize, m: usize, alpha: f64, beta: f64) -> Self {
        Self { nx, ny, m, alpha, beta, eta: 512.0, unit: 1 }
    }

    pub fn n(&self) -> usize {
        self.nx.max(self.ny)
    }

    pub fn total_cap(&self) -> Option<u64> {
        if self.m < 2 {
            return None;
        }
        let cap = self.eta * self.m as f64 * (self.beta / self.alpha).log2()
            * (self.n() as f64).log2()
            / (self.m as f64).log2();
        Some(cap.floor() as u64)
    }
}

/// Shared run state: the oracle, per-phase accounting in cross-query counts,
/// found edges, and vertices withdrawn from further querying.
pub struct GraphCtx<'a> {
    pub cfg: GraphConfig,
    cross: CrossFn<'a>,
    pub led: QueryLedger,
    pub known: BTreeMap<(usize, usize), f64>,
    pub removed_x: BTreeSet<usize>,
    pub removed_y: BTreeSet<usize>,
    pub tau: f64,
    /// How many edges each phase discovered, for attribution reports.
    pub found_by_phase: BTreeMap<String, usize>,
}

impl<'a> GraphCtx<'a> {
    pub fn new(cfg: GraphConfig, cross: CrossFn<'a>) -> Self {
        let tau = zero_tol(cfg.alpha);
        Self {
            cfg,
            cross,
            led: QueryLedger::new(),
            known: BTreeMap::new(),
            removed_x: BTreeSet::new(),
            removed_y: BTreeSet::new(),
            tau,
            found_by_phase: BTreeMap::new(),
        }
    }

    fn charge(&mut self, phase: &str) -> Result<()> {
        if let Some(cap) = self.cfg.total_cap() {
            if (self.led.total() + 1) * self.cfg.unit > cap {
                return Err(Error::BudgetExhausted { phase: "total".into() });
            }
        }
        self.led.charge(phase, 1)
    }

    /// Cross-query minus the contribution of already-known edges inside
    /// a x b. Exactly one charged cross-query; the subtraction is free.
    pub fn residual(&mut self, a: &[usize], b: &[usize], phase: &str) -> Result<f64> {
        self.charge(phase)?;
        let raw = (self.cross)(a, b)?;
        let sa: HashSet<usize> = a.iter().copied().collect();
        let sb: HashSet<usize> = b.iter().copied().collect();
        let known: f64 = self
            .known
            .iter()
            .filter(|(&(x, y), _)| sa.contains(&x) && sb.contains(&y))
            .map(|(_, &w)| w)
            .sum();
        Ok(raw - known)
    }

    fn residual_sw(&mut self, swap: bool, a: &[usize], b: &[usize], phase: &str) -> Result<f64> {
        if swap {
            self.residual(b, a, phase)
        } else {
            self.residual(a, b, phase)
        }
    }

    pub fn record(&mut self, x: usize, y: usize, w: f64, phase: &str) {
        if self.known.insert((x, y), w).is_none() {
            *self.found_by_phase.entry(phase.to_owned()).or_insert(0) += 1;
        }
    }

    pub fn active_x(&self) -> Vec<usize> {
        (1..=self.cfg.nx).filter(|v| !self.removed_x.contains(v)).collect()
    }

    pub fn active_y(&self) -> Vec<usize> {
        (1..=self.cfg.ny).filter(|v| !self.removed_y.contains(v)).collect()
    }
}

#[derive(Debug, Default)]
pub struct RbsGraphOutcome {
    /// Edges as stored: (x, y, weight) in unswapped orientation.
    pub edges: Vec<(usize, usize, f64)>,
    pub queries: u64,
    pub exhausted: bool,
}

/// Randomized binary search over the residual graph between `xs` and `ys`:
/// weigh a random half-sample of each side, and on a nonzero answer halve the
/// X side down to one vertex, then the Y side, recording the edge. Stops on
/// the budget, after finding `m_bound` edges, or after ceil(log2 m_bound)+3
/// consecutive zero samples. `swap` flips the roles (queries still run as
/// (x-set, y-set) underneath; recorded edges keep that orientation).
pub fn rbs_graph(
    ctx: &mut GraphCtx,
    xs: &[usize],
    ys: &[usize],
    m_bound: usize,
    budget: u64,
    swap: bool,
    phase: &str,
    rng: &mut impl Rng,
) -> Result<RbsGraphOutcome> {
    let mut out = RbsGraphOutcome::default();
    let sweep = ceil_log2(m_bound.max(2)) + 3;
    let mut zero_streak = 0u32;
    let tau = ctx.tau;

    // budget-checked residual; Ok(None) signals exhaustion
    fn charged(
        ctx: &mut GraphCtx,
        swap: bool,
        a: &[usize],
        b: &[usize],
        phase: &str,
        used: &mut u64,
        budget: u64,
    ) -> Result<Option<f64>> {
        if *used >= budget {
            return Ok(None);
        }
        match ctx.residual_sw(swap, a, b, phase) {
            Ok(w) => {
                *used += 1;
                Ok(Some(w))
            }
            Err(Error::BudgetExhausted { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    'outer: while out.edges.len() < m_bound && !xs.is_empty() && !ys.is_empty() {
        let sx: Vec<usize> = xs.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let sy: Vec<usize> = ys.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let w = match charged(ctx, swap, &sx, &sy, phase, &mut out.queries, budget)? {
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

        // halve the sampled X side to a single vertex with nonzero row weight
        let mut cur = sx;
        let mut total = w;
        while cur.len() > 1 {
            let half = (cur.len() + 1) / 2;
            let w1 = match charged(ctx, swap, &cur[..half], &sy, phase, &mut out.queries, budget)? {
                Some(w1) => w1,
                None => {
                    out.exhausted = true;
                    break 'outer;
                }
            };
            if w1.abs() > tau {
                cur.truncate(half);
                total = w1;
            } else {
                if (total - w1).abs() <= tau {
                    continue 'outer; // cancellation across the split
                }
                total -= w1;
                cur.drain(..half);
            }
        }
        let x = cur[0];
        // then the Y side against that vertex
        let mut cur = sy;
        let mut found = Some(total);
        while cur.len() > 1 {
            let half = (cur.len() + 1) / 2;
            let w1 = match charged(ctx, swap, &[x], &cur[..half], phase, &mut out.queries, budget)? {
                Some(w1) => w1,
                None => {
                    out.exhausted = true;
                    break 'outer;
                }
            };
            let t = found.unwrap();
            if w1.abs() > tau {
                cur.truncate(half);
                found = Some(w1);
            } else {
                if (t - w1).abs() <= tau {
                    found = None;
                    break;
                }
                found = Some(t - w1);
                cur.drain(..half);
            }
        }
        if let Some(wf) = found {
            let y = cur[0];
            let (ex, ey) = if swap { (y, x) } else { (x, y) };
            ctx.record(ex, ey, wf, phase);
            out.edges.push((ex, ey, wf));
        }
    }
    Ok(out)
}

/// Runs the coin search over `coins`, where a coin set's weight is the
/// residual cross-weight against `fixed` (a cell or single vertex on the
/// other side). Returns the confirmed coins with their weights.
#[allow(clippy::too_many_arguments)]
fn coin_subrun(
    ctx: &mut GraphCtx,
    swap: bool,
    fixed: &[usize],
    coins: &[usize],
    cfg: CoinConfig,
    mu: usize,
    phase: &'static str,
    rng: &mut impl Rng,
) -> BTreeMap<usize, f64> {
    let sub_seed: u64 = rng.gen();
    let mut sub_rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let mut p = CoinProblem {
        cfg,
        weigh: Box::new(|set: &[usize]| ctx.residual_sw(swap, fixed, set, phase)),
        truth: None,
    };
    let report = find_with_verification(&mut p, coins, mu, &mut sub_rng);
    drop(p);
    let mut out = BTreeMap::new();
    for &c in &report.declared {
        // one more residual query pins the confirmed weight
        if let Ok(w) = ctx.residual_sw(swap, fixed, &[c], phase) {
            if w.abs() > ctx.tau {
                out.insert(c, w);
            }
        }
    }
    out
}

#[derive(Debug, Default, Serialize)]
pub struct PhaseReport {
    pub queries: u64,
    pub edges_found: usize,
    pub exhausted: bool,
}

#[derive(Debug, Default, Serialize)]
pub struct GraphReport {
    pub edges: BTreeMap<(usize, usize), f64>,
    pub queries: QueryLedger,
    pub large_x: Vec<usize>,
    pub large_y: Vec<usize>,
    pub capped: bool,
    pub phases: BTreeMap<String, PhaseReport>,
}

/// Large-degree pass on one side. Samples the other side with per-vertex
/// probability m^-delta, finds the sampled subgraph by randomized binary
/// search, then weighs out the full neighborhood of every vertex whose
/// sampled degree reaches m^delta / 2. Returns the flagged vertices; all
/// edges found are recorded in the context.
pub fn algorithm_b(
    ctx: &mut GraphCtx,
    swap: bool,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let mf = m as f64;
    let n = ctx.cfg.n();
    let (side_x, side_y) = if swap {
        (ctx.active_y(), ctx.active_x())
    } else {
        (ctx.active_x(), ctx.active_y())
    };
    let p_sample = mf.powf(-DELTA).min(1.0);
    let y_sample: Vec<usize> = side_y.iter().copied().filter(|_| rng.gen_bool(p_sample)).collect();

    let budget = ((2 * ceil_log2(n) + 5) as f64 * mf.powf(1.0 - DELTA / 2.0)).floor() as u64;
    let g2 = rbs_graph(ctx, &side_x, &y_sample, m, budget, swap, "b1", rng)?;

    // sampled degree per x-side vertex (in swapped orientation the recorded
    // edge keys are (other, this))
    let mut deg: BTreeMap<usize, usize> = BTreeMap::new();
    for &(ex, ey, _) in &g2.edges {
        *deg.entry(if swap { ey } else { ex }).or_insert(0) += 1;
    }
    let threshold = mf.powf(DELTA) / 2.0;
    let mut large = Vec::new();
    let mu = (1.0 / DELTA).ceil() as usize;
    for (&x, &d) in &deg {
        if (d as f64) < threshold {
            continue;
        }
        large.push(x);
        let m_sub = (2.0 * mf.powf(DELTA) * d as f64).ceil() as usize;
        let cfg = CoinConfig::new(n, m_sub.max(1), ctx.cfg.alpha, ctx.cfg.beta, 0.0);
        let found = coin_subrun(ctx, swap, &[x], &side_y, cfg, mu, "b2", rng);
        for (y, w) in found {
            let (ex, ey) = if swap { (y, x) } else { (x, y) };
            ctx.record(ex, ey, w, "b2");
        }
    }
    Ok(large)
}

/// Bounded-degree pass: random partitions of both sides into
/// ceil(m^(1/2+2*delta)) cells, per-cell coin weighing to locate candidate
/// endpoints, direct queries on unique candidate pairs, and a randomized
/// binary search sweep for whatever remains.
pub fn algorithm_a(ctx: &mut GraphCtx, m: usize, rng: &mut impl Rng) -> Result<()> {
    let mf = m as f64;
    let n = ctx.cfg.n();
    let xs = ctx.active_x();
    let ys = ctx.active_y();
    let cells = (mf.powf(0.5 + 2.0 * DELTA)).ceil().max(1.0) as usize;

    let assign = |verts: &[usize], rng: &mut dyn rand::RngCore| -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); cells];
        for &v in verts {
            parts[rng.gen_range(0..cells)].push(v);
        }
        parts
    };
    let x_parts = assign(&xs, rng);
    let y_parts = assign(&ys, rng);

    let m_sub = (2.0 * mf.powf(0.5 - 2.0 * DELTA)).ceil() as usize;
    let eps = (mf.powf(-0.5 + 7.0 * DELTA)).min(0.499);
    let mu = (4.0 / (1.0 - 4.0 * DELTA)).ceil() as usize;

    // (i) per-cell neighborhood candidates on both sides
    let mut n0_x: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(cells);
    for part in &x_parts {
        let cfg = CoinConfig::new(n, m_sub.max(1), ctx.cfg.alpha, 3.0 * ctx.cfg.beta, eps);
        n0_x.push(if part.is_empty() {
            BTreeMap::new()
        } else {
            coin_subrun(ctx, false, part, &ys, cfg, mu, "a1", rng)
        });
    }
    let mut n0_y: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(cells);
    for part in &y_parts {
        let cfg = CoinConfig::new(n, m_sub.max(1), ctx.cfg.alpha, 3.0 * ctx.cfg.beta, eps);
        n0_y.push(if part.is_empty() {
            BTreeMap::new()
        } else {
            coin_subrun(ctx, true, part, &xs, cfg, mu, "a1", rng)
        });
    }

    // (ii) unique candidate pairs: cell pairs (i,j) where exactly one
    // candidate y of X_i lies in Y_j and exactly one candidate x of Y_j lies
    // in X_i
    let mut y_cell: BTreeMap<usize, usize> = BTreeMap::new();
    for (j, part) in y_parts.iter().enumerate() {
        for &y in part {
            y_cell.insert(y, j);
        }
    }
    let mut x_cell: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, part) in x_parts.iter().enumerate() {
        for &x in part {
            x_cell.insert(x, i);
        }
    }
    for i in 0..cells {
        // candidates of X_i grouped by the Y cell they fall in
        let mut by_cell: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &y in n0_x[i].keys() {
            by_cell.entry(y_cell[&y]).or_default().push(y);
        }
        for (&j, y_hits) in &by_cell {
            if y_hits.len() != 1 {
                continue;
            }
            let x_hits: Vec<usize> = n0_y[j].keys().copied().filter(|x| x_cell[x] == i).collect();
            if x_hits.len() != 1 {
                continue;
            }
            let (x, y) = (x_hits[0], y_hits[0]);
            let w = ctx.residual(&[x], &[y], "a2")?;
            if w.abs() > ctx.tau {
                ctx.record(x, y, w, "a2");
            }
        }
    }

    // (iii) sweep for the leftovers
    let budget = ((6 * ceil_log2(n) + 15) as f64 * mf.powf(1.0 - 3.0 * DELTA)).floor() as u64;
    rbs_graph(ctx, &xs, &ys, m, budget, false, "a3", rng)?;
    Ok(())
}

/// Full bipartite pipeline: large-degree pass on each side, removal of the
/// flagged vertices, bounded-degree pass on the rest. Budget exhaustion
/// yields the partial edge set with `capped` set.
pub fn reconstruct_bipartite<'a>(
    cross: CrossFn<'a>,
    cfg: GraphConfig,
    rng: &mut impl Rng,
) -> GraphReport {
    let mut ctx = GraphCtx::new(cfg, cross);
    let m = ctx.cfg.m;
    let mut report = GraphReport::default();

    let outcome: Result<()> = (|| {
        if m == 0 {
            return Ok(());
        }
        let large_x = algorithm_b(&mut ctx, false, m, rng)?;
        for &x in &large_x {
            ctx.removed_x.insert(x);
        }
        report.large_x = large_x;
        let large_y = algorithm_b(&mut ctx, true, m, rng)?;
        for &y in &large_y {
            ctx.removed_y.insert(y);
        }
        report.large_y = large_y;
        algorithm_a(&mut ctx, m, rng)
    })();
    match outcome {
        Ok(()) => {}
        Err(Error::BudgetExhausted { .. }) => report.capped = true,
        Err(e) => panic!("internal error during graph reconstruction: {e}"),
    }

    for (name, &count) in ctx.led.counts() {
        report.phases.insert(
            name.clone(),
            PhaseReport {
                queries: count,
                edges_found: ctx.found_by_phase.get(name).copied().unwrap_or(0),
                exhausted: report.capped,
            },
        );
    }
    for (name, &found) in &ctx.found_by_phase {
        report
            .phases
            .entry(name.clone())
            .or_insert_with(|| PhaseReport { queries: 0, edges_found: found, exhausted: false });
    }
    report.edges = ctx.known;
    report.queries = ctx.led;
    report
}

/// General-graph entry point: runs the bipartite pipeline over the double
/// cover (each cross-query charged as 4 additive queries) and folds the two
/// oriented copies of every edge into one undirected record.
pub fn reconstruct_general<'a>(
    cross: CrossFn<'a>,
    n: usize,
    m: usize,
    alpha: f64,
    beta: f64,
    rng: &mut impl Rng,
) -> GraphReport {
    let mut cfg = GraphConfig::bipartite(n, n, 2 * m, alpha, beta);
    cfg.unit = 4;
    let mut rep = reconstruct_bipartite(cross, cfg, rng);
    let mut folded: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(x, y), &w) in &rep.edges {
        folded.entry((x.min(y), x.max(y))).or_insert(w);
    }
    rep.edges = folded;
    rep
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionAudit {
    pub cells: usize,
    /// max over cells of |N(X_i)| (and the Y-side analogue).
    pub max_nbhd: usize,
    pub bound_a: f64,
    pub pass_a: bool,
    /// max over (y, X_i) of d(y; X_i), both orientations.
    pub max_cell_degree: usize,
    pub pass_b: bool,
    /// max over cells of #{y : d(y; X_i) >= 2}, both orientations.
    pub max_multi: usize,
    pub bound_c: f64,
    pub pass_c: bool,
    /// edges that are not the unique edge of their cell pair.
    pub nonunique_edges: usize,
    pub bound_e: f64,
    pub pass_e: bool,
}

impl PartitionAudit {
    pub fn all_pass(&self) -> bool {
        self.pass_a && self.pass_b && self.pass_c && self.pass_e
    }
}

/// White-box audit of one random cell partition of a bipartite instance:
/// builds the ceil(m^(1/2+2*delta))-cell partitions of both sides and checks
/// the neighborhood-size, per-cell-degree, multi-hit, and unique-pair counts
/// against their m-power bounds. Charges no queries.
pub fn audit_partition(
    inst: &crate::oracle::BipartiteInstance,
    rng: &mut impl Rng,
) -> PartitionAudit {
    let mf = inst.m().max(1) as f64;
    let cells = (mf.powf(0.5 + 2.0 * DELTA)).ceil().max(1.0) as usize;
    let x_cell: BTreeMap<usize, usize> =
        (1..=inst.nx()).map(|x| (x, rng.gen_range(0..cells))).collect();
    let y_cell: BTreeMap<usize, usize> =
        (1..=inst.ny()).map(|y| (y, rng.gen_range(0..cells))).collect();

    let mut max_nbhd = 0usize;
    let mut max_cell_degree = 0usize;
    let mut max_multi = 0usize;
    for (cell_of_this, cell_of_other, this_is_x) in
        [(&x_cell, &y_cell, true), (&y_cell, &x_cell, false)]
    {
        let _ = cell_of_other;
        // per cell of this side: neighborhood on the other side and per-vertex
        // hit counts
        let mut nbhd: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); cells];
        let mut hits: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); cells];
        for &(x, y) in inst.edges().keys() {
            let (this_v, other_v) = if this_is_x { (x, y) } else { (y, x) };
            let c = cell_of_this[&this_v];
            nbhd[c].insert(other_v);
            *hits[c].entry(other_v).or_insert(0) += 1;
        }
        for c in 0..cells {
            max_nbhd = max_nbhd.max(nbhd[c].len());
            let mut multi = 0;
            for &k in hits[c].values() {
                max_cell_degree = max_cell_degree.max(k);
                if k >= 2 {
                    multi += 1;
                }
            }
            max_multi = max_multi.max(multi);
        }
    }

    let mut pair_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(x, y) in inst.edges().keys() {
        *pair_count.entry((x_cell[&x], y_cell[&y])).or_insert(0) += 1;
    }
    let nonunique_edges: usize = pair_count.values().filter(|&&k| k >= 2).sum();

    let bound_a = 2.0 * mf.powf(0.5 - 2.0 * DELTA);
    let bound_c = mf.powf(5.0 * DELTA);
    let bound_e = 3.0 * mf.powf(1.0 - 3.0 * DELTA);
    PartitionAudit {
        cells,
        max_nbhd,
        bound_a,
        pass_a: (max_nbhd as f64) <= bound_a,
        max_cell_degree,
        pass_b: max_cell_degree <= 3,
        max_multi,
        bound_c,
        pass_c: (max_multi as f64) <= bound_c,
        nonunique_edges,
        bound_e,
        pass_e: (nonunique_edges as f64) <= bound_e,
    }
}
