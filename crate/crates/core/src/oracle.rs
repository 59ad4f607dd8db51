//! Hidden-instance representations and additive-query answering with
//! per-phase query accounting.
//!
//! Instances are immutable after construction; each run owns its own
//! [`QueryLedger`].

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("query budget exhausted in phase `{phase}`")]
    BudgetExhausted { phase: String },
    #[error("id {0} out of range for this instance")]
    InvalidId(usize),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("no counterfeit coin in search set")]
    NotFound,
    #[error("not implemented")]
    NotImplemented,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Zero-test threshold: `alpha * 2^-20`. Accumulated rounding error across a
/// query of up to n^2 terms stays many orders of magnitude below this, while
/// any true nonzero answer in the relevant comparisons is at least alpha/2.
pub fn zero_tol(alpha: f64) -> f64 {
    alpha / (1u64 << 20) as f64
}

/// Per-phase query counters with optional caps, plus an optional cap on the
/// total across all phases.
#[derive(Debug, Clone, Default, Serialize)]
pub struct QueryLedger {
    counts: BTreeMap<String, u64>,
    caps: BTreeMap<String, u64>,
    total_cap: Option<u64>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_total_cap(cap: u64) -> Self {
        Self {
            total_cap: Some(cap),
            ..Self::default()
        }
    }

    pub fn set_cap(&mut self, phase: &str, cap: u64) {
        self.caps.insert(phase.to_owned(), cap);
    }

    pub fn set_total_cap(&mut self, cap: Option<u64>) {
        self.total_cap = cap;
    }

    /// Records `k` queries under `phase`, failing without recording anything
    /// if a phase cap or the total cap would be exceeded.
    pub fn charge(&mut self, phase: &str, k: u64) -> Result<()> {
        if let Some(tc) = self.total_cap {
            if self.total() + k > tc {
                return Err(Error::BudgetExhausted {
                    phase: "total".to_owned(),
                });
            }
        }
        let cur = self.counts.get(phase).copied().unwrap_or(0);
        if let Some(&cap) = self.caps.get(phase) {
            if cur + k > cap {
                return Err(Error::BudgetExhausted {
                    phase: phase.to_owned(),
                });
            }
        }
        self.counts.insert(phase.to_owned(), cur + k);
        Ok(())
    }

    pub fn count(&self, phase: &str) -> u64 {
        self.counts.get(phase).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn total_cap(&self) -> Option<u64> {
        self.total_cap
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }
}

fn check_weight_bounds(w: f64, beta: f64) -> Result<()> {
    if w == 0.0 || !w.is_finite() {
        return Err(Error::InvalidArg(format!("stored weight {w} must be finite and nonzero")));
    }
    if w.abs() > beta {
        return Err(Error::InvalidArg(format!("|{w}| exceeds beta = {beta}")));
    }
    Ok(())
}

fn check_bounds_params(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidArg("alpha and beta must be positive".into()));
    }
    if !(2.0 * alpha < beta) {
        return Err(Error::InvalidArg(format!("need 2*alpha < beta, got alpha={alpha}, beta={beta}")));
    }
    Ok(())
}

/// Hidden assignment of real weights to `n` coins; authentic coins weigh 0.
/// Ids are 1-based.
#[derive(Debug, Clone)]
pub struct CoinInstance {
    n: usize,
    weights: BTreeMap<usize, f64>,
    alpha: f64,
    beta: f64,
    eps: f64,
}

impl CoinInstance {
    pub fn new(
        n: usize,
        weights: BTreeMap<usize, f64>,
        alpha: f64,
        beta: f64,
        eps: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArg("n must be positive".into()));
        }
        check_bounds_params(alpha, beta)?;
        if !(0.0..0.5).contains(&eps) {
            return Err(Error::InvalidArg(format!("eps must lie in [0, 1/2), got {eps}")));
        }
        let mut sub_alpha = 0usize;
        for (&id, &w) in &weights {
            if id == 0 || id > n {
                return Err(Error::InvalidId(id));
            }
            check_weight_bounds(w, beta)?;
            if w.abs() < alpha {
                sub_alpha += 1;
            }
        }
        let allowed = (eps * weights.len() as f64).floor() as usize;
        if sub_alpha > allowed {
            return Err(Error::InvalidArg(format!(
                "{sub_alpha} weights below alpha, only {allowed} allowed by eps"
            )));
        }
        Ok(Self { n, weights, alpha, beta, eps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of counterfeit coins.
    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn tau(&self) -> f64 {
        zero_tol(self.alpha)
    }

    pub fn weight(&self, id: usize) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    pub fn counterfeit_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.keys().copied()
    }

    pub fn weights(&self) -> &BTreeMap<usize, f64> {
        &self.weights
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CoinFile {
            n: self.n,
            alpha: self.alpha,
            beta: self.beta,
            eps: self.eps,
            counterfeit: self
                .weights
                .iter()
                .map(|(&id, &w)| CoinEntry { id, w })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CoinFile = serde_json::from_str(s)?;
        let weights = file.counterfeit.iter().map(|e| (e.id, e.w)).collect();
        Self::new(file.n, weights, file.alpha, file.beta, file.eps)
    }
}

#[derive(Serialize, Deserialize)]
struct CoinEntry {
    id: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct CoinFile {
    n: usize,
    alpha: f64,
    beta: f64,
    eps: f64,
    counterfeit: Vec<CoinEntry>,
}

/// Hidden weighted bipartite graph on parts X (ids 1..=nx) and Y (ids 1..=ny).
#[derive(Debug, Clone)]
pub struct BipartiteInstance {
    nx: usize,
    ny: usize,
    edges: BTreeMap<(usize, usize), f64>,
    alpha: f64,
    beta: f64,
}

impl BipartiteInstance {
    pub fn new(
        nx: usize,
        ny: usize,
        edges: BTreeMap<(usize, usize), f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArg("part sizes must be positive".into()));
        }
        check_bounds_params(alpha, beta)?;
        for (&(x, y), &w) in &edges {
            if x == 0 || x > nx {
                return Err(Error::InvalidId(x));
            }
            if y == 0 || y > ny {
                return Err(Error::InvalidId(y));
            }
            check_weight_bounds(w, beta)?;
            if w.abs() < alpha {
                return Err(Error::InvalidArg(format!("|{w}| below alpha = {alpha}")));
            }
        }
        Ok(Self { nx, ny, edges, alpha, beta })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tau(&self) -> f64 {
        zero_tol(self.alpha)
    }

    pub fn weight(&self, x: usize, y: usize) -> f64 {
        self.edges.get(&(x, y)).copied().unwrap_or(0.0)
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.edges
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BipFile {
            nx: self.nx,
            ny: self.ny,
            alpha: self.alpha,
            beta: self.beta,
            edges: self
                .edges
                .iter()
                .map(|(&(x, y), &w)| BipEdge { x, y, w })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: BipFile = serde_json::from_str(s)?;
        let edges = file.edges.iter().map(|e| ((e.x, e.y), e.w)).collect();
        Self::new(file.nx, file.ny, edges, file.alpha, file.beta)
    }
}

#[derive(Serialize, Deserialize)]
struct BipEdge {
    x: usize,
    y: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct BipFile {
    nx: usize,
    ny: usize,
    alpha: f64,
    beta: f64,
    edges: Vec<BipEdge>,
}

/// Hidden weighted graph on vertices 1..=n, no self-loops. Edge keys are
/// stored with the smaller endpoint first.
#[derive(Debug, Clone)]
pub struct GeneralInstance {
    n: usize,
    edges: BTreeMap<(usize, usize), f64>,
    alpha: f64,
    beta: f64,
}

impl GeneralInstance {
    pub fn new(
        n: usize,
        edges: BTreeMap<(usize, usize), f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArg("n must be positive".into()));
        }
        check_bounds_params(alpha, beta)?;
        let mut canon = BTreeMap::new();
        for (&(u, v), &w) in &edges {
            if u == 0 || u > n {
                return Err(Error::InvalidId(u));
            }
            if v == 0 || v > n {
                return Err(Error::InvalidId(v));
            }
            if u == v {
                return Err(Error::InvalidArg(format!("self-loop at vertex {u}")));
            }
            check_weight_bounds(w, beta)?;
            if w.abs() < alpha {
                return Err(Error::InvalidArg(format!("|{w}| below alpha = {alpha}")));
            }
            let key = (u.min(v), u.max(v));
            if canon.insert(key, w).is_some() {
                return Err(Error::InvalidArg(format!("duplicate edge {key:?}")));
            }
        }
        Ok(Self { n, edges: canon, alpha, beta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tau(&self) -> f64 {
        zero_tol(self.alpha)
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        let key = (u.min(v), u.max(v));
        self.edges.get(&key).copied().unwrap_or(0.0)
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.edges
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GenFile {
            n: self.n,
            alpha: self.alpha,
            beta: self.beta,
            edges: self
                .edges
                .iter()
                .map(|(&(u, v), &w)| GenEdge { u, v, w })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: GenFile = serde_json::from_str(s)?;
        let edges = file.edges.iter().map(|e| ((e.u, e.v), e.w)).collect();
        Self::new(file.n, edges, file.alpha, file.beta)
    }
}

#[derive(Serialize, Deserialize)]
struct GenEdge {
    u: usize,
    v: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct GenFile {
    n: usize,
    alpha: f64,
    beta: f64,
    edges: Vec<GenEdge>,
}

/// Weighs a set of coins on the spring scale: returns the sum of weights over
/// `set` and charges one query under `phase`.
pub fn coin_query(
    inst: &CoinInstance,
    set: &[usize],
    ledger: &mut QueryLedger,
    phase: &str,
) -> Result<f64> {
    for &c in set {
        if c == 0 || c > inst.n {
            return Err(Error::InvalidId(c));
        }
    }
    ledger.charge(phase, 1)?;
    Ok(set.iter().map(|&c| inst.weight(c)).sum())
}

/// Cross-query on a bipartite instance: sum of w(x, y) over x in `a`, y in `b`.
/// Charges one query.
pub fn graph_query(
    inst: &BipartiteInstance,
    a: &[usize],
    b: &[usize],
    ledger: &mut QueryLedger,
    phase: &str,
) -> Result<f64> {
    for &x in a {
        if x == 0 || x > inst.nx {
            return Err(Error::InvalidId(x));
        }
    }
    for &y in b {
        if y == 0 || y > inst.ny {
            return Err(Error::InvalidId(y));
        }
    }
    ledger.charge(phase, 1)?;
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    Ok(inst
        .edges
        .iter()
        .filter(|((x, y), _)| sa.contains(x) && sb.contains(y))
        .map(|(_, &w)| w)
        .sum())
}

/// Additive query on a general instance: sum of weights of edges with both
/// ends in `set`. Charges one query.
pub fn general_query(
    inst: &GeneralInstance,
    set: &[usize],
    ledger: &mut QueryLedger,
    phase: &str,
) -> Result<f64> {
    for &v in set {
        if v == 0 || v > inst.n {
            return Err(Error::InvalidId(v));
        }
    }
    ledger.charge(phase, 1)?;
    let s: HashSet<usize> = set.iter().copied().collect();
    Ok(inst
        .edges
        .iter()
        .filter(|((u, v), _)| s.contains(u) && s.contains(v))
        .map(|(_, &w)| w)
        .sum())
}

/// Cross-query on the bipartite double cover of a general instance, expressed
/// as a linear combination of four additive queries:
/// `w(A,B) = w(A∪B) - w(A\B) - w(B\A) + w(A∩B)`. Charges exactly 4 queries.
pub fn lift_query(
    inst: &GeneralInstance,
    a: &[usize],
    b: &[usize],
    ledger: &mut QueryLedger,
    phase: &str,
) -> Result<f64> {
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    let mut union: Vec<usize> = sa.union(&sb).copied().collect();
    let mut a_only: Vec<usize> = sa.difference(&sb).copied().collect();
    let mut b_only: Vec<usize> = sb.difference(&sa).copied().collect();
    let mut both: Vec<usize> = sa.intersection(&sb).copied().collect();
    union.sort_unstable();
    a_only.sort_unstable();
    b_only.sort_unstable();
    both.sort_unstable();
    let w_union = general_query(inst, &union, ledger, phase)?;
    let w_a = general_query(inst, &a_only, ledger, phase)?;
    let w_b = general_query(inst, &b_only, ledger, phase)?;
    let w_both = general_query(inst, &both, ledger, phase)?;
    Ok(w_union - w_a - w_b + w_both)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin_inst() -> CoinInstance {
        let mut w = BTreeMap::new();
        w.insert(2, 1.5);
        CoinInstance::new(4, w, 1.0, 4.0, 0.0).unwrap()
    }

    #[test]
    fn coin_query_sums_counterfeits() {
        let inst = coin_inst();
        let mut ledger = QueryLedger::new();
        let w = coin_query(&inst, &[1, 2], &mut ledger, "t").unwrap();
        assert_eq!(w, 1.5);
        assert_eq!(ledger.count("t"), 1);
    }

    #[test]
    fn coin_query_empty_set_is_zero() {
        let inst = coin_inst();
        let mut ledger = QueryLedger::new();
        assert_eq!(coin_query(&inst, &[], &mut ledger, "t").unwrap(), 0.0);
    }

    #[test]
    fn coin_query_cancellation() {
        let mut w = BTreeMap::new();
        w.insert(1, 1.0);
        w.insert(3, -1.0);
        let inst = CoinInstance::new(4, w, 1.0, 4.0, 0.0).unwrap();
        let mut ledger = QueryLedger::new();
        assert_eq!(coin_query(&inst, &[1, 3], &mut ledger, "t").unwrap(), 0.0);
    }

    #[test]
    fn coin_query_rejects_bad_id() {
        let inst = coin_inst();
        let mut ledger = QueryLedger::new();
        assert!(matches!(
            coin_query(&inst, &[5], &mut ledger, "t"),
            Err(Error::InvalidId(5))
        ));
        assert_eq!(ledger.total(), 0);
    }

    #[test]
    fn ledger_caps_enforced() {
        let mut ledger = QueryLedger::new();
        ledger.set_cap("p", 2);
        ledger.charge("p", 2).unwrap();
        assert!(matches!(
            ledger.charge("p", 1),
            Err(Error::BudgetExhausted { .. })
        ));
        assert_eq!(ledger.count("p"), 2);
        assert_eq!(ledger.total(), 2);
    }

    #[test]
    fn graph_query_basics() {
        let mut e = BTreeMap::new();
        e.insert((1, 1), 2.0);
        let inst = BipartiteInstance::new(2, 2, e, 1.0, 4.0).unwrap();
        let mut ledger = QueryLedger::new();
        assert_eq!(graph_query(&inst, &[1], &[1], &mut ledger, "t").unwrap(), 2.0);
        assert_eq!(graph_query(&inst, &[1], &[2], &mut ledger, "t").unwrap(), 0.0);
        assert_eq!(graph_query(&inst, &[], &[1, 2], &mut ledger, "t").unwrap(), 0.0);
        assert_eq!(ledger.total(), 3);
    }

    #[test]
    fn general_query_triangle() {
        let mut e = BTreeMap::new();
        e.insert((1, 2), 1.0);
        e.insert((2, 3), 1.0);
        e.insert((1, 3), 1.0);
        let inst = GeneralInstance::new(3, e, 0.4, 1.0).unwrap();
        let mut ledger = QueryLedger::new();
        assert_eq!(general_query(&inst, &[1, 2, 3], &mut ledger, "t").unwrap(), 3.0);
        assert_eq!(general_query(&inst, &[1], &mut ledger, "t").unwrap(), 0.0);
        assert_eq!(general_query(&inst, &[1, 2], &mut ledger, "t").unwrap(), 1.0);
    }

    #[test]
    fn lift_query_charges_four() {
        let mut e = BTreeMap::new();
        e.insert((1, 2), 3.0);
        let inst = GeneralInstance::new(4, e, 1.0, 4.0).unwrap();
        let mut ledger = QueryLedger::new();
        assert_eq!(lift_query(&inst, &[1], &[2], &mut ledger, "t").unwrap(), 3.0);
        assert_eq!(ledger.total(), 4);
        // doubled cover: A = B = {1, 2} sees the edge in both orientations
        assert_eq!(lift_query(&inst, &[1, 2], &[1, 2], &mut ledger, "t").unwrap(), 6.0);
        assert_eq!(lift_query(&inst, &[], &[], &mut ledger, "t").unwrap(), 0.0);
    }

    #[test]
    fn instance_invariants_rejected() {
        let mut w = BTreeMap::new();
        w.insert(1, 0.5); // below alpha with eps = 0
        assert!(CoinInstance::new(4, w, 1.0, 4.0, 0.0).is_err());
        assert!(CoinInstance::new(4, BTreeMap::new(), 1.0, 1.5, 0.0).is_err()); // 2a >= b
    }

    #[test]
    fn json_round_trip() {
        let inst = coin_inst();
        let j = inst.to_json().unwrap();
        let back = CoinInstance::from_json(&j).unwrap();
        assert_eq!(back.n(), 4);
        assert_eq!(back.weight(2), 1.5);
    }
}
