//! Layered random partition of a coin set.
//!
//! Level 0 assigns each coin a uniform label in 1..2^lq (lq = ceil(log2 q)).
//! Levels 1..=L-1 (L = ceil(2 log2 q)) split every cell by independent fair
//! coin flips; levels L..=depth (depth = ceil(3 log2 n)) split
//! deterministically, the first child taking ceil(size/2) coins. Children of
//! cell j at level i-1 are cells 2j-1 and 2j at level i. Only nonempty cells
//! are stored; absent indices denote empty cells.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::oracle::{CoinInstance, Error, Result};

pub fn ceil_log2(x: usize) -> u32 {
    assert!(x >= 1);
    if x == 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// ceil(2 * log2(q)) without going through floating point:
/// 2*log2(q) <= k  iff  q^2 <= 2^k.
pub fn ceil_2log2(q: usize) -> u32 {
    let sq = (q as u128) * (q as u128);
    let mut k = 0u32;
    while (1u128 << k) < sq {
        k += 1;
    }
    k
}

/// ceil(3 * log2(n)): smallest k with n^3 <= 2^k.
pub fn ceil_3log2(n: usize) -> u32 {
    let cube = (n as u128) * (n as u128) * (n as u128);
    let mut k = 0u32;
    while (1u128 << k) < cube {
        k += 1;
    }
    k
}

#[derive(Debug, Clone)]
pub struct SubsetFamily {
    q: usize,
    lq: u32,
    /// First deterministic level, L = ceil(2 log2 q).
    split_end: u32,
    depth: u32,
    /// levels[i]: nonempty cells at level i, cell index (1-based) -> sorted coin ids.
    levels: Vec<BTreeMap<u64, Vec<usize>>>,
}

impl SubsetFamily {
    pub fn build(ground: &[usize], q: usize, n: usize, rng: &mut impl Rng) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidArg(format!("q must be >= 2, got {q}")));
        }
        if ground.len() > n {
            return Err(Error::InvalidArg(format!(
                "ground set of {} coins exceeds n = {n}",
                ground.len()
            )));
        }
        let lq = ceil_log2(q);
        let split_end = ceil_2log2(q);
        let depth = ceil_3log2(n.max(1));

        let cells0 = 1u64 << lq;
        let mut cur: Vec<u64> = ground
            .iter()
            .map(|_| rng.gen_range(1..=cells0))
            .collect();
        let mut levels = Vec::with_capacity(depth as usize + 1);
        levels.push(collect_cells(ground, &cur));

        for i in 1..=depth {
            if i < split_end {
                // random fair split of every parent cell
                for c in cur.iter_mut() {
                    let bit: u64 = rng.gen_range(0..2);
                    *c = 2 * *c - 1 + bit;
                }
                levels.push(collect_cells(ground, &cur));
            } else {
                // deterministic: first ceil(size/2) coins of each cell
                // (in sorted-id order) go to child 2j-1
                let mut next = BTreeMap::new();
                let mut assign: BTreeMap<usize, u64> = BTreeMap::new();
                for (&j, coins) in levels.last().unwrap() {
                    let half = (coins.len() + 1) / 2;
                    for (k, &c) in coins.iter().enumerate() {
                        let child = if k < half { 2 * j - 1 } else { 2 * j };
                        assign.insert(c, child);
                        next.entry(child).or_insert_with(Vec::new).push(c);
                    }
                }
                for (c, slot) in ground.iter().zip(cur.iter_mut()) {
                    *slot = assign[c];
                }
                levels.push(next);
            }
        }
        Ok(Self { q, lq, split_end, depth, levels })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn lq(&self) -> u32 {
        self.lq
    }

    /// First level that splits deterministically: ceil(2 log2 q).
    pub fn split_end(&self) -> u32 {
        self.split_end
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn cell(&self, level: u32, idx: u64) -> &[usize] {
        self.levels[level as usize]
            .get(&idx)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn cells(&self, level: u32) -> &BTreeMap<u64, Vec<usize>> {
        &self.levels[level as usize]
    }

    /// Asserts the partition/refinement structure exactly; used by tests and
    /// the audit command.
    pub fn check_structure(&self, ground: &[usize]) -> Result<()> {
        let mut sorted = ground.to_vec();
        sorted.sort_unstable();
        for (i, level) in self.levels.iter().enumerate() {
            let mut all: Vec<usize> = level.values().flatten().copied().collect();
            all.sort_unstable();
            if all != sorted {
                return Err(Error::InvalidArg(format!("level {i} is not a partition")));
            }
            let max_idx = 1u64 << (self.lq as usize + i);
            if let Some((&j, _)) = level.iter().next_back() {
                if j > max_idx {
                    return Err(Error::InvalidArg(format!("cell index {j} out of range at level {i}")));
                }
            }
            if i > 0 {
                for (&j, coins) in &self.levels[i - 1] {
                    let mut merged: Vec<usize> = self
                        .cell(i as u32, 2 * j - 1)
                        .iter()
                        .chain(self.cell(i as u32, 2 * j))
                        .copied()
                        .collect();
                    merged.sort_unstable();
                    if &merged != coins {
                        return Err(Error::InvalidArg(format!(
                            "children of cell {j} at level {} do not refine it",
                            i - 1
                        )));
                    }
                    if i as u32 >= self.split_end {
                        let want = (coins.len() + 1) / 2;
                        if self.cell(i as u32, 2 * j - 1).len() != want {
                            return Err(Error::InvalidArg(format!(
                                "deterministic split size mismatch at level {i}, cell {j}"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(last) = self.levels.last() {
            for coins in last.values() {
                if coins.len() > 1 {
                    return Err(Error::InvalidArg("deepest level has a cell of size >= 2".into()));
                }
            }
        }
        Ok(())
    }

    pub fn audit(&self, inst: &CoinInstance) -> AuditReport {
        self.audit_with(|c| inst.weight(c), inst.alpha())
    }

    /// White-box audit against ground-truth weights; charges no queries.
    pub fn audit_with(&self, weight: impl Fn(usize) -> f64, alpha: f64) -> AuditReport {
        let q = self.q as f64;
        let is_cf = |c: usize| weight(c) != 0.0;

        // (a): counterfeit coins with |w| < alpha or sharing a level-0 cell
        // with another counterfeit
        let mut level0_bad = 0usize;
        let mut sub_alpha = 0usize;
        for coins in self.levels[0].values() {
            let cf: Vec<usize> = coins.iter().copied().filter(|&c| is_cf(c)).collect();
            for &c in &cf {
                let small = weight(c).abs() < alpha;
                if small {
                    sub_alpha += 1;
                }
                if small || cf.len() > 1 {
                    level0_bad += 1;
                }
            }
        }
        let bound_a = 5.0 * q / 6.0;

        let mut levels = Vec::new();
        for i in 1..self.split_end {
            if i > self.depth {
                break;
            }
            let mut max_cf = 0usize;
            let mut multi = 0usize;
            for coins in self.levels[i as usize].values() {
                let k = coins.iter().filter(|&&c| is_cf(c)).count();
                max_cf = max_cf.max(k);
                if k > 1 {
                    multi += 1;
                }
            }
            let bound_b = (i as f64 + 2.0 * q.log2()) / i as f64;
            let bound_c = q / f64::powi(2.0, i as i32 + 1) + q.powf(0.75);
            levels.push(LevelAudit {
                i,
                max_per_cell: max_cf,
                bound_b,
                pass_b: (max_cf as f64) <= bound_b,
                multi_cells: multi,
                bound_c,
                pass_c: (multi as f64) <= bound_c,
            });
        }

        // (d): each cell at levels >= ceil(2 log2 q) - 1 holds <= 1 counterfeit
        let d_start = self.split_end.saturating_sub(1);
        let mut pass_d = true;
        for i in d_start..=self.depth {
            for coins in self.levels[i as usize].values() {
                if coins.iter().filter(|&&c| is_cf(c)).count() > 1 {
                    pass_d = false;
                }
            }
        }

        let pass_e = self
            .levels
            .last()
            .map(|lv| lv.values().all(|c| c.len() <= 1))
            .unwrap_or(true);

        AuditReport {
            q: self.q,
            level0_bad,
            sub_alpha,
            bound_a,
            pass_a: (level0_bad as f64) <= bound_a,
            levels,
            pass_d,
            pass_e,
        }
    }
}

fn collect_cells(ground: &[usize], cur: &[u64]) -> BTreeMap<u64, Vec<usize>> {
    let mut cells: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (&c, &j) in ground.iter().zip(cur.iter()) {
        cells.entry(j).or_default().push(c);
    }
    for v in cells.values_mut() {
        v.sort_unstable();
    }
    cells
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelAudit {
    pub i: u32,
    pub max_per_cell: usize,
    pub bound_b: f64,
    pub pass_b: bool,
    pub multi_cells: usize,
    pub bound_c: f64,
    pub pass_c: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub q: usize,
    pub level0_bad: usize,
    pub sub_alpha: usize,
    pub bound_a: f64,
    pub pass_a: bool,
    pub levels: Vec<LevelAudit>,
    pub pass_d: bool,
    pub pass_e: bool,
}

impl AuditReport {
    pub fn pass_b(&self) -> bool {
        self.levels.iter().all(|l| l.pass_b)
    }

    pub fn pass_c(&self) -> bool {
        self.levels.iter().all(|l| l.pass_c)
    }

    pub fn all_pass(&self) -> bool {
        self.pass_a && self.pass_b() && self.pass_c() && self.pass_d && self.pass_e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap as Map;

    #[test]
    fn log_helpers() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_2log2(4), 4);
        assert_eq!(ceil_2log2(6), 6); // 2*log2(6) = 5.17
        assert_eq!(ceil_3log2(8), 9);
        assert_eq!(ceil_3log2(1), 0);
    }

    #[test]
    fn single_coin_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fam = SubsetFamily::build(&[1], 2, 2, &mut rng).unwrap();
        // exactly one of the two level-0 cells holds the coin
        assert_eq!(fam.cells(0).len(), 1);
        fam.check_structure(&[1]).unwrap();
        for i in 0..=fam.depth() {
            let total: usize = fam.cells(i).values().map(Vec::len).sum();
            assert_eq!(total, 1);
        }
    }

    #[test]
    fn eight_coins_structure() {
        let ground: Vec<usize> = (1..=8).collect();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fam = SubsetFamily::build(&ground, 4, 8, &mut rng).unwrap();
            assert_eq!(fam.lq(), 2);
            assert!(fam.cells(0).len() <= 4);
            fam.check_structure(&ground).unwrap();
        }
    }

    #[test]
    fn build_is_deterministic() {
        let ground: Vec<usize> = (1..=50).collect();
        let f1 = SubsetFamily::build(&ground, 8, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let f2 = SubsetFamily::build(&ground, 8, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for i in 0..=f1.depth() {
            assert_eq!(f1.cells(i), f2.cells(i));
        }
    }

    #[test]
    fn rejects_bad_args() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(SubsetFamily::build(&[1], 1, 4, &mut rng).is_err());
        assert!(SubsetFamily::build(&[1, 2, 3], 2, 2, &mut rng).is_err());
    }

    #[test]
    fn audit_trivial_cases() {
        let ground: Vec<usize> = (1..=16).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fam = SubsetFamily::build(&ground, 4, 16, &mut rng).unwrap();
        // no counterfeits
        let r = fam.audit_with(|_| 0.0, 1.0);
        assert_eq!(r.level0_bad, 0);
        assert!(r.all_pass());
        // a single counterfeit can never share a cell with another
        let r = fam.audit_with(|c| if c == 7 { 2.0 } else { 0.0 }, 1.0);
        assert_eq!(r.level0_bad, 0);
        assert!(r.pass_b() && r.pass_c() && r.pass_d);
    }

    #[test]
    fn audit_via_instance() {
        let mut w = Map::new();
        w.insert(3, 1.5);
        let inst = CoinInstance::new(16, w, 1.0, 4.0, 0.0).unwrap();
        let ground: Vec<usize> = (1..=16).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fam = SubsetFamily::build(&ground, 4, 16, &mut rng).unwrap();
        assert!(fam.audit(&inst).all_pass());
    }
}
