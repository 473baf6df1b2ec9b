//! Two-step reconstruction of a homogeneous perfect set.
//!
//! Step 1 trims every basic interval by its children's edge gaps, producing a
//! new homogeneous structure with trimmed lengths `δ_k` and shifted gaps.
//! Step 2 interleaves a binary family `F_m` between consecutive trimmed
//! levels by repeatedly removing the positionally midmost gap of each block
//! (empty gaps count; ties resolve to the left gap).
//!
//! Because every parent subdivides identically, each ladder level stores the
//! block pattern inside a single parent plus a big-integer multiplicity —
//! never the full tree.

use crate::construction::{ConstructionError, ConstructionSpec};
use crate::numeric::ExactScalar;
use num_bigint::BigUint;
use num_traits::One;
use std::sync::Arc;

/// The trimmed (Step 1) structure: per-level lengths, ratios and gap tables.
///
/// Building to depth `K` consumes level `K+1` data of the original spec.
pub struct StarredSpec {
    name: String,
    depth: u32,
    /// `δ_0..=δ_depth`
    trimmed_lengths: Vec<ExactScalar>,
    /// `δ_k/δ_(k−1)` for `k = 1..=depth`
    trimmed_ratios: Vec<ExactScalar>,
    /// Trimmed gap table per level `k = 1..=depth`: index `l = 0..=n_k`.
    gaps: Vec<Arc<Vec<ExactScalar>>>,
    /// Prefix sums of the interior gaps: `prefix[i] = Σ_{l=1..=i} gap_l`,
    /// `prefix[0] = 0`, length `n_k`.
    gap_prefix: Vec<Arc<Vec<ExactScalar>>>,
    branching: Vec<u64>,
    /// Trimmed root interval.
    root: (ExactScalar, ExactScalar),
}

impl StarredSpec {
    /// Step 1. Requires `spec.max_depth() ≥ 2`; yields depth
    /// `spec.max_depth() − 1`.
    pub fn from_spec(spec: &ConstructionSpec) -> Result<Self, ConstructionError> {
        let depth = spec
            .max_depth()
            .checked_sub(1)
            .filter(|d| *d >= 1)
            .ok_or(ConstructionError::DepthOutOfRange {
                requested: spec.max_depth(),
                max_depth: spec.max_depth(),
            })?;
        let mut trimmed_lengths = Vec::with_capacity(depth as usize + 1);
        for k in 0..=depth {
            let d = spec.trimmed_length(k)?;
            if !d.is_positive() {
                return Err(ConstructionError::DegenerateLevel { level: k });
            }
            trimmed_lengths.push(d);
        }
        let mut trimmed_ratios = Vec::with_capacity(depth as usize);
        for k in 1..=depth as usize {
            trimmed_ratios.push(&trimmed_lengths[k] / &trimmed_lengths[k - 1]);
        }
        let mut gaps = Vec::with_capacity(depth as usize);
        let mut gap_prefix = Vec::with_capacity(depth as usize);
        let mut branching = Vec::with_capacity(depth as usize);
        for k in 1..=depth {
            let level = spec.level(k)?;
            let next = spec.level(k + 1)?;
            let edge = &next.eta[0] + &next.eta[next.n as usize];
            let n = level.n;
            let mut table = Vec::with_capacity(n as usize + 1);
            table.push(next.eta[0].clone());
            for l in 1..n {
                table.push(&level.eta[l as usize] + &edge);
            }
            table.push(next.eta[next.n as usize].clone());
            let mut prefix = Vec::with_capacity(n as usize);
            prefix.push(ExactScalar::zero());
            for l in 1..n {
                prefix.push(&prefix[l as usize - 1] + &table[l as usize]);
            }
            gaps.push(Arc::new(table));
            gap_prefix.push(Arc::new(prefix));
            branching.push(n);
        }
        let level1 = spec.level(1)?;
        let root_left = level1.eta[0].clone();
        let root_right = &ExactScalar::one() - &level1.eta[level1.n as usize];
        Ok(Self {
            name: spec.name().to_string(),
            depth,
            trimmed_lengths,
            trimmed_ratios,
            gaps,
            gap_prefix,
            branching,
            root: (root_left, root_right),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// `δ_k` for `0 ≤ k ≤ depth`.
    pub fn trimmed_length(&self, k: u32) -> &ExactScalar {
        &self.trimmed_lengths[k as usize]
    }

    /// `δ_k/δ_(k−1)` for `1 ≤ k ≤ depth`.
    pub fn trimmed_ratio(&self, k: u32) -> &ExactScalar {
        &self.trimmed_ratios[k as usize - 1]
    }

    /// Trimmed gap table of level `k` (`1 ≤ k ≤ depth`), index `0..=n_k`.
    pub fn gap_table(&self, k: u32) -> &Arc<Vec<ExactScalar>> {
        &self.gaps[k as usize - 1]
    }

    pub fn branching(&self, k: u32) -> u64 {
        self.branching[k as usize - 1]
    }

    pub fn root(&self) -> &(ExactScalar, ExactScalar) {
        &self.root
    }

    /// Sum of interior gaps `l = a..=b` of level `k` in O(1).
    pub fn gap_span_sum(&self, k: u32, a: u64, b: u64) -> ExactScalar {
        debug_assert!(a >= 1 && b < self.branching(k));
        if b < a {
            return ExactScalar::zero();
        }
        let prefix = &self.gap_prefix[k as usize - 1];
        &prefix[b as usize] - &prefix[a as usize - 1]
    }

    /// Length of the closed hull of trimmed children `a..=b` of one level-`k`
    /// parent: `(b−a+1)·δ_k + Σ interior gaps`.
    pub fn block_length(&self, k: u32, a: u64, b: u64) -> ExactScalar {
        let count = ExactScalar::from_int((b - a + 1) as i64);
        let child = &count * self.trimmed_length(k);
        &child + &self.gap_span_sum(k, a, b.saturating_sub(1).max(a) - 1 + if b > a { 1 } else { 0 })
    }

    /// Enumerate the trimmed level-`k` intervals (`E*_k`), left to right.
    pub fn enumerate_level(
        &self,
        k: u32,
        cap: u64,
    ) -> Result<Vec<(ExactScalar, ExactScalar)>, ConstructionError> {
        let mut count = BigUint::one();
        for j in 1..=k {
            count *= BigUint::from(self.branching(j));
        }
        if count > BigUint::from(cap) {
            return Err(ConstructionError::EnumerationTooLarge {
                level: k,
                count,
                cap,
            });
        }
        let mut current = vec![self.root.clone()];
        for j in 1..=k {
            let table = self.gap_table(j);
            let child_len = self.trimmed_length(j);
            let n = self.branching(j);
            let mut next = Vec::with_capacity(current.len() * n as usize);
            for (left, _right) in &current {
                let mut cursor = left + &table[0];
                for i in 1..=n {
                    let r = &cursor + child_len;
                    next.push((cursor.clone(), r.clone()));
                    cursor = &r + &table[i as usize];
                }
            }
            current = next;
        }
        Ok(current)
    }
}

/// One contiguous block of trimmed children inside a single parent.
#[derive(Debug, Clone)]
pub struct Block {
    /// 1-based inclusive child index range within the parent.
    pub span: (u64, u64),
    pub length: ExactScalar,
    /// Index into the previous level's block list; `None` when the parent is
    /// the enclosing trimmed interval itself (stage 1, or a whole-level step).
    pub parent: Option<usize>,
}

impl Block {
    pub fn child_count(&self) -> u64 {
        self.span.1 - self.span.0 + 1
    }
}

/// The block pattern of one ladder level inside a single level-(k−1) trimmed
/// parent, with the global parent multiplicity.
#[derive(Debug, Clone)]
pub struct LadderLevel {
    pub m: u32,
    /// The construction level whose children the blocks partition.
    pub k: u32,
    /// `1..=i_k`; stage `i_k` is the whole-level family `F_(m_k) = E*_k`.
    /// Level `m = 0` is stored as stage 0 with a single root block.
    pub stage: u32,
    /// Number of parents: `n_1···n_(k−1)`.
    pub multiplicity: BigUint,
    pub blocks: Vec<Block>,
}

impl LadderLevel {
    /// Total interval count of `F_m`.
    pub fn family_count(&self) -> BigUint {
        &self.multiplicity * BigUint::from(self.blocks.len() as u64)
    }

    /// Total length `|F_m|`.
    pub fn family_length(&self) -> ExactScalar {
        let per_parent = self
            .blocks
            .iter()
            .fold(ExactScalar::zero(), |acc, b| &acc + &b.length);
        &ExactScalar::from_biguint(&self.multiplicity) * &per_parent
    }

    pub fn min_length(&self) -> &ExactScalar {
        self.blocks
            .iter()
            .map(|b| &b.length)
            .min()
            .expect("ladder level has at least one block")
    }

    pub fn max_length(&self) -> &ExactScalar {
        self.blocks
            .iter()
            .map(|b| &b.length)
            .max()
            .expect("ladder level has at least one block")
    }
}

/// The full interleaved family `F_0 ⊇ F_1 ⊇ …`, stored as per-parent
/// patterns.
pub struct RefinementLadder {
    pub levels: Vec<LadderLevel>,
    /// `m_0..=m_K` boundary positions.
    pub boundaries: Vec<u32>,
    /// `i_1..=i_K` stage counts.
    pub widths: Vec<u32>,
}

impl RefinementLadder {
    pub fn top(&self) -> u32 {
        *self.boundaries.last().unwrap()
    }

    pub fn level(&self, m: u32) -> &LadderLevel {
        &self.levels[m as usize]
    }

    /// `(count, total length)` of `F_m`.
    pub fn family_sizes(&self, m: u32) -> (BigUint, ExactScalar) {
        let lvl = self.level(m);
        (lvl.family_count(), lvl.family_length())
    }

    /// The construction depth `K` this ladder refines to.
    pub fn depth_k(&self) -> u32 {
        self.boundaries.len() as u32 - 1
    }
}

/// Stage count `i_k`: the unique integer with `2^(i_k) ≤ n_k < 2^(i_k+1)`.
pub fn stage_count(n: u64) -> u32 {
    debug_assert!(n >= 2);
    63 - n.leading_zeros() as u32 + 1 - 1
}

/// Split point of a block of `t` children: the midmost of its `t−1`
/// positional gaps (left on ties) sits after child `⌊t/2⌋`.
pub fn split_after(t: u64) -> u64 {
    t / 2
}

/// Midmost-gap index chosen directly from the positional rule: gaps are
/// numbered `a..b−1` between children `a..=b`; with an odd gap count the
/// middle one is unique, with an even count the left of the two middle gaps
/// is removed. Kept separate from [`split_after`] so the two can be checked
/// against each other.
pub fn midmost_gap(a: u64, b: u64) -> u64 {
    debug_assert!(b > a);
    let count = b - a; // number of gaps
    if count % 2 == 1 {
        a + count / 2
    } else {
        a + count / 2 - 1
    }
}

/// Simulate `stages` rounds of midmost-gap splitting of `n` children,
/// returning the span lists per round. Uses only the positional rule.
pub fn simulate_midmost_stages(n: u64, stages: u32) -> Vec<Vec<(u64, u64)>> {
    let mut rounds = Vec::new();
    let mut current = vec![(1u64, n)];
    for _ in 0..stages {
        let mut next = Vec::with_capacity(current.len() * 2);
        for &(a, b) in &current {
            if a == b {
                next.push((a, b));
                continue;
            }
            let g = midmost_gap(a, b);
            next.push((a, g));
            next.push((g + 1, b));
        }
        rounds.push(next.clone());
        current = next;
    }
    rounds
}

/// First-stage left block size `l₁ = ⌊n/2⌋`, from the binary digits of `n`.
pub fn stage1_left(n: u64) -> u64 {
    n / 2
}

/// Second-stage sizes `(l₂, l₁−l₂, l₂+a, rest)` where `l₂ = ⌊l₁/2⌋` and
/// `a = min(a₀, a₁)` from the two lowest binary digits of `n`.
pub fn stage2_sizes(n: u64) -> (u64, u64, u64, u64) {
    let l1 = stage1_left(n);
    let l2 = l1 / 2;
    let a0 = n & 1;
    let a1 = (n >> 1) & 1;
    let a = a0.min(a1);
    (l2, l1 - l2, l2 + a, n - l1 - l2 - a)
}

/// Step 2: build the ladder down to construction depth `depth_k`.
pub fn binary_refine(
    star: &StarredSpec,
    depth_k: u32,
) -> Result<RefinementLadder, ConstructionError> {
    if depth_k > star.depth() {
        return Err(ConstructionError::DepthOutOfRange {
            requested: depth_k,
            max_depth: star.depth(),
        });
    }
    let mut levels = Vec::new();
    levels.push(LadderLevel {
        m: 0,
        k: 0,
        stage: 0,
        multiplicity: BigUint::one(),
        blocks: vec![Block {
            span: (1, 1),
            length: star.trimmed_length(0).clone(),
            parent: None,
        }],
    });
    let mut boundaries = vec![0u32];
    let mut widths = Vec::new();
    let mut multiplicity = BigUint::one();
    let mut m = 0u32;
    for k in 1..=depth_k {
        let n = star.branching(k);
        let i_k = stage_count(n);
        widths.push(i_k);
        let delta = star.trimmed_length(k).clone();
        // Intermediate stages 1..i_k−1 split hull blocks at midmost gaps.
        let mut spans: Vec<((u64, u64), Option<usize>)> = vec![((1, n), None)];
        for stage in 1..=i_k {
            m += 1;
            let blocks: Vec<Block> = if stage < i_k {
                let mut next = Vec::with_capacity(spans.len() * 2);
                for (idx, &((a, b), _)) in spans.iter().enumerate() {
                    let g = a - 1 + split_after(b - a + 1);
                    debug_assert_eq!(g, midmost_gap(a, b));
                    let parent = if stage == 1 { None } else { Some(idx) };
                    next.push(((a, g), parent));
                    next.push(((g + 1, b), parent));
                }
                spans = next;
                spans
                    .iter()
                    .map(|&((a, b), parent)| Block {
                        span: (a, b),
                        length: hull_length(star, k, a, b, &delta),
                        parent,
                    })
                    .collect()
            } else {
                // Final stage: every block dissolves into its trimmed
                // children, so F_(m_k) = E*_k.
                let mut singles = Vec::with_capacity(n as usize);
                if i_k == 1 {
                    for l in 1..=n {
                        singles.push(Block {
                            span: (l, l),
                            length: delta.clone(),
                            parent: None,
                        });
                    }
                } else {
                    for (idx, &((a, b), _)) in spans.iter().enumerate() {
                        for l in a..=b {
                            singles.push(Block {
                                span: (l, l),
                                length: delta.clone(),
                                parent: Some(idx),
                            });
                        }
                    }
                }
                singles
            };
            levels.push(LadderLevel {
                m,
                k,
                stage,
                multiplicity: multiplicity.clone(),
                blocks,
            });
        }
        boundaries.push(m);
        multiplicity *= BigUint::from(n);
    }
    Ok(RefinementLadder {
        levels,
        boundaries,
        widths,
    })
}

fn hull_length(star: &StarredSpec, k: u32, a: u64, b: u64, delta: &ExactScalar) -> ExactScalar {
    let count = ExactScalar::from_int((b - a + 1) as i64);
    let children = &count * delta;
    if b > a {
        &children + &star.gap_span_sum(k, a, b - 1)
    } else {
        children
    }
}

/// Materialize the actual intervals of `F_m` by pairing enumerated parents
/// with the level's block pattern. Intended for small instances and
/// cross-checks; the cap bounds the output count.
pub fn enumerate_family(
    star: &StarredSpec,
    ladder: &RefinementLadder,
    m: u32,
    cap: u64,
) -> Result<Vec<(ExactScalar, ExactScalar)>, ConstructionError> {
    let lvl = ladder.level(m);
    if lvl.stage == 0 {
        return Ok(vec![star.root().clone()]);
    }
    let total = lvl.family_count();
    if total > BigUint::from(cap) {
        return Err(ConstructionError::EnumerationTooLarge {
            level: m,
            count: total,
            cap,
        });
    }
    let parents = star.enumerate_level(lvl.k - 1, cap)?;
    let table = star.gap_table(lvl.k);
    let delta = star.trimmed_length(lvl.k);
    // Left offset of child `l` within its parent.
    let n = star.branching(lvl.k);
    let mut offsets = Vec::with_capacity(n as usize);
    let mut cursor = table[0].clone();
    for l in 1..=n {
        offsets.push(cursor.clone());
        if l < n {
            cursor = &(&cursor + delta) + &table[l as usize];
        }
    }
    let mut out = Vec::with_capacity(parents.len() * lvl.blocks.len());
    for (pl, _pr) in &parents {
        for block in &lvl.blocks {
            let (a, b) = block.span;
            let left = pl + &offsets[a as usize - 1];
            let right = &(pl + &offsets[b as usize - 1]) + delta;
            out.push((left, right));
        }
    }
    Ok(out)
}

/// Independent oracle: split actual enumerated intervals by the midmost-gap
/// rule, counting empty gaps positionally. Returns interval lists for
/// `F_(m_(k−1))..=F_(m_k)` given the enumerated trimmed levels.
pub fn simulate_family_on_intervals(
    parents: &[(ExactScalar, ExactScalar)],
    children_per_parent: &[Vec<(ExactScalar, ExactScalar)>],
) -> Vec<Vec<(ExactScalar, ExactScalar)>> {
    let n = children_per_parent
        .first()
        .map(|c| c.len() as u64)
        .unwrap_or(0);
    if n < 2 {
        return vec![parents.to_vec()];
    }
    let stages = stage_count(n);
    let mut rounds: Vec<Vec<(ExactScalar, ExactScalar)>> = vec![parents.to_vec()];
    // Track spans per parent, mirroring the positional rule on real indices.
    let mut spans: Vec<(u64, u64)> = vec![(1, n)];
    for stage in 1..=stages {
        let mut next_spans = Vec::new();
        if stage < stages {
            for &(a, b) in &spans {
                let g = midmost_gap(a, b);
                next_spans.push((a, g));
                next_spans.push((g + 1, b));
            }
        } else {
            for &(a, b) in &spans {
                for l in a..=b {
                    next_spans.push((l, l));
                }
            }
        }
        let mut intervals = Vec::new();
        for children in children_per_parent {
            for &(a, b) in &next_spans {
                let left = children[a as usize - 1].0.clone();
                let right = children[b as usize - 1].1.clone();
                intervals.push((left, right));
            }
        }
        rounds.push(intervals);
        spans = next_spans;
    }
    rounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::builtin_spec;

    fn thirds_star(depth: u32) -> StarredSpec {
        let spec = builtin_spec("uniform:2,1/3", depth + 1).unwrap();
        StarredSpec::from_spec(&spec).unwrap()
    }

    #[test]
    fn star_middle_thirds() {
        let star = thirds_star(6);
        // δ_k = 3^(−k), c*_k = 1/3, interior trimmed gap 3^(−k).
        for k in 0..=6u32 {
            let expect = ExactScalar::from_ratio(1, 3).pow(k as i64).unwrap();
            assert_eq!(star.trimmed_length(k), &expect);
        }
        for k in 1..=6u32 {
            assert_eq!(star.trimmed_ratio(k), &ExactScalar::from_ratio(1, 3));
            let table = star.gap_table(k);
            assert_eq!(table[0], ExactScalar::zero());
            assert_eq!(table[2], ExactScalar::zero());
            assert_eq!(table[1], ExactScalar::from_ratio(1, 3).pow(k as i64).unwrap());
        }
        assert_eq!(star.root().0, ExactScalar::zero());
        assert_eq!(star.root().1, ExactScalar::one());
    }

    #[test]
    fn star_example5_delta_is_ratio_product() {
        let spec = builtin_spec("example5", 7).unwrap();
        let star = StarredSpec::from_spec(&spec).unwrap();
        for k in 1..=6u32 {
            assert_eq!(star.trimmed_length(k), &spec.ratio_product(k).unwrap());
        }
    }

    #[test]
    fn star_trims_positive_edges() {
        // Two children, ratio 1/4, symmetric edge gaps 1/8, middle 1/4.
        let src = "family edged\nn(k)=2\nc(k)=1/4\neta(k,l)=if l==1 then 1/4 * prodc(k-1) else 1/8 * prodc(k-1)";
        let ast = crate::specfmt::parse(src).unwrap();
        let spec = crate::specfmt::eval_spec(ast, 5).unwrap();
        assert!(spec.validate(5).unwrap().is_clean());
        let star = StarredSpec::from_spec(&spec).unwrap();
        // J*_∅ = [η_{1,0}, 1 − η_{1,n₁}] = [1/8, 7/8]
        assert_eq!(star.root().0, ExactScalar::from_ratio(1, 8));
        assert_eq!(star.root().1, ExactScalar::from_ratio(7, 8));
        // δ_0 = |J*_∅| = 3/4, and δ_k = (3/4)·4^(−k).
        assert_eq!(star.trimmed_length(0), &ExactScalar::from_ratio(3, 4));
        assert_eq!(star.trimmed_length(1), &ExactScalar::from_ratio(3, 16));
        // Trimmed middle gap = η_{k+1,0} + η_{k+1,2} + η_{k,1}.
        let t = star.gap_table(1);
        assert_eq!(t[0], ExactScalar::from_ratio(1, 32));
        assert_eq!(t[1], ExactScalar::from_ratio(1, 4) + ExactScalar::from_ratio(1, 16));
        assert_eq!(t[2], ExactScalar::from_ratio(1, 32));
    }

    #[test]
    fn stage_counts() {
        assert_eq!(stage_count(2), 1);
        assert_eq!(stage_count(3), 1);
        assert_eq!(stage_count(4), 2);
        assert_eq!(stage_count(7), 2);
        assert_eq!(stage_count(8), 3);
        assert_eq!(stage_count(15), 3);
        assert_eq!(stage_count(16), 4);
    }

    #[test]
    fn seven_children_stage_patterns() {
        // n = 7 = 111₂: l₁ = 3; continuing the rule one more round gives
        // spans [1,1],[2,3],[4,5],[6,7].
        assert_eq!(stage1_left(7), 3);
        let rounds = simulate_midmost_stages(7, 2);
        assert_eq!(rounds[0], vec![(1, 3), (4, 7)]);
        assert_eq!(rounds[1], vec![(1, 1), (2, 3), (4, 5), (6, 7)]);
        assert_eq!(stage2_sizes(7), (1, 2, 2, 2));
    }

    #[test]
    fn ladder_middle_thirds_shape() {
        let star = thirds_star(5);
        let ladder = binary_refine(&star, 5).unwrap();
        assert_eq!(ladder.top(), 5);
        assert_eq!(ladder.boundaries, vec![0, 1, 2, 3, 4, 5]);
        for m in 1..=5u32 {
            let lvl = ladder.level(m);
            assert_eq!(lvl.blocks.len(), 2);
            assert_eq!(lvl.stage, 1);
            for b in &lvl.blocks {
                assert_eq!(b.child_count(), 1);
                assert_eq!(
                    b.length,
                    ExactScalar::from_ratio(1, 3).pow(m as i64).unwrap()
                );
            }
        }
        let (count, len) = ladder.family_sizes(5);
        assert_eq!(count, BigUint::from(32u32));
        assert_eq!(
            len,
            &ExactScalar::from_int(32) * &ExactScalar::from_ratio(1, 243)
        );
    }

    #[test]
    fn ladder_example5_boundaries() {
        let spec = builtin_spec("example5", 7).unwrap();
        let star = StarredSpec::from_spec(&spec).unwrap();
        let ladder = binary_refine(&star, 6).unwrap();
        // i_k = k, so m_k = k(k+1)/2.
        assert_eq!(ladder.widths, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(ladder.boundaries, vec![0, 1, 3, 6, 10, 15, 21]);
        // F_(m_k) are the trimmed singletons.
        for k in 1..=6u32 {
            let lvl = ladder.level(ladder.boundaries[k as usize]);
            assert_eq!(lvl.blocks.len() as u64, star.branching(k));
            for b in &lvl.blocks {
                assert_eq!(&b.length, star.trimmed_length(k));
            }
        }
    }

    #[test]
    fn family_monotone_and_nested() {
        let spec = builtin_spec("uniform:7,1/10", 4).unwrap();
        let star = StarredSpec::from_spec(&spec).unwrap();
        let ladder = binary_refine(&star, 3).unwrap();
        for m in 0..ladder.top() {
            let this = enumerate_family(&star, &ladder, m, 1 << 16).unwrap();
            let next = enumerate_family(&star, &ladder, m + 1, 1 << 16).unwrap();
            // F_(m+1) ⊆ F_m: every next interval sits inside some current one.
            for (l, r) in &next {
                assert!(
                    this.iter().any(|(a, b)| a <= l && r <= b),
                    "m = {m}: interval not nested"
                );
            }
            // Total lengths agree with the pattern computation.
            let total: ExactScalar = next
                .iter()
                .fold(ExactScalar::zero(), |acc, (l, r)| &acc + &(r - l));
            assert_eq!(total, ladder.family_sizes(m + 1).1);
        }
    }

    #[test]
    fn pattern_matches_direct_simulation() {
        // Blocks from patterns must reproduce the midmost-gap simulation on
        // the real intervals, parent by parent.
        for descriptor in ["uniform:7,1/10", "uniform:5,1/8", "example5"] {
            let spec = builtin_spec(descriptor, 4).unwrap();
            let star = StarredSpec::from_spec(&spec).unwrap();
            let ladder = binary_refine(&star, 3).unwrap();
            for k in 1..=3u32 {
                let parents = star.enumerate_level(k - 1, 1 << 15).unwrap();
                let children = star.enumerate_level(k, 1 << 15).unwrap();
                let n = star.branching(k) as usize;
                let grouped: Vec<Vec<_>> = children.chunks(n).map(|c| c.to_vec()).collect();
                assert_eq!(grouped.len(), parents.len());
                let rounds = simulate_family_on_intervals(&parents, &grouped);
                for (stage, round) in rounds.iter().enumerate().skip(1) {
                    let m = ladder.boundaries[k as usize - 1] + stage as u32;
                    let from_pattern = enumerate_family(&star, &ladder, m, 1 << 16).unwrap();
                    assert_eq!(
                        round, &from_pattern,
                        "{descriptor}: k={k} stage={stage}"
                    );
                }
            }
        }
    }

    #[test]
    fn children_per_block_bounds() {
        for n in 2u64..=64 {
            let spec = builtin_spec(&format!("uniform:{n},1/{}", 2 * n), 3).unwrap();
            let star = StarredSpec::from_spec(&spec).unwrap();
            let ladder = binary_refine(&star, 2).unwrap();
            for m in 0..ladder.top() {
                let this = ladder.level(m);
                let next = ladder.level(m + 1);
                if next.stage == 1 || (next.stage == 1 && next.k != this.k) {
                    continue;
                }
                let mut per_parent = vec![0u64; this.blocks.len()];
                for b in &next.blocks {
                    per_parent[b.parent.expect("intermediate stages track parents")] += 1;
                }
                for count in per_parent {
                    assert!((2..=4).contains(&count), "n={n} m={m} count={count}");
                }
            }
        }
    }
}
