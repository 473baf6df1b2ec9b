//! Homogeneous perfect set definitions: per-level data `(n_k, c_k, η_{k,l})`,
//! validation of the defining identities, and bounded-depth enumeration of
//! basic intervals.

use crate::numeric::ExactScalar;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::fmt;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ConstructionError {
    #[error("level {level} generator failed: {message}")]
    Generator { level: u32, message: String },
    #[error("enumeration too large: level {level} holds {count} intervals, cap is {cap}")]
    EnumerationTooLarge { level: u32, count: BigUint, cap: u64 },
    #[error("depth {requested} exceeds the spec's max depth {max_depth}")]
    DepthOutOfRange { requested: u32, max_depth: u32 },
    #[error("unknown builtin '{0}'")]
    UnknownBuiltin(String),
    #[error("builtin parameter out of range: {0}")]
    BadParameter(String),
    #[error("level {level} is completely degenerate (trimmed length is zero)")]
    DegenerateLevel { level: u32 },
}

/// Per-level generator failure, carrying the `(k, l)` witness when a gap is
/// involved.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct GenError {
    pub level: u32,
    pub gap_index: Option<u64>,
    pub message: String,
}

impl GenError {
    pub fn new(level: u32, message: impl Into<String>) -> Self {
        Self {
            level,
            gap_index: None,
            message: message.into(),
        }
    }

    pub fn at_gap(level: u32, gap_index: u64, message: impl Into<String>) -> Self {
        Self {
            level,
            gap_index: Some(gap_index),
            message: message.into(),
        }
    }
}

/// Generator backing a spec: branching counts, contraction ratios, and gaps
/// as total functions of the level (and gap position).
pub trait SpecSource: Send + Sync {
    fn family_name(&self) -> &str;
    /// Branching count `n_k`, `k ≥ 1`.
    fn branching(&self, k: u32) -> Result<u64, GenError>;
    /// Contraction ratio `c_k`, `k ≥ 1`.
    fn ratio(&self, k: u32) -> Result<ExactScalar, GenError>;
    /// Gap `η_{k,l}` for `0 ≤ l ≤ n_k`.
    fn gap(&self, k: u32, l: u64) -> Result<ExactScalar, GenError>;
}

/// Fully evaluated data for one level.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub n: u64,
    pub c: ExactScalar,
    /// `η_{k,0..=n}` in positional order; degenerate gaps are kept.
    pub eta: Vec<ExactScalar>,
}

impl LevelData {
    pub fn middle_gaps(&self) -> &[ExactScalar] {
        &self.eta[1..self.eta.len() - 1]
    }

    pub fn edge_sum(&self) -> ExactScalar {
        &self.eta[0] + &self.eta[self.eta.len() - 1]
    }
}

/// Interval-length products `P_k = c_1···c_k` and trimmed lengths
/// `δ_k = Σ_{l=1}^{n_{k+1}−1} η_{k+1,l} + n_{k+1}·P_{k+1}`.
#[derive(Debug, Clone)]
pub struct LevelProducts {
    /// `P_0..=P_depth`
    pub ratio_products: Vec<ExactScalar>,
    /// `δ_0..=δ_(depth−1)`; one shorter because `δ_k` consumes level `k+1`.
    pub trimmed_lengths: Vec<ExactScalar>,
}

/// A validated-on-demand homogeneous perfect set definition, evaluable to
/// `max_depth` levels. Level data is memoized behind a lock, so shared
/// references are safe to use from multiple threads.
pub struct ConstructionSpec {
    source: Arc<dyn SpecSource>,
    max_depth: u32,
    levels: Mutex<Vec<Option<Arc<LevelData>>>>,
    products: Mutex<Vec<ExactScalar>>,
}

impl fmt::Debug for ConstructionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstructionSpec")
            .field("name", &self.source.family_name())
            .field("max_depth", &self.max_depth)
            .finish()
    }
}

impl ConstructionSpec {
    pub fn new(source: Arc<dyn SpecSource>, max_depth: u32) -> Self {
        assert!(max_depth >= 1);
        Self {
            source,
            max_depth,
            levels: Mutex::new(Vec::new()),
            products: Mutex::new(vec![ExactScalar::one()]),
        }
    }

    pub fn name(&self) -> &str {
        self.source.family_name()
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn source(&self) -> &Arc<dyn SpecSource> {
        &self.source
    }

    /// Memoized full data for level `k` (1-based).
    pub fn level(&self, k: u32) -> Result<Arc<LevelData>, ConstructionError> {
        if k == 0 || k > self.max_depth {
            return Err(ConstructionError::DepthOutOfRange {
                requested: k,
                max_depth: self.max_depth,
            });
        }
        {
            let cache = self.levels.lock().unwrap();
            if let Some(Some(data)) = cache.get(k as usize - 1) {
                return Ok(data.clone());
            }
        }
        let data = self.evaluate_level(k)?;
        let mut cache = self.levels.lock().unwrap();
        if cache.len() < k as usize {
            cache.resize(k as usize, None);
        }
        cache[k as usize - 1] = Some(data.clone());
        Ok(data)
    }

    fn evaluate_level(&self, k: u32) -> Result<Arc<LevelData>, ConstructionError> {
        let wrap = |e: GenError| ConstructionError::Generator {
            level: e.level,
            message: e.message,
        };
        let n = self.source.branching(k).map_err(wrap)?;
        let c = self.source.ratio(k).map_err(wrap)?;
        let mut eta = Vec::with_capacity(n as usize + 1);
        for l in 0..=n {
            eta.push(self.source.gap(k, l).map_err(wrap)?);
        }
        Ok(Arc::new(LevelData { n, c, eta }))
    }

    /// `P_k = c_1···c_k`, memoized; `P_0 = 1`.
    pub fn ratio_product(&self, k: u32) -> Result<ExactScalar, ConstructionError> {
        {
            let cache = self.products.lock().unwrap();
            if let Some(p) = cache.get(k as usize) {
                return Ok(p.clone());
            }
        }
        let mut cache_len = self.products.lock().unwrap().len();
        while cache_len <= k as usize {
            let level = self.level(cache_len as u32)?;
            let mut cache = self.products.lock().unwrap();
            if cache.len() == cache_len {
                let next = &cache[cache_len - 1] * &level.c;
                cache.push(next);
            }
            cache_len = cache.len();
        }
        Ok(self.products.lock().unwrap()[k as usize].clone())
    }

    /// Trimmed length `δ_k`; needs level `k+1` data.
    pub fn trimmed_length(&self, k: u32) -> Result<ExactScalar, ConstructionError> {
        let next = self.level(k + 1)?;
        let p_next = self.ratio_product(k + 1)?;
        let mut sum = ExactScalar::zero();
        for l in 1..next.n {
            sum = &sum + &next.eta[l as usize];
        }
        Ok(&sum + &(&ExactScalar::from_bigint(BigInt::from(next.n)) * &p_next))
    }

    /// `P` and `δ` sequences up to `depth` (δ up to `depth−1`).
    pub fn level_products(&self, depth: u32) -> Result<LevelProducts, ConstructionError> {
        let mut ratio_products = Vec::with_capacity(depth as usize + 1);
        for k in 0..=depth {
            ratio_products.push(self.ratio_product(k)?);
        }
        let mut trimmed_lengths = Vec::with_capacity(depth as usize);
        for k in 0..depth {
            trimmed_lengths.push(self.trimmed_length(k)?);
        }
        Ok(LevelProducts {
            ratio_products,
            trimmed_lengths,
        })
    }

    /// Number of level-`k` basic intervals, `n_1···n_k`.
    pub fn interval_count(&self, k: u32) -> Result<BigUint, ConstructionError> {
        let mut count = BigUint::one();
        for j in 1..=k {
            count *= BigUint::from(self.level(j)?.n);
        }
        Ok(count)
    }

    /// Check the defining constraints exactly for all levels `≤ depth`.
    /// Generator failures become report entries, never panics.
    pub fn validate(&self, depth: u32) -> Result<ValidationReport, ConstructionError> {
        if depth == 0 || depth > self.max_depth {
            return Err(ConstructionError::DepthOutOfRange {
                requested: depth,
                max_depth: self.max_depth,
            });
        }
        let mut violations = Vec::new();
        let mut parent_len = ExactScalar::one();
        for k in 1..=depth {
            let level = match self.level(k) {
                Ok(l) => l,
                Err(ConstructionError::Generator { level, message }) => {
                    violations.push(Violation {
                        level,
                        gap_index: None,
                        constraint: Constraint::Generator,
                        detail: message,
                    });
                    break;
                }
                Err(e) => return Err(e),
            };
            if level.n < 2 {
                violations.push(Violation {
                    level: k,
                    gap_index: None,
                    constraint: Constraint::BranchingRange,
                    detail: format!("n_{k} = {} must be at least 2", level.n),
                });
            }
            if !level.c.is_positive() || level.c >= ExactScalar::one() {
                violations.push(Violation {
                    level: k,
                    gap_index: None,
                    constraint: Constraint::RatioRange,
                    detail: format!("c_{k} = {} must lie in (0,1)", level.c),
                });
            }
            for (l, eta) in level.eta.iter().enumerate() {
                if eta.is_negative() {
                    violations.push(Violation {
                        level: k,
                        gap_index: Some(l as u64),
                        constraint: Constraint::GapNonnegative,
                        detail: format!("eta_{{{k},{l}}} = {eta} is negative"),
                    });
                }
            }
            // Gap-sum identity: Σ η_{k,l} + n_k·c_k·P_{k−1} = P_{k−1}.
            let mut gap_sum = ExactScalar::zero();
            for eta in &level.eta {
                gap_sum = &gap_sum + eta;
            }
            let child_total = &ExactScalar::from_bigint(BigInt::from(level.n))
                * &(&level.c * &parent_len);
            let total = &gap_sum + &child_total;
            if total != parent_len {
                violations.push(Violation {
                    level: k,
                    gap_index: None,
                    constraint: Constraint::GapSum,
                    detail: format!(
                        "gap sum plus children is {total}, expected {parent_len}"
                    ),
                });
            }
            parent_len = &parent_len * &level.c;
        }
        Ok(ValidationReport {
            spec_name: self.name().to_string(),
            depth,
            violations,
        })
    }

    /// All level-`k` basic intervals in left-to-right order, refusing
    /// enumeration when `n_1···n_k` exceeds `cap`.
    pub fn enumerate_level(
        &self,
        k: u32,
        cap: u64,
    ) -> Result<Vec<BasicInterval>, ConstructionError> {
        let count = self.interval_count(k)?;
        if count > BigUint::from(cap) {
            return Err(ConstructionError::EnumerationTooLarge {
                level: k,
                count,
                cap,
            });
        }
        let mut current = vec![BasicInterval {
            level: 0,
            index: Vec::new(),
            left: ExactScalar::zero(),
            right: ExactScalar::one(),
        }];
        for j in 1..=k {
            let level = self.level(j)?;
            let child_len = self.ratio_product(j)?;
            let mut next = Vec::with_capacity(current.len() * level.n as usize);
            for parent in &current {
                let mut cursor = &parent.left + &level.eta[0];
                for i in 1..=level.n {
                    let right = &cursor + &child_len;
                    let mut index = parent.index.clone();
                    index.push(i);
                    next.push(BasicInterval {
                        level: j,
                        index,
                        left: cursor.clone(),
                        right: right.clone(),
                    });
                    cursor = &right + &level.eta[i as usize];
                }
            }
            current = next;
        }
        Ok(current)
    }
}

/// A closed basic interval `J_σ` of the construction.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BasicInterval {
    pub level: u32,
    /// 1-based digit path `σ`.
    pub index: Vec<u64>,
    pub left: ExactScalar,
    pub right: ExactScalar,
}

impl BasicInterval {
    pub fn length(&self) -> ExactScalar {
        &self.right - &self.left
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    BranchingRange,
    RatioRange,
    GapNonnegative,
    GapSum,
    Generator,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Violation {
    pub level: u32,
    pub gap_index: Option<u64>,
    pub constraint: Constraint,
    pub detail: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub spec_name: String,
    pub depth: u32,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Built-in families, parseable from CLI descriptors like `uniform:2,1/3`.
pub enum Builtin {
    /// `n` equal children of ratio `c` per level, equal interior gaps, empty
    /// edge gaps.
    Uniform { branches: u64, ratio: ExactScalar },
    /// Two children with a central gap covering fraction `alpha` of the
    /// parent.
    MiddleAlpha { alpha: ExactScalar },
    /// Doubling family `n_k = 2^k` with one oversized interior gap per level
    /// whose position follows the bit pattern `2^k − 2^(k−⌊k/2⌋−1)`; lengths
    /// live in Q(√2).
    Example5 { products: Mutex<Vec<ExactScalar>> },
    /// Variant of the doubling family with `c_k·2^(k+1) = 2/3` and the
    /// oversized gap pinned next to the right edge.
    RemarkExample { products: Mutex<Vec<ExactScalar>> },
}

impl Builtin {
    /// Parse `name[:params]`, e.g. `uniform:2,1/3`, `middle_alpha:1/5`,
    /// `example5`, `remark_example`. Parameters use the exact literal syntax
    /// of the `.hps` format.
    pub fn parse(descriptor: &str) -> Result<Self, ConstructionError> {
        let (name, params) = match descriptor.split_once(':') {
            Some((n, p)) => (n, p),
            None => (descriptor, ""),
        };
        let parse_scalar = |text: &str| -> Result<ExactScalar, ConstructionError> {
            crate::specfmt::parse_exact_literal(text)
                .map_err(|e| ConstructionError::BadParameter(format!("{text}: {e}")))
        };
        match name {
            "uniform" => {
                let parts: Vec<&str> = params.split(',').collect();
                if parts.len() != 2 {
                    return Err(ConstructionError::BadParameter(
                        "uniform needs n,c".to_string(),
                    ));
                }
                let branches: u64 = parts[0]
                    .trim()
                    .parse()
                    .map_err(|e| ConstructionError::BadParameter(format!("n: {e}")))?;
                let ratio = parse_scalar(parts[1].trim())?;
                Self::uniform(branches, ratio)
            }
            "middle_alpha" => {
                let alpha = parse_scalar(params.trim())?;
                Self::middle_alpha(alpha)
            }
            "example5" => Ok(Self::Example5 {
                products: Mutex::new(vec![ExactScalar::one()]),
            }),
            "remark_example" => Ok(Self::RemarkExample {
                products: Mutex::new(vec![ExactScalar::one()]),
            }),
            other => Err(ConstructionError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn uniform(branches: u64, ratio: ExactScalar) -> Result<Self, ConstructionError> {
        if branches < 2 {
            return Err(ConstructionError::BadParameter(format!(
                "uniform branches {branches} must be at least 2"
            )));
        }
        if !ratio.is_positive()
            || &(&ExactScalar::from_bigint(BigInt::from(branches)) * &ratio)
                > &ExactScalar::one()
        {
            return Err(ConstructionError::BadParameter(format!(
                "uniform ratio {ratio} must satisfy 0 < n·c <= 1"
            )));
        }
        Ok(Self::Uniform { branches, ratio })
    }

    pub fn middle_alpha(alpha: ExactScalar) -> Result<Self, ConstructionError> {
        if !alpha.is_positive() || alpha >= ExactScalar::one() {
            return Err(ConstructionError::BadParameter(format!(
                "alpha {alpha} must lie in (0,1)"
            )));
        }
        Ok(Self::MiddleAlpha { alpha })
    }

    /// Oversized-gap position for the doubling family:
    /// `2^k − 2^(k−⌊k/2⌋−1)` for `k ≥ 2`.
    pub fn doubling_special_gap(k: u32) -> u64 {
        debug_assert!(k >= 2);
        (1u64 << k) - (1u64 << (k - k / 2 - 1))
    }

    fn doubling_ratio(k: u32) -> Result<ExactScalar, GenError> {
        // c_k = 1/(2^(k+1) + k·(√2)^k)
        if k > 62 {
            return Err(GenError::new(k, "doubling family level too deep (k > 62)"));
        }
        let pow2 = ExactScalar::from_bigint(BigInt::one() << (k as usize + 1));
        let rt = ExactScalar::sqrt2()
            .pow(k as i64)
            .expect("nonnegative exponent");
        let den = &pow2 + &(&ExactScalar::from_int(k as i64) * &rt);
        den.recip()
            .map_err(|_| GenError::new(k, "zero denominator in ratio"))
    }

    fn cached_product(
        products: &Mutex<Vec<ExactScalar>>,
        k: u32,
        ratio: impl Fn(u32) -> Result<ExactScalar, GenError>,
    ) -> Result<ExactScalar, GenError> {
        let mut cache = products.lock().unwrap();
        while cache.len() <= k as usize {
            let j = cache.len() as u32;
            let next = &cache[j as usize - 1] * &ratio(j)?;
            cache.push(next);
        }
        Ok(cache[k as usize].clone())
    }
}

impl SpecSource for Builtin {
    fn family_name(&self) -> &str {
        match self {
            Builtin::Uniform { .. } => "uniform",
            Builtin::MiddleAlpha { .. } => "middle_alpha",
            Builtin::Example5 { .. } => "example5",
            Builtin::RemarkExample { .. } => "remark_example",
        }
    }

    fn branching(&self, k: u32) -> Result<u64, GenError> {
        match self {
            Builtin::Uniform { branches, .. } => Ok(*branches),
            Builtin::MiddleAlpha { .. } => Ok(2),
            Builtin::Example5 { .. } | Builtin::RemarkExample { .. } => {
                if k > 62 {
                    Err(GenError::new(k, "doubling family level too deep (k > 62)"))
                } else {
                    Ok(1u64 << k)
                }
            }
        }
    }

    fn ratio(&self, k: u32) -> Result<ExactScalar, GenError> {
        match self {
            Builtin::Uniform { ratio, .. } => Ok(ratio.clone()),
            Builtin::MiddleAlpha { alpha } => {
                // c = (1 − α)/2
                let one = ExactScalar::one();
                Ok(&(&one - alpha) / &ExactScalar::from_int(2))
            }
            Builtin::Example5 { .. } => Self::doubling_ratio(k),
            Builtin::RemarkExample { .. } => {
                // c_k = 1/(3·2^k)
                Ok(ExactScalar::from_big_rational(BigRational::new(
                    BigInt::one(),
                    BigInt::from(3) << k as usize,
                )))
            }
        }
    }

    fn gap(&self, k: u32, l: u64) -> Result<ExactScalar, GenError> {
        match self {
            Builtin::Uniform { branches, ratio } => {
                let n = *branches;
                if l == 0 || l == n {
                    return Ok(ExactScalar::zero());
                }
                // Equal interior gaps: (1 − n·c)/(n − 1) · P_(k−1).
                let nc = &ExactScalar::from_bigint(BigInt::from(n)) * ratio;
                let free = &ExactScalar::one() - &nc;
                let per_gap = &free / &ExactScalar::from_bigint(BigInt::from(n - 1));
                let parent = ratio
                    .pow(k as i64 - 1)
                    .map_err(|_| GenError::new(k, "ratio power failed"))?;
                Ok(&per_gap * &parent)
            }
            Builtin::MiddleAlpha { alpha } => {
                if l == 0 || l == 2 {
                    return Ok(ExactScalar::zero());
                }
                // Central gap α·P_(k−1) with P = ((1−α)/2)^(k−1).
                let c = &(&ExactScalar::one() - alpha) / &ExactScalar::from_int(2);
                let parent = c
                    .pow(k as i64 - 1)
                    .map_err(|_| GenError::new(k, "ratio power failed"))?;
                Ok(alpha * &parent)
            }
            Builtin::Example5 { products } => {
                let n = self.branching(k)?;
                if l == 0 || l == n {
                    return Ok(ExactScalar::zero());
                }
                let delta = Self::cached_product(products, k, Self::doubling_ratio)?;
                if k == 1 {
                    // Single interior gap fills the remainder: 1 − 2·c_1.
                    return Ok(&ExactScalar::one()
                        - &(&ExactScalar::from_int(2) * &delta));
                }
                if l == Self::doubling_special_gap(k) {
                    // (2 + k·(√2)^k)·δ_k
                    let rt = ExactScalar::sqrt2().pow(k as i64).expect("nonneg");
                    let factor =
                        &ExactScalar::from_int(2) + &(&ExactScalar::from_int(k as i64) * &rt);
                    Ok(&factor * &delta)
                } else {
                    Ok(delta)
                }
            }
            Builtin::RemarkExample { products } => {
                let n = self.branching(k)?;
                if l == 0 || l == n {
                    return Ok(ExactScalar::zero());
                }
                let delta = Self::cached_product(products, k, |j| self.ratio(j))?;
                if k == 1 {
                    return Ok(&ExactScalar::one()
                        - &(&ExactScalar::from_int(2) * &delta));
                }
                if l == n - 1 {
                    // (1/3)·δ_(k−1) + 2·δ_k
                    let prev = Self::cached_product(products, k - 1, |j| self.ratio(j))?;
                    let third = ExactScalar::from_ratio(1, 3);
                    Ok(&(&third * &prev) + &(&ExactScalar::from_int(2) * &delta))
                } else {
                    Ok(delta)
                }
            }
        }
    }
}

/// Build a spec directly from a builtin descriptor.
pub fn builtin_spec(descriptor: &str, max_depth: u32) -> Result<ConstructionSpec, ConstructionError> {
    let b = Builtin::parse(descriptor)?;
    Ok(ConstructionSpec::new(Arc::new(b), max_depth))
}

/// Wrapper that perturbs a single gap value; used to exercise the gap-sum
/// identity checks.
pub struct PerturbedSpec {
    pub inner: Arc<dyn SpecSource>,
    pub level: u32,
    pub gap_index: u64,
    pub offset: ExactScalar,
}

impl SpecSource for PerturbedSpec {
    fn family_name(&self) -> &str {
        "perturbed"
    }
    fn branching(&self, k: u32) -> Result<u64, GenError> {
        self.inner.branching(k)
    }
    fn ratio(&self, k: u32) -> Result<ExactScalar, GenError> {
        self.inner.ratio(k)
    }
    fn gap(&self, k: u32, l: u64) -> Result<ExactScalar, GenError> {
        let base = self.inner.gap(k, l)?;
        if k == self.level && l == self.gap_index {
            Ok(&base + &self.offset)
        } else {
            Ok(base)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn middle_thirds(depth: u32) -> ConstructionSpec {
        builtin_spec("uniform:2,1/3", depth).unwrap()
    }

    #[test]
    fn middle_thirds_validates() {
        let spec = middle_thirds(8);
        let report = spec.validate(8).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn example5_validates_and_level2_identity() {
        let spec = builtin_spec("example5", 8).unwrap();
        let report = spec.validate(8).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
        // At k = 2 the gap-sum identity reads 2δ₂ + 6δ₂ + 4δ₂ = 12δ₂ = δ₁
        // with δ₂ = c₁c₂.
        let delta2 = spec.ratio_product(2).unwrap();
        let delta1 = spec.ratio_product(1).unwrap();
        let twelve = ExactScalar::from_int(12);
        assert_eq!(&twelve * &delta2, delta1);
        let lvl2 = spec.level(2).unwrap();
        assert_eq!(lvl2.eta[3], &ExactScalar::from_int(6) * &delta2);
        assert_eq!(lvl2.eta[1], delta2);
        // 168·δ₂ = 4 − √2 exactly.
        let lhs = &ExactScalar::from_int(168) * &delta2;
        let rhs = &ExactScalar::from_int(4) - &ExactScalar::sqrt2();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn perturbed_gap_sum_fails_once() {
        let inner = Arc::new(Builtin::parse("uniform:2,1/3").unwrap());
        let spec = ConstructionSpec::new(
            Arc::new(PerturbedSpec {
                inner,
                level: 1,
                gap_index: 1,
                offset: ExactScalar::from_ratio(1, 100),
            }),
            8,
        );
        let report = spec.validate(8).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].constraint, Constraint::GapSum);
        assert_eq!(report.violations[0].level, 1);
    }

    #[test]
    fn enumerate_middle_thirds_levels() {
        let spec = middle_thirds(4);
        let lvl1 = spec.enumerate_level(1, 1 << 20).unwrap();
        assert_eq!(lvl1.len(), 2);
        assert_eq!(lvl1[0].left, ExactScalar::zero());
        assert_eq!(lvl1[0].right, ExactScalar::from_ratio(1, 3));
        assert_eq!(lvl1[1].left, ExactScalar::from_ratio(2, 3));
        assert_eq!(lvl1[1].right, ExactScalar::one());

        let lvl2 = spec.enumerate_level(2, 1 << 20).unwrap();
        let expect = [
            (0, 1, 0, 9, 1, 9),
            (0, 1, 2, 9, 3, 9),
            (0, 1, 6, 9, 7, 9),
            (0, 1, 8, 9, 9, 9),
        ];
        assert_eq!(lvl2.len(), 4);
        for (iv, (_, _, ln, ld, rn, rd)) in lvl2.iter().zip(expect.iter()) {
            assert_eq!(iv.left, ExactScalar::from_ratio(*ln, *ld));
            assert_eq!(iv.right, ExactScalar::from_ratio(*rn, *rd));
        }
    }

    #[test]
    fn enumerate_example5_level1() {
        let spec = builtin_spec("example5", 3).unwrap();
        let lvl1 = spec.enumerate_level(1, 100).unwrap();
        assert_eq!(lvl1.len(), 2);
        // c₁ = 1/(4+√2) = (4−√2)/14
        let c1 = ExactScalar::from_parts(
            BigRational::new(4.into(), 14.into()),
            BigRational::new((-1).into(), 14.into()),
        );
        assert_eq!(lvl1[0].left, ExactScalar::zero());
        assert_eq!(lvl1[0].right, c1);
        assert_eq!(lvl1[1].left, &ExactScalar::one() - &c1);
        assert_eq!(lvl1[1].right, ExactScalar::one());
    }

    #[test]
    fn enumeration_cap_enforced() {
        let spec = middle_thirds(10);
        let err = spec.enumerate_level(10, 100).unwrap_err();
        match err {
            ConstructionError::EnumerationTooLarge { count, cap, .. } => {
                assert_eq!(count, BigUint::from(1024u32));
                assert_eq!(cap, 100);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nesting_and_length_conservation() {
        let spec = middle_thirds(6);
        // Total measure at level k plus all gaps created so far is 1.
        for k in 1..=6 {
            let intervals = spec.enumerate_level(k, 1 << 20).unwrap();
            let total: ExactScalar = intervals
                .iter()
                .fold(ExactScalar::zero(), |acc, iv| &acc + &iv.length());
            let expected = &spec.interval_count(k).map(|c| ExactScalar::from_biguint(&c)).unwrap()
                * &spec.ratio_product(k).unwrap();
            assert_eq!(total, expected);
        }
        // Children nest inside parents, n per parent.
        let parents = spec.enumerate_level(2, 1 << 20).unwrap();
        let children = spec.enumerate_level(3, 1 << 20).unwrap();
        for (pi, parent) in parents.iter().enumerate() {
            let mine: Vec<_> = children
                .iter()
                .filter(|c| c.left >= parent.left && c.right <= parent.right)
                .collect();
            assert_eq!(mine.len(), 2, "parent {pi}");
        }
    }

    #[test]
    fn remark_example_validates() {
        let spec = builtin_spec("remark_example", 8).unwrap();
        let report = spec.validate(8).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
        // c₁ = 1/6, single gap 2/3 at level 1.
        assert_eq!(spec.level(1).unwrap().c, ExactScalar::from_ratio(1, 6));
        assert_eq!(spec.level(1).unwrap().eta[1], ExactScalar::from_ratio(2, 3));
    }

    #[test]
    fn middle_alpha_validates() {
        let spec = builtin_spec("middle_alpha:1/5", 8).unwrap();
        assert!(spec.validate(8).unwrap().is_clean());
        assert_eq!(spec.level(1).unwrap().c, ExactScalar::from_ratio(2, 5));
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!(matches!(
            Builtin::parse("sierpinski"),
            Err(ConstructionError::UnknownBuiltin(_))
        ));
        assert!(matches!(
            Builtin::parse("middle_alpha:3/2"),
            Err(ConstructionError::BadParameter(_))
        ));
    }

    #[test]
    fn shared_across_threads() {
        let spec = std::sync::Arc::new(middle_thirds(10));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let spec = spec.clone();
                s.spawn(move || {
                    assert!(spec.validate(10).unwrap().is_clean());
                    let _ = spec.enumerate_level(6, 1 << 20).unwrap();
                });
            }
        });
    }
}
