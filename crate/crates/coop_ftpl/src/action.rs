//! Combinatorial decision sets and the offline linear-optimization oracle.
//!
//! Actions are binary vectors of dimension `k` with at most `m` ones. The
//! oracle maximizes `<a, y>` over the family; everything downstream (the
//! perturbed-leader prediction, the resampling loop, the hindsight
//! comparator) is phrased in terms of this single operation.

use thiserror::Error;

/// Default cap on how many actions [`DecisionFamily::enumerate_actions`] may
/// produce.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActionError {
    #[error("score vector has length {got}, family dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("score vector contains a non-finite entry at index {index}")]
    NonFiniteScore { index: usize },
    #[error("family has {count} actions, enumeration cap is {cap}")]
    EnumerationCapExceeded { count: u128, cap: u128 },
    #[error("explicit action list is empty")]
    EmptyExplicitList,
    #[error("explicit action line {line}: {reason}")]
    BadExplicitAction { line: usize, reason: String },
    #[error("dimension k={k} not supported (1..=64)")]
    BadDimension { k: usize },
    #[error("support size m={m} invalid for k={k}")]
    BadSupportSize { m: usize, k: usize },
}

/// A binary action, stored as a bitmask over components `0..k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    mask: u64,
}

impl Action {
    pub fn from_mask(mask: u64) -> Action {
        Action { mask }
    }

    pub fn empty() -> Action {
        Action { mask: 0 }
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn get(&self, i: usize) -> bool {
        self.mask & (1u64 << i) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Indices of the non-zero components, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> {
        let mut mask = self.mask;
        std::iter::from_fn(move || {
            if mask == 0 {
                None
            } else {
                let i = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                Some(i)
            }
        })
    }

    /// Linear loss `<a, y>`. Folds from +0.0 so the empty action yields a
    /// plain zero rather than IEEE negative zero.
    pub fn dot(&self, y: &[f64]) -> f64 {
        self.ones().fold(0.0, |acc, i| acc + y[i])
    }

    pub fn to_bitstring(&self, k: usize) -> String {
        (0..k).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// All binary vectors with at most `m` ones (includes the empty action).
    AtMostM,
    /// All binary vectors with exactly `m` ones.
    ExactlyM,
    /// An explicit, validated list of actions.
    Explicit,
}

impl FamilyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyKind::AtMostM => "at_most_m",
            FamilyKind::ExactlyM => "exactly_m",
            FamilyKind::Explicit => "explicit",
        }
    }
}

/// A combinatorial decision set over `{0,1}^k` with support size at most `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionFamily {
    kind: FamilyKind,
    k: usize,
    m: usize,
    explicit: Vec<Action>,
}

fn check_dims(k: usize, m: usize) -> Result<(), ActionError> {
    if k == 0 || k > 64 {
        return Err(ActionError::BadDimension { k });
    }
    if m == 0 || m > k {
        return Err(ActionError::BadSupportSize { m, k });
    }
    Ok(())
}

impl DecisionFamily {
    pub fn at_most(k: usize, m: usize) -> Result<DecisionFamily, ActionError> {
        check_dims(k, m)?;
        Ok(DecisionFamily {
            kind: FamilyKind::AtMostM,
            k,
            m,
            explicit: Vec::new(),
        })
    }

    pub fn exactly(k: usize, m: usize) -> Result<DecisionFamily, ActionError> {
        check_dims(k, m)?;
        Ok(DecisionFamily {
            kind: FamilyKind::ExactlyM,
            k,
            m,
            explicit: Vec::new(),
        })
    }

    /// Build an explicit family from a list of actions. The list is
    /// deduplicated; `m` is the largest support size found.
    pub fn explicit(k: usize, actions: Vec<Action>) -> Result<DecisionFamily, ActionError> {
        if k == 0 || k > 64 {
            return Err(ActionError::BadDimension { k });
        }
        if actions.is_empty() {
            return Err(ActionError::EmptyExplicitList);
        }
        let valid_mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
        let mut seen = std::collections::BTreeSet::new();
        let mut list = Vec::new();
        for (idx, a) in actions.into_iter().enumerate() {
            if a.mask() & !valid_mask != 0 {
                return Err(ActionError::BadExplicitAction {
                    line: idx + 1,
                    reason: format!("component beyond dimension {k}"),
                });
            }
            if seen.insert(a.mask()) {
                list.push(a);
            }
        }
        let m = list.iter().map(|a| a.count_ones()).max().unwrap().max(1);
        Ok(DecisionFamily {
            kind: FamilyKind::Explicit,
            k,
            m,
            explicit: list,
        })
    }

    /// Parse an explicit action list: one binary string (e.g. `0101`) per
    /// line, `#` comments allowed.
    pub fn explicit_from_text(text: &str) -> Result<DecisionFamily, ActionError> {
        let mut k: Option<usize> = None;
        let mut actions = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let width = body.len();
            match k {
                None => {
                    if width == 0 || width > 64 {
                        return Err(ActionError::BadExplicitAction {
                            line,
                            reason: format!("unsupported width {width}"),
                        });
                    }
                    k = Some(width);
                }
                Some(k0) if k0 != width => {
                    return Err(ActionError::BadExplicitAction {
                        line,
                        reason: format!("width {width} differs from first line width {k0}"),
                    });
                }
                _ => {}
            }
            let mut mask = 0u64;
            for (i, ch) in body.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => mask |= 1u64 << i,
                    other => {
                        return Err(ActionError::BadExplicitAction {
                            line,
                            reason: format!("unexpected character {other:?}"),
                        })
                    }
                }
            }
            actions.push(Action::from_mask(mask));
        }
        let k = k.ok_or(ActionError::EmptyExplicitList)?;
        DecisionFamily::explicit(k, actions)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.k
    }

    pub fn max_support(&self) -> usize {
        self.m
    }

    /// Family membership test.
    pub fn contains(&self, a: &Action) -> bool {
        let valid_mask = if self.k == 64 {
            u64::MAX
        } else {
            (1u64 << self.k) - 1
        };
        if a.mask() & !valid_mask != 0 {
            return false;
        }
        match self.kind {
            FamilyKind::AtMostM => a.count_ones() <= self.m,
            FamilyKind::ExactlyM => a.count_ones() == self.m,
            FamilyKind::Explicit => self.explicit.iter().any(|b| b.mask() == a.mask()),
        }
    }

    /// Number of actions in the family.
    pub fn count_actions(&self) -> u128 {
        fn binom(n: usize, r: usize) -> u128 {
            let mut acc: u128 = 1;
            for i in 0..r {
                acc = acc * (n - i) as u128 / (i + 1) as u128;
            }
            acc
        }
        match self.kind {
            FamilyKind::AtMostM => (0..=self.m).map(|s| binom(self.k, s)).sum(),
            FamilyKind::ExactlyM => binom(self.k, self.m),
            FamilyKind::Explicit => self.explicit.len() as u128,
        }
    }

    /// Maximizer of `<a, y>` over the family. Ties break toward the lowest
    /// component index (and toward fewer components for `AtMostM`, where
    /// zero-valued scores are never selected).
    pub fn oracle_argmax(&self, y: &[f64]) -> Result<Action, ActionError> {
        if y.len() != self.k {
            return Err(ActionError::DimensionMismatch {
                expected: self.k,
                got: y.len(),
            });
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(ActionError::NonFiniteScore { index });
        }
        match self.kind {
            FamilyKind::Explicit => {
                let mut best = self.explicit[0];
                let mut best_val = best.dot(y);
                for a in &self.explicit[1..] {
                    let val = a.dot(y);
                    if val > best_val {
                        best_val = val;
                        best = *a;
                    }
                }
                Ok(best)
            }
            FamilyKind::AtMostM | FamilyKind::ExactlyM => {
                // m selection passes; strict `>` keeps the lowest index on ties.
                let mut mask = 0u64;
                for _ in 0..self.m {
                    let mut best_i = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for (i, &v) in y.iter().enumerate() {
                        if mask & (1u64 << i) == 0 && v > best_v {
                            best_v = v;
                            best_i = i;
                        }
                    }
                    if self.kind == FamilyKind::AtMostM && best_v <= 0.0 {
                        break;
                    }
                    mask |= 1u64 << best_i;
                }
                Ok(Action::from_mask(mask))
            }
        }
    }

    /// Minimizer of `<a, weighted_loss>`: the best fixed action in hindsight
    /// against the activation-weighted cumulative loss.
    pub fn best_fixed_action(&self, weighted_loss: &[f64]) -> Result<Action, ActionError> {
        let negated: Vec<f64> = weighted_loss.iter().map(|v| -v).collect();
        self.oracle_argmax(&negated)
    }

    /// All actions in a deterministic order (by support size, then by mask
    /// value), capped at `cap`.
    pub fn enumerate_actions_capped(&self, cap: u128) -> Result<Vec<Action>, ActionError> {
        let count = self.count_actions();
        if count > cap {
            return Err(ActionError::EnumerationCapExceeded { count, cap });
        }
        match self.kind {
            FamilyKind::Explicit => Ok(self.explicit.clone()),
            FamilyKind::AtMostM | FamilyKind::ExactlyM => {
                let sizes: Vec<usize> = match self.kind {
                    FamilyKind::AtMostM => (0..=self.m).collect(),
                    _ => vec![self.m],
                };
                let mut out = Vec::with_capacity(count as usize);
                for s in sizes {
                    if s == 0 {
                        out.push(Action::empty());
                        continue;
                    }
                    // Gosper's hack walks size-s masks in ascending order.
                    let mut mask = (1u64 << s) - 1;
                    let limit = if self.k == 64 {
                        u64::MAX
                    } else {
                        (1u64 << self.k) - 1
                    };
                    while mask <= limit {
                        out.push(Action::from_mask(mask));
                        let c = mask & mask.wrapping_neg();
                        let r = mask + c;
                        if r == 0 || s as u32 == 64 {
                            break;
                        }
                        mask = (((r ^ mask) >> 2) / c) | r;
                        if mask.count_ones() as usize != s {
                            break;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn enumerate_actions(&self) -> Result<Vec<Action>, ActionError> {
        self.enumerate_actions_capped(DEFAULT_ENUM_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_max(fam: &DecisionFamily, y: &[f64]) -> f64 {
        fam.enumerate_actions()
            .unwrap()
            .iter()
            .map(|a| a.dot(y))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn at_most_picks_positive_entries() {
        let fam = DecisionFamily::at_most(4, 2).unwrap();
        let a = fam.oracle_argmax(&[3.0, -1.0, 2.0, -5.0]).unwrap();
        assert_eq!(a.to_bitstring(4), "1010");
    }

    #[test]
    fn at_most_all_negative_is_empty() {
        let fam = DecisionFamily::at_most(3, 2).unwrap();
        let a = fam.oracle_argmax(&[-1.0, -2.0, -3.0]).unwrap();
        assert_eq!(a, Action::empty());
    }

    #[test]
    fn exactly_all_negative_takes_least_bad() {
        let fam = DecisionFamily::exactly(3, 2).unwrap();
        let y = [-1.0, -2.0, -3.0];
        let a = fam.oracle_argmax(&y).unwrap();
        assert_eq!(a.to_bitstring(3), "110");
        assert_eq!(a.dot(&y), brute_max(&fam, &y));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(
            DecisionFamily::at_most(3, 1).unwrap().enumerate_actions().unwrap().len(),
            4
        );
        assert_eq!(
            DecisionFamily::exactly(4, 2).unwrap().enumerate_actions().unwrap().len(),
            6
        );
        assert_eq!(
            DecisionFamily::exactly(10, 3).unwrap().enumerate_actions().unwrap().len(),
            120
        );
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let fam = DecisionFamily::exactly(10, 3).unwrap();
        match fam.enumerate_actions_capped(100) {
            Err(ActionError::EnumerationCapExceeded { count: 120, cap: 100 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn best_fixed_action_examples() {
        // nonnegative losses: the empty action is optimal for AtMostM
        let at_most = DecisionFamily::at_most(4, 2).unwrap();
        let a = at_most.best_fixed_action(&[0.3, 0.0, 5.0, 1.0]).unwrap();
        assert_eq!(a, Action::empty());

        let singles = DecisionFamily::exactly(3, 1).unwrap();
        let a = singles.best_fixed_action(&[5.0, 2.0, 9.0]).unwrap();
        assert_eq!(a.to_bitstring(3), "010");

        let pairs = DecisionFamily::exactly(4, 2).unwrap();
        let loss = [1.0, 4.0, 2.0, 3.0];
        let a = pairs.best_fixed_action(&loss).unwrap();
        assert_eq!(a.to_bitstring(4), "1010");
        let best = pairs
            .enumerate_actions()
            .unwrap()
            .into_iter()
            .map(|x| x.dot(&loss))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.dot(&loss), best);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let fam = DecisionFamily::at_most(4, 2).unwrap();
        match fam.oracle_argmax(&[1.0, 2.0]) {
            Err(ActionError::DimensionMismatch { expected: 4, got: 2 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn explicit_family_validates_and_dedupes() {
        let fam = DecisionFamily::explicit_from_text("01\n10\n01\n").unwrap();
        assert_eq!(fam.count_actions(), 2);
        assert_eq!(fam.dimension(), 2);
        assert_eq!(fam.max_support(), 1);
        let a = fam.oracle_argmax(&[1.0, 3.0]).unwrap();
        assert_eq!(a.to_bitstring(2), "01");

        assert!(matches!(
            DecisionFamily::explicit_from_text("01\n100\n"),
            Err(ActionError::BadExplicitAction { line: 2, .. })
        ));
        assert!(matches!(
            DecisionFamily::explicit_from_text("0x\n"),
            Err(ActionError::BadExplicitAction { line: 1, .. })
        ));
        assert!(matches!(
            DecisionFamily::explicit_from_text("# nothing\n"),
            Err(ActionError::EmptyExplicitList)
        ));
    }

    proptest! {
        #[test]
        fn oracle_matches_enumeration(
            kind in 0..2usize,
            k in 2..10usize,
            m_seed in 1..10usize,
            y in proptest::collection::vec(-10.0f64..10.0, 10),
        ) {
            let m = 1 + m_seed % k.min(4);
            let fam = if kind == 0 {
                DecisionFamily::at_most(k, m).unwrap()
            } else {
                DecisionFamily::exactly(k, m).unwrap()
            };
            let y = &y[..k];
            let a = fam.oracle_argmax(y).unwrap();
            prop_assert!(fam.contains(&a));
            let best = brute_max(&fam, y);
            prop_assert!((a.dot(y) - best).abs() < 1e-12);
        }

        #[test]
        fn oracle_is_deterministic_under_ties(
            k in 2..10usize,
            m_seed in 1..10usize,
            levels in proptest::collection::vec(-2i32..3, 10),
        ) {
            // quantized scores force frequent ties
            let m = 1 + m_seed % k.min(4);
            let y: Vec<f64> = levels[..k].iter().map(|&v| v as f64).collect();
            for fam in [
                DecisionFamily::at_most(k, m).unwrap(),
                DecisionFamily::exactly(k, m).unwrap(),
            ] {
                let a = fam.oracle_argmax(&y).unwrap();
                let b = fam.oracle_argmax(&y).unwrap();
                prop_assert_eq!(a, b);
                prop_assert!((a.dot(&y) - brute_max(&fam, &y)).abs() < 1e-12);
            }
        }
    }
}
