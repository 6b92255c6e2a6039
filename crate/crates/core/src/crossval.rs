//! Nested k-fold split plans.
//!
//! Ids are shuffled once with the pinned [`Rng`]. The shuffled list is cut
//! into `k_outer` contiguous test chunks whose sizes differ by at most one
//! (the first `n % k` chunks take the extra id). For each outer fold the
//! remaining ids, in shuffled order, are cut the same way into `k_inner`
//! validation chunks; everything else trains.

use alloc::{format, string::String, vec::Vec};
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    Nested,
    /// Only the first (outer 0, inner 0) fold.
    SingleFold,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested" => Ok(SplitMode::Nested),
            "single_fold" | "single" => Ok(SplitMode::SingleFold),
            _ => Err(Error::config(format!("unknown split mode {s:?}; use nested or single_fold"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "validation" => Ok(Role::Validation),
            "test" => Ok(Role::Test),
            _ => Err(Error::config(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub outer: usize,
    pub inner: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn role_of(&self, id: &str) -> Option<Role> {
        if self.train.iter().any(|x| x == id) {
            Some(Role::Train)
        } else if self.validation.iter().any(|x| x == id) {
            Some(Role::Validation)
        } else if self.test.iter().any(|x| x == id) {
            Some(Role::Test)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// `(outer, inner, role, id)` rows in fold order; within a fold, test,
    /// then validation, then train, each in shuffled order.
    pub fn rows(&self) -> Vec<(usize, usize, Role, &str)> {
        let mut out = Vec::new();
        for f in &self.folds {
            for (role, ids) in [(Role::Test, &f.test), (Role::Validation, &f.validation), (Role::Train, &f.train)] {
                out.extend(ids.iter().map(|id| (f.outer, f.inner, role, id.as_str())));
            }
        }
        out
    }

    pub fn fold(&self, outer: usize, inner: usize) -> Option<&Fold> {
        self.folds.iter().find(|f| f.outer == outer && f.inner == inner)
    }
}

/// Split `items` into `k` contiguous chunks, sizes differing by at most one,
/// larger chunks first.
pub fn chunks<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let base = items.len() / k;
    let extra = items.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

pub fn make_nested_splits(ids: &[String], k_outer: usize, k_inner: usize, seed: u64, mode: SplitMode) -> Result<SplitPlan> {
    if k_outer < 2 || k_inner < 2 {
        return Err(Error::config(format!(
            "nested splitting needs k_outer >= 2 and k_inner >= 2, got {k_outer} and {k_inner}"
        )));
    }
    let need = k_outer * k_inner;
    if ids.len() < need {
        return Err(Error::config(format!(
            "{} subjects cannot fill a {k_outer}x{k_inner} split; at least {need} are required",
            ids.len()
        )));
    }
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config(format!("duplicate subject id {:?}", w[0])));
    }
    let mut shuffled = ids.to_vec();
    Rng::new(seed).shuffle(&mut shuffled);
    let outer_chunks = chunks(&shuffled, k_outer);
    let mut folds = Vec::new();
    for (i, test) in outer_chunks.iter().enumerate() {
        let rest: Vec<String> = outer_chunks
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, c)| c.iter().cloned())
            .collect();
        let inner_chunks = chunks(&rest, k_inner);
        for (j, validation) in inner_chunks.iter().enumerate() {
            let train = inner_chunks
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != j)
                .flat_map(|(_, c)| c.iter().cloned())
                .collect();
            folds.push(Fold { outer: i, inner: j, train, validation: validation.clone(), test: test.clone() });
            if mode == SplitMode::SingleFold {
                return Ok(SplitPlan { k_outer, k_inner, seed, folds });
            }
        }
    }
    Ok(SplitPlan { k_outer, k_inner, seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn hundred_by_five_by_five() {
        let plan = make_nested_splits(&ids(100), 5, 5, 1, SplitMode::Nested).unwrap();
        assert_eq!(plan.folds.len(), 25);
        for f in &plan.folds {
            assert_eq!((f.test.len(), f.validation.len(), f.train.len()), (20, 16, 64));
        }
    }

    #[test]
    fn single_fold_and_errors() {
        let plan = make_nested_splits(&ids(10), 2, 2, 1, SplitMode::SingleFold).unwrap();
        assert_eq!(plan.folds.len(), 1);
        assert!(make_nested_splits(&ids(3), 2, 2, 1, SplitMode::Nested).is_err());
        let mut dup = ids(6);
        dup[5] = dup[0].clone();
        assert!(make_nested_splits(&dup, 2, 2, 1, SplitMode::Nested).is_err());
    }

    #[test]
    fn remainder_goes_to_front() {
        let c = chunks(&[1, 2, 3, 4, 5, 6, 7], 3);
        assert_eq!(c, [vec![1, 2, 3], vec![4, 5], vec![6, 7]]);
    }
}
