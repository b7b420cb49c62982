//! Evaluation query conditions `(n_active : n_inactive)` and per-sample query draws.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::query::{derive_seed, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConditionKind {
    /// Fully matched: every queried class is active.
    Fmq,
    /// Partially matched.
    Pmq,
    /// Fully unmatched: every queried class is inactive.
    Fuq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryCondition {
    pub n_active: usize,
    pub n_inactive: usize,
}

impl QueryCondition {
    pub fn new(n_active: usize, n_inactive: usize) -> Result<Self> {
        if n_active + n_inactive == 0 {
            return Err(TseError::ConfigInvalid("a query condition needs at least one class".into()));
        }
        Ok(Self { n_active, n_inactive })
    }

    pub fn kind(&self) -> ConditionKind {
        match (self.n_active, self.n_inactive) {
            (0, _) => ConditionKind::Fuq,
            (_, 0) => ConditionKind::Fmq,
            _ => ConditionKind::Pmq,
        }
    }

    pub fn label(&self) -> String {
        format!("({}:{})", self.n_active, self.n_inactive)
    }

    /// The conditions of the standard results table.
    pub fn table_conditions() -> Vec<QueryCondition> {
        [(1, 0), (2, 0), (1, 1), (1, 3), (0, 1), (0, 2)]
            .into_iter()
            .map(|(a, i)| QueryCondition { n_active: a, n_inactive: i })
            .collect()
    }
}

impl fmt::Display for QueryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for QueryCondition {
    type Err = TseError;

    /// Accepts `a:i` or `(a:i)`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let bad = || TseError::ConfigInvalid(format!("condition {s:?} is not of the form n_active:n_inactive"));
        let (a, i) = inner.split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let i = i.trim().parse().map_err(|_| bad())?;
        Self::new(a, i)
    }
}

/// A drawn evaluation query and the active classes whose stems form the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalQuery {
    pub query: Query,
    pub target_classes: Vec<usize>,
}

fn select(
    activity: &[bool],
    cond: QueryCondition,
    active_rng: &mut impl Rng,
    inactive_rng: &mut impl Rng,
) -> Result<EvalQuery> {
    let active: Vec<usize> = (0..activity.len()).filter(|&i| activity[i]).collect();
    let inactive: Vec<usize> = (0..activity.len()).filter(|&i| !activity[i]).collect();
    if active.len() < cond.n_active {
        return Err(TseError::InsufficientClasses {
            condition: cond.label(),
            required: cond.n_active,
            available: active.len(),
        });
    }
    if inactive.len() < cond.n_inactive {
        return Err(TseError::InsufficientClasses {
            condition: cond.label(),
            required: cond.n_inactive,
            available: inactive.len(),
        });
    }
    let mut target_classes: Vec<usize> =
        sample_indices(active_rng, active.len(), cond.n_active).into_iter().map(|i| active[i]).collect();
    target_classes.sort_unstable();
    let mut chosen = target_classes.clone();
    chosen.extend(sample_indices(inactive_rng, inactive.len(), cond.n_inactive).into_iter().map(|i| inactive[i]));
    let query = Query::from_indices(activity.len(), &chosen)?.with_condition(cond.n_active, cond.n_inactive);
    Ok(EvalQuery { query, target_classes })
}

/// Picks `n_active` active and `n_inactive` inactive classes uniformly without replacement.
pub fn make_eval_query<R: Rng>(activity: &[bool], cond: QueryCondition, rng: &mut R) -> Result<EvalQuery> {
    let mut inactive_rng = ChaCha8Rng::seed_from_u64(rng.random());
    select(activity, cond, rng, &mut inactive_rng)
}

/// Seeded draw for one `(sample, condition)` pair. The active classes depend
/// only on `(seed, sample_key, n_active)`, so every `n_inactive` variant of a
/// sample shares the same target; the inactive additions use their own stream.
pub fn paired_eval_query(activity: &[bool], cond: QueryCondition, seed: u64, sample_key: u64) -> Result<EvalQuery> {
    let mut active_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[sample_key, cond.n_active as u64]));
    let mut inactive_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[sample_key, cond.n_active as u64, cond.n_inactive as u64, 1],
    ));
    select(activity, cond, &mut active_rng, &mut inactive_rng)
}
