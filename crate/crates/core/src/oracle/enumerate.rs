//! Exact desk-scale counting of integer and binary points.
//!
//! The primary counter runs a depth-first search over cells in flat order
//! with per-margin residual pruning. A second, structurally independent
//! counter folds generating functions over the last axis and is used to
//! cross-check the first.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::exec::ExecMode;
use crate::oracle::OracleError;
use crate::polytope::{check_structure, MarginSpec, Mode};

/// Default node budget for the exact counters.
pub const DEFAULT_BUDGET: u64 = 50_000_000;

/// Result of an exact enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct CountResult {
    pub count: BigUint,
    /// Search nodes visited (value assignments attempted).
    pub nodes: u64,
}

/// Margins converted to integers, with the directions permuted so extents
/// descend; pruning bites earlier that way and the count is unaffected.
struct IntInstance {
    dims: Vec<usize>,
    margins: Vec<Vec<u64>>,
}

fn to_integer_instance(spec: &MarginSpec) -> Result<IntInstance, OracleError> {
    check_structure(spec)?;
    let mut margins: Vec<Vec<u64>> = Vec::with_capacity(spec.nu);
    for (j, row) in spec.margins.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (m, &v) in row.iter().enumerate() {
            let rounded = v.round();
            if v < 0.0 || (v - rounded).abs() > 1e-9 {
                return Err(OracleError::NonIntegerMargins { direction: j, index: m, value: v });
            }
            out.push(rounded as u64);
        }
        margins.push(out);
    }
    let mut order: Vec<usize> = (0..spec.nu).collect();
    order.sort_by_key(|&j| std::cmp::Reverse(spec.dims[j]));
    Ok(IntInstance {
        dims: order.iter().map(|&j| spec.dims[j]).collect(),
        margins: order.iter().map(|&j| margins[j].clone()).collect(),
    })
}

/// Shared immutable search data.
struct Search {
    nu: usize,
    n: usize,
    /// rows of cell c at rows_of[c*nu..]
    rows_of: Vec<usize>,
    binary: bool,
    budget: u64,
}

struct WorkerState {
    residual: Vec<i64>,
    /// unassigned cells per row
    remaining: Vec<u32>,
    nodes: u64,
}

enum Abort {
    Budget,
}

impl Search {
    fn dfs(&self, cell: usize, state: &mut WorkerState) -> Result<u64, Abort> {
        if cell == self.n {
            return Ok(1);
        }
        let rows = &self.rows_of[cell * self.nu..(cell + 1) * self.nu];
        let mut ub = rows.iter().map(|&r| state.residual[r]).min().unwrap();
        if self.binary {
            ub = ub.min(1);
        }
        if ub < 0 {
            return Ok(0);
        }
        let mut total = 0u64;
        for &r in rows {
            state.remaining[r] -= 1;
        }
        for v in 0..=ub {
            state.nodes += 1;
            if state.nodes > self.budget {
                for &r in rows {
                    state.remaining[r] += 1;
                }
                return Err(Abort::Budget);
            }
            for &r in rows {
                state.residual[r] -= v;
            }
            // capacity pruning on the rows this cell just left
            let viable = rows.iter().all(|&r| {
                let res = state.residual[r];
                res >= 0
                    && (if self.binary {
                        res <= state.remaining[r] as i64
                    } else {
                        state.remaining[r] > 0 || res == 0
                    })
            });
            if viable {
                match self.dfs(cell + 1, state) {
                    Ok(sub) => total += sub,
                    Err(abort) => {
                        for &r in rows {
                            state.residual[r] += v;
                            state.remaining[r] += 1;
                        }
                        return Err(abort);
                    }
                }
            }
            for &r in rows {
                state.residual[r] += v;
            }
        }
        for &r in rows {
            state.remaining[r] += 1;
        }
        Ok(total)
    }
}

fn count_exact(
    spec: &MarginSpec,
    mode: Mode,
    budget: u64,
    exec: ExecMode,
) -> Result<CountResult, OracleError> {
    let inst = to_integer_instance(spec)?;
    if mode == Mode::Binary {
        for (j, row) in inst.margins.iter().enumerate() {
            let capacity: u64 = inst
                .dims
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &k)| k as u64)
                .product();
            if row.iter().any(|&v| v > capacity) {
                return Ok(CountResult { count: BigUint::zero(), nodes: 0 });
            }
        }
    }

    let nu = inst.dims.len();
    let n: usize = inst.dims.iter().product();
    let k_total: usize = inst.dims.iter().sum();

    let mut offsets = Vec::with_capacity(nu);
    let mut acc = 0usize;
    for &k in &inst.dims {
        offsets.push(acc);
        acc += k;
    }
    let mut rows_of = Vec::with_capacity(n * nu);
    let mut multi = vec![0usize; nu];
    for _ in 0..n {
        for j in 0..nu {
            rows_of.push(offsets[j] + multi[j]);
        }
        for j in (0..nu).rev() {
            multi[j] += 1;
            if multi[j] < inst.dims[j] {
                break;
            }
            multi[j] = 0;
        }
    }

    let mut residual = vec![0i64; k_total];
    let mut remaining = vec![0u32; k_total];
    for (j, row) in inst.margins.iter().enumerate() {
        let slice: u32 = inst
            .dims
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, &k)| k as u32)
            .product();
        for (m, &v) in row.iter().enumerate() {
            residual[offsets[j] + m] = v as i64;
            remaining[offsets[j] + m] = slice;
        }
    }

    let search = Search { nu, n, rows_of, binary: mode == Mode::Binary, budget };

    // Split the tree on the first cell's value; subtrees are disjoint, so the
    // totals are a deterministic sum no matter how workers are scheduled.
    let first_rows: Vec<usize> = search.rows_of[..nu].to_vec();
    let mut ub0 = first_rows.iter().map(|&r| residual[r]).min().unwrap();
    if search.binary {
        ub0 = ub0.min(1);
    }
    if ub0 < 0 {
        return Ok(CountResult { count: BigUint::zero(), nodes: 0 });
    }

    let outcomes = exec.map_indexed((ub0 + 1) as usize, |v| {
        let v = v as i64;
        let mut state = WorkerState {
            residual: residual.clone(),
            remaining: remaining.clone(),
            nodes: 1, // the top-level assignment itself
        };
        for &r in &first_rows {
            state.residual[r] -= v;
            state.remaining[r] -= 1;
        }
        let viable = first_rows.iter().all(|&r| {
            let res = state.residual[r];
            res >= 0
                && (if search.binary {
                    res <= state.remaining[r] as i64
                } else {
                    state.remaining[r] > 0 || res == 0
                })
        });
        if !viable {
            return Ok((0u64, state.nodes));
        }
        match search.dfs(1, &mut state) {
            Ok(count) => Ok((count, state.nodes)),
            Err(Abort::Budget) => Err(state.nodes),
        }
    });

    let mut count = 0u64;
    let mut nodes = 0u64;
    let mut aborted = false;
    for outcome in outcomes {
        match outcome {
            Ok((c, s)) => {
                count += c;
                nodes += s;
            }
            Err(s) => {
                nodes += s;
                aborted = true;
            }
        }
    }
    if aborted || nodes > budget {
        return Err(OracleError::BudgetExceeded { budget, nodes });
    }
    Ok(CountResult { count: BigUint::from(count), nodes })
}

/// Exact number of nonnegative integer arrays with the prescribed margins.
pub fn count_integer_exact(
    spec: &MarginSpec,
    budget: u64,
    exec: ExecMode,
) -> Result<CountResult, OracleError> {
    count_exact(spec, Mode::Integer, budget, exec)
}

/// Exact number of 0/1 arrays with the prescribed margins.
pub fn count_binary_exact(
    spec: &MarginSpec,
    budget: u64,
    exec: ExecMode,
) -> Result<CountResult, OracleError> {
    count_exact(spec, Mode::Binary, budget, exec)
}

type FoldKey = (Vec<usize>, Vec<Vec<u64>>, bool);

/// All vectors `mu` with `sum(mu) = target` and `mu[m] <= caps[m]`.
fn compositions(target: u64, caps: &[u64]) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut current = vec![0u64; caps.len()];
    fn rec(pos: usize, left: u64, caps: &[u64], current: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if pos == caps.len() {
            if left == 0 {
                out.push(current.clone());
            }
            return;
        }
        let tail_cap: u64 = caps[pos + 1..].iter().sum();
        let lo = left.saturating_sub(tail_cap);
        let hi = caps[pos].min(left);
        for v in lo..=hi {
            current[pos] = v;
            rec(pos + 1, left - v, caps, current, out);
        }
        current[pos] = 0;
    }
    rec(0, target, caps, &mut current, &mut out);
    out
}

/// Counts arrays by folding over the last axis: each slice of the last
/// direction contributes a lower-index transportation count, convolved over
/// all ways of splitting the remaining margins across slices.
fn fold_count(
    dims: &[usize],
    margins: &[Vec<u64>],
    binary: bool,
    memo: &mut HashMap<FoldKey, BigUint>,
) -> BigUint {
    // totals must agree across directions
    let total: u64 = margins[0].iter().sum();
    if margins.iter().any(|row| row.iter().sum::<u64>() != total) {
        return BigUint::zero();
    }
    if dims.len() == 1 {
        // the array is the margin vector itself
        if binary && margins[0].iter().any(|&v| v > 1) {
            return BigUint::zero();
        }
        return BigUint::one();
    }
    let key: FoldKey = (dims.to_vec(), margins.to_vec(), binary);
    if let Some(hit) = memo.get(&key) {
        return hit.clone();
    }

    let last = dims.len() - 1;
    let head_dims = &dims[..last];
    let mut states: BTreeMap<Vec<Vec<u64>>, BigUint> = BTreeMap::new();
    states.insert(margins[..last].to_vec(), BigUint::one());

    for &slice_total in &margins[last] {
        let mut next: BTreeMap<Vec<Vec<u64>>, BigUint> = BTreeMap::new();
        for (state, ways) in &states {
            // per-direction splits of this slice's total, bounded by what the
            // state still has to give
            let per_dir: Vec<Vec<Vec<u64>>> =
                state.iter().map(|caps| compositions(slice_total, caps)).collect();
            if per_dir.iter().any(|v| v.is_empty()) {
                continue;
            }
            // odometer over the cartesian product of per-direction splits
            let mut pick = vec![0usize; per_dir.len()];
            'combos: loop {
                let slice_margins: Vec<Vec<u64>> =
                    pick.iter().enumerate().map(|(j, &i)| per_dir[j][i].clone()).collect();
                let ways_here = fold_count(head_dims, &slice_margins, binary, memo);
                if !ways_here.is_zero() {
                    let reduced: Vec<Vec<u64>> = state
                        .iter()
                        .zip(&slice_margins)
                        .map(|(have, take)| {
                            have.iter().zip(take).map(|(h, t)| h - t).collect()
                        })
                        .collect();
                    *next.entry(reduced).or_insert_with(BigUint::zero) += ways * ways_here;
                }
                let mut p = per_dir.len() - 1;
                loop {
                    pick[p] += 1;
                    if pick[p] < per_dir[p].len() {
                        break;
                    }
                    pick[p] = 0;
                    if p == 0 {
                        break 'combos;
                    }
                    p -= 1;
                }
            }
        }
        states = next;
    }

    let zero_state: Vec<Vec<u64>> = head_dims.iter().map(|&k| vec![0u64; k]).collect();
    let result = states.remove(&zero_state).unwrap_or_else(BigUint::zero);
    memo.insert(key, result.clone());
    result
}

/// Independent integer-count oracle via the last-axis generating-function
/// fold. Shares no code path with the depth-first counter.
pub fn count_integer_fold(spec: &MarginSpec) -> Result<BigUint, OracleError> {
    let inst = to_integer_instance(spec)?;
    let mut memo = HashMap::new();
    Ok(fold_count(&inst.dims, &inst.margins, false, &mut memo))
}

/// Binary variant of the fold oracle.
pub fn count_binary_fold(spec: &MarginSpec) -> Result<BigUint, OracleError> {
    let inst = to_integer_instance(spec)?;
    let mut memo = HashMap::new();
    Ok(fold_count(&inst.dims, &inst.margins, true, &mut memo))
}
