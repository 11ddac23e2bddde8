//! Exact solver for the bandwidth linear program
//!
//! ```text
//! maximize   c·x
//! subject to A·x <= b,  x >= l
//! ```
//!
//! where `A` is a site/edge incidence matrix, `b` the port capacities, `c` the
//! edge priorities and `l` a scalar lower bound shared by every edge.
//!
//! The solver shifts the lower bound away (`y = x - l`), runs a dense tableau
//! simplex over exact rationals with Bland's rule, floors the vertex to
//! integers and greedily hands leftover slack to the highest-priority edges.
//! [`brute_force`] is an independent grid-search oracle used for verification.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Gbps;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// `incidence[site][edge]` is 1 when the edge touches the site.
    pub incidence: Vec<Vec<u8>>,
    pub capacities: Vec<Gbps>,
    pub priorities: Vec<u64>,
    pub lower_bound: Gbps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub x: Vec<Gbps>,
    pub objective: u64,
    pub feasible: bool,
}

impl AllocationSolution {
    fn infeasible() -> Self {
        AllocationSolution {
            x: Vec::new(),
            objective: 0,
            feasible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("lower bound {lower_bound} infeasible: site row {row} needs more than its capacity")]
    Infeasible { lower_bound: Gbps, row: usize },
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("grid too large for exhaustive search: {0}")]
    GridTooLarge(String),
}

impl AllocationProblem {
    pub fn num_sites(&self) -> usize {
        self.capacities.len()
    }

    pub fn num_edges(&self) -> usize {
        self.priorities.len()
    }

    pub fn with_lower_bound(&self, lower_bound: Gbps) -> Self {
        AllocationProblem {
            lower_bound,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let (n, e) = (self.num_sites(), self.num_edges());
        if self.incidence.len() != n {
            return Err(LpError::Malformed(format!(
                "incidence has {} rows, expected {n}",
                self.incidence.len()
            )));
        }
        for (i, row) in self.incidence.iter().enumerate() {
            if row.len() != e {
                return Err(LpError::Malformed(format!(
                    "incidence row {i} has {} columns, expected {e}",
                    row.len()
                )));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(LpError::Malformed(format!(
                    "incidence row {i} has a non 0/1 entry"
                )));
            }
        }
        for j in 0..e {
            let ones = self.incidence.iter().filter(|row| row[j] == 1).count();
            if ones != 2 {
                return Err(LpError::Malformed(format!(
                    "edge column {j} touches {ones} sites, expected 2"
                )));
            }
        }
        if let Some(j) = self.priorities.iter().position(|&p| p == 0) {
            return Err(LpError::Malformed(format!("edge {j} has priority 0")));
        }
        Ok(())
    }

    /// Row-wise `A·x`.
    pub fn usage(&self, x: &[Gbps]) -> Vec<u128> {
        self.incidence
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .filter(|(&a, _)| a == 1)
                    .map(|(_, &v)| v as u128)
                    .sum()
            })
            .collect()
    }

    pub fn objective(&self, x: &[Gbps]) -> u64 {
        self.priorities.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// True when `x` satisfies `A·x <= b` and `x >= l` exactly.
    pub fn is_feasible(&self, x: &[Gbps]) -> bool {
        x.len() == self.num_edges()
            && x.iter().all(|&v| v >= self.lower_bound)
            && self
                .usage(x)
                .iter()
                .zip(&self.capacities)
                .all(|(&u, &b)| u <= b as u128)
    }

    fn degrees(&self) -> Vec<u64> {
        self.incidence
            .iter()
            .map(|row| row.iter().filter(|&&v| v == 1).count() as u64)
            .collect()
    }

    /// `b - A·(l·1)`, or the first row where that goes negative.
    fn residual_capacities(&self) -> Result<Vec<u128>, LpError> {
        self.degrees()
            .iter()
            .zip(&self.capacities)
            .enumerate()
            .map(|(row, (&deg, &cap))| {
                let need = deg as u128 * self.lower_bound as u128;
                (cap as u128).checked_sub(need).ok_or(LpError::Infeasible {
                    lower_bound: self.lower_bound,
                    row,
                })
            })
            .collect()
    }
}

/// Solves the bounded program. See the module docs for the method.
pub fn solve(problem: &AllocationProblem) -> Result<AllocationSolution, LpError> {
    problem.validate()?;
    let residual = problem.residual_capacities()?;
    let e = problem.num_edges();
    if e == 0 {
        return Ok(AllocationSolution {
            x: Vec::new(),
            objective: 0,
            feasible: true,
        });
    }

    let y = simplex_max(&problem.incidence, &residual, &problem.priorities);
    let mut x: Vec<Gbps> = y
        .iter()
        .map(|v| {
            let floored = v.floor().to_integer();
            floored.to_u64().unwrap_or(0) + problem.lower_bound
        })
        .collect();

    repair(problem, &mut x);
    debug_assert!(problem.is_feasible(&x));

    Ok(AllocationSolution {
        objective: problem.objective(&x),
        x,
        feasible: true,
    })
}

/// Hands remaining slack to edges in priority order (highest first, lower
/// column index on ties) until no edge can grow.
fn repair(problem: &AllocationProblem, x: &mut [Gbps]) {
    let mut slack: Vec<u128> = problem
        .usage(x)
        .iter()
        .zip(&problem.capacities)
        .map(|(&u, &b)| (b as u128).saturating_sub(u))
        .collect();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        problem.priorities[b]
            .cmp(&problem.priorities[a])
            .then(a.cmp(&b))
    });
    for j in order {
        let rows: Vec<usize> = (0..slack.len())
            .filter(|&i| problem.incidence[i][j] == 1)
            .collect();
        let room = rows.iter().map(|&i| slack[i]).min().unwrap_or(0);
        if room > 0 {
            x[j] += room as u64;
            for i in rows {
                slack[i] -= room;
            }
        }
    }
}

/// Dense tableau simplex for `max c·y s.t. A·y <= b, y >= 0` with `b >= 0`,
/// so the all-slack basis is feasible and no phase one is needed.
///
/// Bland's rule: enter the lowest-index column with positive reduced cost,
/// leave on the minimum ratio with the lowest basic-variable index on ties.
fn simplex_max(a: &[Vec<u8>], b: &[u128], c: &[u64]) -> Vec<BigRational> {
    let m = b.len();
    let n = c.len();
    let width = n + m;
    let q = |v: i128| BigRational::from_integer(BigInt::from(v));

    let mut tableau: Vec<Vec<BigRational>> = (0..m)
        .map(|i| {
            let mut row = vec![BigRational::zero(); width + 1];
            for j in 0..n {
                row[j] = q(a[i][j] as i128);
            }
            row[n + i] = BigRational::one();
            row[width] = BigRational::from_integer(BigInt::from(b[i]));
            row
        })
        .collect();
    // Reduced costs; the last entry tracks the negated objective.
    let mut cost: Vec<BigRational> = (0..=width)
        .map(|j| {
            if j < n {
                q(c[j] as i128)
            } else {
                BigRational::zero()
            }
        })
        .collect();
    let mut basis: Vec<usize> = (n..width).collect();

    while let Some(enter) = (0..width).find(|&j| cost[j].is_positive()) {
        let mut leave: Option<(usize, BigRational)> = None;
        for (i, row) in tableau.iter().enumerate() {
            if !row[enter].is_positive() {
                continue;
            }
            let ratio = &row[width] / &row[enter];
            let better = match &leave {
                None => true,
                Some((li, best)) => ratio < *best || (ratio == *best && basis[i] < basis[*li]),
            };
            if better {
                leave = Some((i, ratio));
            }
        }
        // Every column has two positive entries, so the program is bounded.
        let (pivot_row, _) = leave.expect("bounded program always has a leaving row");

        let pivot = tableau[pivot_row][enter].clone();
        for v in tableau[pivot_row].iter_mut() {
            *v /= &pivot;
        }
        let pivot_vals = tableau[pivot_row].clone();
        for (i, row) in tableau.iter_mut().enumerate() {
            if i == pivot_row || row[enter].is_zero() {
                continue;
            }
            let factor = row[enter].clone();
            for (v, p) in row.iter_mut().zip(&pivot_vals) {
                *v -= &factor * p;
            }
        }
        let factor = cost[enter].clone();
        for (v, p) in cost.iter_mut().zip(&pivot_vals) {
            *v -= &factor * p;
        }
        basis[pivot_row] = enter;
    }

    let mut y = vec![BigRational::zero(); n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            y[var] = tableau[i][width].clone();
        }
    }
    y
}

const MAX_GRID_EDGES: usize = 5;
const MAX_POINTS_PER_EDGE: u128 = 100;
const MAX_ENUMERATED_PREFIXES: u128 = 10_000_000;

/// Exhaustive search over `x_j ∈ {l, l+step, ...}`. Returns the feasible grid
/// point with the largest objective, preferring the lexicographically largest
/// `x` on ties.
pub fn brute_force(problem: &AllocationProblem, step: Gbps) -> Result<AllocationSolution, LpError> {
    problem.validate()?;
    if step == 0 {
        return Err(LpError::Malformed("grid step must be positive".into()));
    }
    let e = problem.num_edges();
    if e > MAX_GRID_EDGES {
        return Err(LpError::GridTooLarge(format!(
            "{e} edges, at most {MAX_GRID_EDGES} supported"
        )));
    }
    let residual = match problem.residual_capacities() {
        Ok(r) => r,
        Err(LpError::Infeasible { .. }) => return Ok(AllocationSolution::infeasible()),
        Err(other) => return Err(other),
    };
    if e == 0 {
        return Ok(AllocationSolution {
            x: Vec::new(),
            objective: 0,
            feasible: true,
        });
    }

    let rows_of: Vec<Vec<usize>> = (0..e)
        .map(|j| {
            (0..problem.num_sites())
                .filter(|&i| problem.incidence[i][j] == 1)
                .collect()
        })
        .collect();
    let points: Vec<u128> = rows_of
        .iter()
        .map(|rows| rows.iter().map(|&i| residual[i]).min().unwrap_or(0) / step as u128 + 1)
        .collect();
    if let Some(p) = points.iter().find(|&&p| p > MAX_POINTS_PER_EDGE) {
        return Err(LpError::GridTooLarge(format!(
            "{p} grid points on one edge, at most {MAX_POINTS_PER_EDGE} supported"
        )));
    }
    let prefixes: u128 = points[..e - 1].iter().product();
    if prefixes > MAX_ENUMERATED_PREFIXES {
        return Err(LpError::GridTooLarge(format!(
            "{prefixes} grid prefixes exceed {MAX_ENUMERATED_PREFIXES}"
        )));
    }

    struct Search<'a> {
        problem: &'a AllocationProblem,
        rows_of: &'a [Vec<usize>],
        step: u128,
        steps: Vec<u64>,
        best: Option<(u64, Vec<u64>)>,
    }

    impl Search<'_> {
        fn visit(&mut self, j: usize, remaining: &mut [u128]) {
            let rows = &self.rows_of[j];
            let max_k = rows.iter().map(|&i| remaining[i]).min().unwrap_or(0) / self.step;
            if j + 1 == self.steps.len() {
                // Priorities are positive, so the last coordinate is best at its maximum.
                self.steps[j] = max_k as u64;
                self.consider();
                return;
            }
            for k in 0..=max_k {
                for &i in rows {
                    remaining[i] -= k * self.step;
                }
                self.steps[j] = k as u64;
                self.visit(j + 1, remaining);
                for &i in rows {
                    remaining[i] += k * self.step;
                }
            }
        }

        fn consider(&mut self) {
            let l = self.problem.lower_bound;
            let x: Vec<u64> = self
                .steps
                .iter()
                .map(|&k| l + k * self.step as u64)
                .collect();
            let obj = self.problem.objective(&x);
            let better = match &self.best {
                None => true,
                Some((best_obj, best_x)) => (obj, &x) > (*best_obj, best_x),
            };
            if better {
                self.best = Some((obj, x));
            }
        }
    }

    let mut search = Search {
        problem,
        rows_of: &rows_of,
        step: step as u128,
        steps: vec![0; e],
        best: None,
    };
    let mut remaining = residual;
    search.visit(0, &mut remaining);
    let (objective, x) = search.best.expect("the all-lower-bound point is feasible");
    Ok(AllocationSolution {
        x,
        objective,
        feasible: true,
    })
}
