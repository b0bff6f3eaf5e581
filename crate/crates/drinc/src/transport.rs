//! Exact solver for dense transportation problems: minimize the total cost
//! of moving given supplies to given demands. Used for discrete
//! optimal-transport distances, where an approximate solution would poison
//! the test oracles.
//!
//! The algorithm is the classical transportation simplex: a northwest-corner
//! starting basis, tree-structured potentials, most-negative-reduced-cost
//! pricing, and cycle pivots with smallest-index tie-breaking.

use thiserror::Error;

const MAX_ITERS: usize = 100_000;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("supplies and demands must be nonempty")]
    Empty,
    #[error("negative mass at index {0}")]
    NegativeMass(usize),
    #[error("total supply {supply:.6e} and demand {demand:.6e} differ beyond tolerance")]
    Unbalanced { supply: f64, demand: f64 },
    #[error("cost matrix has {got} entries, expected {expected}")]
    CostShape { got: usize, expected: usize },
    #[error("non-finite cost entry")]
    NonFiniteCost,
    #[error("pivot iteration limit reached")]
    IterationLimit,
}

/// An optimal transport plan: total cost plus the supported flows.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    /// Positive flows (supply index, demand index, mass).
    pub flows: Vec<(usize, usize, f64)>,
}

/// Solves min sum c[i*k+j] x[i][j] subject to row sums = supply, column
/// sums = demand, x >= 0. Supplies and demands must balance to within
/// 1e-9 relative; the demand side is rescaled to balance exactly.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
) -> Result<TransportPlan, TransportError> {
    let m = supply.len();
    let k = demand.len();
    if m == 0 || k == 0 {
        return Err(TransportError::Empty);
    }
    if cost.len() != m * k {
        return Err(TransportError::CostShape { got: cost.len(), expected: m * k });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(TransportError::NonFiniteCost);
    }
    if let Some(i) = supply.iter().position(|&w| w < 0.0) {
        return Err(TransportError::NegativeMass(i));
    }
    if let Some(j) = demand.iter().position(|&w| w < 0.0) {
        return Err(TransportError::NegativeMass(j));
    }
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    if (total_supply - total_demand).abs() > 1e-9 * total_supply.max(total_demand).max(1.0) {
        return Err(TransportError::Unbalanced { supply: total_supply, demand: total_demand });
    }
    let rescale = if total_demand > 0.0 { total_supply / total_demand } else { 1.0 };
    let demand: Vec<f64> = demand.iter().map(|&w| w * rescale).collect();

    let mut x = vec![0.0f64; m * k];
    let mut basic = vec![false; m * k];

    // Northwest-corner start: exactly m + k - 1 basic cells forming a tree.
    {
        let mut ra = supply.to_vec();
        let mut rb = demand.clone();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            basic[i * k + j] = true;
            let q = ra[i].min(rb[j]);
            x[i * k + j] = q;
            ra[i] -= q;
            rb[j] -= q;
            if i == m - 1 && j == k - 1 {
                break;
            }
            if ra[i] <= rb[j] && i < m - 1 {
                i += 1;
            } else if j < k - 1 {
                j += 1;
            } else {
                i += 1;
            }
        }
    }

    let cost_scale = cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
    let price_tol = 1e-10 * cost_scale;

    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; k];
    let mut seen_row = vec![false; m];
    let mut seen_col = vec![false; k];
    let mut row_arcs: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut col_arcs: Vec<Vec<usize>> = vec![Vec::new(); k];

    for _pivot in 0..MAX_ITERS {
        // Basis adjacency.
        for arcs in row_arcs.iter_mut() {
            arcs.clear();
        }
        for arcs in col_arcs.iter_mut() {
            arcs.clear();
        }
        for i in 0..m {
            for j in 0..k {
                if basic[i * k + j] {
                    row_arcs[i].push(j);
                    col_arcs[j].push(i);
                }
            }
        }

        // Potentials u_i + v_j = c_ij on basic arcs, rooted at row 0.
        seen_row.iter_mut().for_each(|s| *s = false);
        seen_col.iter_mut().for_each(|s| *s = false);
        u[0] = 0.0;
        seen_row[0] = true;
        // Queue of nodes: rows are 0..m, columns are m..m+k.
        let mut queue = vec![0usize];
        while let Some(node) = queue.pop() {
            if node < m {
                let i = node;
                for &j in &row_arcs[i] {
                    if !seen_col[j] {
                        seen_col[j] = true;
                        v[j] = cost[i * k + j] - u[i];
                        queue.push(m + j);
                    }
                }
            } else {
                let j = node - m;
                for &i in &col_arcs[j] {
                    if !seen_row[i] {
                        seen_row[i] = true;
                        u[i] = cost[i * k + j] - v[j];
                        queue.push(i);
                    }
                }
            }
        }
        debug_assert!(seen_row.iter().all(|&s| s) && seen_col.iter().all(|&s| s));

        // Pricing: most negative reduced cost among nonbasic cells.
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -price_tol;
        for i in 0..m {
            for j in 0..k {
                if !basic[i * k + j] {
                    let r = cost[i * k + j] - u[i] - v[j];
                    if r < best {
                        best = r;
                        entering = Some((i, j));
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let mut flows = Vec::new();
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..k {
                    let q = x[i * k + j];
                    if q > 0.0 {
                        flows.push((i, j, q));
                        total += cost[i * k + j] * q;
                    }
                }
            }
            return Ok(TransportPlan { cost: total, flows });
        };

        // Unique tree path from row ei to column ej.
        let mut parent = vec![usize::MAX; m + k];
        parent[ei] = ei;
        let mut queue = vec![ei];
        while let Some(node) = queue.pop() {
            if node == m + ej {
                break;
            }
            if node < m {
                for &j in &row_arcs[node] {
                    if parent[m + j] == usize::MAX {
                        parent[m + j] = node;
                        queue.push(m + j);
                    }
                }
            } else {
                for &i in &col_arcs[node - m] {
                    if parent[i] == usize::MAX {
                        parent[i] = node;
                        queue.push(i);
                    }
                }
            }
        }
        debug_assert_ne!(parent[m + ej], usize::MAX, "basis must be connected");
        let mut path = vec![m + ej];
        while *path.last().unwrap() != ei {
            path.push(parent[*path.last().unwrap()]);
        }
        path.reverse(); // row ei, col j1, row i2, ..., col ej

        // Cells along the path alternate -theta, +theta, ... starting at the
        // arc leaving row ei; the entering cell takes +theta.
        let mut minus_cells: Vec<(usize, usize)> = Vec::new();
        let mut plus_cells: Vec<(usize, usize)> = vec![(ei, ej)];
        for (step, pair) in path.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let cell = if a < m { (a, b - m) } else { (b, a - m) };
            if step % 2 == 0 {
                minus_cells.push(cell);
            } else {
                plus_cells.push(cell);
            }
        }

        let mut theta = f64::INFINITY;
        let mut leaving = minus_cells[0];
        for &(i, j) in &minus_cells {
            let q = x[i * k + j];
            if q < theta - 1e-15 || (q <= theta + 1e-15 && (i, j) < leaving) {
                theta = theta.min(q);
                leaving = (i, j);
            }
        }
        for &(i, j) in &plus_cells {
            x[i * k + j] += theta;
        }
        for &(i, j) in &minus_cells {
            x[i * k + j] -= theta;
        }
        x[leaving.0 * k + leaving.1] = 0.0;
        basic[leaving.0 * k + leaving.1] = false;
        basic[ei * k + ej] = true;
    }
    Err(TransportError::IterationLimit)
}
