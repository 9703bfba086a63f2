use crate::{Error, Result};

/// Largest set size solved by exact assignment.
pub const EXACT_OT_LIMIT: usize = 512;
/// Entropic regularisation used above [`EXACT_OT_LIMIT`].
pub const SINKHORN_EPSILON: f64 = 1e-3;
pub const SINKHORN_ITERS: usize = 1000;

fn check_sets(a: &[f64], b: &[f64], dims: usize) -> Result<usize> {
    if dims == 0 || !a.len().is_multiple_of(dims) || !b.len().is_multiple_of(dims) {
        return Err(Error::Config("point arrays are not multiples of dims".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "optimal transport needs equal set sizes, got {} and {}",
            a.len() / dims,
            b.len() / dims
        )));
    }
    Ok(a.len() / dims)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `n x n` squared Euclidean costs, row-major.
pub fn cost_matrix(a: &[f64], b: &[f64], dims: usize) -> Vec<f64> {
    let n = a.len() / dims;
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = sq_dist(&a[i * dims..(i + 1) * dims], &b[j * dims..(j + 1) * dims]);
        }
    }
    c
}

/// Minimum mean squared-Euclidean matching cost between equal-size point sets.
///
/// Exact assignment up to [`EXACT_OT_LIMIT`] points; log-domain Sinkhorn with
/// regularisation [`SINKHORN_EPSILON`] and [`SINKHORN_ITERS`] iterations above.
pub fn ot_distance(a: &[f64], b: &[f64], dims: usize) -> Result<f64> {
    let n = check_sets(a, b, dims)?;
    if n == 0 {
        return Ok(0.0);
    }
    let cost = cost_matrix(a, b, dims);
    if n <= EXACT_OT_LIMIT {
        let assign = assignment(&cost, n);
        Ok(assignment_cost(&cost, n, &assign))
    } else {
        Ok(sinkhorn(&cost, n, SINKHORN_EPSILON, SINKHORN_ITERS))
    }
}

/// Mean cost of a permutation, summed in row order.
pub fn assignment_cost(cost: &[f64], n: usize, assign: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &j) in assign.iter().enumerate() {
        total += cost[i * n + j];
    }
    total / n as f64
}

/// Minimum-cost perfect matching by shortest augmenting paths with row and
/// column potentials. Returns `assign[row] = col`.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Entropic OT cost `sum_ij P_ij C_ij` with uniform marginals `1/n`.
pub fn sinkhorn(cost: &[f64], n: usize, eps: f64, iters: usize) -> f64 {
    let log_mu = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let lse = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = vals.collect();
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return m;
        }
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    for _ in 0..iters {
        for i in 0..n {
            f[i] = eps * log_mu - eps * lse(&mut (0..n).map(|j| (g[j] - cost[i * n + j]) / eps));
        }
        for j in 0..n {
            g[j] = eps * log_mu - eps * lse(&mut (0..n).map(|i| (f[i] - cost[i * n + j]) / eps));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = cost[i * n + j];
            total += ((f[i] + g[j] - c) / eps).exp() * c;
        }
    }
    total
}
