//! Oracles that share no code with the library's LP path.
#![allow(dead_code)]

use lipfree::free_norm::WeightOperator;
use lipfree::DistMatrix;

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for c in col..n {
                        m[r][c] -= f * m[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / m[i][i]).collect())
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Vertices of `{f : f(base) = 0, f(i) − f(j) ≤ d(i, j)}`, as full vectors.
/// Each vertex makes `n − 1` independent constraints tight.
pub fn lipschitz_vertices(d: &DistMatrix, base: usize) -> Vec<Vec<f64>> {
    let n = d.len();
    if n == 1 {
        return vec![vec![0.0]];
    }
    let vars: Vec<usize> = (0..n).filter(|&x| x != base).collect();
    let var_of = |x: usize| vars.iter().position(|&v| v == x);
    // Rows (coefficients over vars, rhs).
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut c = vec![0.0; vars.len()];
                if let Some(k) = var_of(i) {
                    c[k] += 1.0;
                }
                if let Some(k) = var_of(j) {
                    c[k] -= 1.0;
                }
                rows.push((c, d.get(i, j)));
            }
        }
    }
    let mut verts: Vec<Vec<f64>> = Vec::new();
    let mut cur = Vec::new();
    combinations(rows.len(), vars.len(), 0, &mut cur, &mut |pick| {
        let m = pick.iter().map(|&r| rows[r].0.clone()).collect();
        let b = pick.iter().map(|&r| rows[r].1).collect();
        if let Some(x) = solve_dense(m, b) {
            let feasible = rows
                .iter()
                .all(|(c, rhs)| c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                let mut full = vec![0.0; n];
                for (k, &v) in vars.iter().enumerate() {
                    full[v] = x[k];
                }
                if !verts
                    .iter()
                    .any(|w| w.iter().zip(&full).all(|(a, b)| (a - b).abs() < 1e-9))
                {
                    verts.push(full);
                }
            }
        }
    });
    verts
}

/// `sup_{‖f‖ ≤ 1} Σ w_x f(x)` by enumerating vertices.
pub fn brute_free_norm(weights: &[f64], d: &DistMatrix, base: usize) -> f64 {
    lipschitz_vertices(d, base)
        .iter()
        .map(|f| f.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Free norm on points of the real line: `∫ |F(t)| dt`, `F` the cumulative
/// mass after moving the imbalance onto the base point.
pub fn line_free_norm(xs: &[f64], weights: &[f64], base: usize) -> f64 {
    let mut w = weights.to_vec();
    w[base] -= weights.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut acc = 0.0;
    let mut total = 0.0;
    for k in 0..order.len() - 1 {
        acc += w[order[k]];
        total += acc.abs() * (xs[order[k + 1]] - xs[order[k]]);
    }
    total
}

pub fn direct_lipschitz(f: &[f64], d: &DistMatrix) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            let gap = (f[i] - f[j]).abs();
            if gap > 0.0 {
                best = best.max(gap / d.get(i, j));
            }
        }
    }
    best
}

/// `sup_f Lip_{d_t}(W f)` over vertices of the unit ball of `Lip_0(A, d_a)`.
pub fn brute_operator_norm(w: &WeightOperator, d_a: &DistMatrix, d_t: &DistMatrix) -> f64 {
    lipschitz_vertices(d_a, w.base)
        .iter()
        .map(|f| {
            let image: Vec<f64> = w
                .rows
                .iter()
                .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
                .collect();
            direct_lipschitz(&image, d_t)
        })
        .fold(0.0, f64::max)
}
