//! Min-norm point of the convex hull of gradient rows.
//!
//! For a stack `W` of `M` gradient rows the common-descent direction is
//! `-W^T lambda*` with `lambda* = argmin_{lambda in simplex} |W^T lambda|^2`.
//! The dual is solved with Frank-Wolfe and exact line search on the Gram
//! matrix, so each iteration costs `O(M)` after an `O(M^2 N)` setup.

use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::problems::MooProblem;

/// `M x N` stack of per-objective gradient rows, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradientMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols < 1 {
            return Err(Error::invalid(format!(
                "gradient matrix needs at least 2 rows and 1 column, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "gradient matrix",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient matrix entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(GradientMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("gradient matrix", "rows have different lengths"));
        }
        GradientMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `W W^T`, row-major `M x M`.
    pub fn gram(&self) -> Vec<f64> {
        let m = self.rows;
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = dot(self.row(i), self.row(j));
                g[i * m + j] = v;
                g[j * m + i] = v;
            }
        }
        g
    }

    /// `sum_i weights[i] * row_i`.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, w) in weights.iter().enumerate() {
            for (o, r) in out.iter_mut().zip(self.row(i)) {
                *o += w * r;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| dot(self.row(i), self.row(i)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> GradientMatrix {
        GradientMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| !(0.0..=1.0).contains(w))
            || (sum - 1.0).abs() > 1e-12
        {
            return Err(Error::invalid(format!("{weights:?} is not on the simplex")));
        }
        Ok(SimplexWeights(weights))
    }

    pub fn uniform(m: usize) -> Self {
        SimplexWeights(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinNormSolution {
    pub weights: SimplexWeights,
    /// `sum_i lambda_i w_i`.
    pub combined: Vec<f64>,
    /// `-combined`; every optimizer moves along this.
    pub descent_direction: Vec<f64>,
    pub dual_norm_sq: f64,
    /// Frank-Wolfe duality gap at the returned weights.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const DEFAULT_TOL: f64 = 1e-10;

pub fn default_max_iter(m: usize) -> usize {
    100 * m
}

/// Solves `min_{lambda in simplex} |W^T lambda|^2` by Frank-Wolfe with away
/// steps, which keeps convergence linear when the optimum sits on a face.
///
/// Starts at the uniform weights and stops once the duality gap is at most
/// `tol`. When `max_iter` runs out first the best iterate is still returned,
/// with `converged == false`.
pub fn solve_min_norm(w: &GradientMatrix, tol: f64, max_iter: usize) -> Result<MinNormSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let m = w.rows();
    let gram = w.gram();
    let mut lambda = vec![1.0 / m as f64; m];
    // gl = G lambda, quad = lambda^T G lambda
    let mut gl: Vec<f64> = (0..m).map(|i| dot(&gram[i * m..(i + 1) * m], &lambda)).collect();
    let mut quad = dot(&lambda, &gl);

    let mut iterations = 0;
    let mut gap;
    let mut converged = false;
    loop {
        let mut t = 0;
        for i in 1..m {
            if gl[i] < gl[t] {
                t = i;
            }
        }
        gap = 2.0 * (quad - gl[t]);
        if gap <= tol {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        // away vertex: worst objective among the weights still in use
        let mut a = t;
        for i in 0..m {
            if lambda[i] > 0.0 && (a == t || gl[i] > gl[a]) {
                a = i;
            }
        }
        if a != t && gl[a] - quad > quad - gl[t] && lambda[a] < 1.0 {
            // move mass away from `a`: lambda + gamma (lambda - e_a)
            let denom = quad - 2.0 * gl[a] + gram[a * m + a];
            let max_step = lambda[a] / (1.0 - lambda[a]);
            if !(denom > 0.0) {
                break;
            }
            let step = ((gl[a] - quad) / denom).clamp(0.0, max_step);
            for (i, l) in lambda.iter_mut().enumerate() {
                *l *= 1.0 + step;
                gl[i] = (1.0 + step) * gl[i] - step * gram[i * m + a];
            }
            lambda[a] -= step;
            if step == max_step {
                lambda[a] = 0.0;
            }
        } else {
            let denom = quad - 2.0 * gl[t] + gram[t * m + t];
            if !(denom > 0.0) {
                break;
            }
            let step = ((quad - gl[t]) / denom).clamp(0.0, 1.0);
            for (i, l) in lambda.iter_mut().enumerate() {
                *l *= 1.0 - step;
                gl[i] = (1.0 - step) * gl[i] + step * gram[i * m + t];
            }
            lambda[t] += step;
        }
        quad = dot(&lambda, &gl);
        iterations += 1;
    }

    // keep the weights exactly on the simplex after accumulated rounding
    lambda.iter_mut().for_each(|l| *l = l.clamp(0.0, 1.0));
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= total);

    let combined = w.combine(&lambda);
    let descent_direction = combined.iter().map(|v| -v).collect();
    let dual_norm_sq = dot(&combined, &combined);
    Ok(MinNormSolution {
        weights: SimplexWeights(lambda),
        combined,
        descent_direction,
        dual_norm_sq,
        gap: gap.max(0.0),
        iterations,
        converged,
    })
}

/// [`solve_min_norm`] with the default tolerance and iteration cap.
pub fn solve_min_norm_default(w: &GradientMatrix) -> Result<MinNormSolution> {
    solve_min_norm(w, DEFAULT_TOL, default_max_iter(w.rows()))
}

/// Closed-form weights for two rows.
pub fn min_norm_2obj_oracle(g1: &[f64], g2: &[f64]) -> Result<SimplexWeights> {
    if g1.len() != g2.len() {
        return Err(Error::shape("min_norm_2obj_oracle", format!("lengths {} and {}", g1.len(), g2.len())));
    }
    let diff: Vec<f64> = g2.iter().zip(g1).map(|(b, a)| b - a).collect();
    let denom = dot(&diff, &diff);
    if denom == 0.0 {
        return Ok(SimplexWeights(vec![1.0, 0.0]));
    }
    let l1 = (dot(&diff, g2) / denom).clamp(0.0, 1.0);
    Ok(SimplexWeights(vec![l1, 1.0 - l1]))
}

/// Exhaustive search over the grid of the simplex with step `1/resolution`.
/// Ties keep the first point in lexicographic order.
pub fn simplex_grid_oracle(w: &GradientMatrix, resolution: usize) -> Result<SimplexWeights> {
    let m = w.rows();
    if !(2..=3).contains(&m) {
        return Err(Error::Unsupported(format!("grid oracle supports 2 or 3 objectives, got {m}")));
    }
    if resolution < 10 {
        return Err(Error::invalid(format!("grid resolution must be at least 10, got {resolution}")));
    }
    let gram = w.gram();
    let quad = |l: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += l[i] * gram[i * m + j] * l[j];
            }
        }
        s
    };
    let r = resolution as f64;
    let mut best = f64::INFINITY;
    let mut best_l = vec![0.0; m];
    if m == 2 {
        for i in 0..=resolution {
            let l = [i as f64 / r, (resolution - i) as f64 / r];
            let v = quad(&l);
            if v < best {
                best = v;
                best_l = l.to_vec();
            }
        }
    } else {
        for i in 0..=resolution {
            for j in 0..=(resolution - i) {
                let k = resolution - i - j;
                let l = [i as f64 / r, j as f64 / r, k as f64 / r];
                let v = quad(&l);
                if v < best {
                    best = v;
                    best_l = l.to_vec();
                }
            }
        }
    }
    Ok(SimplexWeights(best_l))
}

/// `|W^T lambda|^2` for arbitrary weights.
pub fn dual_objective(w: &GradientMatrix, weights: &[f64]) -> f64 {
    let c = w.combine(weights);
    dot(&c, &c)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `|grad F(x)^T lambda*(x)|`, zero exactly at Pareto-critical points.
pub fn criticality_measure(problem: &dyn MooProblem, x: &[f64], tol: f64) -> Result<f64> {
    let jac = problem.full_jacobian(x)?;
    let sol = solve_min_norm(&jac, tol, default_max_iter(jac.rows()).max(1000))?;
    Ok(sol.dual_norm_sq.sqrt())
}
