//! Damped Gauss–Newton least squares with central-difference Jacobians.

use crate::num::Real;

pub const MAX_ITERATIONS: usize = 200;
const PARAM_TOL: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-10;
const MAX_DAMPING: f64 = 1e16;

/// Predictions for every data point, or `None` where the parameters leave
/// the model's domain.
pub(crate) trait Model<T> {
    fn predict(&self, params: &[T]) -> Option<Vec<T>>;
}

impl<T, F> Model<T> for F
where
    F: Fn(&[T]) -> Option<Vec<T>>,
{
    fn predict(&self, params: &[T]) -> Option<Vec<T>> {
        self(params)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution<T> {
    pub params: Vec<T>,
    /// Parameter covariance; `None` when the normal matrix is singular.
    pub covariance: Option<Vec<Vec<T>>>,
    pub cost: T,
    pub gradient_norm: T,
    pub converged: bool,
    pub iterations: usize,
    /// Cost after the start point and after every accepted step.
    pub history: Vec<T>,
}

fn relative_step<T: Real>() -> T {
    if T::epsilon() < T::lit(1e-10) {
        T::lit(1e-6)
    } else {
        T::epsilon().cbrt()
    }
}

fn weighted_residuals<T: Real>(pred: &[T], y: &[T], sqrt_w: &[T]) -> Vec<T> {
    pred.iter()
        .zip(y)
        .zip(sqrt_w)
        .map(|((&f, &yi), &s)| (f - yi) * s)
        .collect()
}

fn cost_of<T: Real>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Minimizes `Σ w_i (f_i(p) − y_i)²` from `start`. `scales` gives a
/// typical magnitude per parameter for differencing and the step test.
pub(crate) fn minimize<T: Real, M: Model<T>>(
    model: &M,
    y: &[T],
    weights: &[T],
    start: &[T],
    scales: &[T],
) -> Option<Solution<T>> {
    let n = start.len();
    let sqrt_w: Vec<T> = weights.iter().map(|w| w.sqrt()).collect();
    let mut params = start.to_vec();
    let mut residuals = weighted_residuals(&model.predict(&params)?, y, &sqrt_w);
    let mut cost = cost_of(&residuals);
    let mut history = vec![cost];
    let mut damping = T::lit(1e-3);
    let mut converged = false;
    let mut iterations = 0;
    let mut gradient_norm = T::infinity();

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let Some(jac) = jacobian(model, &params, scales, &sqrt_w) else {
            break;
        };
        let (normal, gradient) = normal_equations(&jac, &residuals, n);
        gradient_norm = gradient.iter().fold(T::zero(), |a, &g| a + g * g).sqrt();
        if gradient_norm < T::lit(GRAD_TOL) {
            converged = true;
            break;
        }

        let mut accepted = None;
        while damping < T::lit(MAX_DAMPING) {
            let mut damped = normal.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                let d = normal[i][i];
                row[i] = d + damping * if d > T::zero() { d } else { T::one() };
            }
            let rhs: Vec<T> = gradient.iter().map(|&g| -g).collect();
            if let Some(step) = solve(damped, rhs) {
                let trial: Vec<T> = params.iter().zip(&step).map(|(&p, &d)| p + d).collect();
                if let Some(pred) = model.predict(&trial) {
                    let r = weighted_residuals(&pred, y, &sqrt_w);
                    let c = cost_of(&r);
                    if c.is_finite() && c <= cost {
                        accepted = Some((trial, step, r, c));
                        break;
                    }
                }
            }
            damping *= T::lit(4.0);
        }

        let Some((trial, step, r, c)) = accepted else {
            break;
        };
        damping = (damping / T::lit(3.0)).max(T::lit(1e-12));
        let small_step = step
            .iter()
            .zip(&params)
            .zip(scales)
            .all(|((&d, &p), &s)| d.abs() <= T::lit(PARAM_TOL) * p.abs().max(s));
        params = trial;
        residuals = r;
        cost = c;
        history.push(cost);
        if small_step {
            converged = true;
            if let Some(jac) = jacobian(model, &params, scales, &sqrt_w) {
                let (_, g) = normal_equations(&jac, &residuals, n);
                gradient_norm = g.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
            }
            break;
        }
    }

    let covariance =
        jacobian(model, &params, scales, &sqrt_w).and_then(|jac| invert(normal_equations(&jac, &residuals, n).0));
    Some(Solution {
        params,
        covariance,
        cost,
        gradient_norm,
        converged,
        iterations,
        history,
    })
}

/// Weighted Jacobian of the residuals, one column per parameter.
fn jacobian<T: Real, M: Model<T>>(model: &M, params: &[T], scales: &[T], sqrt_w: &[T]) -> Option<Vec<Vec<T>>> {
    let rel = relative_step::<T>();
    let mut columns = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let h = rel * params[j].abs().max(scales[j]);
        let mut up = params.to_vec();
        let mut down = params.to_vec();
        up[j] += h;
        down[j] -= h;
        let fu = model.predict(&up)?;
        let fd = model.predict(&down)?;
        let two_h = (up[j] - down[j]).abs();
        columns.push(
            fu.iter()
                .zip(&fd)
                .zip(sqrt_w)
                .map(|((&a, &b), &s)| (a - b) / two_h * s)
                .collect(),
        );
    }
    Some(columns)
}

fn normal_equations<T: Real>(jac: &[Vec<T>], residuals: &[T], n: usize) -> (Vec<Vec<T>>, Vec<T>) {
    let mut normal = vec![vec![T::zero(); n]; n];
    let mut gradient = vec![T::zero(); n];
    for i in 0..n {
        for k in i..n {
            let v = jac[i].iter().zip(&jac[k]).fold(T::zero(), |a, (&x, &y)| a + x * y);
            normal[i][k] = v;
            normal[k][i] = v;
        }
        gradient[i] = jac[i].iter().zip(residuals).fold(T::zero(), |a, (&x, &r)| a + x * r);
    }
    (normal, gradient)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(T::zero(), |m, &v| m.max(v.abs()));
    if !(scale > T::zero()) || !scale.is_finite() {
        return None;
    }
    let tiny = scale * T::epsilon() * T::lit(16.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Greater)
        })?;
        if !(a[pivot][col].abs() > tiny) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (i, r) in lower.iter_mut().enumerate() {
            let row = col + 1 + i;
            let f = r[col] / pivot_row[col];
            for (x, &p) in r[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let s = (row + 1..n).fold(b[row], |acc, k| acc - a[row][k] * x[k]);
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(crate) fn invert<T: Real>(a: Vec<Vec<T>>) -> Option<Vec<Vec<T>>> {
    let n = a.len();
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        columns.push(solve(a.clone(), e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| columns[j][i]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_systems() {
        let a: Vec<Vec<f64>> = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(a.clone(), vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        let inv = invert(a).unwrap();
        assert!((inv[0][0] - 0.6).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn fits_a_line_exactly() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let model = |p: &[f64]| Some(x.iter().map(|v| p[0] * v + p[1]).collect::<Vec<_>>());
        let sol = minimize(&model, &y, &[1.0; 10], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(sol.converged);
        assert!((sol.params[0] - 3.0).abs() < 1e-9);
        assert!((sol.params[1] + 2.0).abs() < 1e-9);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
