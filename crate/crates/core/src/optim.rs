//! Unconstrained minimizers used by the maximum-likelihood search: a
//! limited-memory quasi-Newton method (L-BFGS with a strong-Wolfe line
//! search) and a derivative-free Nelder-Mead simplex as a robustness
//! fallback. Both are deterministic functions of their inputs.

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone)]
pub struct OptimConfig<T> {
    /// Number of curvature pairs kept by L-BFGS.
    pub memory: usize,
    pub max_iters: usize,
    /// Converged when `||g||_inf <= grad_tol · (1 + |f|)`.
    pub grad_tol: T,
    /// ... or when the relative objective change and the step both stall.
    pub f_rel_tol: T,
    pub step_tol: T,
}

impl<T: Scalar> Default for OptimConfig<T> {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 50_000,
            grad_tol: lit(1e-8),
            f_rel_tol: lit(1e-10),
            step_tol: lit(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad_inf_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).fold(T::zero(), |s, v| s + v)
}

fn inf_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
}

/// Strong-Wolfe line search (bracket and zoom). Returns the accepted step and
/// the objective/gradient at the new point, or `None` if no acceptable step
/// was found.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<T: Scalar, F: FnMut(&[T], &mut [T]) -> T>(
    f: &mut F,
    x: &[T],
    dir: &[T],
    f0: T,
    g0_dot_d: T,
    mut alpha: T,
    grad_buf: &mut [T],
    x_buf: &mut [T],
) -> Option<(T, T)> {
    let c1 = lit::<T>(1e-4);
    let c2 = lit::<T>(0.9);
    let mut eval = |alpha: T, grad: &mut [T], xb: &mut [T]| -> (T, T) {
        for ((xi, &x0), &d) in xb.iter_mut().zip(x).zip(dir) {
            *xi = x0 + alpha * d;
        }
        let fv = f(xb, grad);
        (fv, dot(grad, dir))
    };

    let mut f_lo = f0;
    let mut g_lo = g0_dot_d;
    let mut alpha_prev = T::zero();
    let mut f_prev = f0;

    // Bracketing phase.
    let mut bracket = None;
    for i in 0..30 {
        let (fv, gv) = eval(alpha, grad_buf, x_buf);
        if !fv.is_finite() || fv > f0 + c1 * alpha * g0_dot_d || (i > 0 && fv >= f_prev) {
            bracket = Some((alpha_prev, alpha, f_prev));
            break;
        }
        if gv.abs() <= -c2 * g0_dot_d {
            return Some((alpha, fv));
        }
        if gv >= T::zero() {
            bracket = Some((alpha, alpha_prev, fv));
            break;
        }
        alpha_prev = alpha;
        f_prev = fv;
        alpha = alpha * lit::<T>(2.0);
    }
    let (mut lo, mut hi, _) = bracket?;
    if lo != T::zero() {
        // Gradient·dir at lo is stale here; re-evaluate for the zoom loop.
        let (flo, glo) = eval(lo, grad_buf, x_buf);
        f_lo = flo;
        g_lo = glo;
    }

    // Zoom phase.
    for _ in 0..50 {
        let mid = (lo + hi) * lit::<T>(0.5);
        if (hi - lo).abs() <= lit::<T>(1e-16) * (T::one() + lo.abs()) {
            break;
        }
        let (fv, gv) = eval(mid, grad_buf, x_buf);
        if !fv.is_finite() || fv > f0 + c1 * mid * g0_dot_d || fv >= f_lo {
            hi = mid;
        } else {
            if gv.abs() <= -c2 * g0_dot_d {
                return Some((mid, fv));
            }
            if gv * (hi - lo) >= T::zero() {
                hi = lo;
            }
            lo = mid;
            f_lo = fv;
            g_lo = gv;
        }
    }
    // Fall back to the best sufficient-decrease point found, if any.
    if lo > T::zero() && f_lo < f0 && g_lo.is_finite() {
        let (fv, _) = eval(lo, grad_buf, x_buf);
        return Some((lo, fv));
    }
    None
}

/// Minimizes `f` (which must also write its gradient) from `x0`.
pub fn lbfgs<T: Scalar, F: FnMut(&[T], &mut [T]) -> T>(
    mut f: F,
    x0: Vec<T>,
    cfg: &OptimConfig<T>,
) -> OptimOutcome<T> {
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![T::zero(); n];
    let mut fx = f(&x, &mut grad);

    let mut s_list: Vec<Vec<T>> = Vec::new();
    let mut y_list: Vec<Vec<T>> = Vec::new();
    let mut rho_list: Vec<T> = Vec::new();

    let mut x_buf = vec![T::zero(); n];
    let mut grad_new = vec![T::zero(); n];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        iterations = iter;
        if inf_norm(&grad) <= cfg.grad_tol * (T::one() + fx.abs()) {
            converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        let mut q = grad.clone();
        let k = s_list.len();
        let mut alphas = vec![T::zero(); k];
        for i in (0..k).rev() {
            let a = rho_list[i] * dot(&s_list[i], &q);
            alphas[i] = a;
            for (qj, yj) in q.iter_mut().zip(&y_list[i]) {
                *qj = *qj - a * *yj;
            }
        }
        if k > 0 {
            let last = k - 1;
            let ys = dot(&s_list[last], &y_list[last]);
            let yy = dot(&y_list[last], &y_list[last]);
            if yy > T::zero() {
                let gamma = ys / yy;
                for qj in q.iter_mut() {
                    *qj = *qj * gamma;
                }
            }
        }
        for i in 0..k {
            let b = rho_list[i] * dot(&y_list[i], &q);
            let a = alphas[i];
            for (qj, sj) in q.iter_mut().zip(&s_list[i]) {
                *qj = *qj + (a - b) * *sj;
            }
        }
        let mut dir: Vec<T> = q.iter().map(|&v| -v).collect();
        let mut g_dot_d = dot(&grad, &dir);
        if !(g_dot_d < T::zero()) {
            // Not a descent direction; restart from steepest descent.
            s_list.clear();
            y_list.clear();
            rho_list.clear();
            dir = grad.iter().map(|&v| -v).collect();
            g_dot_d = dot(&grad, &dir);
            if !(g_dot_d < T::zero()) {
                converged = inf_norm(&grad) <= cfg.grad_tol * (T::one() + fx.abs());
                break;
            }
        }

        let init_step = if k == 0 {
            // First step: conservative scale.
            let gn = inf_norm(&grad);
            (T::one() / (T::one() + gn)).min(T::one())
        } else {
            T::one()
        };

        let Some((alpha, f_new)) = wolfe_search(
            &mut f,
            &x,
            &dir,
            fx,
            g_dot_d,
            init_step,
            &mut grad_new,
            &mut x_buf,
        ) else {
            // Line search failed: give steepest descent one chance, then stop.
            if k > 0 {
                s_list.clear();
                y_list.clear();
                rho_list.clear();
                continue;
            }
            converged = inf_norm(&grad) <= cfg.grad_tol * (T::one() + fx.abs());
            break;
        };

        let mut s = vec![T::zero(); n];
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let x_new = x[i] + alpha * dir[i];
            s[i] = x_new - x[i];
            y[i] = grad_new[i] - grad[i];
            x[i] = x_new;
        }
        let f_prev = fx;
        fx = f_new;
        grad.copy_from_slice(&grad_new);

        let ys = dot(&s, &y);
        let s_norm = inf_norm(&s);
        if ys > lit::<T>(1e-10) * s_norm * inf_norm(&y) {
            s_list.push(s.clone());
            y_list.push(y);
            rho_list.push(T::one() / ys);
            if s_list.len() > cfg.memory {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
        }

        let f_stalled = (f_prev - fx).abs() <= cfg.f_rel_tol * (T::one() + fx.abs());
        let x_stalled = s_norm <= cfg.step_tol * (T::one() + inf_norm(&x));
        if f_stalled && x_stalled {
            converged = true;
            iterations = iter + 1;
            break;
        }
    }

    let grad_inf_norm = inf_norm(&grad);
    OptimOutcome {
        x,
        f: fx,
        grad_inf_norm,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct SimplexConfig<T> {
    pub max_iters: usize,
    /// Converged when the simplex objective spread falls below
    /// `f_tol · (1 + |f_best|)`.
    pub f_tol: T,
    /// Initial displacement per coordinate when building the simplex.
    pub init_step: T,
}

impl<T: Scalar> Default for SimplexConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            f_tol: lit(1e-12),
            init_step: lit(0.05),
        }
    }
}

/// Classic Nelder-Mead simplex minimization.
pub fn nelder_mead<T: Scalar, F: FnMut(&[T]) -> T>(
    mut f: F,
    x0: Vec<T>,
    cfg: &SimplexConfig<T>,
) -> OptimOutcome<T> {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (T::one(), lit::<T>(2.0), lit::<T>(0.5), lit::<T>(0.5));

    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    simplex.push(x0.clone());
    for i in 0..n {
        let mut p = x0.clone();
        p[i] = p[i] + cfg.init_step * (T::one() + p[i].abs());
        simplex.push(p);
    }
    let mut values: Vec<T> = simplex.iter().map(|p| f(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..cfg.max_iters {
        iterations = iter;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if (values[worst] - values[best]).abs() <= cfg.f_tol * (T::one() + values[best].abs()) {
            converged = true;
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![T::zero(); n];
        for &idx in &order[..n] {
            for (c, &xi) in centroid.iter_mut().zip(&simplex[idx]) {
                *c = *c + xi;
            }
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        for c in centroid.iter_mut() {
            *c = *c * inv;
        }

        let blend = |a: &[T], b: &[T], w: T| -> Vec<T> {
            a.iter().zip(b).map(|(&ai, &bi)| ai + w * (ai - bi)).collect()
        };

        let reflected = blend(&centroid, &simplex[worst], alpha);
        let f_reflected = f(&reflected);
        if f_reflected < values[best] {
            let expanded = blend(&centroid, &simplex[worst], gamma);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        // Contraction.
        let contracted: Vec<T> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(&c, &w)| c + rho * (w - c))
            .collect();
        let f_contracted = f(&contracted);
        if f_contracted < values[worst] {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        // Shrink toward the best point.
        let best_point = simplex[best].clone();
        for idx in 0..=n {
            if idx == best {
                continue;
            }
            for (xi, &bi) in simplex[idx].iter_mut().zip(&best_point) {
                *xi = bi + sigma * (*xi - bi);
            }
            values[idx] = f(&simplex[idx]);
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    OptimOutcome {
        x: simplex.swap_remove(best),
        f: values[best],
        grad_inf_norm: T::nan(),
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64], grad: &mut [f64]) -> f64 {
        // f = Σ c_i (x_i - t_i)², anisotropic.
        let targets = [1.0, -2.0, 0.5, 3.0];
        let coeffs = [1.0, 10.0, 0.1, 4.0];
        let mut f = 0.0;
        for i in 0..x.len() {
            let d = x[i] - targets[i];
            f += coeffs[i] * d * d;
            grad[i] = 2.0 * coeffs[i] * d;
        }
        f
    }

    #[test]
    fn lbfgs_minimizes_quadratic() {
        let out = lbfgs(quadratic, vec![0.0; 4], &OptimConfig::default());
        assert!(out.converged);
        assert!(out.f < 1e-14);
        assert!((out.x[1] - -2.0).abs() < 1e-7);
    }

    #[test]
    fn lbfgs_minimizes_rosenbrock() {
        let rosenbrock = |x: &[f64], g: &mut [f64]| -> f64 {
            let (a, b) = (1.0, 100.0);
            let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
            f
        };
        let out = lbfgs(rosenbrock, vec![-1.2, 1.0], &OptimConfig::default());
        assert!(out.f < 1e-12, "f = {}", out.f);
        assert!((out.x[0] - 1.0).abs() < 1e-5);
        assert!((out.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn lbfgs_is_deterministic() {
        let a = lbfgs(quadratic, vec![0.3; 4], &OptimConfig::default());
        let b = lbfgs(quadratic, vec![0.3; 4], &OptimConfig::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn nelder_mead_minimizes_quadratic() {
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2);
        let out = nelder_mead(f, vec![0.0, 0.0], &SimplexConfig::default());
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-5);
        assert!((out.x[1] + 1.0).abs() < 1e-5);
    }
}
