//! Small box-constrained minimisers.
//!
//! `minimize_box` is a projected BFGS with central-difference gradients and
//! an Armijo backtracking line search. Coordinates sitting on a bound whose
//! gradient points outward are frozen for the step. `minimize_scalar` is a
//! grid scan followed by golden-section refinement.

/// Box bounds for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo < hi);
        Bound { lo, hi }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Whether `x` sits within `tol` of either end.
    pub fn on_boundary(&self, x: f64, tol: f64) -> bool {
        x - self.lo <= tol || self.hi - x <= tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Absolute tolerance on the projected gradient's largest component.
    pub grad_tol: f64,
    /// Largest step in any coordinate per iteration.
    pub max_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { rel_tol: 1e-9, max_iter: 500, grad_tol: 1e-5, max_step: 4.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iteration, starting with the initial point.
    pub history: Vec<f64>,
    pub projected_grad_norm: f64,
}

/// Central-difference gradient, one-sided where a bound is in the way.
pub fn numeric_gradient<F>(f: &F, x: &[f64], fx: f64, bounds: &[Bound]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let b = bounds[i];
        let up = (x[i] + h).min(b.hi);
        let down = (x[i] - h).max(b.lo);
        work[i] = up;
        let f_up = f(&work);
        work[i] = down;
        let f_down = f(&work);
        work[i] = x[i];
        g[i] = if f_up.is_finite() && f_down.is_finite() && up > down {
            (f_up - f_down) / (up - down)
        } else if f_up.is_finite() && up > x[i] {
            (f_up - fx) / (up - x[i])
        } else if f_down.is_finite() && down < x[i] {
            (fx - f_down) / (x[i] - down)
        } else {
            0.0
        };
    }
    g
}

fn projected_gradient(g: &[f64], x: &[f64], bounds: &[Bound]) -> Vec<f64> {
    g.iter()
        .zip(x)
        .zip(bounds)
        .map(|((&gi, &xi), b)| {
            let at_lo = xi - b.lo <= 1e-12 * (1.0 + b.lo.abs());
            let at_hi = b.hi - xi <= 1e-12 * (1.0 + b.hi.abs());
            if (at_lo && gi > 0.0) || (at_hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` over the box starting from `x0` (clamped into the box).
pub fn minimize_box<F>(f: F, x0: &[f64], bounds: &[Bound], opts: &MinimizeOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(n, bounds.len());
    let mut x: Vec<f64> = x0.iter().zip(bounds).map(|(&v, b)| b.clamp(v)).collect();
    let mut fx = f(&x);
    let mut history = vec![fx];
    if !fx.is_finite() || n == 0 {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: n == 0 && fx.is_finite(),
            history,
            projected_grad_norm: f64::NAN,
        };
    }
    let mut g = numeric_gradient(&f, &x, fx, bounds);
    let mut pg = projected_gradient(&g, &x, bounds);
    let mut h_inv = identity(n);
    let mut converged = inf_norm(&pg) <= opts.grad_tol;
    let mut iterations = 0;
    let mut small_steps = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut d = mat_vec(&h_inv, &g).into_iter().map(|v| -v).collect::<Vec<_>>();
        freeze_active(&mut d, &x, &g, bounds);
        if dot(&d, &g) >= 0.0 {
            h_inv = identity(n);
            d = pg.iter().map(|v| -v).collect();
        }
        let longest = inf_norm(&d);
        if longest == 0.0 {
            converged = true;
            break;
        }
        let mut alpha = if longest > opts.max_step { opts.max_step / longest } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> =
                x.iter().zip(&d).zip(bounds).map(|((&xi, &di), b)| b.clamp(xi + alpha * di)).collect();
            let ft = f(&trial);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (t, xi))| gi * (t - xi)).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * decrease.min(0.0) && ft <= fx {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // No descent possible along any direction we can build: stationary up to noise.
            converged = inf_norm(&pg) <= opts.grad_tol.max(1e-3);
            break;
        };
        let g_new = numeric_gradient(&f, &x_new, f_new, bounds);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if iterations == 1 {
                let scale = sy / dot(&y, &y);
                h_inv = identity(n).into_iter().map(|row| row.into_iter().map(|v| v * scale).collect()).collect();
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        let rel_change = (fx - f_new).abs() / (fx.abs() + opts.rel_tol);
        x = x_new;
        fx = f_new;
        g = g_new;
        pg = projected_gradient(&g, &x, bounds);
        history.push(fx);
        let pg_norm = inf_norm(&pg);
        small_steps = if rel_change <= opts.rel_tol { small_steps + 1 } else { 0 };
        if pg_norm <= opts.grad_tol || (small_steps >= 2 && pg_norm <= 1e-3) {
            converged = true;
        }
    }
    Minimum { x, value: fx, iterations, converged, history, projected_grad_norm: inf_norm(&pg) }
}

fn freeze_active(d: &mut [f64], x: &[f64], g: &[f64], bounds: &[Bound]) {
    for i in 0..d.len() {
        let b = bounds[i];
        let at_lo = x[i] <= b.lo && (d[i] < 0.0 || g[i] > 0.0);
        let at_hi = x[i] >= b.hi && (d[i] > 0.0 || g[i] < 0.0);
        if at_lo || at_hi {
            d[i] = 0.0;
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Inverse-Hessian BFGS update: `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

/// Minimises a function of one variable on `[lo, hi]`: scan `grid` evenly
/// spaced points, then golden-section search around the best one.
pub fn minimize_scalar<F>(f: F, lo: f64, hi: f64, grid: usize, tol: f64) -> (f64, f64, usize)
where
    F: Fn(f64) -> f64,
{
    let grid = grid.max(3);
    let step = (hi - lo) / (grid - 1) as f64;
    let pts: Vec<f64> = (0..grid).map(|k| if k == grid - 1 { hi } else { lo + step * k as f64 }).collect();
    let vals: Vec<f64> = pts.iter().map(|&t| f(t)).collect();
    let mut evals = grid;
    let best = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let mut a = pts[best.saturating_sub(1)];
    let mut b = pts[(best + 1).min(grid - 1)];
    let (mut x_best, mut f_best) = (pts[best], vals[best]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    evals += 2;
    while (b - a).abs() > tol * (1.0 + x_best.abs()) && evals < 500 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < f_best {
            x_best = x;
            f_best = v;
        }
    }
    (x_best, f_best, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let b = vec![Bound::new(-5.0, 5.0); 2];
        let m = minimize_box(f, &[-1.2, 1.0], &b, &MinimizeOptions::default());
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn active_bound() {
        // Unconstrained minimum at (-3, 2); the box stops x at -1.
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 2.0).powi(2);
        let b = vec![Bound::new(-1.0, 4.0), Bound::new(-4.0, 4.0)];
        let m = minimize_box(f, &[1.0, 0.0], &b, &MinimizeOptions::default());
        assert!((m.x[0] + 1.0).abs() < 1e-12);
        assert!((m.x[1] - 2.0).abs() < 1e-5);
        assert!(b[0].on_boundary(m.x[0], 1e-9));
        assert!(m.converged);
    }

    #[test]
    fn infinite_start_is_reported() {
        let f = |_: &[f64]| f64::INFINITY;
        let m = minimize_box(f, &[0.0], &[Bound::new(-1.0, 1.0)], &MinimizeOptions::default());
        assert!(!m.converged);
    }

    #[test]
    fn scalar_minimum() {
        let (x, v, _) = minimize_scalar(|t| (t - 0.3).powi(2) + 1.0, 0.0, 2.0, 20, 1e-12);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-14);
        let (x, _, _) = minimize_scalar(|t| t, 0.5, 2.0, 10, 1e-12);
        assert_eq!(x, 0.5);
    }
}
