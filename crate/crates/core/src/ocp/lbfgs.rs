//! Projected L-BFGS for smooth objectives over a box.
//!
//! Variables sitting on a bound with the gradient pushing outward are frozen
//! for the iteration; the two-loop recursion runs on the remaining ones and
//! the step is projected back onto the box during an Armijo backtracking
//! search.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub(crate) struct Options {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once `scale·‖projected gradient‖_∞` falls below this.
    pub gradient_tolerance: f64,
    pub gradient_scale: f64,
    /// Stop as soon as the objective is at or below this value.
    pub objective_target: Option<f64>,
}

#[derive(Debug, Clone)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub projected_gradient: f64,
    pub converged: bool,
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = if (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0) {
            0.0
        } else {
            g[i]
        };
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn amax(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Minimizes `fg` over `lower ≤ x ≤ upper` starting from `x0` (projected).
/// `fg` returns `None` when the objective is not finite at `x`.
pub(crate) fn minimize<F>(
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &Options,
    mut fg: F,
) -> Option<Outcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let m = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..x.len() {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut f, mut g) = fg(&x)?;
    let mut pg = vec![0.0; m];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;

    for _ in 0..opts.max_iterations {
        projected_gradient(&x, &g, lower, upper, &mut pg);
        let pg_norm = amax(&pg);
        if opts.gradient_scale * pg_norm <= opts.gradient_tolerance
            || opts.objective_target.is_some_and(|t| f <= t)
        {
            return Some(Outcome {
                x,
                f,
                projected_gradient: opts.gradient_scale * pg_norm,
                converged: true,
            });
        }

        // Two-loop recursion on the free variables.
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();
        let mut q: Vec<f64> = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * masked_dot(s, &q, &free);
            for i in 0..m {
                if free[i] {
                    q[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => {
                let yy = masked_dot(y, y, &free);
                if yy > 0.0 {
                    (masked_dot(s, y, &free) / yy).max(1e-12)
                } else {
                    1.0
                }
            }
            None => 1.0 / pg_norm.max(1e-300),
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * masked_dot(y, &q, &free);
            for i in 0..m {
                if free[i] {
                    q[i] += (a - b) * s[i];
                }
            }
        }
        let mut d: Vec<f64> = q
            .iter()
            .zip(&free)
            .map(|(v, &fr)| if fr { -v } else { 0.0 })
            .collect();
        if dot(&d, &pg) >= 0.0 {
            history.clear();
            let scale = 1.0 / pg_norm.max(1e-300);
            d = pg.iter().map(|v| -v * scale).collect();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut trial);
            let decrease: f64 = g
                .iter()
                .zip(trial.iter().zip(&x))
                .map(|(gi, (t, xi))| gi * (t - xi))
                .sum();
            if decrease < 0.0 {
                if let Some((ft, gt)) = fg(&trial) {
                    if ft <= f + 1e-4 * decrease {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            } else if decrease == 0.0 {
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            // No descent along the projected path: a stationary point up to
            // rounding, or a direction that has lost its quality.
            if !history.is_empty() {
                history.clear();
                continue;
            }
            return Some(Outcome {
                x,
                f,
                projected_gradient: opts.gradient_scale * pg_norm,
                converged: false,
            });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        if f - fnew <= 1e-15 * f.abs().max(1e-300) {
            stalls += 1;
        } else {
            stalls = 0;
        }
        x = xn;
        f = fnew;
        g = gn;
        if stalls >= 5 {
            projected_gradient(&x, &g, lower, upper, &mut pg);
            return Some(Outcome {
                x,
                f,
                projected_gradient: opts.gradient_scale * amax(&pg),
                converged: false,
            });
        }
    }
    projected_gradient(&x, &g, lower, upper, &mut pg);
    let pgn = opts.gradient_scale * amax(&pg);
    Some(Outcome {
        converged: pgn <= opts.gradient_tolerance,
        x,
        f,
        projected_gradient: pgn,
    })
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| x * y)
        .sum()
}
