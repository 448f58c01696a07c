//! Derivative-free Nelder–Mead minimization.

#[derive(Clone, Debug)]
pub struct NelderMead {
    /// Stop when `max f - min f` over the simplex falls below this.
    pub tol: f64,
    pub max_evals: usize,
    /// Edge length of the axis-aligned starting simplex.
    pub initial_step: f64,
    /// Number of restarts from the best vertex after convergence.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            tol: 1e-7,
            max_evals: 6000,
            initial_step: 0.25,
            restarts: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        // Non-finite objective values are treated as +inf so the simplex
        // retreats from them.
        let mut evals = 0usize;
        let mut eval = |x: &[f64]| {
            evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        if x0.is_empty() {
            let value = eval(x0);
            return Minimum {
                x: Vec::new(),
                value,
                evals: 1,
                converged: value.is_finite(),
            };
        }

        let mut best = x0.to_vec();
        let mut best_val = eval(&best);
        let mut converged = false;
        let mut step = self.initial_step;
        for round in 0..=self.restarts {
            let (x, v, ok) = self.run(&mut eval, &best, best_val, step);
            let improved = best_val - v;
            if v <= best_val {
                best = x;
                best_val = v;
            }
            converged = ok;
            if !ok || (round > 0 && improved < self.tol) {
                break;
            }
            step = (step * 0.5).max(1e-3);
        }
        Minimum {
            x: best,
            value: best_val,
            evals,
            converged,
        }
    }

    fn run<E>(&self, eval: &mut E, x0: &[f64], f0: f64, step: f64) -> (Vec<f64>, f64, bool)
    where
        E: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), f0));
        for j in 0..n {
            let mut x = x0.to_vec();
            x[j] += step;
            let v = eval(&x);
            simplex.push((x, v));
        }
        let mut used = n + 1;
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            if spread.is_finite() && spread < self.tol {
                let (x, v) = simplex.swap_remove(0);
                return (x, v, true);
            }
            if used >= self.max_evals {
                let (x, v) = simplex.swap_remove(0);
                return (x, v, false);
            }

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let along = |t: f64, worst: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let worst = simplex[n].0.clone();
            let reflected = along(REFLECT, &worst);
            let fr = eval(&reflected);
            used += 1;
            if fr < simplex[0].1 {
                let expanded = along(EXPAND, &worst);
                let fe = eval(&expanded);
                used += 1;
                simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
                continue;
            }
            let (contracted, fc) = if fr < simplex[n].1 {
                let x = along(CONTRACT, &worst);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(-CONTRACT, &worst);
                let v = eval(&x);
                (x, v)
            };
            used += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
                continue;
            }
            let anchor = simplex[0].0.clone();
            for (x, v) in simplex.iter_mut().skip(1) {
                for (xi, ai) in x.iter_mut().zip(&anchor) {
                    *xi = ai + SHRINK * (*xi - ai);
                }
                *v = eval(x);
                used += 1;
            }
        }
    }
}
