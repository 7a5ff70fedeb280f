//! Multi-start Nelder–Mead over the scaled probability simplex
//! `{u ≥ 0, Σu = total}`.
//!
//! The search runs in the first `d − 1` coordinates (the last one takes the
//! remaining budget) and every trial point is Euclidean-projected back onto
//! the simplex before evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

/// Knobs of the multi-start direct search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Number of starting points: equal split, then vertex-heavy corners,
    /// then random interior points.
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the simplex's objective spread and diameter (relative to
    /// the budget) both fall below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            restarts: 8,
            max_iterations: 200,
            tolerance: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub restarts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best value found so far, after every iteration of every restart.
    pub history: Vec<f64>,
}

/// Euclidean projection onto `{u ≥ 0, Σu = total}`.
pub fn project_to_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - total) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn lift(x: &[f64], total: f64) -> Vec<f64> {
    let mut full = x.to_vec();
    full.push(total - x.iter().sum::<f64>());
    project_to_simplex(&full, total)
}

fn starting_points(dim: usize, total: f64, params: &SolverParams) -> Vec<Vec<f64>> {
    let count = params.restarts.max(1);
    let mut starts = vec![vec![total / dim as f64; dim]];
    let heavy = 0.7;
    for corner in 0..dim {
        if starts.len() >= count {
            break;
        }
        let rest = if dim > 1 { (1.0 - heavy) / (dim - 1) as f64 } else { 0.0 };
        starts.push(
            (0..dim)
                .map(|j| total * if j == corner { heavy } else { rest })
                .collect(),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    while starts.len() < count {
        // Uniform on the simplex: normalized exponentials.
        let e: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = e.iter().sum();
        starts.push(e.iter().map(|x| total * x / s).collect());
    }
    starts
}

/// Minimizes `f` over `{u ∈ R^dim, u ≥ 0, Σu = total}`.
pub fn minimize_on_simplex<F>(f: F, dim: usize, total: f64, params: &SolverParams) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    assert!(dim >= 1, "need at least one coordinate");
    if dim == 1 {
        let point = vec![total];
        let value = f(&point);
        return SimplexResult {
            point,
            value,
            restarts: 1,
            iterations: 0,
            evaluations: 1,
            history: vec![value],
        };
    }
    let mut best_point = Vec::new();
    let mut best_value = f64::INFINITY;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut evaluations = 0;
    let starts = starting_points(dim, total, params);
    let restarts = starts.len();
    for start in starts {
        let run = nelder_mead(&f, &start[..dim - 1], total, params);
        iterations += run.iterations;
        evaluations += run.evaluations;
        for v in run.history {
            history.push(v.min(best_value));
        }
        if run.value < best_value {
            best_value = run.value;
            best_point = run.point;
        }
    }
    SimplexResult {
        point: best_point,
        value: best_value,
        restarts,
        iterations,
        evaluations,
        history,
    }
}

struct Run {
    point: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    history: Vec<f64>,
}

fn nelder_mead<F>(f: &F, x0: &[f64], total: f64, params: &SolverParams) -> Run
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(&lift(x, total))
    };
    let step = 0.1 * total;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for j in 0..n {
        let mut x = x0.to_vec();
        // Step toward the interior of the budget.
        x[j] += if x0[j] > 0.5 * total { -step } else { step };
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < params.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (worst - best).abs() <= params.tolerance * (best.abs() + params.tolerance)
            && diameter <= params.tolerance.sqrt() * total
        {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = along(0.5);
                let v = eval(&c);
                (c, v)
            } else {
                let c = along(-0.5);
                let v = eval(&c);
                (c, v)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = anchor
                        .iter()
                        .zip(&vertex.0)
                        .map(|(a, v)| a + 0.5 * (v - a))
                        .collect();
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
        history.push(simplex.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min));
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Run {
        point: lift(&x, total),
        value,
        iterations,
        evaluations,
        history,
    }
}
