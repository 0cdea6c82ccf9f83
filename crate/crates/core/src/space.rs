//! Construction of the guide-space.
//!
//! A guide-space is one real guide embedding `g_r` and `N` forgery guide
//! embeddings `g_f[i]` on the unit hypersphere of dimension `d`. Every forgery
//! embedding sits at the fixed angle `theta0` from `g_r`, and the forgery
//! embeddings are spread as far apart from each other as the constraint
//! allows, by minimising
//!
//! ```text
//! L(g_f) = 1/N * sum_i log sum_j exp(g_f[i] . g_f[j] / tau)
//! ```
//!
//! The angle constraint is enforced by writing
//! `g_f[i] = cos(theta0) g_r + sin(theta0) u[i]` with `u[i]` a unit vector
//! orthogonal to `g_r`, so every iterate is feasible. The objective is then
//! minimised by Riemannian gradient descent on the product of spheres with
//! backtracking line search. At a stationary point of this problem the
//! Lagrangian conditions hold: the gradient of `L` with respect to each
//! `g_f[i]` lies in the span of the constraint normals (`g_r` and `g_f[i]`),
//! which is what the stopping test checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, seeded};
use crate::vecops::{angle, axpy, dot, log_sum_exp, norm, normalize};

/// A solved configuration of guide embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideSpace {
    pub d: usize,
    #[serde(rename = "N")]
    pub num_forgery: usize,
    pub theta0_deg: f64,
    pub g_r: Vec<f64>,
    pub g_f: Vec<Vec<f64>>,
}

/// Diagnostics returned alongside a solved [`GuideSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_objective: f64,
    /// `max_i |g_r . g_f[i] - cos(theta0)|`.
    pub max_constraint_residual: f64,
    /// Largest norm of the objective gradient projected onto the tangent
    /// space of the constraint manifold.
    pub grad_norm: f64,
    pub pairwise_angles_deg: Vec<Vec<f64>>,
}

/// Tunables for [`solve_guide_space_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tau: f64,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub residual_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tau: 1.0,
            max_iterations: 10_000,
            grad_tolerance: 1e-6,
            residual_tolerance: 1e-6,
        }
    }
}

const NORM_TOLERANCE: f64 = 1e-9;
const ANGLE_TOLERANCE_RAD: f64 = 1e-4;

impl GuideSpace {
    /// Checks the unit-norm, fixed-angle and dimension invariants.
    pub fn validate(&self) -> Result<()> {
        if self.num_forgery == 0 {
            return Err(Error::InvalidArgument("guide-space needs N >= 1".into()));
        }
        if self.d < self.num_forgery {
            return Err(Error::DimensionTooSmall {
                dim: self.d,
                num_forgery: self.num_forgery,
            });
        }
        if self.g_f.len() != self.num_forgery {
            return Err(Error::ShapeMismatch(format!(
                "expected {} forgery embeddings, found {}",
                self.num_forgery,
                self.g_f.len()
            )));
        }
        let theta0 = self.theta0_deg.to_radians();
        for (name, v) in std::iter::once(("g_r".to_string(), &self.g_r))
            .chain(self.g_f.iter().enumerate().map(|(i, g)| (format!("g_f[{i}]"), g)))
        {
            if v.len() != self.d {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has length {}, expected {}",
                    v.len(),
                    self.d
                )));
            }
            if (norm(v) - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("{name} is not unit length")));
            }
        }
        for (i, g) in self.g_f.iter().enumerate() {
            if (angle(&self.g_r, g) - theta0).abs() > ANGLE_TOLERANCE_RAD {
                return Err(Error::InvalidArgument(format!(
                    "g_f[{i}] is not at theta0 from g_r"
                )));
            }
        }
        Ok(())
    }

    /// All guide embeddings, real first.
    pub fn embeddings(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.g_r.as_slice()).chain(self.g_f.iter().map(Vec::as_slice))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let gs: GuideSpace = serde_json::from_str(text)?;
        gs.validate()?;
        Ok(gs)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_inputs(d: usize, n: usize, theta0_deg: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    if d < n {
        return Err(Error::DimensionTooSmall {
            dim: d,
            num_forgery: n,
        });
    }
    if !(theta0_deg > 0.0 && theta0_deg < 180.0) {
        return Err(Error::InvalidArgument(format!(
            "theta0 must lie strictly between 0 and 180 degrees, got {theta0_deg}"
        )));
    }
    Ok(())
}

/// Solves the guide-space with `tau = 1` and default tolerances.
pub fn solve_guide_space(
    d: usize,
    num_forgery: usize,
    theta0_deg: f64,
    seed: u64,
) -> Result<(GuideSpace, SolverReport)> {
    solve_guide_space_with(d, num_forgery, theta0_deg, seed, SolverOptions::default())
}

pub fn solve_guide_space_with(
    d: usize,
    num_forgery: usize,
    theta0_deg: f64,
    seed: u64,
    opts: SolverOptions,
) -> Result<(GuideSpace, SolverReport)> {
    check_inputs(d, num_forgery, theta0_deg)?;
    if !(opts.tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    let theta0 = theta0_deg.to_radians();
    let (cos0, sin0) = (theta0.cos(), theta0.sin());

    let mut rng = seeded(seed);
    let mut g_r = gaussian_vec(&mut rng, d);
    normalize(&mut g_r);

    // Directions orthogonal to g_r.
    let mut u: Vec<Vec<f64>> = (0..num_forgery)
        .map(|_| {
            let mut v = gaussian_vec(&mut rng, d);
            project_unit(&mut v, &g_r);
            v
        })
        .collect();
    // With d = 2 the complement of g_r is {+e, -e}; descent cannot move
    // between the two points, so place the (at most two) directions apart.
    if d == 2 {
        for i in 1..num_forgery {
            u[i] = u[0].iter().map(|x| -x).collect();
        }
    }

    let embed = |u: &[Vec<f64>]| -> Vec<Vec<f64>> {
        u.iter()
            .map(|ui| {
                let mut g: Vec<f64> = g_r.iter().map(|x| cos0 * x).collect();
                axpy(sin0, ui, &mut g);
                g
            })
            .collect()
    };

    let mut g_f = embed(&u);
    let mut objective = spread_objective(&g_f, opts.tau);
    let mut step = 1.0f64;
    let mut iterations = 0;
    let mut grad_norm;

    loop {
        let grads = spread_gradient(&g_f, opts.tau);
        // Tangent directions in u-coordinates and the matching KKT residual
        // in g-coordinates.
        let mut tangent = Vec::with_capacity(num_forgery);
        grad_norm = 0.0f64;
        for (ui, gi) in u.iter().zip(&grads) {
            let mut t: Vec<f64> = gi.iter().map(|x| sin0 * x).collect();
            remove_component(&mut t, &g_r);
            remove_component(&mut t, ui);
            grad_norm = grad_norm.max(norm(&t) / sin0);
            tangent.push(t);
        }
        if grad_norm < opts.grad_tolerance || iterations >= opts.max_iterations {
            break;
        }
        let sq: f64 = tangent.iter().map(|t| dot(t, t)).sum();
        // Keep every direction within half a radian of where it was, so the
        // retraction cannot hop across an optimum.
        let longest = tangent.iter().map(|t| norm(t)).fold(0.0, f64::max);
        step = step.min(0.5 / longest);

        let mut accepted = false;
        while step > 1e-14 {
            let trial: Vec<Vec<f64>> = u
                .iter()
                .zip(&tangent)
                .map(|(ui, ti)| {
                    let mut v = ui.clone();
                    axpy(-step, ti, &mut v);
                    project_unit(&mut v, &g_r);
                    v
                })
                .collect();
            let trial_g = embed(&trial);
            let trial_obj = spread_objective(&trial_g, opts.tau);
            if trial_obj <= objective - 0.5 * step * sq {
                u = trial;
                g_f = trial_g;
                objective = trial_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Step collapsed: the objective is flat to machine precision.
            break;
        }
        step = (step * 2.0).min(16.0);
    }

    let residual = g_f
        .iter()
        .map(|g| (dot(&g_r, g) - cos0).abs())
        .fold(0.0, f64::max);
    if grad_norm >= opts.grad_tolerance || residual >= opts.residual_tolerance {
        return Err(Error::NonConvergence {
            iterations,
            residual,
            grad_norm,
        });
    }

    let gs = GuideSpace {
        d,
        num_forgery,
        theta0_deg,
        g_r,
        g_f: g_f
            .into_iter()
            .map(|mut g| {
                normalize(&mut g);
                g
            })
            .collect(),
    };
    let report = SolverReport {
        iterations,
        final_objective: spread_objective(&gs.g_f, opts.tau),
        max_constraint_residual: residual,
        grad_norm,
        pairwise_angles_deg: pairwise_angles(&gs),
    };
    Ok((gs, report))
}

fn remove_component(v: &mut [f64], unit: &[f64]) {
    let c = dot(v, unit);
    axpy(-c, unit, v);
}

fn project_unit(v: &mut [f64], g_r: &[f64]) {
    remove_component(v, g_r);
    normalize(v);
}

/// `1/N sum_i log sum_j exp(g_i . g_j / tau)`.
pub fn spread_objective(g_f: &[Vec<f64>], tau: f64) -> f64 {
    let n = g_f.len();
    let mut total = 0.0;
    let mut row = vec![0.0; n];
    for gi in g_f {
        for (r, gj) in row.iter_mut().zip(g_f) {
            *r = dot(gi, gj) / tau;
        }
        total += log_sum_exp(&row);
    }
    total / n as f64
}

fn spread_gradient(g_f: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let n = g_f.len();
    let d = g_f.first().map_or(0, Vec::len);
    let probs: Vec<Vec<f64>> = g_f
        .iter()
        .map(|gi| {
            let row: Vec<f64> = g_f.iter().map(|gj| dot(gi, gj) / tau).collect();
            crate::vecops::softmax(&row)
        })
        .collect();
    let scale = 1.0 / (n as f64 * tau);
    (0..n)
        .map(|i| {
            let mut g = vec![0.0; d];
            for j in 0..n {
                let w = probs[i][j] + probs[j][i];
                axpy(w * scale, &g_f[j], &mut g);
            }
            g
        })
        .collect()
}

/// Pairwise angle (degrees) of the symmetric optimum, where
/// `cos(theta_ij) = cos^2(theta0) - sin^2(theta0) / (N - 1)`.
pub fn analytic_theta_ij(theta0_deg: f64, num_forgery: usize) -> Result<f64> {
    if num_forgery < 2 {
        return Err(Error::InvalidArgument(
            "pairwise angle needs at least two forgery embeddings".into(),
        ));
    }
    let t = theta0_deg.to_radians();
    let c = t.cos().powi(2) - t.sin().powi(2) / (num_forgery as f64 - 1.0);
    Ok(c.clamp(-1.0, 1.0).acos().to_degrees())
}

/// Pairwise angles (degrees) between the forgery embeddings of `gs`.
pub fn pairwise_angles(gs: &GuideSpace) -> Vec<Vec<f64>> {
    pairwise_angles_of(&gs.g_f)
}

/// Symmetric matrix of pairwise angles in degrees with a zero diagonal.
pub fn pairwise_angles_of(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let a = angle(&vectors[i], &vectors[j]).to_degrees();
            out[i][j] = a;
            out[j][i] = a;
        }
    }
    out
}

/// Mean of the off-diagonal entries of an angle matrix.
pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                total += v;
            }
        }
    }
    total / (n * (n - 1)) as f64
}
