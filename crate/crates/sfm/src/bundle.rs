//! Levenberg-Marquardt bundle adjustment with point-block elimination.
//!
//! Minimises `Σ ρ(‖π(P_c, X_k) − x_j‖²)` with the Cauchy loss
//! `ρ(s) = b² ln(1 + s/b²)`. Each step solves the reduced camera system
//! `(U − W V⁻¹ Wᵀ) δc = −g_c + W V⁻¹ g_p` densely by Cholesky and
//! back-substitutes the 3×3 point blocks.

use std::collections::{BTreeMap, HashMap};

use evrecon_core::{CameraIntrinsics, Pose};
use nalgebra::{DMatrix, DVector, Matrix3, Point2, Point3, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Result, SfmError};
use crate::projection::{project_with_derivatives, retract_pose, INTRINSIC_PARAMS};
use crate::reconstruction::Reconstruction;

#[derive(Clone, Debug, PartialEq)]
pub struct BundleOptions {
    /// Cauchy scale `b` in pixels.
    pub loss_scale: f64,
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub function_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Which of `fx, fy, cx, cy, k1` to refine.
    pub refine_intrinsics: [bool; INTRINSIC_PARAMS],
    /// Images whose poses vary; all registered images when `None`.
    pub variable_images: Option<Vec<usize>>,
    pub initial_lambda: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            loss_scale: 2.0,
            max_iterations: 100,
            function_tolerance: 1e-6,
            gradient_tolerance: 1e-10,
            refine_intrinsics: [false; INTRINSIC_PARAMS],
            variable_images: None,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    FunctionTolerance,
    GradientTolerance,
    MaxIterations,
    /// No damping level produced a decrease.
    NoImprovement,
    NothingToOptimize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Cost before the first step followed by the cost after each accepted step.
    pub cost_history: Vec<f64>,
    pub termination: Termination,
}

/// `(ρ(s), ρ'(s))` for the Cauchy loss with scale `b`.
#[inline]
pub fn cauchy(s: f64, b: f64) -> (f64, f64) {
    let b2 = b * b;
    (b2 * (s / b2).ln_1p(), 1.0 / (1.0 + s / b2))
}

/// Robust cost of the whole model; observations behind their camera count
/// as infinite.
pub fn robust_cost(recon: &Reconstruction, loss_scale: f64) -> f64 {
    let mut total = 0.0;
    for p in recon.points.values() {
        for &(i, f) in &p.observations {
            match recon.pose(i).and_then(|pose| crate::projection::project(recon.intrinsics(i), pose, &p.position)) {
                Some(q) => total += cauchy((q - recon.pixel(i, f)).norm_squared(), loss_scale).0,
                None => return f64::INFINITY,
            }
        }
    }
    total
}

struct Obs {
    image: usize,
    /// Slot among the variable images.
    slot: Option<usize>,
    model: usize,
    pixel: Point2<f64>,
}

struct Problem {
    point_ids: Vec<usize>,
    obs: Vec<Vec<Obs>>,
    variable: Vec<usize>,
    models: Vec<usize>,
    model_slot: HashMap<usize, usize>,
    frozen: Vec<bool>,
    n_cam_params: usize,
}

#[derive(Clone)]
struct State {
    poses: Vec<Pose>,
    points: Vec<Point3<f64>>,
    intrinsics: Vec<CameraIntrinsics>,
}

struct PointSystem {
    v: Matrix3<f64>,
    gp: Vector3<f64>,
    /// Rows of `W` for this point: camera-side parameter index and `J_cᵀ J_p`.
    w: Vec<(usize, Vector3<f64>)>,
    /// Camera-side Jacobian columns of each observation (weighted) and the
    /// weighted residual.
    cols: Vec<(Vec<(usize, [f64; 2])>, [f64; 2])>,
}

impl Problem {
    fn pose<'a>(&self, recon: &'a Reconstruction, state: &'a State, o: &Obs) -> &'a Pose {
        match o.slot {
            Some(s) => &state.poses[s],
            None => recon.pose(o.image).expect("observation of an unregistered image"),
        }
    }

    fn cost(&self, recon: &Reconstruction, state: &State, b: f64) -> f64 {
        let per_point: Vec<f64> = (0..self.point_ids.len())
            .into_par_iter()
            .map(|k| {
                let mut sum = 0.0;
                for o in &self.obs[k] {
                    let pose = self.pose(recon, state, o);
                    let pc = pose.transform(&state.points[k]);
                    match state.intrinsics[o.model].project(&pc) {
                        Some(q) => sum += cauchy((q - o.pixel).norm_squared(), b).0,
                        None => return f64::INFINITY,
                    }
                }
                sum
            })
            .collect();
        // Fixed-order reduction keeps results independent of thread count.
        per_point.iter().sum()
    }

    fn linearize(&self, recon: &Reconstruction, state: &State, b: f64) -> Vec<PointSystem> {
        (0..self.point_ids.len())
            .into_par_iter()
            .map(|k| {
                let mut v = Matrix3::zeros();
                let mut gp = Vector3::zeros();
                let mut w: BTreeMap<usize, Vector3<f64>> = BTreeMap::new();
                let mut cols = Vec::with_capacity(self.obs[k].len());
                for o in &self.obs[k] {
                    let pose = self.pose(recon, state, o);
                    let Some(d) = project_with_derivatives(&state.intrinsics[o.model], pose, &state.points[k]) else {
                        continue;
                    };
                    let r = d.value - o.pixel;
                    let (_, drho) = cauchy(r.norm_squared(), b);
                    let sw = drho.sqrt();
                    let r = r * sw;
                    let jp = d.d_point * sw;
                    v += jp.transpose() * jp;
                    gp += jp.transpose() * r;
                    let mut c: Vec<(usize, [f64; 2])> = Vec::with_capacity(11);
                    if let Some(s) = o.slot {
                        for j in 0..6 {
                            let idx = 6 * s + j;
                            if !self.frozen[idx] {
                                c.push((idx, [d.d_pose[(0, j)] * sw, d.d_pose[(1, j)] * sw]));
                            }
                        }
                    }
                    if let Some(&m) = self.model_slot.get(&o.model) {
                        for j in 0..INTRINSIC_PARAMS {
                            let idx = 6 * self.variable.len() + INTRINSIC_PARAMS * m + j;
                            if !self.frozen[idx] {
                                c.push((idx, [d.d_intrinsics[(0, j)] * sw, d.d_intrinsics[(1, j)] * sw]));
                            }
                        }
                    }
                    for &(idx, col) in &c {
                        let row = Vector3::new(
                            col[0] * jp[(0, 0)] + col[1] * jp[(1, 0)],
                            col[0] * jp[(0, 1)] + col[1] * jp[(1, 1)],
                            col[0] * jp[(0, 2)] + col[1] * jp[(1, 2)],
                        );
                        *w.entry(idx).or_insert_with(Vector3::zeros) += row;
                    }
                    cols.push((c, [r.x, r.y]));
                }
                PointSystem {
                    v,
                    gp,
                    w: w.into_iter().collect(),
                    cols,
                }
            })
            .collect()
    }
}

fn damp(d: f64, lambda: f64) -> f64 {
    d + lambda * d.max(1e-9)
}

/// Refines poses, points and optionally intrinsics in place.
pub fn bundle_adjust(recon: &mut Reconstruction, options: &BundleOptions) -> Result<BundleReport> {
    let b = options.loss_scale;
    let registered = recon.registered_images();
    let variable: Vec<usize> = match &options.variable_images {
        Some(v) => {
            let mut v: Vec<usize> = v.iter().copied().filter(|&i| recon.is_registered(i)).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => registered.clone(),
    };
    let slot_of: HashMap<usize, usize> = variable.iter().enumerate().map(|(s, &i)| (i, s)).collect();

    let refine_any = options.refine_intrinsics.iter().any(|&r| r);
    let mut models: Vec<usize> = if refine_any {
        variable.iter().map(|&i| recon.image_camera[i]).collect()
    } else {
        Vec::new()
    };
    models.sort_unstable();
    models.dedup();
    let model_slot: HashMap<usize, usize> = models.iter().enumerate().map(|(s, &m)| (m, s)).collect();

    let mut point_ids = Vec::new();
    let mut obs = Vec::new();
    for (&id, p) in &recon.points {
        let in_problem = p.observations.iter().any(|(i, _)| slot_of.contains_key(i) || model_slot.contains_key(&recon.image_camera[*i]));
        if !in_problem {
            continue;
        }
        let list: Vec<Obs> = p
            .observations
            .iter()
            .filter(|&&(i, _)| recon.is_registered(i))
            .map(|&(i, f)| Obs {
                image: i,
                slot: slot_of.get(&i).copied(),
                model: recon.image_camera[i],
                pixel: recon.pixel(i, f),
            })
            .collect();
        point_ids.push(id);
        obs.push(list);
    }

    let n_cam_params = 6 * variable.len() + INTRINSIC_PARAMS * models.len();
    let mut frozen = vec![false; n_cam_params];
    // Gauge: first reference camera fixed, one translation coordinate of the
    // second fixed so the baseline length cannot drift.
    let (g0, g1) = recon
        .gauge
        .unwrap_or_else(|| (registered.first().copied().unwrap_or(0), registered.get(1).copied().unwrap_or(usize::MAX)));
    if let Some(&s) = slot_of.get(&g0) {
        frozen[6 * s..6 * s + 6].iter_mut().for_each(|f| *f = true);
    }
    if let Some(&s) = slot_of.get(&g1) {
        let t = recon.pose(g1).unwrap().translation;
        frozen[6 * s + 3 + t.iamax()] = true;
    }
    for m in 0..models.len() {
        for j in 0..INTRINSIC_PARAMS {
            frozen[6 * variable.len() + INTRINSIC_PARAMS * m + j] = !options.refine_intrinsics[j];
        }
    }

    let problem = Problem {
        point_ids,
        obs,
        variable,
        models,
        model_slot,
        frozen,
        n_cam_params,
    };
    let mut state = State {
        poses: problem.variable.iter().map(|&i| *recon.pose(i).unwrap()).collect(),
        points: problem.point_ids.iter().map(|id| recon.points[id].position).collect(),
        intrinsics: recon.cameras.iter().map(|c| c.intrinsics).collect(),
    };

    let mut cost = problem.cost(recon, &state, b);
    if !cost.is_finite() {
        return Err(SfmError::NumericalFailure("initial configuration has points behind a camera".into()));
    }
    let mut report = BundleReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        cost_history: vec![cost],
        termination: Termination::MaxIterations,
    };
    if problem.point_ids.is_empty() {
        report.termination = Termination::NothingToOptimize;
        return Ok(report);
    }

    let nc = problem.n_cam_params;
    let mut lambda = options.initial_lambda;
    let mut iteration = 0;
    'outer: while iteration < options.max_iterations {
        let systems = problem.linearize(recon, &state, b);

        let mut u = DMatrix::<f64>::zeros(nc, nc);
        let mut gc = DVector::<f64>::zeros(nc);
        for sys in &systems {
            for (cols, r) in &sys.cols {
                for (a, ca) in cols {
                    gc[*a] += ca[0] * r[0] + ca[1] * r[1];
                    for (bi, cb) in cols {
                        u[(*a, *bi)] += ca[0] * cb[0] + ca[1] * cb[1];
                    }
                }
            }
        }
        let grad_norm = systems
            .iter()
            .map(|s| s.gp.amax())
            .fold(gc.iter().fold(0.0f64, |m, v| m.max(v.abs())), f64::max);
        if grad_norm < options.gradient_tolerance {
            report.termination = Termination::GradientTolerance;
            break;
        }

        let mut solved_once = false;
        loop {
            if lambda > 1e16 {
                if !solved_once {
                    return Err(SfmError::NumericalFailure("reduced camera system not positive definite".into()));
                }
                report.termination = Termination::NoImprovement;
                break 'outer;
            }
            let mut s = u.clone();
            for i in 0..nc {
                s[(i, i)] = damp(s[(i, i)], lambda);
            }
            let mut rhs = -gc.clone();
            let mut v_inv = Vec::with_capacity(systems.len());
            let mut ok = true;
            for sys in &systems {
                let mut v = sys.v;
                for i in 0..3 {
                    v[(i, i)] = damp(v[(i, i)], lambda);
                }
                let Some(vi) = v.try_inverse() else {
                    ok = false;
                    break;
                };
                let vg = vi * sys.gp;
                for (a, wa) in &sys.w {
                    rhs[*a] += wa.dot(&vg);
                    let wav = vi * wa;
                    for (bi, wb) in &sys.w {
                        s[(*a, *bi)] -= wav.dot(wb);
                    }
                }
                v_inv.push(vi);
            }
            for i in 0..nc {
                if problem.frozen[i] {
                    s.row_mut(i).fill(0.0);
                    s.column_mut(i).fill(0.0);
                    s[(i, i)] = 1.0;
                    rhs[i] = 0.0;
                }
            }
            let dc = if !ok {
                None
            } else if nc == 0 {
                Some(DVector::zeros(0))
            } else {
                s.cholesky().map(|c| c.solve(&rhs))
            };
            let Some(dc) = dc else {
                lambda *= 10.0;
                continue;
            };
            solved_once = true;

            let mut trial = state.clone();
            for (k, sys) in systems.iter().enumerate() {
                let mut rhs_p = -sys.gp;
                for (a, wa) in &sys.w {
                    rhs_p -= wa * dc[*a];
                }
                trial.points[k] += v_inv[k] * rhs_p;
            }
            for s_idx in 0..problem.variable.len() {
                let d = Vector6::from_iterator((0..6).map(|j| dc[6 * s_idx + j]));
                trial.poses[s_idx] = retract_pose(&state.poses[s_idx], &d);
            }
            for (m_slot, &m) in problem.models.iter().enumerate() {
                let base = 6 * problem.variable.len() + INTRINSIC_PARAMS * m_slot;
                let k = &mut trial.intrinsics[m];
                k.fx += dc[base];
                k.fy += dc[base + 1];
                k.cx += dc[base + 2];
                k.cy += dc[base + 3];
                k.k1 += dc[base + 4];
            }
            let trial_cost = problem.cost(recon, &trial, b);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                state = trial;
                cost = trial_cost;
                iteration += 1;
                report.iterations = iteration;
                report.cost_history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if rel < options.function_tolerance {
                    report.termination = Termination::FunctionTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
        }
    }

    for (s, &i) in problem.variable.iter().enumerate() {
        recon.poses[i] = Some(state.poses[s]);
    }
    for (k, id) in problem.point_ids.iter().enumerate() {
        recon.points.get_mut(id).unwrap().position = state.points[k];
    }
    for &m in &problem.models {
        recon.cameras[m].intrinsics = state.intrinsics[m];
    }
    recon.refresh_errors();
    report.final_cost = cost;
    Ok(report)
}
