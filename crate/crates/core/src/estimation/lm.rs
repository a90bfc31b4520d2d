use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LMConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tol: f64,
    pub residual_tol: f64,
    /// Relative cost decrease below which the run stops.
    pub function_tol: f64,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 0.1,
            step_tol: 1e-12,
            residual_tol: 1e-20,
            function_tol: 1e-12,
        }
    }
}

impl LMConfig {
    pub fn with_iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.step_tol,
            self.residual_tol,
        ];
        if self.max_iterations == 0 || pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("LM settings must be positive".into()));
        }
        if !(self.damping_up > 1.0 && self.damping_down < 1.0) {
            return Err(Error::Config(
                "LM damping factors need up > 1 > down > 0".into(),
            ));
        }
        if !(self.function_tol >= 0.0) {
            return Err(Error::Config("function_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Residual vector with Jacobian blocks keyed by variable index.
#[derive(Clone, Debug)]
pub struct Factor {
    pub residual: DVector<f64>,
    pub jacobians: Vec<(usize, DMatrix<f64>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variable {
    pub dim: usize,
    /// Eliminated by the Schur complement; must have `dim == 3`.
    pub eliminate: bool,
}

/// Nonlinear least-squares problem over a manifold-valued state.
pub trait Problem: Sync {
    type State: Clone;

    /// Free variables in the order used by the flat step vector.
    fn variables(&self) -> Vec<Variable>;
    /// Weighted residuals and Jacobians at `s`. The factor residuals define `½‖r‖²`.
    fn linearize(&self, s: &Self::State) -> Result<Vec<Factor>>;
    /// Objective at `s`, consistent with `½Σ‖rᵢ‖²` of `linearize` at the same state.
    fn cost(&self, s: &Self::State) -> Result<f64>;
    fn retract(&self, s: &Self::State, dx: &DVector<f64>) -> Self::State;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ResidualTolerance,
    StepTolerance,
    FunctionTolerance,
    MaxIterations,
    NoProgress,
}

#[derive(Clone, Debug)]
pub struct LMReport<S> {
    pub state: S,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
    pub termination: Termination,
}

struct Layout {
    offsets: Vec<usize>,
    reduced_offsets: Vec<Option<usize>>,
    reduced_dim: usize,
    dim: usize,
}

impl Layout {
    fn new(vars: &[Variable]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(vars.len());
        let mut reduced_offsets = Vec::with_capacity(vars.len());
        let (mut dim, mut reduced_dim) = (0, 0);
        for v in vars {
            if v.eliminate && v.dim != 3 {
                return Err(Error::InvalidParameter(
                    "eliminated variables must be 3-dimensional".into(),
                ));
            }
            offsets.push(dim);
            dim += v.dim;
            if v.eliminate {
                reduced_offsets.push(None);
            } else {
                reduced_offsets.push(Some(reduced_dim));
                reduced_dim += v.dim;
            }
        }
        Ok(Self {
            offsets,
            reduced_offsets,
            reduced_dim,
            dim,
        })
    }
}

#[derive(Clone)]
struct Eliminated {
    hee: Matrix3<f64>,
    ge: Vector3<f64>,
    hre: Vec<(usize, DMatrix<f64>)>,
}

/// Gauss-Newton system split into reduced (dense) and eliminated (3×3 block) parts.
struct NormalEquations {
    hrr: DMatrix<f64>,
    gr: DVector<f64>,
    /// Per eliminated variable: `H_ee`, `g_e` and the `H_re` blocks (reduced variable, dim_r × 3).
    elim: Vec<Option<Eliminated>>,
}

impl NormalEquations {
    fn build(layout: &Layout, vars: &[Variable], factors: &[Factor]) -> Result<Self> {
        let mut ne = Self {
            hrr: DMatrix::zeros(layout.reduced_dim, layout.reduced_dim),
            gr: DVector::zeros(layout.reduced_dim),
            elim: vec![None; vars.len()],
        };
        for f in factors {
            let eliminated = f
                .jacobians
                .iter()
                .filter(|(v, _)| layout.reduced_offsets[*v].is_none())
                .count();
            if eliminated > 1 {
                return Err(Error::InvalidParameter(
                    "a factor may touch at most one eliminated variable".into(),
                ));
            }
            let r = &f.residual;
            for (a, ja) in &f.jacobians {
                match layout.reduced_offsets[*a] {
                    Some(oa) => {
                        let mut g = ne.gr.rows_mut(oa, vars[*a].dim);
                        g += ja.transpose() * r;
                        for (b, jb) in &f.jacobians {
                            if let Some(ob) = layout.reduced_offsets[*b] {
                                let mut h = ne.hrr.view_mut((oa, ob), (vars[*a].dim, vars[*b].dim));
                                h += ja.transpose() * jb;
                            }
                        }
                    }
                    None => {
                        let jt = ja.transpose();
                        let el = ne.elim[*a].get_or_insert_with(|| Eliminated {
                            hee: Matrix3::zeros(),
                            ge: Vector3::zeros(),
                            hre: Vec::new(),
                        });
                        el.hee += Matrix3::from_iterator((&jt * ja).iter().copied());
                        el.ge += Vector3::from_iterator((&jt * r).iter().copied());
                        for (b, jb) in &f.jacobians {
                            if layout.reduced_offsets[*b].is_some() {
                                let blk = jb.transpose() * ja;
                                let list = &mut el.hre;
                                match list.iter_mut().find(|(v, _)| v == b) {
                                    Some((_, m)) => *m += blk,
                                    None => list.push((*b, blk)),
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(ne)
    }

    fn gradient_norm(&self) -> f64 {
        let e = self
            .elim
            .iter()
            .flatten()
            .map(|el| el.ge.amax())
            .fold(0.0, f64::max);
        self.gr.amax().max(e)
    }

    /// Solves `(H + λ diag H) dx = −g`.
    fn solve(&self, layout: &Layout, vars: &[Variable], lambda: f64) -> Option<DVector<f64>> {
        let mut s = self.hrr.clone();
        for i in 0..layout.reduced_dim {
            s[(i, i)] += lambda * self.hrr[(i, i)];
        }
        let mut rhs = -self.gr.clone();
        let mut inv = vec![None; self.elim.len()];
        for (e, el) in self.elim.iter().enumerate() {
            let Some(el) = el else { continue };
            let mut d = el.hee;
            for i in 0..3 {
                d[(i, i)] += lambda * el.hee[(i, i)];
            }
            let di = d.try_inverse()?;
            for (a, wa) in &el.hre {
                let oa = layout.reduced_offsets[*a].unwrap();
                let wa_inv = wa * di;
                let mut r = rhs.rows_mut(oa, vars[*a].dim);
                r += &wa_inv * el.ge;
                for (b, wb) in &el.hre {
                    let ob = layout.reduced_offsets[*b].unwrap();
                    let mut blk = s.view_mut((oa, ob), (vars[*a].dim, vars[*b].dim));
                    blk -= &wa_inv * wb.transpose();
                }
            }
            inv[e] = Some(di);
        }
        let dxr = if layout.reduced_dim > 0 {
            Cholesky::new(s)?.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let mut dx = DVector::zeros(layout.dim);
        for (i, v) in vars.iter().enumerate() {
            if let Some(o) = layout.reduced_offsets[i] {
                dx.rows_mut(layout.offsets[i], v.dim)
                    .copy_from(&dxr.rows(o, v.dim));
            }
        }
        for (e, di) in inv.iter().enumerate() {
            let (Some(di), Some(el)) = (di, &self.elim[e]) else {
                continue;
            };
            let mut rhs_e = -el.ge;
            for (a, wa) in &el.hre {
                let oa = layout.reduced_offsets[*a].unwrap();
                rhs_e -= Vector3::from_iterator(
                    (wa.transpose() * dxr.rows(oa, vars[*a].dim))
                        .iter()
                        .copied(),
                );
            }
            dx.fixed_rows_mut::<3>(layout.offsets[e])
                .copy_from(&(di * rhs_e));
        }
        if dx.iter().all(|v| v.is_finite()) {
            Some(dx)
        } else {
            None
        }
    }
}

const MAX_DAMPING: f64 = 1e16;

/// Levenberg-Marquardt with Marquardt diagonal scaling. Accepted costs never increase.
pub fn lm_solve<P: Problem>(
    problem: &P,
    init: P::State,
    cfg: &LMConfig,
) -> Result<LMReport<P::State>> {
    cfg.validate()?;
    let vars = problem.variables();
    let layout = Layout::new(&vars)?;
    let mut state = init;
    let mut cost = problem.cost(&state)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite("initial cost".into()));
    }
    let initial_cost = cost;
    let mut accepted_costs = vec![cost];
    let done = |state, cost, iterations, accepted_costs, termination| {
        Ok(LMReport {
            state,
            initial_cost,
            final_cost: cost,
            iterations,
            accepted_costs,
            termination,
        })
    };
    if cost <= cfg.residual_tol {
        return done(
            state,
            cost,
            0,
            accepted_costs,
            Termination::ResidualTolerance,
        );
    }
    if layout.dim == 0 {
        return done(state, cost, 0, accepted_costs, Termination::StepTolerance);
    }
    let mut lambda = cfg.initial_damping;
    let mut checked_rank = false;
    for it in 0..cfg.max_iterations {
        let factors = problem.linearize(&state)?;
        if !checked_rank {
            let m: usize = factors.iter().map(|f| f.residual.len()).sum();
            if m < layout.dim {
                return Err(Error::Underconstrained(format!(
                    "{m} residuals for {} parameters",
                    layout.dim
                )));
            }
            checked_rank = true;
        }
        let ne = NormalEquations::build(&layout, &vars, &factors)?;
        if ne.gradient_norm() == 0.0 {
            return done(state, cost, it, accepted_costs, Termination::StepTolerance);
        }
        let mut solved_once = false;
        loop {
            if lambda > MAX_DAMPING {
                if !solved_once {
                    return Err(Error::SingularSystem { lambda });
                }
                return done(state, cost, it + 1, accepted_costs, Termination::NoProgress);
            }
            let Some(dx) = ne.solve(&layout, &vars, lambda) else {
                lambda *= cfg.damping_up;
                continue;
            };
            solved_once = true;
            let trial = problem.retract(&state, &dx);
            let trial_cost = match problem.cost(&trial) {
                Ok(c) if c.is_finite() => c,
                _ => f64::INFINITY,
            };
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                state = trial;
                cost = trial_cost;
                accepted_costs.push(cost);
                lambda = (lambda * cfg.damping_down).max(1e-15);
                let term = if cost <= cfg.residual_tol {
                    Some(Termination::ResidualTolerance)
                } else if dx.norm() < cfg.step_tol {
                    Some(Termination::StepTolerance)
                } else if rel < cfg.function_tol {
                    Some(Termination::FunctionTolerance)
                } else {
                    None
                };
                if let Some(t) = term {
                    return done(state, cost, it + 1, accepted_costs, t);
                }
                break;
            }
            if dx.norm() < cfg.step_tol {
                return done(
                    state,
                    cost,
                    it + 1,
                    accepted_costs,
                    Termination::StepTolerance,
                );
            }
            lambda *= cfg.damping_up;
        }
    }
    done(
        state,
        cost,
        cfg.max_iterations,
        accepted_costs,
        Termination::MaxIterations,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain vector problem defined by a residual closure with numerical Jacobian.
    struct Toy<F: Fn(&DVector<f64>) -> DVector<f64> + Sync> {
        n: usize,
        f: F,
        eliminate: bool,
    }

    impl<F: Fn(&DVector<f64>) -> DVector<f64> + Sync> Problem for Toy<F> {
        type State = DVector<f64>;
        fn variables(&self) -> Vec<Variable> {
            if self.eliminate {
                vec![
                    Variable {
                        dim: 3,
                        eliminate: false,
                    },
                    Variable {
                        dim: 3,
                        eliminate: true,
                    },
                ]
            } else {
                vec![
                    Variable {
                        dim: 1,
                        eliminate: false
                    };
                    self.n
                ]
            }
        }
        fn linearize(&self, s: &DVector<f64>) -> Result<Vec<Factor>> {
            let r = (self.f)(s);
            let mut j = DMatrix::zeros(r.len(), self.n);
            for k in 0..self.n {
                let mut p = s.clone();
                p[k] += 1e-7;
                let mut m = s.clone();
                m[k] -= 1e-7;
                j.set_column(k, &(((self.f)(&p) - (self.f)(&m)) / 2e-7));
            }
            let jacobians = if self.eliminate {
                (0..self.n / 3)
                    .map(|v| (v, j.columns(3 * v, 3).into_owned()))
                    .collect()
            } else {
                (0..self.n)
                    .map(|v| (v, j.columns(v, 1).into_owned()))
                    .collect()
            };
            Ok(vec![Factor {
                residual: r,
                jacobians,
            }])
        }
        fn cost(&self, s: &DVector<f64>) -> Result<f64> {
            Ok(0.5 * (self.f)(s).norm_squared())
        }
        fn retract(&self, s: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
            s + dx
        }
    }

    #[test]
    fn quadratic_bowl() {
        let x0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let t = x0.clone();
        let p = Toy {
            n: 3,
            f: move |x: &DVector<f64>| x - &t,
            eliminate: false,
        };
        let r = lm_solve(&p, DVector::zeros(3), &LMConfig::with_iterations(2)).unwrap();
        assert!((r.state - x0).norm() < 1e-7);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn zero_residual_start() {
        let p = Toy {
            n: 2,
            f: |x: &DVector<f64>| x.clone(),
            eliminate: false,
        };
        let r = lm_solve(&p, DVector::zeros(2), &LMConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.state, DVector::zeros(2));
    }

    fn rosenbrock(x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
    }

    #[test]
    fn rosenbrock_matches_grid_refinement() {
        let p = Toy {
            n: 2,
            f: rosenbrock,
            eliminate: false,
        };
        let r = lm_solve(
            &p,
            DVector::from_vec(vec![-1.2, 1.0]),
            &LMConfig::with_iterations(200),
        )
        .unwrap();
        // Oracle: derivative-free grid refinement on the cost surface.
        let cost = |a: f64, b: f64| rosenbrock(&DVector::from_vec(vec![a, b])).norm_squared();
        let (mut cx, mut cy, mut h) = (0.0, 0.0, 1.0);
        while h > 1e-9 {
            let mut best = (cost(cx, cy), cx, cy);
            for i in -10..=10 {
                for j in -10..=10 {
                    let (x, y) = (cx + i as f64 * h, cy + j as f64 * h);
                    let c = cost(x, y);
                    if c < best.0 {
                        best = (c, x, y);
                    }
                }
            }
            cx = best.1;
            cy = best.2;
            h *= 0.25;
        }
        assert!((r.state[0] - cx).abs() < 1e-6 && (r.state[1] - cy).abs() < 1e-6);
        for w in r.accepted_costs.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn schur_matches_dense() {
        let f = |x: &DVector<f64>| {
            DVector::from_iterator(
                8,
                (0..8).map(|i| {
                    let a = x[i % 6];
                    let b = x[(i + 2) % 6];
                    a * a + 0.5 * b - (i as f64) * 0.1 + a * b
                }),
            )
        };
        let init = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.5, 0.2, -0.4]);
        let cfg = LMConfig::with_iterations(3);
        let dense = lm_solve(
            &Toy {
                n: 6,
                f,
                eliminate: false,
            },
            init.clone(),
            &cfg,
        )
        .unwrap();
        let schur = lm_solve(
            &Toy {
                n: 6,
                f,
                eliminate: true,
            },
            init,
            &cfg,
        )
        .unwrap();
        assert!((dense.state - schur.state).norm() < 1e-9);
    }

    #[test]
    fn underdetermined_and_singular() {
        let p = Toy {
            n: 3,
            f: |x: &DVector<f64>| DVector::from_element(1, x.sum() - 1.0),
            eliminate: false,
        };
        assert!(matches!(
            lm_solve(&p, DVector::zeros(3), &LMConfig::default()),
            Err(Error::Underconstrained(_))
        ));
        let p = Toy {
            n: 2,
            f: |x: &DVector<f64>| DVector::from_vec(vec![x[0] - 1.0, 2.0 * (x[0] - 1.0)]),
            eliminate: false,
        };
        assert!(matches!(
            lm_solve(&p, DVector::zeros(2), &LMConfig::default()),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = LMConfig::default();
        assert!(c.validate().is_ok());
        c.damping_up = 0.5;
        assert!(c.validate().is_err());
        c = LMConfig::default();
        c.damping_down = 1.5;
        assert!(c.validate().is_err());
    }
}
