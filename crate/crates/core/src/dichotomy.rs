//! The periodic dichotomy transformation
//! `T(t) = [[I + EP, E], [P, I]]`, `T(t)⁻¹ = [[I, −E], [−P, I + PE]]`.
//!
//! `T` maps the coupled state/adjoint system onto
//! `ṗ = L p`, `q̇ = −Lᵀ q`, the first stable forward and the second stable
//! backward. It is assembled on demand from the `P` and `E` interpolants and
//! never stored as a dense path.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lyapunov::LyapunovSolution;
use crate::odeflow::{Grid, MatrixPath, TransitionOperator};
use crate::problem::PeriodicProblem;
use crate::riccati::RiccatiSolution;

#[derive(Clone, Debug)]
pub struct DichotomyTransform {
    pub p: MatrixPath,
    pub e: MatrixPath,
    pub l_transition: TransitionOperator,
    pub theta: f64,
    pub grid: Grid,
    n: usize,
}

pub fn build_transform(ric: &RiccatiSolution, lya: &LyapunovSolution) -> Result<DichotomyTransform> {
    DichotomyTransform::from_parts(ric.p.clone(), lya.e.clone(), ric.closed_loop.clone())
}

impl DichotomyTransform {
    /// Assembles a transform from arbitrary `P`, `E` paths on the same period grid.
    pub fn from_parts(p: MatrixPath, e: MatrixPath, l_transition: TransitionOperator) -> Result<Self> {
        let n = p.shape().0;
        if p.shape() != (n, n) || e.shape() != (n, n) || l_transition.dim() != n {
            return Err(Error::Config(format!(
                "dimension mismatch: P {:?}, E {:?}, L {}",
                p.shape(),
                e.shape(),
                l_transition.dim()
            )));
        }
        if p.len() != e.len() || (p.dt() - e.dt()).abs() > 1e-12 * p.dt() {
            return Err(Error::Config("P and E must share the period grid".into()));
        }
        let theta = l_transition.period();
        let grid = Grid::new(theta, p.len() - 1)?;
        Ok(DichotomyTransform {
            p,
            e,
            l_transition,
            theta,
            grid,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn p_at(&self, t: f64) -> DMatrix<f64> {
        self.p.interpolate_periodic(t, self.theta)
    }

    pub fn e_at(&self, t: f64) -> DMatrix<f64> {
        self.e.interpolate_periodic(t, self.theta)
    }

    pub fn l_at(&self, t: f64) -> DMatrix<f64> {
        (self.l_transition.generator())(t)
    }

    fn identity(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }

    fn blocks(&self, p: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
        let i = self.identity();
        linalg::block2(&(&i + e * p), e, p, &i)
    }

    fn inverse_blocks(&self, p: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
        let i = self.identity();
        linalg::block2(&i, &-e, &-p, &(&i + p * e))
    }

    pub fn t_matrix(&self, t: f64) -> DMatrix<f64> {
        self.blocks(&self.p_at(t), &self.e_at(t))
    }

    pub fn t_inverse(&self, t: f64) -> DMatrix<f64> {
        self.inverse_blocks(&self.p_at(t), &self.e_at(t))
    }

    /// `[T₁, T₂, T₃, T₄]` with `T₁ = [[I,0],[P,I]]`, `T₃ = [[I,E],[0,I]]`,
    /// `T₂ = T₁⁻¹`, `T₄ = T₃⁻¹` and `T = T₃T₁`.
    pub fn factors(&self, t: f64) -> [DMatrix<f64>; 4] {
        let (p, e) = (self.p_at(t), self.e_at(t));
        let i = self.identity();
        let z = DMatrix::zeros(self.n, self.n);
        [
            linalg::block2(&i, &z, &p, &i),
            linalg::block2(&i, &z, &-&p, &i),
            linalg::block2(&i, &e, &z, &i),
            linalg::block2(&i, &-&e, &z, &i),
        ]
    }

    /// `p = (I + EP)y + Eλ`, `q = Py + λ`.
    pub fn to_decoupled(&self, t: f64, y: &DMatrix<f64>, lam: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (p, e) = (self.p_at(t), self.e_at(t));
        let q = &p * y + lam;
        let pp = y + &e * &q;
        (pp, q)
    }

    /// `y = p − Eq`, `λ = −Pp + (I + PE)q`.
    pub fn from_decoupled(&self, t: f64, p: &DMatrix<f64>, q: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (pm, e) = (self.p_at(t), self.e_at(t));
        let y = p - &e * q;
        let lam = q - &pm * &y;
        (y, lam)
    }

    /// Sup over nodes of `max(‖T T⁻¹ − I‖, ‖T⁻¹ T − I‖)`.
    pub fn inverse_identity_residual(&self) -> f64 {
        let i2 = DMatrix::identity(2 * self.n, 2 * self.n);
        self.p
            .samples()
            .iter()
            .zip(self.e.samples())
            .map(|(p, e)| {
                let (t, ti) = (self.blocks(p, e), self.inverse_blocks(p, e));
                (&t * &ti - &i2).norm().max((&ti * &t - &i2).norm())
            })
            .fold(0.0, f64::max)
    }

    /// Sup over nodes of `‖Ṫ T⁻¹ + T H T⁻¹ − diag(L, −Lᵀ)‖` with `H` the
    /// coupled-system matrix. `Ṗ`, `Ė` are the derivatives stored with the
    /// paths: right-hand sides for integrator output, differences otherwise.
    pub fn decoupling_residual(&self, problem: &PeriodicProblem) -> f64 {
        let z = DMatrix::zeros(self.n, self.n);
        (0..self.p.len())
            .map(|i| {
                let t = self.p.time(i);
                let (p, e) = (&self.p.samples()[i], &self.e.samples()[i]);
                let (dp, de) = (&self.p.derivs()[i], &self.e.derivs()[i]);
                let t_dot = linalg::block2(&(de * p + e * dp), de, dp, &z);
                let tm = self.blocks(p, e);
                let ti = self.inverse_blocks(p, e);
                let s = problem.eval(t);
                let l = &s.a - &s.w * p;
                let target = linalg::block2(&l, &z, &z, &-l.transpose());
                (t_dot * &ti + &tm * s.hamiltonian() * &ti - target).norm()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::solve_plde_stein;
    use crate::problem::builtin_problem;
    use crate::riccati::{solve_prde_periodic, RiccatiOptions};

    fn transform(name: &str, steps: usize) -> (PeriodicProblem, DichotomyTransform) {
        let p = builtin_problem(name).unwrap();
        let grid = Grid::new(p.theta, steps).unwrap();
        let ric = solve_prde_periodic(&p, &grid, &RiccatiOptions::default()).unwrap();
        let lya = solve_plde_stein(&p, &ric).unwrap();
        let xf = build_transform(&ric, &lya).unwrap();
        (p, xf)
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        linalg::column(v)
    }

    #[test]
    fn scalar_a0_blocks() {
        let (_, xf) = transform("scalar-a0", 512);
        let t = xf.t_matrix(1.3);
        let ti = xf.t_inverse(1.3);
        let want_t = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 1.0, 1.0]);
        let want_ti = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -1.0, 0.5]);
        assert!((t - want_t).norm() < 1e-7);
        assert!((ti - want_ti).norm() < 1e-7);
    }

    #[test]
    fn zero_p_e_is_identity() {
        let (_, xf) = transform("scalar-a0", 64);
        let zero = xf.p.map(|_, x| x * 0.0);
        let xf0 = DichotomyTransform::from_parts(zero.clone(), zero, xf.l_transition.clone()).unwrap();
        assert_eq!(xf0.t_matrix(0.7), DMatrix::identity(2, 2));
    }

    #[test]
    fn scalar_a0_coordinates() {
        let (_, xf) = transform("scalar-a0", 512);
        let (p, q) = xf.to_decoupled(0.0, &col(&[1.0]), &col(&[0.0]));
        assert!((p[0] - 0.5).abs() < 1e-7 && (q[0] - 1.0).abs() < 1e-7);
        let (y, lam) = xf.from_decoupled(0.0, &col(&[0.5]), &col(&[1.0]));
        assert!((y[0] - 1.0).abs() < 1e-7 && lam[0].abs() < 1e-7);
        let (p0, q0) = xf.to_decoupled(2.0, &col(&[0.0]), &col(&[0.0]));
        assert!(p0[0] == 0.0 && q0[0] == 0.0);
    }

    #[test]
    fn round_trip_and_factors_paper_2d() {
        let (p, xf) = transform("paper-2d", 1024);
        assert!(xf.inverse_identity_residual() <= 1e-10);
        for &t in &[0.0, 0.4, 2.9, 5.5] {
            let y = col(&[0.3, -1.2]);
            let lam = col(&[2.0, 0.7]);
            let (pp, q) = xf.to_decoupled(t, &y, &lam);
            let (y2, lam2) = xf.from_decoupled(t, &pp, &q);
            assert!((y2 - &y).norm() < 1e-12 && (lam2 - &lam).norm() < 1e-12);
            let [t1, t2, t3, t4] = xf.factors(t);
            let i4 = DMatrix::identity(4, 4);
            assert!((&t1 * &t2 - &i4).norm() < 1e-12);
            assert!((&t3 * &t4 - &i4).norm() < 1e-12);
            assert!((&t3 * &t1 - xf.t_matrix(t)).norm() < 1e-12);
        }
        let _ = p;
    }

    #[test]
    fn decoupling_residual_scalar_and_paper() {
        let (p, xf) = transform("scalar-a0", 256);
        assert!(xf.decoupling_residual(&p) <= 1e-10);
        let (p, xf) = transform("paper-2d", 2048);
        let r = xf.decoupling_residual(&p);
        assert!(r <= 1e-6, "{r}");
    }

    #[test]
    fn perturbed_p_breaks_decoupling() {
        let (p, xf) = transform("paper-2d", 512);
        let bumped = xf.p.map(|t, x| x + DMatrix::from_element(2, 2, 1e-3 * (1.0 + t.sin())));
        let bad = DichotomyTransform::from_parts(bumped, xf.e.clone(), xf.l_transition.clone()).unwrap();
        assert!(bad.decoupling_residual(&p) >= 1e-4);
    }

    #[test]
    fn derivative_of_factor_products() {
        // Ṫ₁T₂ = [[0,0],[Ṗ,0]] and Ṫ₃T₄ = [[0,Ė],[0,0]]
        let (_, xf) = transform("paper-2d", 512);
        let t = 1.1;
        let h = 1e-5;
        let [_, t2, _, t4] = xf.factors(t);
        let [a1, _, a3, _] = xf.factors(t + h);
        let [b1, _, b3, _] = xf.factors(t - h);
        let d1 = (a1 - b1) / (2.0 * h) * t2;
        let d3 = (a3 - b3) / (2.0 * h) * t4;
        let dp = (xf.p_at(t + h) - xf.p_at(t - h)) / (2.0 * h);
        let de = (xf.e_at(t + h) - xf.e_at(t - h)) / (2.0 * h);
        let z = DMatrix::zeros(2, 2);
        assert!((d1 - linalg::block2(&z, &z, &dp, &z)).norm() < 1e-8);
        assert!((d3 - linalg::block2(&z, &de, &z, &z)).norm() < 1e-8);
    }
}
