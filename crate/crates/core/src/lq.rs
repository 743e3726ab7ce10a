//! Linear-quadratic oracle.
//!
//! For `ẏ = Ay + Bu` with running cost
//! `(y − y_t)ᵀQ(y − y_t) + (u − u_t)ᵀR(u − u_t)` the forward infinite-horizon
//! value around a turnpike with zero multiplier is `(x − ȳ)ᵀP(x − ȳ)` where `P`
//! is the stabilizing solution of
//!
//! ```text
//! AᵀP + PA − PBR⁻¹BᵀP + Q = 0.
//! ```

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::numerical_rank;
use crate::model::controllability_matrix;
use crate::static_opt::StaticSolution;

const ARE_TOLERANCE: f64 = 1e-10;
const MAX_NEWTON_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LqProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub y_target: DVector<f64>,
    pub u_target: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// `A − BR⁻¹BᵀP`.
    pub closed_loop: DMatrix<f64>,
    /// Frobenius norm of the Riccati residual.
    pub residual: f64,
    pub newton_steps: usize,
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

impl LqProblem {
    /// Problem with zero targets; set `y_target`/`u_target` afterwards if needed.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let (n, p) = (a.nrows(), b.ncols());
        let lq = LqProblem {
            a,
            b,
            q,
            r,
            y_target: DVector::zeros(n),
            u_target: DVector::zeros(p),
        };
        lq.validate()?;
        Ok(lq)
    }

    pub fn with_targets(mut self, y_target: DVector<f64>, u_target: DVector<f64>) -> Result<Self> {
        self.y_target = y_target;
        self.u_target = u_target;
        self.validate()?;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.state_dim(), self.control_dim());
        let shapes = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, p)),
            ("Q", self.q.shape(), (n, n)),
            ("R", self.r.shape(), (p, p)),
            ("y_target", self.y_target.shape(), (n, 1)),
            ("u_target", self.u_target.shape(), (p, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if n == 0 || p == 0 {
            return Err(Error::Dimension("empty state or control".into()));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r)] {
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::Precondition(format!("{name} is not symmetric")));
            }
        }
        if smallest_eigenvalue(&self.q) < -1e-10 {
            return Err(Error::Precondition("Q is not positive semidefinite".into()));
        }
        if smallest_eigenvalue(&self.r) < 1e-10 {
            return Err(Error::Precondition("R is not positive definite".into()));
        }
        if numerical_rank(&controllability_matrix(&self.a, &self.b)) < n {
            return Err(Error::Precondition("(A, B) fails the Kalman rank condition".into()));
        }
        Ok(())
    }

    /// The time-reversed system `(−A, −B)` with the same weights.
    pub fn reversed(&self) -> LqProblem {
        LqProblem {
            a: -&self.a,
            b: -&self.b,
            ..self.clone()
        }
    }

    pub fn riccati_residual(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let r_inv_bt = self.r_inverse() * self.b.transpose();
        self.a.transpose() * p + p * &self.a - p * &self.b * r_inv_bt * p + &self.q
    }

    fn r_inverse(&self) -> DMatrix<f64> {
        self.r
            .clone()
            .try_inverse()
            .expect("R is positive definite after validation")
    }
}

/// Solves `MX + XMᵀ = C` through the Kronecker form.
fn sylvester_symmetric(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(m) + m.kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = op.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Bass's construction: with `β` above the spectral abscissa of `−A`, the
/// gain `BᵀZ⁻¹` from `(A + βI)Z + Z(A + βI)ᵀ = 2BBᵀ` places the closed-loop
/// spectrum at real part `−β`.
pub(crate) fn stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::identity(n, n) * beta;
    let rhs = b * b.transpose() * 2.0;
    let z = sylvester_symmetric(&shifted, &rhs)
        .ok_or_else(|| Error::Stabilizability("singular shifted Lyapunov operator".into()))?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::Stabilizability("controllability Gramian is singular".into()))?;
    let k = b.transpose() * z_inv;
    let abscissa = spectral_abscissa(&(a - b * &k));
    if !(abscissa < 0.0) {
        return Err(Error::Stabilizability(format!(
            "initial closed loop has spectral abscissa {abscissa}"
        )));
    }
    Ok(k)
}

/// Stabilizing Riccati solution by Newton–Kleinman iteration.
pub fn solve_are(lq: &LqProblem) -> Result<RiccatiSolution> {
    lq.validate()?;
    let r_inv_bt = lq.r_inverse() * lq.b.transpose();
    let mut k = stabilizing_gain(&lq.a, &lq.b)?;
    let mut p_prev: Option<DMatrix<f64>> = None;
    for step in 1..=MAX_NEWTON_STEPS {
        let ak = &lq.a - &lq.b * &k;
        let c = -(&lq.q + k.transpose() * &lq.r * &k);
        let p = sylvester_symmetric(&ak.transpose(), &c).ok_or(Error::Convergence {
            what: "Newton-Kleinman Lyapunov solve",
            residual: f64::NAN,
        })?;
        k = &r_inv_bt * &p;
        let change = p_prev.as_ref().map_or(f64::INFINITY, |q| (&p - q).amax());
        let scale = 1.0 + p.amax();
        if change <= 1e-14 * scale || (change <= 1e-8 * scale && lq.riccati_residual(&p).norm() <= 1e-14 * scale) {
            let closed_loop = &lq.a - &lq.b * &k;
            let residual = lq.riccati_residual(&p).norm();
            if residual > ARE_TOLERANCE * scale {
                return Err(Error::Convergence {
                    what: "Riccati equation",
                    residual,
                });
            }
            return Ok(RiccatiSolution {
                p,
                closed_loop,
                residual,
                newton_steps: step,
            });
        }
        p_prev = Some(p);
    }
    let residual = p_prev.map_or(f64::NAN, |p| lq.riccati_residual(&p).norm());
    Err(Error::Convergence {
        what: "Newton-Kleinman iteration",
        residual,
    })
}

/// Turnpike of the LQ problem from its linear KKT system.
pub fn lq_static(lq: &LqProblem) -> Result<StaticSolution> {
    lq.validate()?;
    let (n, p) = (lq.state_dim(), lq.control_dim());
    let m = 2 * n + p;
    // Rows: Ay + Bu = 0; 2Q(y − y_t) − Aᵀλ = 0; 2R(u − u_t) − Bᵀλ = 0.
    let mut k = DMatrix::zeros(m, m);
    k.view_mut((0, 0), (n, n)).copy_from(&lq.a);
    k.view_mut((0, n), (n, p)).copy_from(&lq.b);
    k.view_mut((n, 0), (n, n)).copy_from(&(&lq.q * 2.0));
    k.view_mut((n, n + p), (n, n)).copy_from(&(-lq.a.transpose()));
    k.view_mut((2 * n, n), (p, p)).copy_from(&(&lq.r * 2.0));
    k.view_mut((2 * n, n + p), (p, n)).copy_from(&(-lq.b.transpose()));
    let mut rhs = DVector::zeros(m);
    rhs.rows_mut(n, n).copy_from(&(&lq.q * &lq.y_target * 2.0));
    rhs.rows_mut(2 * n, p).copy_from(&(&lq.r * &lq.u_target * 2.0));

    let svd = k.clone().svd(false, false);
    let smallest = svd.singular_values.min();
    if smallest <= 1e-12 * svd.singular_values.max() {
        return Err(Error::Degeneracy {
            smallest_singular_value: smallest,
        });
    }
    let z = k.clone().lu().solve(&rhs).ok_or(Error::Degeneracy {
        smallest_singular_value: smallest,
    })?;
    let y = z.rows(0, n).into_owned();
    let u = z.rows(n, p).into_owned();
    let lambda = z.rows(n + p, n).into_owned();
    let dy = &y - &lq.y_target;
    let du = &u - &lq.u_target;
    let v_bar = (dy.transpose() * &lq.q * &dy)[0] + (du.transpose() * &lq.r * &du)[0];
    Ok(StaticSolution {
        y_bar: y,
        u_bar: u,
        lambda_bar: lambda,
        v_bar,
        kkt_residual: (k * z - rhs).amax(),
        interior_margin: f64::INFINITY,
        smallest_singular_value: smallest,
        warnings: Vec::new(),
    })
}

/// `(x − ȳ)ᵀP(x − ȳ)`, valid only when the turnpike multiplier vanishes.
pub fn lq_value(riccati: &RiccatiSolution, turnpike: &StaticSolution, x: &DVector<f64>) -> Result<f64> {
    if turnpike.lambda_bar.amax() > 1e-12 {
        return Err(Error::Unsupported(
            "nonzero turnpike multiplier: the pure quadratic form is not the value; \
             use the numerical infinite-horizon estimator"
                .into(),
        ));
    }
    if x.len() != riccati.p.nrows() {
        return Err(Error::Dimension(format!(
            "state of length {} for a {}x{} Riccati solution",
            x.len(),
            riccati.p.nrows(),
            riccati.p.nrows()
        )));
    }
    let d = x - &turnpike.y_bar;
    Ok((d.transpose() * &riccati.p * &d)[0])
}
