//! Finite-difference linearisation, finite-horizon Riccati recursion and
//! steerability checks for the resulting A, B, K and P fields.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::groups::Representation;
use crate::par;
use crate::steerable::{orbit_project_so2, rotate_blocks, FieldType, OrbitDecomposition};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Local model s' ≈ f(s₀, a₀) + A δs + B δa.
#[derive(Debug, Clone)]
pub struct LinearizedDynamics {
    pub state: DVector<f64>,
    pub action: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub fd_step: f64,
}

/// Central finite-difference Jacobians of `f` at (s, a).
pub fn linearize<F>(
    f: &F,
    s: &DVector<f64>,
    a: &DVector<f64>,
    fd_step: f64,
) -> Result<LinearizedDynamics>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + ?Sized,
{
    if fd_step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Numeric("finite-difference step must be positive"));
    }
    let ds = s.len();
    let da = a.len();
    let mut am = DMatrix::zeros(0, 0);
    let mut bm = DMatrix::zeros(0, 0);
    let h2 = 2.0 * fd_step;
    for j in 0..ds {
        let (mut sp, mut sm) = (s.clone(), s.clone());
        sp[j] += fd_step;
        sm[j] -= fd_step;
        let col = (f(&sp, a)? - f(&sm, a)?) / h2;
        if am.ncols() == 0 {
            am = DMatrix::zeros(col.len(), ds);
        }
        am.set_column(j, &col);
    }
    for j in 0..da {
        let (mut ap, mut amn) = (a.clone(), a.clone());
        ap[j] += fd_step;
        amn[j] -= fd_step;
        let col = (f(s, &ap)? - f(s, &amn)?) / h2;
        if bm.ncols() == 0 {
            bm = DMatrix::zeros(col.len(), da);
        }
        bm.set_column(j, &col);
    }
    if am.iter().chain(bm.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite dynamics output during linearisation",
        ));
    }
    Ok(LinearizedDynamics {
        state: s.clone(),
        action: a.clone(),
        a: am,
        b: bm,
        fd_step,
    })
}

/// Stage cost sᵀQs + aᵀRa.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl QuadraticCost {
    /// Validates symmetry of both blocks and positive definiteness of R.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax();
        if !q.is_square() || !r.is_square() || asym(&q) > 1e-12 || asym(&r) > 1e-12 {
            return Err(Error::IllPosedCost);
        }
        if r.nrows() > 0 && r.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::IllPosedCost);
        }
        Ok(QuadraticCost { q, r })
    }

    /// Q = I, R = λI.
    pub fn isotropic(ds: usize, da: usize, lambda: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(ds, ds),
            DMatrix::identity(da, da) * lambda,
        )
    }

    pub fn stage(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        (s.transpose() * &self.q * s)[(0, 0)] + (a.transpose() * &self.r * a)[(0, 0)]
    }
}

/// P_0..P_T and K_0..K_{T-1}.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    /// V(s) = sᵀ P_0 s.
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        (s.transpose() * &self.p[0] * s)[(0, 0)]
    }
}

/// Backward recursion from P_T = Q.
pub fn dare_recursion(
    dynamics: &LinearizedDynamics,
    cost: &QuadraticCost,
    horizon: usize,
) -> Result<RiccatiSolution> {
    if horizon == 0 {
        return Err(Error::InvalidHorizon(0));
    }
    riccati(&dynamics.a, &dynamics.b, cost, horizon)
}

fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: &QuadraticCost,
    horizon: usize,
) -> Result<RiccatiSolution> {
    if cost.q.nrows() != a.nrows() {
        return Err(Error::shape(a.nrows(), cost.q.nrows()));
    }
    if cost.r.nrows() != b.ncols() {
        return Err(Error::shape(b.ncols(), cost.r.nrows()));
    }
    let mut p = vec![cost.q.clone(); horizon + 1];
    let mut k = vec![DMatrix::zeros(b.ncols(), a.ncols()); horizon];
    for t in (0..horizon).rev() {
        let pn = &p[t + 1];
        let bt_p = b.transpose() * pn;
        let s = &cost.r + &bt_p * b;
        let chol = s.cholesky().ok_or(Error::IllPosedCost)?;
        let kt = chol.solve(&(&bt_p * a));
        let at_p = a.transpose() * pn;
        let pt = &cost.q + &at_p * a - (&at_p * b) * &kt;
        p[t] = (&pt + pt.transpose()) * 0.5;
        k[t] = kt;
    }
    Ok(RiccatiSolution { p, k })
}

fn conj_residual(
    at_gp: &DMatrix<f64>,
    at_p: &DMatrix<f64>,
    out: &DMatrix<f64>,
    in_inv: &DMatrix<f64>,
) -> f64 {
    (at_gp - out * at_p * in_inv).amax()
}

/// Sampled (g, s, a) triples for a two-path check.
fn sample_points(
    rep_s: &Representation,
    sample_point: &mut dyn FnMut(&mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>),
    samples: usize,
    seed: u64,
) -> Vec<(usize, DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = rep_s.group().order();
    (0..samples.max(1))
        .map(|_| {
            let g = rng.random_range(0..order);
            let (s, a) = sample_point(&mut rng);
            (g, s, a)
        })
        .collect()
}

/// Max over sampled (g, p) of ‖A(g·p) − ρ_S(g)A(p)ρ_S(g⁻¹)‖_∞ and
/// ‖B(g·p) − ρ_S(g)B(p)ρ_A(g⁻¹)‖_∞.
pub fn steerability_check_linearization<F>(
    f: &F,
    rep_s: &Representation,
    rep_a: &Representation,
    mut sample_point: impl FnMut(&mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>),
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Sync + ?Sized,
{
    let points = sample_points(rep_s, &mut sample_point, samples, seed);
    let group = rep_s.group().clone();
    let residuals = par::map(&points, |(g, s, a)| -> Result<f64> {
        let gi = group.inverse(*g);
        let (rs, ra) = (rep_s.matrix(*g), rep_a.matrix(*g));
        let here = linearize(f, s, a, DEFAULT_FD_STEP)?;
        let there = linearize(f, &(rs * s), &(ra * a), DEFAULT_FD_STEP)?;
        let ra_res = conj_residual(&there.a, &here.a, rs, rep_s.matrix(gi));
        let rb_res = conj_residual(&there.b, &here.b, rs, rep_a.matrix(gi));
        Ok(ra_res.max(rb_res))
    });
    residuals.into_iter().try_fold(0.0f64, |m, r| Ok(m.max(r?)))
}

/// Max over sampled (g, p) and all t of the K_t and P_t steerability
/// residuals. The cost field's own residual (Q and R) is included, so a
/// zero horizon reduces to checking Q.
pub fn steerability_check_riccati<F, Cf>(
    f: &F,
    cost_field: &Cf,
    rep_s: &Representation,
    rep_a: &Representation,
    horizon: usize,
    mut sample_point: impl FnMut(&mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>),
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Sync + ?Sized,
    Cf: Fn(&DVector<f64>, &DVector<f64>) -> Result<QuadraticCost> + Sync + ?Sized,
{
    let points = sample_points(rep_s, &mut sample_point, samples, seed);
    let group = rep_s.group().clone();
    let residuals = par::map(&points, |(g, s, a)| -> Result<f64> {
        let gi = group.inverse(*g);
        let (rs, ra) = (rep_s.matrix(*g), rep_a.matrix(*g));
        let (rs_inv, ra_inv) = (rep_s.matrix(gi), rep_a.matrix(gi));
        let (gs, ga) = (rs * s, ra * a);
        let c_here = cost_field(s, a)?;
        let c_there = cost_field(&gs, &ga)?;
        let mut worst = conj_residual(&c_there.q, &c_here.q, rs, rs_inv)
            .max(conj_residual(&c_there.r, &c_here.r, ra, ra_inv));
        if horizon == 0 {
            return Ok(worst);
        }
        let here = linearize(f, s, a, DEFAULT_FD_STEP)?;
        let there = linearize(f, &gs, &ga, DEFAULT_FD_STEP)?;
        let sol_here = dare_recursion(&here, &c_here, horizon)?;
        let sol_there = dare_recursion(&there, &c_there, horizon)?;
        for (kt, kh) in sol_there.k.iter().zip(&sol_here.k) {
            worst = worst.max(conj_residual(kt, kh, ra, rs_inv));
        }
        for (pt, ph) in sol_there.p.iter().zip(&sol_here.p) {
            worst = worst.max(conj_residual(pt, ph, rs, rs_inv));
        }
        Ok(worst)
    });
    residuals.into_iter().try_fold(0.0f64, |m, r| Ok(m.max(r?)))
}

/// LQR controller that solves the Riccati recursion only at the SO(2)
/// orbit representative of the linearisation point and transports the
/// resulting gain back along the orbit.
pub struct EquivariantLqr<F> {
    f: F,
    cost: QuadraticCost,
    horizon: usize,
    state_layout: Vec<FieldType>,
    action_layout: Vec<FieldType>,
    pivot: usize,
    pub fd_step: f64,
}

/// One controller evaluation.
#[derive(Debug, Clone)]
pub struct LqrAction {
    pub action: DVector<f64>,
    pub orbit: OrbitDecomposition,
}

impl<F> EquivariantLqr<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    /// `pivot` indexes the block of the concatenated (state, action) layout
    /// used to fix the orbit coordinate. The cost must be SO(2)-invariant.
    pub fn new(
        f: F,
        cost: QuadraticCost,
        horizon: usize,
        state_layout: Vec<FieldType>,
        action_layout: Vec<FieldType>,
        pivot: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidHorizon(0));
        }
        Ok(EquivariantLqr {
            f,
            cost,
            horizon,
            state_layout,
            action_layout,
            pivot,
            fd_step: DEFAULT_FD_STEP,
        })
    }

    fn split_layout(&self) -> Vec<FieldType> {
        self.state_layout
            .iter()
            .chain(&self.action_layout)
            .copied()
            .collect()
    }

    /// a = −ρ_A(g_p) K(p↓) ρ_S(g_p⁻¹) s, linearising at p = (s, a₀).
    pub fn act(&self, s: &DVector<f64>, a0: &DVector<f64>) -> Result<LqrAction> {
        let ds = s.len();
        let p: Vec<f64> = s.iter().chain(a0.iter()).copied().collect();
        let orbit = orbit_project_so2(&p, &self.split_layout(), self.pivot)?;
        let base_s = DVector::from_column_slice(&orbit.base_point[..ds]);
        let base_a = DVector::from_column_slice(&orbit.base_point[ds..]);
        let lin = linearize(&self.f, &base_s, &base_a, self.fd_step)?;
        let sol = dare_recursion(&lin, &self.cost, self.horizon)?;
        let base_action = -(&sol.k[0] * &base_s);
        let action = rotate_blocks(base_action.as_slice(), &self.action_layout, -orbit.angle);
        Ok(LqrAction {
            action: DVector::from_vec(action),
            orbit,
        })
    }

    /// Reference controller: Riccati recursion at the point itself.
    pub fn direct_act(&self, s: &DVector<f64>, a0: &DVector<f64>) -> Result<DVector<f64>> {
        let lin = linearize(&self.f, s, a0, self.fd_step)?;
        let sol = dare_recursion(&lin, &self.cost, self.horizon)?;
        Ok(-(&sol.k[0] * s))
    }

    /// Receding-horizon rollout on the true dynamics; returns the summed
    /// stage cost over `steps` plus the terminal state cost.
    pub fn rollout_cost(&self, s0: &DVector<f64>, steps: usize, equivariant: bool) -> Result<f64> {
        let mut s = s0.clone();
        let a0 = DVector::zeros(self.action_layout.iter().map(|f| f.dim(2)).sum());
        let mut total = 0.0;
        for _ in 0..steps {
            let a = if equivariant {
                self.act(&s, &a0)?.action
            } else {
                self.direct_act(&s, &a0)?
            };
            total += self.cost.stage(&s, &a);
            s = (self.f)(&s, &a)?;
        }
        Ok(total + (s.transpose() * &self.cost.q * &s)[(0, 0)])
    }
}

/// Residuals reported by `lqr check`.
#[derive(Debug, Clone, Serialize)]
pub struct LqrCheckReport {
    pub env: String,
    pub group: String,
    pub horizon: usize,
    pub linearization_residual: f64,
    pub riccati_residual: f64,
    /// Orbit-projected vs pointwise controller; planar point mass only.
    pub controller_max_discrepancy: Option<f64>,
}
