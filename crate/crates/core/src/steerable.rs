//! Steerable-kernel bases, the kernel constraint residual, free-parameter
//! counts, and canonicalisation of SO(2) orbits.
//!
//! A matrix-valued function `K` is steerable when
//! `K(g·x) = ρ_out(g) K(x) ρ_in(g)⁻¹` for every group element `g`. For a
//! constant `K` this is exactly the intertwiner condition.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::groups::{RepKind, Representation};
use crate::linalg::{self, NULLSPACE_REL_TOL};

/// Analytic or constant basis of a space of steerable kernels.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    dim_in: usize,
    dim_out: usize,
    elements: BasisElements,
}

#[derive(Debug, Clone)]
enum BasisElements {
    /// SO(2) kernels of type ρ₁ → ρ₁ on the circle, as functions of the angle.
    So2Vector,
    /// Constant intertwiners (finite groups), orthonormal in Frobenius norm.
    Constant(Vec<DMatrix<f64>>),
}

impl KernelBasis {
    pub fn dimension(&self) -> usize {
        match &self.elements {
            BasisElements::So2Vector => 4,
            BasisElements::Constant(m) => m.len(),
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// Evaluate every basis element at orbit coordinate `x` (an angle for the
    /// SO(2) basis, ignored for constant bases).
    pub fn evaluate(&self, x: f64) -> Vec<DMatrix<f64>> {
        match &self.elements {
            BasisElements::So2Vector => so2_vector_basis_at(x)
                .iter()
                .map(|m| DMatrix::from_column_slice(2, 2, m.as_slice()))
                .collect(),
            BasisElements::Constant(m) => m.clone(),
        }
    }

    /// Constant basis matrices; empty for analytic bases.
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        match &self.elements {
            BasisElements::Constant(m) => m,
            BasisElements::So2Vector => &[],
        }
    }

    /// Rank of the Gram matrix of the basis, with functions compared through
    /// their values on `points` sample coordinates.
    pub fn gram_rank(&self, points: &[f64]) -> usize {
        let d = self.dimension();
        if d == 0 {
            return 0;
        }
        let stacked: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                points
                    .iter()
                    .flat_map(|&x| linalg::vec_of(&self.evaluate(x)[k]))
                    .collect()
            })
            .collect();
        let gram = DMatrix::from_fn(d, d, |i, j| {
            stacked[i].iter().zip(&stacked[j]).map(|(a, b)| a * b).sum()
        });
        linalg::rank(&gram, 1e-10)
    }
}

fn so2_vector_basis_at(x: f64) -> [Matrix2<f64>; 4] {
    let (s, c) = (2.0 * x).sin_cos();
    [
        Matrix2::new(1.0, 0.0, 0.0, 1.0),
        Matrix2::new(0.0, -1.0, 1.0, 0.0),
        Matrix2::new(c, s, s, -c),
        // Reflection across the line at angle x + π/4.
        Matrix2::new(-s, c, c, s),
    ]
}

/// The four-element basis of 2×2 SO(2)-steerable kernels with input and
/// output type ρ₁, defined on the circle.
pub fn so2_kernel_basis_11() -> KernelBasis {
    KernelBasis {
        dim_in: 2,
        dim_out: 2,
        elements: BasisElements::So2Vector,
    }
}

/// Real spherical harmonics of degree 0, 1, 2 at a unit vector, without the
/// Condon–Shortley phase. Orders run m = −ℓ..=ℓ.
pub fn real_spherical_harmonics(u: &Vector3<f64>) -> ([f64; 1], [f64; 3], [f64; 5]) {
    let (x, y, z) = (u.x, u.y, u.z);
    let y0 = 0.5 / PI.sqrt();
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    let c2 = 0.5 * (15.0 / PI).sqrt();
    (
        [y0],
        [c1 * y, c1 * z, c1 * x],
        [
            c2 * x * y,
            c2 * y * z,
            0.25 * (5.0 / PI).sqrt() * (3.0 * z * z - 1.0),
            c2 * x * z,
            0.5 * c2 * (x * x - y * y),
        ],
    )
}

fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn sym_unit(i: usize, j: usize) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

/// SO(3)-steerable 3×3 kernel of type D¹ → D¹ at `x`, assembled from the
/// ℓ = 0, 1, 2 real spherical harmonics of `x/‖x‖` weighted by the radial
/// profile values `phi = (Φ₀, Φ₁, Φ₂)`.
pub fn so3_vector_kernel(x: &Vector3<f64>, phi: [f64; 3]) -> Result<Matrix3<f64>> {
    let r = x.norm();
    if !(r > 0.0) {
        return Err(Error::UndefinedDirection);
    }
    let u = x / r;
    let (y0, y1, y2) = real_spherical_harmonics(&u);
    // ℓ = 1 coupling: m = −1, 0, 1 ↔ y, z, x generators of so(3).
    let l1 = [hat(&Vector3::y()), hat(&Vector3::z()), hat(&Vector3::x())];
    // ℓ = 2 coupling: traceless symmetric matrices matching the harmonics.
    let l2 = [
        sym_unit(0, 1),
        sym_unit(1, 2),
        Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 2.0)) / 3f64.sqrt(),
        sym_unit(0, 2),
        Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 0.0)),
    ];
    let mut k = Matrix3::identity() * (phi[0] * y0[0]);
    for (y, l) in y1.iter().zip(&l1) {
        k += l * (phi[1] * y);
    }
    for (y, l) in y2.iter().zip(&l2) {
        k += l * (phi[2] * y);
    }
    Ok(k)
}

type CacheKey = (String, usize, RepKind, RepKind);

fn leaf_cache() -> &'static Mutex<HashMap<CacheKey, Arc<Vec<DMatrix<f64>>>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<Vec<DMatrix<f64>>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Stacked constraint matrix `[I ⊗ ρ_out(g) − ρ_in(g)ᵀ ⊗ I]` over the given
/// elements, acting on column-major `vec(M)`.
pub fn intertwiner_constraints(
    rep_in: &Representation,
    rep_out: &Representation,
    elements: &[usize],
) -> DMatrix<f64> {
    let (di, dout) = (rep_in.dim(), rep_out.dim());
    let n = di * dout;
    let mut c = DMatrix::zeros(elements.len() * n, n);
    for (b, &g) in elements.iter().enumerate() {
        let ro = rep_out.matrix(g);
        let ri = rep_in.matrix(g);
        // Column (j·dout + i) of the block is the image of the matrix unit E_ij.
        for j in 0..di {
            for i in 0..dout {
                let col = j * dout + i;
                // ρ_out E_ij = column i of ρ_out placed in column j.
                for r in 0..dout {
                    c[(b * n + j * dout + r, col)] += ro[(r, i)];
                }
                // E_ij ρ_in = row j of ρ_in placed in row i.
                for s in 0..di {
                    c[(b * n + s * dout + i, col)] -= ri[(j, s)];
                }
            }
        }
    }
    c
}

fn leaf_intertwiners(rep_in: &Representation, rep_out: &Representation) -> Arc<Vec<DMatrix<f64>>> {
    let group = rep_in.group();
    let key = (
        group.name().to_string(),
        group.order(),
        rep_in.kind().clone(),
        rep_out.kind().clone(),
    );
    if let Some(hit) = leaf_cache().lock().unwrap().get(&key) {
        return hit.clone();
    }
    let basis = Arc::new(solve_intertwiners(rep_in, rep_out));
    leaf_cache().lock().unwrap().insert(key, basis.clone());
    basis
}

fn solve_intertwiners(rep_in: &Representation, rep_out: &Representation) -> Vec<DMatrix<f64>> {
    let c = intertwiner_constraints(rep_in, rep_out, rep_in.group().generators());
    // Entries come from orthogonal matrices, so the natural scale is 1.
    let ns = linalg::nullspace_with_floor(&c, NULLSPACE_REL_TOL, 1.0);
    ns.column_iter()
        .map(|col| DMatrix::from_column_slice(rep_out.dim(), rep_in.dim(), col.as_slice()))
        .collect()
}

/// Orthonormal basis of Hom_G(ρ_in, ρ_out): all M with ρ_out(g) M = M ρ_in(g).
///
/// The nullspace of the stacked constraint system (over a generating set) is
/// extracted by SVD. Direct sums are solved per pair of summands and the
/// block solutions embedded, which spans the same space.
pub fn intertwiner_basis(rep_in: &Representation, rep_out: &Representation) -> Result<KernelBasis> {
    check_same_group(rep_in, rep_out)?;
    let mut out = Vec::new();
    let mut row = 0;
    for so in rep_out.summands() {
        let mut col = 0;
        for si in rep_in.summands() {
            for b in leaf_intertwiners(si, so).iter() {
                let mut m = DMatrix::zeros(rep_out.dim(), rep_in.dim());
                m.view_mut((row, col), (so.dim(), si.dim())).copy_from(b);
                out.push(m);
            }
            col += si.dim();
        }
        row += so.dim();
    }
    Ok(KernelBasis {
        dim_in: rep_in.dim(),
        dim_out: rep_out.dim(),
        elements: BasisElements::Constant(out),
    })
}

/// Per-summand-pair intertwiner bases, the shared building block of
/// equivariant linear layers.
pub fn block_intertwiners(
    rep_in: &Representation,
    rep_out: &Representation,
) -> Result<Arc<Vec<DMatrix<f64>>>> {
    check_same_group(rep_in, rep_out)?;
    Ok(leaf_intertwiners(rep_in, rep_out))
}

fn check_same_group(a: &Representation, b: &Representation) -> Result<()> {
    if a.group().name() != b.group().name() || a.group().order() != b.group().order() {
        return Err(Error::GroupMismatch(
            a.group().name().into(),
            b.group().name().into(),
        ));
    }
    Ok(())
}

/// Max over `samples` draws of ‖K(g·x) − ρ_out(g) K(x) ρ_in(g)ᵀ‖_∞.
///
/// `rho_in` must be orthogonal, so that ρ_in(g⁻¹) = ρ_in(g)ᵀ. `sample` draws
/// a group element and an orbit point from the seeded generator.
pub fn kernel_constraint_residual<G, X>(
    kernel: impl Fn(&X) -> DMatrix<f64>,
    rho_in: impl Fn(&G) -> DMatrix<f64>,
    rho_out: impl Fn(&G) -> DMatrix<f64>,
    act: impl Fn(&G, &X) -> X,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> (G, X),
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples.max(1) {
        let (g, x) = sample(&mut rng);
        let lhs = kernel(&act(&g, &x));
        let rhs = rho_out(&g) * kernel(&x) * rho_in(&g).transpose();
        worst = worst.max(linalg::max_abs_diff(&lhs, &rhs));
    }
    worst
}

/// Field types for continuous-group counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FieldType {
    Scalar,
    Vector,
}

impl FieldType {
    pub fn dim(self, space: usize) -> usize {
        match self {
            FieldType::Scalar => 1,
            FieldType::Vector => space,
        }
    }
}

/// Symmetry setting for [`free_parameter_count`].
#[derive(Debug, Clone)]
pub enum Symmetry<'a> {
    /// SO(2) acting on the plane; kernels live on circular orbits.
    So2 {
        fields_in: &'a [FieldType],
        fields_out: &'a [FieldType],
    },
    /// SO(3) acting on space; kernels live on spherical orbits.
    So3 {
        fields_in: &'a [FieldType],
        fields_out: &'a [FieldType],
    },
    Finite {
        rep_in: &'a Representation,
        rep_out: &'a Representation,
    },
}

fn so2_pair_dim(out: FieldType, inp: FieldType) -> usize {
    match (out, inp) {
        (FieldType::Scalar, FieldType::Scalar) => 1,
        (FieldType::Vector, FieldType::Vector) => 4,
        _ => 2,
    }
}

fn so3_pair_dim(out: FieldType, inp: FieldType) -> usize {
    match (out, inp) {
        (FieldType::Vector, FieldType::Vector) => 3,
        _ => 1,
    }
}

/// Free parameters of a linear map between the given spaces at one point of
/// the base space. Without equivariance this is `dim_out · dim_in`.
pub fn free_parameter_count(symmetry: &Symmetry<'_>, equivariant: bool) -> Result<usize> {
    let pairs = |fi: &[FieldType],
                 fo: &[FieldType],
                 space: usize,
                 per: fn(FieldType, FieldType) -> usize| {
        if equivariant {
            fo.iter()
                .flat_map(|&o| fi.iter().map(move |&i| per(o, i)))
                .sum()
        } else {
            let din: usize = fi.iter().map(|f| f.dim(space)).sum();
            let dout: usize = fo.iter().map(|f| f.dim(space)).sum();
            din * dout
        }
    };
    Ok(match symmetry {
        Symmetry::So2 {
            fields_in,
            fields_out,
        } => pairs(fields_in, fields_out, 2, so2_pair_dim),
        Symmetry::So3 {
            fields_in,
            fields_out,
        } => pairs(fields_in, fields_out, 3, so3_pair_dim),
        Symmetry::Finite { rep_in, rep_out } => {
            if equivariant {
                intertwiner_basis(rep_in, rep_out)?.dimension()
            } else {
                rep_in.dim() * rep_out.dim()
            }
        }
    })
}

/// Worked dimension examples for the free particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeParticleTask {
    Free2d,
    Free3d,
}

impl std::str::FromStr for FreeParticleTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free2d" => Ok(Self::Free2d),
            "free3d" => Ok(Self::Free3d),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (free2d|free3d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimensionReport {
    pub task: String,
    /// Coefficients of the A kernel per base point (equivariant).
    pub a_coefficients: usize,
    /// Coefficients of the B kernel per base point (equivariant).
    pub b_coefficients: usize,
    /// Base space as (positive-real factors, free real factors).
    pub base_space: (usize, usize),
    pub base_space_label: String,
    /// Unconstrained entries of A and B.
    pub a_free: usize,
    pub b_free: usize,
    /// Dimension of S × A.
    pub raw_domain_dim: usize,
}

impl DimensionReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: equivariant {}+{} over {}; non-equivariant {}+{} over R^{}",
            self.task,
            self.a_coefficients,
            self.b_coefficients,
            self.base_space_label,
            self.a_free,
            self.b_free,
            self.raw_domain_dim
        )
    }
}

/// Parameter counts for learning (A, B) of a free particle with state
/// (position, velocity) and force action.
pub fn free_particle_dimensions(task: FreeParticleTask) -> Result<DimensionReport> {
    use FieldType::Vector;
    let state = [Vector, Vector];
    let action = [Vector];
    let (name, space, base) = match task {
        FreeParticleTask::Free2d => ("free2d", 2usize, (1usize, 4usize)),
        FreeParticleTask::Free3d => ("free3d", 3, (1, 6)),
    };
    let sym = |fi, fo| match task {
        FreeParticleTask::Free2d => Symmetry::So2 {
            fields_in: fi,
            fields_out: fo,
        },
        FreeParticleTask::Free3d => Symmetry::So3 {
            fields_in: fi,
            fields_out: fo,
        },
    };
    let a_sym = sym(&state, &state);
    let b_sym = sym(&action, &state);
    Ok(DimensionReport {
        task: name.to_string(),
        a_coefficients: free_parameter_count(&a_sym, true)?,
        b_coefficients: free_parameter_count(&b_sym, true)?,
        base_space: base,
        base_space_label: format!("R+ x R^{}", base.1),
        a_free: free_parameter_count(&a_sym, false)?,
        b_free: free_parameter_count(&b_sym, false)?,
        raw_domain_dim: 3 * space,
    })
}

/// Canonical decomposition p = R(−angle)·base of a planar point.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitDecomposition {
    /// Orbit representative: the input rotated so that the pivot block lies
    /// on the positive first axis.
    pub base_point: Vec<f64>,
    /// Rotation angle that maps the input onto `base_point`.
    pub angle: f64,
    /// Block actually used as pivot, if any was non-degenerate.
    pub pivot: Option<usize>,
    /// ‖reconstruct(base) − p‖_∞.
    pub residual: f64,
}

impl OrbitDecomposition {
    /// The element g_p with p = g_p · base, as a rotation angle.
    pub fn group_coordinate(&self) -> f64 {
        -self.angle
    }
}

/// Rotate every vector block of `p` (laid out per `layout`) by `angle`.
pub fn rotate_blocks(p: &[f64], layout: &[FieldType], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = p.to_vec();
    let mut i = 0;
    for f in layout {
        match f {
            FieldType::Scalar => i += 1,
            FieldType::Vector => {
                let (x, y) = (p[i], p[i + 1]);
                out[i] = c * x - s * y;
                out[i + 1] = s * x + c * y;
                i += 2;
            }
        }
    }
    out
}

const DEGENERATE_PIVOT: f64 = 1e-12;

/// Project a planar state-action point to the SO(2) base space.
///
/// The point is split into blocks by `layout` (scalar blocks are left
/// untouched). The preferred pivot is the vector block with index `pivot`;
/// when its norm is below 1e-12 the vector block with the largest norm is
/// used instead, and if every vector block is degenerate the identity
/// coordinate is returned.
pub fn orbit_project_so2(
    p: &[f64],
    layout: &[FieldType],
    pivot: usize,
) -> Result<OrbitDecomposition> {
    let expected: usize = layout.iter().map(|f| f.dim(2)).sum();
    if p.len() != expected {
        return Err(Error::shape(expected, p.len()));
    }
    let mut offsets = Vec::new();
    let mut i = 0;
    for f in layout {
        offsets.push(i);
        i += f.dim(2);
    }
    let vector_norm = |b: usize| {
        let o = offsets[b];
        (p[o] * p[o] + p[o + 1] * p[o + 1]).sqrt()
    };
    let vectors: Vec<usize> = (0..layout.len())
        .filter(|&b| layout[b] == FieldType::Vector)
        .collect();
    let chosen = if vectors.contains(&pivot) && vector_norm(pivot) >= DEGENERATE_PIVOT {
        Some(pivot)
    } else {
        vectors
            .iter()
            .copied()
            .filter(|&b| vector_norm(b) >= DEGENERATE_PIVOT)
            .max_by(|&a, &b| vector_norm(a).total_cmp(&vector_norm(b)))
    };
    let angle = match chosen {
        Some(b) => -p[offsets[b] + 1].atan2(p[offsets[b]]),
        None => 0.0,
    };
    let mut base_point = rotate_blocks(p, layout, angle);
    if let Some(b) = chosen {
        // Exact canonical form for the pivot.
        base_point[offsets[b]] = vector_norm(b);
        base_point[offsets[b] + 1] = 0.0;
    }
    let back = rotate_blocks(&base_point, layout, -angle);
    let residual = back
        .iter()
        .zip(p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(OrbitDecomposition {
        base_point,
        angle,
        pivot: chosen,
        residual,
    })
}
