//! Finite symmetry groups stored as explicit orthogonal matrices, and their
//! linear representations.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when matching a matrix product against the element list.
const MATCH_TOL: f64 = 1e-8;

/// A finite subgroup of O(d), d ∈ {2, 3}, with a precomputed Cayley table.
#[derive(Clone)]
pub struct FiniteGroup {
    name: String,
    dim: usize,
    elements: Vec<DMatrix<f64>>,
    identity: usize,
    table: Vec<Vec<usize>>,
    inverses: Vec<usize>,
    generators: Vec<usize>,
}

impl fmt::Debug for FiniteGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteGroup")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("order", &self.order())
            .finish()
    }
}

fn snap_integer(x: &mut f64) {
    let r = x.round();
    if (*x - r).abs() < 1e-12 {
        *x = r;
    }
}

fn rot2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    let mut m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    m.apply(snap_integer);
    m
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn find_element(elements: &[DMatrix<f64>], m: &DMatrix<f64>) -> Option<usize> {
    elements.iter().position(|e| max_abs_diff(e, m) < MATCH_TOL)
}

/// Embed a 2×2 matrix as the upper-left block of a 3×3 matrix (rotation about z).
fn embed_z(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::identity(3, 3);
    out.view_mut((0, 0), (2, 2)).copy_from(m);
    out
}

impl FiniteGroup {
    fn from_elements(name: impl Into<String>, dim: usize, elements: Vec<DMatrix<f64>>) -> Self {
        let n = elements.len();
        let identity = find_element(&elements, &DMatrix::identity(dim, dim))
            .expect("element list must contain the identity");
        let table: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let prod = &elements[i] * &elements[j];
                        find_element(&elements, &prod).expect("element list is not closed")
                    })
                    .collect()
            })
            .collect();
        let inverses = (0..n)
            .map(|i| {
                (0..n)
                    .find(|&j| table[i][j] == identity)
                    .expect("missing inverse")
            })
            .collect();
        let mut group = FiniteGroup {
            name: name.into(),
            dim,
            elements,
            identity,
            table,
            inverses,
            generators: Vec::new(),
        };
        group.generators = group.greedy_generators();
        group
    }

    /// Close a generator set under multiplication. The identity is placed
    /// first and the remaining elements are sorted lexicographically on
    /// their rounded entries, so the ordering does not depend on the search.
    fn from_generators(name: &str, dim: usize, gens: &[DMatrix<f64>]) -> Self {
        let mut elements = vec![DMatrix::identity(dim, dim)];
        let mut frontier = vec![0usize];
        while let Some(i) = frontier.pop() {
            for g in gens {
                let prod = g * &elements[i];
                if find_element(&elements, &prod).is_none() {
                    elements.push(prod);
                    frontier.push(elements.len() - 1);
                }
            }
        }
        // Snap to exact values where the entries are integers.
        for e in elements.iter_mut() {
            e.apply(snap_integer);
        }
        let key = |m: &DMatrix<f64>| -> Vec<i64> {
            m.transpose()
                .iter()
                .map(|x| (x * 1e9).round() as i64)
                .collect()
        };
        let identity = elements.remove(0);
        elements.sort_by_key(key);
        elements.insert(0, identity);
        Self::from_elements(name, dim, elements)
    }

    fn greedy_generators(&self) -> Vec<usize> {
        let n = self.order();
        let mut gens = Vec::new();
        let mut member = vec![false; n];
        member[self.identity] = true;
        for cand in 0..n {
            if member[cand] {
                continue;
            }
            gens.push(cand);
            // Recompute the generated subgroup.
            let mut members = vec![self.identity];
            member = vec![false; n];
            member[self.identity] = true;
            let mut k = 0;
            while k < members.len() {
                let x = members[k];
                for &g in &gens {
                    let y = self.table[g][x];
                    if !member[y] {
                        member[y] = true;
                        members.push(y);
                    }
                }
                k += 1;
            }
            if members.len() == n {
                break;
            }
        }
        gens
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Spatial dimension d of the defining matrices.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[DMatrix<f64>] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &DMatrix<f64> {
        &self.elements[i]
    }

    pub fn identity_index(&self) -> usize {
        self.identity
    }

    /// Index of `E_i · E_j`.
    pub fn mul(&self, i: usize, j: usize) -> usize {
        self.table[i][j]
    }

    pub fn inverse(&self, i: usize) -> usize {
        self.inverses[i]
    }

    /// A generating set, found greedily in element order.
    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    /// Determinant (±1) of element `i`.
    pub fn det(&self, i: usize) -> f64 {
        self.elements[i].determinant().signum()
    }

    /// Max over pairs of ‖E_i E_j − E_{table[i][j]}‖_∞.
    pub fn closure_residual(&self) -> f64 {
        let n = self.order();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let prod = &self.elements[i] * &self.elements[j];
                worst = worst.max(max_abs_diff(&prod, &self.elements[self.table[i][j]]));
            }
        }
        worst
    }

    /// Max over elements of ‖EᵀE − I‖_∞.
    pub fn orthogonality_residual(&self) -> f64 {
        let eye = DMatrix::identity(self.dim, self.dim);
        self.elements
            .iter()
            .map(|e| max_abs_diff(&(e.transpose() * e), &eye))
            .fold(0.0, f64::max)
    }

    /// Max over elements of ‖E E⁻¹ − I‖_∞ using the stored inverse table.
    pub fn inverse_residual(&self) -> f64 {
        let eye = DMatrix::identity(self.dim, self.dim);
        (0..self.order())
            .map(|i| {
                max_abs_diff(
                    &(&self.elements[i] * &self.elements[self.inverses[i]]),
                    &eye,
                )
            })
            .fold(0.0, f64::max)
    }

    /// Embed a planar group into 3D as rotations/reflections fixing the z axis.
    pub fn embed_3d(&self) -> FiniteGroup {
        assert_eq!(self.dim, 2, "only planar groups can be embedded");
        let elements = self.elements.iter().map(embed_z).collect();
        Self::from_elements(format!("{}z", self.name), 3, elements)
    }
}

/// Cyclic group C_n ⊂ SO(2): rotations by 2πk/n, identity first.
pub fn make_cyclic(n: usize) -> Result<FiniteGroup> {
    if n == 0 {
        return Err(Error::InvalidOrder(n));
    }
    let elements = (0..n)
        .map(|k| rot2(2.0 * PI * k as f64 / n as f64))
        .collect();
    Ok(FiniteGroup::from_elements(format!("C{n}"), 2, elements))
}

/// Dihedral group D_n ⊂ O(2): n rotations followed by n reflections R_k·diag(1,−1).
pub fn make_dihedral(n: usize) -> Result<FiniteGroup> {
    if n == 0 {
        return Err(Error::InvalidOrder(n));
    }
    let flip = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let rotations: Vec<_> = (0..n)
        .map(|k| rot2(2.0 * PI * k as f64 / n as f64))
        .collect();
    let mut elements = rotations.clone();
    elements.extend(rotations.iter().map(|r| r * &flip));
    Ok(FiniteGroup::from_elements(format!("D{n}"), 2, elements))
}

fn axis_rotation(axis: Vector3<f64>, angle: f64) -> DMatrix<f64> {
    let r: Matrix3<f64> = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into();
    DMatrix::from_iterator(3, 3, r.iter().copied())
}

/// Rotation group of the cube (order 24).
pub fn make_octahedral() -> FiniteGroup {
    let gens = [
        axis_rotation(Vector3::z(), PI / 2.0),
        axis_rotation(Vector3::x(), PI / 2.0),
    ];
    FiniteGroup::from_generators("octahedral", 3, &gens)
}

/// Rotation group of the icosahedron (order 60): a five-fold rotation about
/// the vertex axis (0, 1, φ) and a two-fold rotation about the z edge axis.
pub fn make_icosahedral() -> FiniteGroup {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let gens = [
        axis_rotation(Vector3::new(0.0, 1.0, phi), 2.0 * PI / 5.0),
        axis_rotation(Vector3::z(), PI),
    ];
    FiniteGroup::from_generators("icosahedral", 3, &gens)
}

/// The identity-only group in dimension `dim`.
pub fn make_trivial(dim: usize) -> FiniteGroup {
    FiniteGroup::from_elements("none", dim, vec![DMatrix::identity(dim, dim)])
}

/// Resolve a group by name: `C<n>`, `D<n>`, `octa[hedral]`, `icosa[hedral]`,
/// `none`. Planar groups requested in 3D act about the z axis.
pub fn group_by_name(name: &str, dim: usize) -> Result<FiniteGroup> {
    let lower = name.to_ascii_lowercase();
    let bad = || Error::UnknownGroup(name.to_string());
    let group = match lower.as_str() {
        "none" | "trivial" | "c1" if dim == 3 => make_trivial(3),
        "none" | "trivial" => make_trivial(dim),
        "octa" | "octahedral" | "o" => make_octahedral(),
        "icosa" | "icosahedral" | "i" => make_icosahedral(),
        _ => {
            let (kind, order) = lower.split_at(1);
            let n: usize = order.parse().map_err(|_| bad())?;
            let planar = match kind {
                "c" => make_cyclic(n)?,
                "d" => make_dihedral(n)?,
                _ => return Err(bad()),
            };
            match dim {
                2 => planar,
                3 => planar.embed_3d(),
                _ => return Err(bad()),
            }
        }
    };
    if group.dim() != dim {
        return Err(Error::Config(format!(
            "group `{name}` acts in {}D but {dim}D was requested",
            group.dim()
        )));
    }
    Ok(group)
}

/// Constructor tag of a representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RepKind {
    Trivial,
    /// The group's own defining matrices.
    Standard,
    /// Left-translation permutation representation.
    Regular,
    /// g ↦ det(g), the sign representation of reflections.
    Determinant,
    DirectSum,
}

/// A linear representation ρ: G → GL(V), stored as one matrix per element.
#[derive(Clone)]
pub struct Representation {
    group: Arc<FiniteGroup>,
    kind: RepKind,
    dim: usize,
    matrices: Vec<DMatrix<f64>>,
    /// Leaf summands for direct sums (flattened); `[self]` otherwise.
    summands: Vec<Representation>,
}

impl fmt::Debug for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Representation({}, {:?}, dim={})",
            self.group.name(),
            self.kind,
            self.dim
        )
    }
}

impl Representation {
    fn leaf(group: Arc<FiniteGroup>, kind: RepKind, matrices: Vec<DMatrix<f64>>) -> Self {
        let dim = matrices[0].nrows();
        Representation {
            group,
            kind,
            dim,
            matrices,
            summands: Vec::new(),
        }
    }

    pub fn trivial(group: &Arc<FiniteGroup>) -> Self {
        let m = vec![DMatrix::identity(1, 1); group.order()];
        Self::leaf(group.clone(), RepKind::Trivial, m)
    }

    pub fn standard(group: &Arc<FiniteGroup>) -> Self {
        Self::leaf(group.clone(), RepKind::Standard, group.elements().to_vec())
    }

    pub fn determinant(group: &Arc<FiniteGroup>) -> Self {
        let m = (0..group.order())
            .map(|i| DMatrix::from_element(1, 1, group.det(i)))
            .collect();
        Self::leaf(group.clone(), RepKind::Determinant, m)
    }

    /// The |G|-dimensional left-regular representation: ρ(g) e_h = e_{gh}.
    pub fn regular(group: &Arc<FiniteGroup>) -> Self {
        let n = group.order();
        let m = (0..n)
            .map(|g| {
                let mut p = DMatrix::zeros(n, n);
                for h in 0..n {
                    p[(group.mul(g, h), h)] = 1.0;
                }
                p
            })
            .collect();
        Self::leaf(group.clone(), RepKind::Regular, m)
    }

    /// Block-diagonal direct sum. A single summand is returned unchanged.
    pub fn direct_sum(reps: &[Representation]) -> Result<Self> {
        let first = reps
            .first()
            .ok_or_else(|| Error::Config("empty direct sum".into()))?;
        for r in reps {
            if !Arc::ptr_eq(&r.group, &first.group) && r.group.name() != first.group.name() {
                return Err(Error::GroupMismatch(
                    first.group.name().to_string(),
                    r.group.name().to_string(),
                ));
            }
        }
        if reps.len() == 1 {
            return Ok(first.clone());
        }
        let dim: usize = reps.iter().map(|r| r.dim).sum();
        let matrices = (0..first.group.order())
            .map(|g| {
                let mut m = DMatrix::zeros(dim, dim);
                let mut off = 0;
                for r in reps {
                    m.view_mut((off, off), (r.dim, r.dim))
                        .copy_from(&r.matrices[g]);
                    off += r.dim;
                }
                m
            })
            .collect();
        let summands = reps
            .iter()
            .flat_map(|r| r.summands().iter().cloned())
            .collect();
        Ok(Representation {
            group: first.group.clone(),
            kind: RepKind::DirectSum,
            dim,
            matrices,
            summands,
        })
    }

    /// `copies` copies of `rep` summed together.
    pub fn multiple(rep: &Representation, copies: usize) -> Result<Self> {
        Self::direct_sum(&vec![rep.clone(); copies])
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn kind(&self) -> &RepKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self, g: usize) -> &DMatrix<f64> {
        &self.matrices[g]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Irreducible-or-leaf summands in block order.
    pub fn summands(&self) -> &[Representation] {
        if self.summands.is_empty() {
            std::slice::from_ref(self)
        } else {
            &self.summands
        }
    }

    /// ρ(g)·v.
    pub fn apply(&self, g: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim {
            return Err(Error::shape(self.dim, v.len()));
        }
        Ok(&self.matrices[g] * v)
    }

    /// Max over pairs of ‖ρ(g)ρ(h) − ρ(gh)‖_∞.
    pub fn homomorphism_residual(&self) -> f64 {
        let n = self.group.order();
        let mut worst = 0.0f64;
        for g in 0..n {
            for h in 0..n {
                let lhs = &self.matrices[g] * &self.matrices[h];
                worst = worst.max(max_abs_diff(&lhs, &self.matrices[self.group.mul(g, h)]));
            }
        }
        worst
    }

    /// χ(g) = tr ρ(g).
    pub fn character(&self, g: usize) -> f64 {
        self.matrices[g].trace()
    }

    /// Short text label used in checkpoints and CLI output.
    pub fn label(&self) -> String {
        match self.kind {
            RepKind::Trivial => "trivial".into(),
            RepKind::Standard => "standard".into(),
            RepKind::Regular => "regular".into(),
            RepKind::Determinant => "det".into(),
            RepKind::DirectSum => self
                .summands()
                .iter()
                .map(Representation::label)
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

/// Parse a representation spec such as `standard`, `regular`, `trivial`,
/// `det`, or sums like `standard+standard` / `2*regular+trivial`.
pub fn parse_rep(group: &Arc<FiniteGroup>, spec: &str) -> Result<Representation> {
    let mut parts = Vec::new();
    for term in spec.split('+') {
        let term = term.trim();
        let (count, name) = match term.split_once('*') {
            Some((c, n)) => (
                c.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad rep term `{term}`")))?,
                n.trim(),
            ),
            None => (1, term),
        };
        let rep = match name {
            "trivial" | "triv" => Representation::trivial(group),
            "standard" | "std" => Representation::standard(group),
            "regular" | "reg" => Representation::regular(group),
            "det" | "sign" => Representation::determinant(group),
            _ => return Err(Error::Config(format!("unknown representation `{name}`"))),
        };
        parts.extend(std::iter::repeat_n(rep, count));
    }
    Representation::direct_sum(&parts)
}

/// Apply `rep(g)` to `v` (convenience wrapper around [`Representation::apply`]).
pub fn rep_apply(rep: &Representation, g: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
    rep.apply(g, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_groups() -> Vec<FiniteGroup> {
        vec![
            make_cyclic(1).unwrap(),
            make_cyclic(4).unwrap(),
            make_cyclic(8).unwrap(),
            make_dihedral(2).unwrap(),
            make_dihedral(4).unwrap(),
            make_dihedral(8).unwrap(),
            make_octahedral(),
            make_icosahedral(),
            make_dihedral(4).unwrap().embed_3d(),
        ]
    }

    #[test]
    fn group_axioms_hold() {
        for g in all_groups() {
            assert!(g.closure_residual() < 1e-10, "{}", g.name());
            assert!(g.orthogonality_residual() < 1e-10, "{}", g.name());
            assert!(g.inverse_residual() < 1e-10, "{}", g.name());
            assert_eq!(g.identity_index(), 0);
        }
    }

    #[test]
    fn cyclic_orders_and_elements() {
        assert!(matches!(make_cyclic(0), Err(Error::InvalidOrder(0))));
        let c1 = make_cyclic(1).unwrap();
        assert_eq!(c1.order(), 1);
        assert_eq!(c1.element(0), &DMatrix::<f64>::identity(2, 2));
        let c4 = make_cyclic(4).unwrap();
        let quarter = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(find_element(c4.elements(), &quarter).is_some());
        assert_eq!(make_cyclic(8).unwrap().order(), 8);
    }

    #[test]
    fn dihedral_orders_and_elements() {
        assert!(matches!(make_dihedral(0), Err(Error::InvalidOrder(0))));
        assert_eq!(make_dihedral(4).unwrap().order(), 8);
        assert_eq!(make_dihedral(8).unwrap().order(), 16);
        let d2 = make_dihedral(2).unwrap();
        let minus = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let flip = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(find_element(d2.elements(), &minus).is_some());
        assert!(find_element(d2.elements(), &flip).is_some());
    }

    #[test]
    fn polyhedral_orders() {
        assert_eq!(make_octahedral().order(), 24);
        assert_eq!(make_icosahedral().order(), 60);
    }

    #[test]
    fn octahedral_is_signed_permutations_with_unit_determinant() {
        let octa = make_octahedral();
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut count = 0;
        for p in perms {
            for signs in 0..8u32 {
                let mut m = DMatrix::zeros(3, 3);
                for (row, &col) in p.iter().enumerate() {
                    m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
                }
                if m.determinant() > 0.0 {
                    count += 1;
                    assert!(find_element(octa.elements(), &m).is_some());
                }
            }
        }
        assert_eq!(count, 24);
    }

    #[test]
    fn ordering_is_reproducible() {
        let a = make_icosahedral();
        let b = make_icosahedral();
        for (x, y) in a.elements().iter().zip(b.elements()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn generators_generate() {
        for g in all_groups() {
            let mut seen = vec![false; g.order()];
            let mut stack = vec![g.identity_index()];
            seen[g.identity_index()] = true;
            while let Some(x) = stack.pop() {
                for &s in g.generators() {
                    let y = g.mul(s, x);
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            assert!(seen.iter().all(|&s| s), "{}", g.name());
        }
        assert_eq!(make_cyclic(8).unwrap().generators().len(), 1);
    }

    #[test]
    fn regular_rep_is_permutation_homomorphism() {
        for g in all_groups() {
            let g = Arc::new(g);
            let reg = Representation::regular(&g);
            assert!(reg.homomorphism_residual() < 1e-12);
            for m in reg.matrices() {
                assert!(m.iter().all(|&x| x == 0.0 || x == 1.0));
                for i in 0..m.nrows() {
                    assert_eq!(m.row(i).sum(), 1.0);
                    assert_eq!(m.column(i).sum(), 1.0);
                }
            }
        }
    }

    #[test]
    fn regular_rep_of_small_groups() {
        let c1 = Arc::new(make_cyclic(1).unwrap());
        assert_eq!(
            Representation::regular(&c1).matrix(0),
            &DMatrix::<f64>::identity(1, 1)
        );
        let c4 = Arc::new(make_cyclic(4).unwrap());
        let reg = Representation::regular(&c4);
        // generator shifts e_k to e_{k+1 mod 4}
        let shift = reg.matrix(1);
        for k in 0..4 {
            assert_eq!(shift[((k + 1) % 4, k)], 1.0);
        }
    }

    #[test]
    fn direct_sum_blocks() {
        let c4 = Arc::new(make_cyclic(4).unwrap());
        let std = Representation::standard(&c4);
        let triv = Representation::trivial(&c4);
        let single = Representation::direct_sum(std::slice::from_ref(&triv)).unwrap();
        assert_eq!(single.kind(), &RepKind::Trivial);
        let s = Representation::direct_sum(&[std.clone(), std.clone()]).unwrap();
        assert_eq!(s.dim(), 4);
        let m = s.matrix(1);
        assert_eq!(m.view((0, 0), (2, 2)).into_owned(), c4.element(1).clone());
        assert_eq!(m.view((2, 2), (2, 2)).into_owned(), c4.element(1).clone());
        assert_eq!(m.view((0, 2), (2, 2)).abs().sum(), 0.0);
        let five = Representation::direct_sum(&[std.clone(), triv, std]).unwrap();
        assert_eq!(five.dim(), 5);
        assert_eq!(five.summands().len(), 3);
        assert!(five.homomorphism_residual() < 1e-12);

        let d4 = Arc::new(make_dihedral(4).unwrap());
        let err = Representation::direct_sum(&[Representation::trivial(&d4), s]).unwrap_err();
        assert!(matches!(err, Error::GroupMismatch(..)));
    }

    #[test]
    fn apply_checks_shape_and_acts() {
        let c4 = Arc::new(make_cyclic(4).unwrap());
        let std = Representation::standard(&c4);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(rep_apply(&std, 0, &v).unwrap(), v);
        let w = rep_apply(&std, 1, &v).unwrap();
        assert!((w[0]).abs() < 1e-15 && (w[1] - 1.0).abs() < 1e-15);
        assert!(matches!(
            rep_apply(&std, 0, &DVector::zeros(3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn composed_application_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in all_groups() {
            let g = Arc::new(g);
            let rep = Representation::direct_sum(&[
                Representation::standard(&g),
                Representation::regular(&g),
                Representation::determinant(&g),
            ])
            .unwrap();
            assert!(rep.homomorphism_residual() < 1e-10);
            for _ in 0..5 {
                let v = DVector::from_fn(rep.dim(), |_, _| rng.random_range(-1.0..1.0));
                for a in 0..g.order() {
                    for b in 0..g.order() {
                        let two = rep.apply(a, &rep.apply(b, &v).unwrap()).unwrap();
                        let one = rep.apply(g.mul(a, b), &v).unwrap();
                        assert!((two - one).amax() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn group_lookup_by_name() {
        assert_eq!(group_by_name("D8", 2).unwrap().order(), 16);
        assert_eq!(group_by_name("C4", 3).unwrap().dim(), 3);
        assert_eq!(group_by_name("octa", 3).unwrap().order(), 24);
        assert_eq!(group_by_name("none", 3).unwrap().order(), 1);
        assert!(group_by_name("octa", 2).is_err());
        assert!(group_by_name("Q8", 2).is_err());
    }

    #[test]
    fn parse_rep_specs() {
        let d4 = Arc::new(make_dihedral(4).unwrap());
        let r = parse_rep(&d4, "2*standard+trivial").unwrap();
        assert_eq!(r.dim(), 5);
        assert_eq!(r.label(), "standard+standard+trivial");
        assert!(parse_rep(&d4, "bogus").is_err());
    }
}
