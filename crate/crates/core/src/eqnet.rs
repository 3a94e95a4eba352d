//! Equivariant multilayer perceptrons.
//!
//! Each linear layer is parameterised directly by coefficients over the
//! intertwiner basis between its input and output representations, so every
//! parameter setting is exactly equivariant. Hidden layers carry copies of
//! the regular representation, which acts by permutations and therefore
//! commutes with the pointwise nonlinearity.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::Representation;
use crate::steerable::block_intertwiners;

/// Group-averaging projection of `w` onto Hom_G(ρ_in, ρ_out):
/// `(1/|G|) Σ_g ρ_out(g⁻¹) W ρ_in(g)`.
pub fn project_weight(
    w: &DMatrix<f64>,
    rep_in: &Representation,
    rep_out: &Representation,
) -> Result<DMatrix<f64>> {
    if w.nrows() != rep_out.dim() {
        return Err(Error::shape(rep_out.dim(), w.nrows()));
    }
    if w.ncols() != rep_in.dim() {
        return Err(Error::shape(rep_in.dim(), w.ncols()));
    }
    let group = rep_in.group();
    let mut acc = DMatrix::zeros(w.nrows(), w.ncols());
    for g in 0..group.order() {
        acc += rep_out.matrix(group.inverse(g)) * w * rep_in.matrix(g);
    }
    Ok(acc / group.order() as f64)
}

#[derive(Debug, Clone)]
struct Block {
    row: usize,
    col: usize,
    basis: Arc<Vec<DMatrix<f64>>>,
    offset: usize,
}

/// Linear map `x ↦ W x + b` with `W = Σ cᵢ Bᵢ` over an intertwiner basis and
/// `b` restricted to the trivial-isotypic part of the output.
#[derive(Debug, Clone)]
pub struct EqLinear {
    rep_in: Representation,
    rep_out: Representation,
    blocks: Vec<Block>,
    bias_blocks: Vec<Block>,
    coeffs: Vec<f64>,
    bias: Vec<f64>,
    weight: DMatrix<f64>,
    bias_vec: DVector<f64>,
}

impl EqLinear {
    /// Layer with all coefficients zero.
    pub fn zeros(rep_in: &Representation, rep_out: &Representation) -> Result<Self> {
        let trivial = Representation::trivial(rep_in.group());
        let mut blocks = Vec::new();
        let mut bias_blocks = Vec::new();
        let mut n_coeffs = 0;
        let mut n_bias = 0;
        let mut row = 0;
        for so in rep_out.summands() {
            let mut col = 0;
            for si in rep_in.summands() {
                let basis = block_intertwiners(si, so)?;
                if !basis.is_empty() {
                    let len = basis.len();
                    blocks.push(Block {
                        row,
                        col,
                        basis,
                        offset: n_coeffs,
                    });
                    n_coeffs += len;
                }
                col += si.dim();
            }
            let fixed = block_intertwiners(&trivial, so)?;
            if !fixed.is_empty() {
                let len = fixed.len();
                bias_blocks.push(Block {
                    row,
                    col: 0,
                    basis: fixed,
                    offset: n_bias,
                });
                n_bias += len;
            }
            row += so.dim();
        }
        Ok(EqLinear {
            rep_in: rep_in.clone(),
            rep_out: rep_out.clone(),
            blocks,
            bias_blocks,
            coeffs: vec![0.0; n_coeffs],
            bias: vec![0.0; n_bias],
            weight: DMatrix::zeros(rep_out.dim(), rep_in.dim()),
            bias_vec: DVector::zeros(rep_out.dim()),
        })
    }

    /// Random coefficients with std `sqrt(dim_out / basis_dim)`, which gives
    /// weight entries of variance ≈ 1/dim_in for an orthonormal basis.
    pub fn random(
        rep_in: &Representation,
        rep_out: &Representation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layer = Self::zeros(rep_in, rep_out)?;
        if !layer.coeffs.is_empty() {
            let fan_in_effective = layer.coeffs.len() as f64 / rep_out.dim() as f64;
            let normal = Normal::new(0.0, 1.0 / fan_in_effective.sqrt()).unwrap();
            for c in layer.coeffs.iter_mut() {
                *c = normal.sample(rng);
            }
        }
        layer.refresh();
        Ok(layer)
    }

    fn refresh(&mut self) {
        self.weight.fill(0.0);
        for b in &self.blocks {
            let m0 = &b.basis[0];
            let mut view = self.weight.view_mut((b.row, b.col), m0.shape());
            for (k, m) in b.basis.iter().enumerate() {
                let c = self.coeffs[b.offset + k];
                if c != 0.0 {
                    view.zip_apply(m, |w, x| *w += c * x);
                }
            }
        }
        self.bias_vec.fill(0.0);
        for b in &self.bias_blocks {
            for (k, v) in b.basis.iter().enumerate() {
                let c = self.bias[b.offset + k];
                let mut view = self.bias_vec.rows_mut(b.row, v.nrows());
                for r in 0..v.nrows() {
                    view[r] += c * v[(r, 0)];
                }
            }
        }
    }

    pub fn rep_in(&self) -> &Representation {
        &self.rep_in
    }

    pub fn rep_out(&self) -> &Representation {
        &self.rep_out
    }

    pub fn num_coefficients(&self) -> usize {
        self.coeffs.len()
    }

    pub fn num_bias(&self) -> usize {
        self.bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len() + self.bias.len()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias_vector(&self) -> &DVector<f64> {
        &self.bias_vec
    }

    /// Set coefficients so that `W` is the orthogonal projection of `target`
    /// onto the layer's equivariant subspace, and zero the bias.
    pub fn fit_weight(&mut self, target: &DMatrix<f64>) {
        for b in &self.blocks {
            let view = target.view((b.row, b.col), b.basis[0].shape());
            for (k, m) in b.basis.iter().enumerate() {
                self.coeffs[b.offset + k] = view.iter().zip(m.iter()).map(|(a, c)| a * c).sum();
            }
        }
        self.bias.fill(0.0);
        self.refresh();
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.coeffs);
        out.extend_from_slice(&self.bias);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let n = self.coeffs.len();
        self.coeffs.copy_from_slice(&src[..n]);
        let m = self.bias.len();
        self.bias.copy_from_slice(&src[n..n + m]);
        self.refresh();
        n + m
    }

    /// Columns of `x` are samples.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.weight * x;
        for mut col in y.column_iter_mut() {
            col += &self.bias_vec;
        }
        y
    }

    /// Accumulate dL/d(coeffs, bias) into `grad` given layer input `x` and
    /// upstream `dy`; returns dL/dx.
    fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let dw = dy * x.transpose();
        for b in &self.blocks {
            let view = dw.view((b.row, b.col), b.basis[0].shape());
            for (k, m) in b.basis.iter().enumerate() {
                grad[b.offset + k] += view.iter().zip(m.iter()).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        let db = dy.column_sum();
        let nc = self.coeffs.len();
        for b in &self.bias_blocks {
            for (k, v) in b.basis.iter().enumerate() {
                let s: f64 = (0..v.nrows()).map(|r| db[b.row + r] * v[(r, 0)]).sum();
                grad[nc + b.offset + k] += s;
            }
        }
        self.weight.transpose() * dy
    }
}

/// How hidden widths scale with the group order relative to a baseline width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthStrategy {
    /// Regular-rep copies = ⌈width / √|G|⌉: parameter count ≈ baseline.
    Sqrt,
    /// Regular-rep copies = ⌈width / |G|⌉: hidden dimension ≈ baseline.
    Linear,
    /// Regular-rep copies = width.
    None,
}

impl WidthStrategy {
    pub fn copies(self, baseline_width: usize, group_order: usize) -> usize {
        let w = baseline_width as f64;
        let n = group_order as f64;
        let c = match self {
            WidthStrategy::Sqrt => (w / n.sqrt()).ceil(),
            WidthStrategy::Linear => (w / n).ceil(),
            WidthStrategy::None => w,
        };
        (c as usize).max(1)
    }
}

impl std::str::FromStr for WidthStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Self::Sqrt),
            "linear" => Ok(Self::Linear),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!("unknown width strategy `{s}`"))),
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Activations recorded by [`EqMlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    preacts: Vec<DMatrix<f64>>,
}

/// Equivariant MLP: ELU between layers, none after the last.
#[derive(Debug, Clone)]
pub struct EqMlp {
    layers: Vec<EqLinear>,
    width_strategy: WidthStrategy,
}

impl EqMlp {
    /// Build a network with `depth` linear layers whose hidden
    /// representations are multiples of the regular representation.
    pub fn init(
        rep_in: &Representation,
        rep_out: &Representation,
        baseline_width: usize,
        depth: usize,
        width_strategy: WidthStrategy,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(
            rep_in,
            rep_out,
            baseline_width,
            depth,
            width_strategy,
            &mut rng,
        )
    }

    pub fn init_with_rng(
        rep_in: &Representation,
        rep_out: &Representation,
        baseline_width: usize,
        depth: usize,
        width_strategy: WidthStrategy,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("network depth must be at least 1".into()));
        }
        let group = rep_in.group();
        let copies = width_strategy.copies(baseline_width, group.order());
        let hidden = Representation::multiple(&Representation::regular(group), copies)?;
        let mut reps = vec![rep_in.clone()];
        reps.extend(std::iter::repeat_n(hidden, depth - 1));
        reps.push(rep_out.clone());
        let layers = reps
            .windows(2)
            .map(|w| EqLinear::random(&w[0], &w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(EqMlp {
            layers,
            width_strategy,
        })
    }

    pub fn from_layers(layers: Vec<EqLinear>, width_strategy: WidthStrategy) -> Self {
        EqMlp {
            layers,
            width_strategy,
        }
    }

    pub fn layers(&self) -> &[EqLinear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [EqLinear] {
        &mut self.layers
    }

    pub fn width_strategy(&self) -> WidthStrategy {
        self.width_strategy
    }

    pub fn rep_in(&self) -> &Representation {
        self.layers[0].rep_in()
    }

    pub fn rep_out(&self) -> &Representation {
        self.layers.last().unwrap().rep_out()
    }

    /// Hidden regular-representation copies (0 for a single-layer net).
    pub fn hidden_copies(&self) -> usize {
        if self.layers.len() < 2 {
            return 0;
        }
        self.layers[0].rep_out().dim() / self.rep_in().group().order()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(EqLinear::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), src.len()));
        }
        let mut off = 0;
        for l in self.layers.iter_mut() {
            off += l.read_params(&src[off..]);
        }
        Ok(())
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.rep_in().dim() {
            return Err(Error::shape(self.rep_in().dim(), rows));
        }
        Ok(())
    }

    /// Batched forward pass; columns of `x` are samples.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            h.apply(|v| *v = elu(*v));
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x.len())?;
        let out = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
        Ok(out.column(0).into_owned())
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = z.map(elu);
                preacts.push(z);
            } else {
                h = z;
            }
        }
        (h, ForwardCache { inputs, preacts })
    }

    /// Backpropagate `upstream` = dL/d(output); parameter gradients are
    /// accumulated into `grad` (layout of [`EqMlp::params`]). Returns dL/dx.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &DMatrix<f64>,
        grad: &mut [f64],
    ) -> DMatrix<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.num_params();
        }
        let mut d = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grad[offsets[i]..offsets[i] + layer.num_params()];
            let dx = layer.backward(&cache.inputs[i], &d, g);
            if i > 0 {
                d = dx.zip_map(&cache.preacts[i - 1], |a, z| a * elu_grad(z));
            } else {
                d = dx;
            }
        }
        d
    }

    /// Max over all group elements and `samples` random inputs of
    /// ‖ρ_out(g) net(x) − net(ρ_in(g) x)‖_∞.
    pub fn equivariance_residual(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (ri, ro) = (self.rep_in(), self.rep_out());
        let x = DMatrix::from_fn(ri.dim(), samples, |_, _| normal.sample(&mut rng));
        let y = self.forward_batch(&x);
        let mut worst = 0.0f64;
        for g in 0..ri.group().order() {
            let lhs = ro.matrix(g) * &y;
            let rhs = self.forward_batch(&(ri.matrix(g) * &x));
            worst = worst.max((lhs - rhs).amax());
        }
        worst
    }
}

/// Parameter gradient of `upstream · net(x)` for a single input.
pub fn eqmlp_grad(net: &EqMlp, x: &DVector<f64>, upstream: &DVector<f64>) -> Result<Vec<f64>> {
    net.check_input(x.len())?;
    if upstream.len() != net.rep_out().dim() {
        return Err(Error::shape(net.rep_out().dim(), upstream.len()));
    }
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let (_, cache) = net.forward_cached(&xm);
    let mut grad = vec![0.0; net.num_params()];
    net.backward(
        &cache,
        &DMatrix::from_column_slice(upstream.len(), 1, upstream.as_slice()),
        &mut grad,
    );
    Ok(grad)
}

/// First-order optimisers over flat parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Momentum {
        lr: f64,
        momentum: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        Optimizer {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// In-place descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Momentum { lr, momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(self.m.iter_mut()) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let b1t = 1.0 - beta1.powi(self.t as i32);
                let b2t = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / b1t;
                    let vh = self.v[i] / b2t;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// Layer description stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    pub rep_in: String,
    pub rep_out: String,
    pub dim_in: usize,
    pub dim_out: usize,
    pub coefficients: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHeader {
    pub name: String,
    pub width_strategy: WidthStrategy,
    pub layers: Vec<LayerHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub group: String,
    pub rng_seed: u64,
    pub nets: Vec<NetHeader>,
    pub num_params: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GMDPCKPT";

impl NetHeader {
    pub fn describe(name: &str, net: &EqMlp) -> Self {
        NetHeader {
            name: name.to_string(),
            width_strategy: net.width_strategy(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerHeader {
                    rep_in: l.rep_in().label(),
                    rep_out: l.rep_out().label(),
                    dim_in: l.rep_in().dim(),
                    dim_out: l.rep_out().dim(),
                    coefficients: l.num_coefficients(),
                    bias: l.num_bias(),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.coefficients + l.bias).sum()
    }
}

/// Write `magic | u32 LE header length | JSON header | f64 LE parameters`.
pub fn write_checkpoint(
    mut w: impl Write,
    group: &str,
    rng_seed: u64,
    nets: &[(&str, &EqMlp)],
    extra: serde_json::Value,
) -> Result<()> {
    let headers: Vec<NetHeader> = nets
        .iter()
        .map(|(n, net)| NetHeader::describe(n, net))
        .collect();
    let num_params = headers.iter().map(NetHeader::num_params).sum();
    let header = CheckpointHeader {
        group: group.to_string(),
        rng_seed,
        nets: headers,
        num_params,
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, net) in nets {
        for p in net.params() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != header.num_params * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            header.num_params,
            raw.len()
        )));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, params))
}

pub fn save_checkpoint(
    path: &Path,
    group: &str,
    rng_seed: u64,
    nets: &[(&str, &EqMlp)],
    extra: serde_json::Value,
) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(f, group, rng_seed, nets, extra)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{make_cyclic, make_dihedral, make_trivial, FiniteGroup};
    use crate::steerable::intertwiner_basis;
    use rand::Rng;

    fn reps(
        g: FiniteGroup,
    ) -> (
        Arc<FiniteGroup>,
        Representation,
        Representation,
        Representation,
    ) {
        let g = Arc::new(g);
        let t = Representation::trivial(&g);
        let s = Representation::standard(&g);
        let r = Representation::regular(&g);
        (g, t, s, r)
    }

    #[test]
    fn projection_fixes_equivariant_and_is_idempotent() {
        let (_, _, s, r) = reps(make_dihedral(4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = DMatrix::from_fn(r.dim(), s.dim(), |_, _| rng.random_range(-1.0..1.0));
        let p = project_weight(&w, &s, &r).unwrap();
        let pp = project_weight(&p, &s, &r).unwrap();
        assert!((&p - &pp).amax() < 1e-12);
        let basis = intertwiner_basis(&s, &r).unwrap();
        for m in basis.matrices() {
            assert!((project_weight(m, &s, &r).unwrap() - m).amax() < 1e-12);
        }
        assert!(matches!(
            project_weight(&DMatrix::zeros(3, 3), &s, &r),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn projection_image_is_intertwiner_span() {
        let (_, t, s, r) = reps(make_dihedral(4).unwrap());
        for (a, b) in [(&s, &r), (&r, &r), (&t, &s), (&s, &s)] {
            let n = a.dim() * b.dim();
            // matrix of the projector acting on vec(W)
            let mut cols = Vec::new();
            for k in 0..n {
                let mut e = DMatrix::zeros(b.dim(), a.dim());
                e.as_mut_slice()[k] = 1.0;
                cols.push(DVector::from_column_slice(
                    project_weight(&e, a, b).unwrap().as_slice(),
                ));
            }
            let proj = DMatrix::from_columns(&cols);
            // projector singular values are 0 or 1
            let rank = proj.singular_values().iter().filter(|&&v| v > 0.5).count();
            assert_eq!(rank, intertwiner_basis(a, b).unwrap().dimension());
        }
    }

    #[test]
    fn projection_with_sign_representation() {
        // D1 = {I, diag(1,−1)} is C2; its determinant rep is the sign rep.
        let g = Arc::new(make_dihedral(1).unwrap());
        let sign = Representation::determinant(&g);
        let triv = Representation::trivial(&g);
        let w = DMatrix::from_element(1, 1, 0.7);
        assert!((project_weight(&w, &sign, &sign).unwrap() - &w).amax() < 1e-15);
        assert_eq!(project_weight(&w, &sign, &triv).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn width_strategies() {
        assert_eq!(WidthStrategy::Sqrt.copies(512, 16), 128);
        assert_eq!(WidthStrategy::Linear.copies(512, 16), 32);
        assert_eq!(WidthStrategy::Sqrt.copies(512, 1), 512);
        assert_eq!(WidthStrategy::None.copies(7, 16), 7);
    }

    #[test]
    fn trivial_group_is_plain_mlp() {
        let g = Arc::new(make_trivial(2));
        let s = Representation::standard(&g);
        let net = EqMlp::init(&s, &s, 8, 2, WidthStrategy::Sqrt, 0).unwrap();
        assert_eq!(net.hidden_copies(), 8);
        // unconstrained: 2·8 + 8 + 8·2 + 2
        assert_eq!(net.num_params(), 2 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn zero_net_outputs_zero_and_identity_layer_passes_through() {
        let (_, t, s, _) = reps(make_dihedral(4).unwrap());
        let z = EqMlp::from_layers(vec![EqLinear::zeros(&s, &s).unwrap()], WidthStrategy::Sqrt);
        let x = DVector::from_vec(vec![0.3, -0.4]);
        assert_eq!(z.forward(&x).unwrap(), DVector::zeros(2));

        let mut id = EqLinear::zeros(&t, &t).unwrap();
        id.fit_weight(&DMatrix::identity(1, 1));
        let net = EqMlp::from_layers(vec![id], WidthStrategy::None);
        let x = DVector::from_vec(vec![1.25]);
        assert!((net.forward(&x).unwrap()[0] - 1.25).abs() < 1e-15);
        assert!(matches!(
            net.forward(&DVector::zeros(2)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn bias_is_invariant_and_weights_equivariant() {
        let (g, t, s, r) = reps(make_dihedral(4).unwrap());
        let rin = Representation::direct_sum(&[s.clone(), t.clone()]).unwrap();
        let rout = Representation::direct_sum(&[r.clone(), t.clone(), s.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = EqLinear::random(&rin, &rout, &mut rng).unwrap();
        let n = layer.num_params();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        layer.read_params(&p);
        for e in 0..g.order() {
            let w = layer.weight();
            assert!((rout.matrix(e) * w - w * rin.matrix(e)).amax() < 1e-10);
            let b = layer.bias_vector();
            assert!((rout.matrix(e) * b - b).amax() < 1e-10);
        }
        // bias lives in the trivial summand and the constant direction of the regular copy
        assert_eq!(layer.num_bias(), 2);
    }

    #[test]
    fn mlp_equivariance() {
        let (_, t, s, _) = reps(make_dihedral(4).unwrap());
        let rin = Representation::direct_sum(&[s.clone(), s.clone(), t.clone()]).unwrap();
        let net = EqMlp::init(&rin, &s, 16, 3, WidthStrategy::Sqrt, 4).unwrap();
        assert!(net.equivariance_residual(20, 0) < 1e-6);
        let inv = EqMlp::init(&rin, &t, 16, 3, WidthStrategy::Sqrt, 5).unwrap();
        assert!(inv.equivariance_residual(20, 1) < 1e-6);
    }

    fn finite_difference_check(net: &mut EqMlp, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DVector::from_fn(net.rep_in().dim(), |_, _| rng.random_range(-1.0..1.0));
        let up = DVector::from_fn(net.rep_out().dim(), |_, _| rng.random_range(-1.0..1.0));
        let grad = eqmlp_grad(net, &x, &up).unwrap();
        let p0 = net.params();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            net.set_params(&p).unwrap();
            let fp = up.dot(&net.forward(&x).unwrap());
            p[i] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let fm = up.dot(&net.forward(&x).unwrap());
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (fd.abs().max(grad[i].abs()).max(1e-6));
            worst = worst.max(rel);
        }
        net.set_params(&p0).unwrap();
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, t, s, _) = reps(make_dihedral(4).unwrap());
        let rin = Representation::direct_sum(&[s.clone(), t.clone()]).unwrap();
        let mut net = EqMlp::init(&rin, &s, 8, 3, WidthStrategy::Sqrt, 6).unwrap();
        assert!(finite_difference_check(&mut net, 11) < 1e-4);
        let (_, t1, s1, _) = reps(make_trivial(2));
        let rin1 = Representation::direct_sum(&[s1, t1.clone()]).unwrap();
        let mut plain = EqMlp::init(&rin1, &t1, 5, 2, WidthStrategy::Sqrt, 7).unwrap();
        assert!(finite_difference_check(&mut plain, 12) < 1e-4);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (_, _, s, _) = reps(make_cyclic(4).unwrap());
        let net = EqMlp::init(&s, &s, 4, 2, WidthStrategy::Sqrt, 8).unwrap();
        let g = eqmlp_grad(&net, &DVector::from_vec(vec![0.5, 0.1]), &DVector::zeros(2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invariant_loss_on_transformed_inputs() {
        let (g, t, s, _) = reps(make_dihedral(4).unwrap());
        let net = EqMlp::init(&s, &t, 8, 3, WidthStrategy::Sqrt, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
        let loss = |m: &DMatrix<f64>| {
            net.forward_batch(m)
                .iter()
                .map(|v| (v - 0.3).powi(2))
                .sum::<f64>()
        };
        let base = loss(&x);
        for e in 0..g.order() {
            assert!((loss(&(s.matrix(e) * &x)) - base).abs() < 1e-10);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (_, t, s, _) = reps(make_dihedral(4).unwrap());
        let a = EqMlp::init(&s, &t, 4, 2, WidthStrategy::Sqrt, 1).unwrap();
        let b = EqMlp::init(&t, &s, 4, 3, WidthStrategy::Linear, 2).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(
            &mut buf,
            "D4",
            42,
            &[("a", &a), ("b", &b)],
            serde_json::json!({"k": 1}),
        )
        .unwrap();
        let (h, p) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(h.group, "D4");
        assert_eq!(h.rng_seed, 42);
        assert_eq!(h.nets.len(), 2);
        assert_eq!(p.len(), a.num_params() + b.num_params());
        assert_eq!(&p[..a.num_params()], a.params().as_slice());
        buf[0] = b'X';
        assert!(read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in [
            OptimizerKind::Momentum {
                lr: 0.05,
                momentum: 0.9,
            },
            OptimizerKind::Adam {
                lr: 0.05,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        ] {
            let mut opt = Optimizer::new(kind, 2);
            let mut p = vec![1.0, -2.0];
            for _ in 0..500 {
                let g = vec![2.0 * p[0], 2.0 * p[1]];
                opt.step(&mut p, &g);
            }
            assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2, "{kind:?} {p:?}");
        }
    }
}
