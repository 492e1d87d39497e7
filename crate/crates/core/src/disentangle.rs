//! Correlation-penalized attribute mappers.
//!
//! A mapper predicts `N_A` attributes from `N_Z` latent features. Training
//! minimizes the Frobenius error between true and predicted attributes plus
//! `lambda` times the summed absolute Pearson correlation between every
//! distinct pair of predicted columns. A correlation prior replaces the
//! zero target of selected pairs with a known correlation, optionally
//! evaluated over a subset of rows only.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, DescentConfig, Objective};
use crate::stats;

pub use crate::stats::{pearson, spearman};

pub const DEFAULT_HIDDEN: usize = 100;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    values: Array2<f64>,
    names: Vec<String>,
}

impl AttributeMatrix {
    pub fn new(values: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if values.ncols() != names.len() {
            return Err(Error::dims(values.ncols(), names.len()));
        }
        if values.nrows() < 2 {
            return Err(Error::Shape("attribute matrix needs at least two rows".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attribute value".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate attribute name `{dup}`")));
        }
        Ok(Self { values, names })
    }

    /// Names `attr0`, `attr1`, ...
    pub fn unnamed(values: Array2<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|i| format!("attr{i}")).collect();
        Self::new(values, names)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_attrs(&self) -> usize {
        self.names.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.values.select(Axis(0), rows), self.names.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub i: usize,
    pub j: usize,
    pub target: f64,
    /// Rows over which the correlation is measured; all rows when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

/// Known inter-attribute correlations. Pairs without an entry target 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPrior {
    entries: Vec<PriorEntry>,
}

impl CorrelationPrior {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a target for the unordered pair `{i, j}`.
    pub fn with(mut self, i: usize, j: usize, target: f64) -> Result<Self> {
        self.insert(i, j, target, None)?;
        Ok(self)
    }

    /// Adds a target measured only over rows where `mask` is true.
    pub fn with_masked(mut self, i: usize, j: usize, target: f64, mask: Vec<bool>) -> Result<Self> {
        self.insert(i, j, target, Some(mask))?;
        Ok(self)
    }

    fn insert(&mut self, i: usize, j: usize, target: f64, mask: Option<Vec<bool>>) -> Result<()> {
        if i == j {
            return Err(Error::InvalidConfig("prior pairs must be distinct attributes".into()));
        }
        if !(target.abs() <= 1.0) {
            return Err(Error::InvalidConfig(format!("prior correlation {target} outside [-1, 1]")));
        }
        let (i, j) = if i > j { (i, j) } else { (j, i) };
        self.entries.retain(|e| (e.i, e.j) != (i, j));
        self.entries.push(PriorEntry { i, j, target, mask });
        Ok(())
    }

    pub fn entries(&self) -> &[PriorEntry] {
        &self.entries
    }

    fn lookup(&self) -> HashMap<(usize, usize), &PriorEntry> {
        self.entries.iter().map(|e| ((e.i, e.j), e)).collect()
    }

    /// Restricts every mask to the given rows, for training on a split.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let mask = match &e.mask {
                    None => None,
                    Some(m) => Some(
                        rows.iter()
                            .map(|&r| m.get(r).copied().ok_or_else(|| Error::dims(m.len(), r + 1)))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                };
                Ok(PriorEntry { mask, ..e.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    fn validate(&self, n_rows: usize, n_attrs: usize) -> Result<()> {
        for e in &self.entries {
            if e.i >= n_attrs {
                return Err(Error::dims(format!("attribute index < {n_attrs}"), e.i));
            }
            if let Some(m) = &e.mask {
                if m.len() != n_rows {
                    return Err(Error::dims(n_rows, m.len()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse_term: f64,
    pub corr_term: f64,
}

/// Pearson correlation of two columns over optional row mask, with the
/// gradient with respect to each column when requested.
struct PairCorrelation {
    rho: f64,
    /// `d rho / d x` and `d rho / d y`, zero outside the mask.
    grads: Option<(Array1<f64>, Array1<f64>)>,
}

fn pair_correlation(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    mask: Option<&[bool]>,
    with_grad: bool,
) -> Result<PairCorrelation> {
    let included = |k: usize| mask.is_none_or(|m| m[k]);
    let count = (0..x.len()).filter(|&k| included(k)).count();
    if count < 2 {
        return Err(Error::ZeroVariance);
    }
    let (mut mx, mut my) = (0.0, 0.0);
    for k in (0..x.len()).filter(|&k| included(k)) {
        mx += x[k];
        my += y[k];
    }
    mx /= count as f64;
    my /= count as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in (0..x.len()).filter(|&k| included(k)) {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let norm = (sxx * syy).sqrt();
    let rho = sxy / norm;
    let grads = with_grad.then(|| {
        let mut gx = Array1::zeros(x.len());
        let mut gy = Array1::zeros(x.len());
        for k in (0..x.len()).filter(|&k| included(k)) {
            let (dx, dy) = (x[k] - mx, y[k] - my);
            gx[k] = dy / norm - rho * dx / sxx;
            gy[k] = dx / norm - rho * dy / syy;
        }
        (gx, gy)
    });
    Ok(PairCorrelation { rho, grads })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss and, optionally, its gradient with respect to the predictions.
fn loss_impl(
    a: ArrayView2<f64>,
    a_hat: ArrayView2<f64>,
    lambda: f64,
    prior: Option<&CorrelationPrior>,
    squared: bool,
    with_grad: bool,
) -> Result<(LossParts, Option<Array2<f64>>)> {
    if a.dim() != a_hat.dim() {
        return Err(Error::dims(format!("{:?}", a.dim()), format!("{:?}", a_hat.dim())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
    }
    let (n, k) = a.dim();
    if let Some(p) = prior {
        p.validate(n, k)?;
    }
    let lookup = prior.map(CorrelationPrior::lookup).unwrap_or_default();

    let resid = &a_hat - &a;
    let sq: f64 = resid.iter().map(|v| v * v).sum();
    let (mse_term, mut grad) = if squared {
        (sq, with_grad.then(|| &resid * 2.0))
    } else {
        let norm = sq.sqrt();
        let g = with_grad.then(|| if norm > 0.0 { &resid / norm } else { Array2::zeros((n, k)) });
        (norm, g)
    };

    let mut corr_term = 0.0;
    for i in 0..k {
        for j in 0..i {
            let entry = lookup.get(&(i, j));
            let target = entry.map_or(0.0, |e| e.target);
            let mask = entry.and_then(|e| e.mask.as_deref());
            let need_grad = with_grad && lambda > 0.0;
            let pc = match pair_correlation(a_hat.column(i), a_hat.column(j), mask, need_grad) {
                Ok(pc) => pc,
                Err(Error::ZeroVariance) if lambda == 0.0 => continue,
                Err(e) => return Err(e),
            };
            let dev = pc.rho - target;
            corr_term += dev.abs();
            if let (Some(g), Some((gx, gy))) = (grad.as_mut(), pc.grads) {
                let s = lambda * sign(dev);
                if s != 0.0 {
                    g.column_mut(i).scaled_add(s, &gx);
                    g.column_mut(j).scaled_add(s, &gy);
                }
            }
        }
    }
    let parts = LossParts { total: mse_term + lambda * corr_term, mse_term, corr_term };
    Ok((parts, grad))
}

/// Frobenius error plus `lambda` times the summed absolute deviation of each
/// distinct pairwise prediction correlation from its prior target (0 by default).
pub fn disentangle_loss(
    a: &AttributeMatrix,
    a_hat: &Array2<f64>,
    lambda: f64,
    prior: Option<&CorrelationPrior>,
) -> Result<LossParts> {
    loss_impl(a.values.view(), a_hat.view(), lambda, prior, false, false).map(|(p, _)| p)
}

/// [`disentangle_loss`] with its gradient with respect to `a_hat`. The
/// absolute value uses subgradient 0 at 0. `squared` switches the error term
/// to the squared Frobenius norm.
pub fn disentangle_loss_grad(
    a: &AttributeMatrix,
    a_hat: &Array2<f64>,
    lambda: f64,
    prior: Option<&CorrelationPrior>,
    squared: bool,
) -> Result<(LossParts, Array2<f64>)> {
    let (parts, grad) = loss_impl(a.values.view(), a_hat.view(), lambda, prior, squared, true)?;
    Ok((parts, grad.expect("gradient requested")))
}

/// Mean absolute Pearson correlation over distinct column pairs.
pub fn mean_abs_correlation(m: &Array2<f64>) -> Result<f64> {
    let k = m.ncols();
    if k < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..k {
        for j in 0..i {
            let x = m.column(i).to_vec();
            let y = m.column(j).to_vec();
            total += pearson(&x, &y)?.abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum MapperKind {
    Linear,
    /// Three fully connected layers with rectifier activations between them.
    Mlp {
        hidden: usize,
    },
}

impl MapperKind {
    pub fn mlp() -> Self {
        MapperKind::Mlp { hidden: DEFAULT_HIDDEN }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapperKind::Linear => "linear",
            MapperKind::Mlp { .. } => "mlp",
        }
    }
}

/// Layer shapes as `(outputs, inputs)`.
fn layer_shapes(kind: MapperKind, n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
    match kind {
        MapperKind::Linear => vec![(n_out, n_in)],
        MapperKind::Mlp { hidden } => vec![(hidden, n_in), (hidden, hidden), (n_out, hidden)],
    }
}

/// A trainable map from latent vectors to attribute predictions.
///
/// Parameters are stored flat, layer by layer: the `outputs × inputs` weight
/// matrix in row-major order followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMapper {
    pub kind: MapperKind,
    pub n_in: usize,
    pub n_out: usize,
    params: Vec<f64>,
}

struct ForwardCache {
    /// Inputs to each layer (the first is the latent batch).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation outputs of the hidden layers.
    pre: Vec<Array2<f64>>,
}

impl AttributeMapper {
    /// Scaled uniform fan-in initialization: weights in `±1/sqrt(fan_in)`,
    /// biases zero.
    pub fn init(kind: MapperKind, n_in: usize, n_out: usize, seed: u64) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Shape("mapper dimensions must be positive".into()));
        }
        if let MapperKind::Mlp { hidden } = kind {
            if hidden == 0 {
                return Err(Error::Shape("hidden width must be positive".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (o, i) in layer_shapes(kind, n_in, n_out) {
            let bound = 1.0 / (i as f64).sqrt();
            params.extend((0..o * i).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        Ok(Self { kind, n_in, n_out, params })
    }

    /// Linear mapper with the given `n_out × n_in` weights and bias.
    pub fn linear(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dims(weights.nrows(), bias.len()));
        }
        let (n_out, n_in) = weights.dim();
        let mut params: Vec<f64> = weights.iter().copied().collect();
        params.extend(bias.iter());
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mapper parameter".into()));
        }
        Ok(Self { kind: MapperKind::Linear, n_in, n_out, params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// The same architecture with replaced parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), params.len()));
        }
        Ok(Self { params, ..self.clone() })
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        layer_shapes(self.kind, self.n_in, self.n_out)
    }

    fn layer<'p>(
        params: &'p [f64],
        offset: usize,
        (o, i): (usize, usize),
    ) -> (ArrayView2<'p, f64>, ArrayView1<'p, f64>) {
        let w = ArrayView2::from_shape((o, i), &params[offset..offset + o * i]).expect("layer shape");
        let b = ArrayView1::from(&params[offset + o * i..offset + o * i + o]);
        (w, b)
    }

    /// Weight matrix (`n_out × n_in`) and bias of a linear mapper.
    pub fn linear_parts(&self) -> Option<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        match self.kind {
            MapperKind::Linear => Some(Self::layer(&self.params, 0, (self.n_out, self.n_in))),
            MapperKind::Mlp { .. } => None,
        }
    }

    fn forward(&self, params: &[f64], z: ArrayView2<f64>, keep: bool) -> (Array2<f64>, Option<ForwardCache>) {
        let shapes = self.shapes();
        let mut offset = 0;
        let mut x = z.to_owned();
        let mut cache = keep.then(|| ForwardCache { inputs: Vec::new(), pre: Vec::new() });
        for (l, &shape) in shapes.iter().enumerate() {
            let (w, b) = Self::layer(params, offset, shape);
            offset += shape.0 * shape.1 + shape.0;
            let mut out = x.dot(&w.t());
            out += &b;
            if let Some(c) = cache.as_mut() {
                c.inputs.push(x);
            }
            if l + 1 < shapes.len() {
                if let Some(c) = cache.as_mut() {
                    c.pre.push(out.clone());
                }
                out.mapv_inplace(|v| v.max(0.0));
            }
            x = out;
        }
        (x, cache)
    }

    fn backward(&self, params: &[f64], cache: ForwardCache, mut delta: Array2<f64>) -> Vec<f64> {
        let shapes = self.shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(o, i) in &shapes {
            offsets.push(offset);
            offset += o * i + o;
        }
        let mut grad = vec![0.0; offset];
        for l in (0..shapes.len()).rev() {
            let (o, i) = shapes[l];
            let input = &cache.inputs[l];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            let off = offsets[l];
            grad[off..off + o * i].copy_from_slice(gw.as_slice().expect("standard layout"));
            grad[off + o * i..off + o * i + o].copy_from_slice(gb.as_slice().expect("standard layout"));
            if l > 0 {
                let (w, _) = Self::layer(params, off, (o, i));
                let mut back = delta.dot(&w);
                let pre = &cache.pre[l - 1];
                ndarray::Zip::from(&mut back).and(pre).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grad
    }

    /// Predictions for an `N × n_in` batch.
    pub fn predict(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.n_in {
            return Err(Error::dims(self.n_in, z.ncols()));
        }
        Ok(self.forward(&self.params, z, false).0)
    }
}

struct MapperObjective<'a> {
    mapper: &'a AttributeMapper,
    z: ArrayView2<'a, f64>,
    a: ArrayView2<'a, f64>,
    lambda: f64,
    prior: Option<&'a CorrelationPrior>,
    squared: bool,
}

impl Objective for MapperObjective<'_> {
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (pred, cache) = self.mapper.forward(params, self.z, true);
        let (parts, grad) = loss_impl(self.a, pred.view(), self.lambda, self.prior, self.squared, true)?;
        let grad = self.mapper.backward(params, cache.expect("cache kept"), grad.expect("gradient"));
        Ok((parts.total, grad))
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        let (pred, _) = self.mapper.forward(params, self.z, false);
        match loss_impl(self.a, pred.view(), self.lambda, self.prior, self.squared, false) {
            Ok((parts, _)) => Ok(parts.total),
            // A trial step that collapses a column is rejected by the line search.
            Err(Error::ZeroVariance) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

/// Training loss of `mapper` on `(z, a)` and its gradient with respect to the
/// flat parameters.
pub fn mapper_loss_grad(
    mapper: &AttributeMapper,
    z: ArrayView2<f64>,
    a: &AttributeMatrix,
    lambda: f64,
    prior: Option<&CorrelationPrior>,
    squared: bool,
) -> Result<(f64, Vec<f64>)> {
    if z.ncols() != mapper.n_in {
        return Err(Error::dims(mapper.n_in, z.ncols()));
    }
    if z.nrows() != a.values.nrows() || a.n_attrs() != mapper.n_out {
        return Err(Error::dims(format!("{}x{}", z.nrows(), mapper.n_out), format!("{:?}", a.values.dim())));
    }
    if let Some(p) = prior {
        p.validate(z.nrows(), a.n_attrs())?;
    }
    let objective = MapperObjective { mapper, z, a: a.values.view(), lambda, prior, squared };
    objective.value_and_grad(&mapper.params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Split {
    /// Fraction of rows used for training; the rest are held out.
    Fraction(f64),
    Counts {
        train: usize,
        test: usize,
    },
}

impl Default for Split {
    fn default() -> Self {
        Split::Fraction(DEFAULT_TRAIN_FRACTION)
    }
}

impl Split {
    /// Shuffled, disjoint `(train, test)` row indices.
    pub fn indices(&self, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let (train, test) = match *self {
            Split::Fraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidConfig("train fraction must lie in (0, 1)".into()));
                }
                let train = ((n as f64) * f).round() as usize;
                (train, n.saturating_sub(train))
            }
            Split::Counts { train, test } => (train, test),
        };
        if train == 0 || test == 0 || train + test > n {
            return Err(Error::InvalidConfig(format!("cannot split {n} rows into {train} train and {test} test")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test_idx = idx[train..train + test].to_vec();
        idx.truncate(train);
        Ok((idx, test_idx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: MapperKind,
    pub lambda: f64,
    pub split: Split,
    pub descent: DescentConfig,
    /// Use the squared Frobenius norm for the error term.
    pub squared_mse: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: MapperKind::Linear,
            lambda: 0.1,
            split: Split::default(),
            descent: DescentConfig { max_iters: 2000, grad_tolerance: 1e-8, ..DescentConfig::default() },
            squared_mse: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// Mean over entries of the squared prediction error.
    pub mse: f64,
    /// Mean absolute Pearson correlation between distinct predicted columns.
    pub mean_abs_corr: f64,
    pub loss: LossParts,
    /// Per attribute: Pearson correlation of prediction with truth.
    pub pearson: Vec<f64>,
    pub spearman: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub lambda: f64,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    pub iterations: usize,
    pub converged: bool,
}

/// Scores predictions against truth. Columns with zero variance get a
/// correlation of 0 in the per-attribute lists.
pub fn evaluate(
    a: &AttributeMatrix,
    pred: &Array2<f64>,
    lambda: f64,
    prior: Option<&CorrelationPrior>,
) -> Result<SplitMetrics> {
    let loss = match disentangle_loss(a, pred, lambda, prior) {
        Ok(l) => l,
        Err(Error::ZeroVariance) => disentangle_loss(a, pred, 0.0, None)?,
        Err(e) => return Err(e),
    };
    let n = pred.len() as f64;
    let mse = (pred - a.values()).iter().map(|v| v * v).sum::<f64>() / n;
    let mean_abs_corr = mean_abs_correlation(pred).unwrap_or(0.0);
    let mut p = Vec::new();
    let mut sp = Vec::new();
    for k in 0..a.n_attrs() {
        let x = pred.column(k).to_vec();
        let y = a.values().column(k).to_vec();
        p.push(pearson(&x, &y).unwrap_or(0.0));
        sp.push(spearman(&x, &y).unwrap_or(0.0));
    }
    Ok(SplitMetrics { mse, mean_abs_corr, loss, pearson: p, spearman: sp })
}

/// Trains a mapper on the training split by full-batch gradient descent on
/// the disentanglement loss and reports train and held-out metrics.
pub fn train_mapper(
    z: &Array2<f64>,
    a: &AttributeMatrix,
    prior: Option<&CorrelationPrior>,
    cfg: &TrainConfig,
) -> Result<(AttributeMapper, TrainMetrics)> {
    if z.nrows() != a.values().nrows() {
        return Err(Error::dims(a.values().nrows(), z.nrows()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent features".into()));
    }
    let (train_idx, test_idx) = cfg.split.indices(z.nrows(), cfg.seed)?;
    let z_train = z.select(Axis(0), &train_idx);
    let z_test = z.select(Axis(0), &test_idx);
    let a_train = a.select_rows(&train_idx)?;
    let a_test = a.select_rows(&test_idx)?;
    let prior_train = prior.map(|p| p.select_rows(&train_idx)).transpose()?;
    let prior_test = prior.map(|p| p.select_rows(&test_idx)).transpose()?;

    let mut mapper = AttributeMapper::init(cfg.kind, z.ncols(), a.n_attrs(), cfg.seed)?;
    let objective = MapperObjective {
        mapper: &mapper,
        z: z_train.view(),
        a: a_train.values().view(),
        lambda: cfg.lambda,
        prior: prior_train.as_ref(),
        squared: cfg.squared_mse,
    };
    let out = optim::minimize(&objective, mapper.params.clone(), &cfg.descent)?;
    mapper.params = out.x;

    let train = evaluate(&a_train, &mapper.predict(z_train.view())?, cfg.lambda, prior_train.as_ref())?;
    let test = evaluate(&a_test, &mapper.predict(z_test.view())?, cfg.lambda, prior_test.as_ref())?;
    let metrics =
        TrainMetrics { lambda: cfg.lambda, train, test, iterations: out.iterations, converged: out.converged };
    Ok((mapper, metrics))
}

/// Trains one mapper per `lambda`, all other settings shared.
pub fn lambda_sweep(
    z: &Array2<f64>,
    a: &AttributeMatrix,
    prior: Option<&CorrelationPrior>,
    cfg: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<TrainMetrics>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = TrainConfig { lambda, ..cfg.clone() };
            train_mapper(z, a, prior, &cfg).map(|(_, m)| m)
        })
        .collect()
}

/// Orthonormalizes the rows of `w` in order (modified Gram-Schmidt with one
/// reorthogonalization pass). Row `k` of the output depends only on input
/// rows `0..=k`.
pub fn gram_schmidt(w: &Array2<f64>) -> Result<Array2<f64>> {
    let mut q = w.to_owned();
    for k in 0..q.nrows() {
        let input_norm = w.row(k).dot(&w.row(k)).sqrt();
        for _pass in 0..2 {
            for j in 0..k {
                let (done, mut rest) = q.view_mut().split_at(Axis(0), k);
                let qj = done.row(j);
                let mut row: ArrayViewMut1<f64> = rest.row_mut(0);
                let proj = row.dot(&qj);
                row.scaled_add(-proj, &qj);
            }
        }
        let mut row = q.row_mut(k);
        let norm = row.dot(&row).sqrt();
        if norm < RANK_TOLERANCE || norm <= RANK_TOLERANCE * input_norm {
            return Err(Error::RankDeficient(k));
        }
        row /= norm;
    }
    Ok(q)
}

/// Moves `z` by `delta` along the unit direction of the mapper's row for
/// `attr_index`. Under the linear mapper, that attribute's prediction changes
/// by exactly `delta * ||w_j||`.
pub fn edit_direction(
    z: ArrayView1<f64>,
    mapper: &AttributeMapper,
    attr_index: usize,
    delta: f64,
) -> Result<Array1<f64>> {
    let (w, _) =
        mapper.linear_parts().ok_or_else(|| Error::InvalidConfig("edit directions need a linear mapper".into()))?;
    if attr_index >= w.nrows() {
        return Err(Error::dims(format!("attribute index < {}", w.nrows()), attr_index));
    }
    if z.len() != w.ncols() {
        return Err(Error::dims(w.ncols(), z.len()));
    }
    let row = w.row(attr_index);
    let norm = row.dot(&row).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroDirection(attr_index));
    }
    Ok(&z + &(&row * (delta / norm)))
}

/// Replaces a linear mapper's weight rows with their Gram-Schmidt
/// orthonormalization, keeping the bias.
pub fn orthogonalized(mapper: &AttributeMapper) -> Result<AttributeMapper> {
    let (w, b) =
        mapper.linear_parts().ok_or_else(|| Error::InvalidConfig("orthogonalization needs a linear mapper".into()))?;
    AttributeMapper::linear(gram_schmidt(&w.to_owned())?, b.to_owned())
}

/// Per-column sample standard deviations.
pub fn column_sd(m: &Array2<f64>) -> Vec<f64> {
    m.columns().into_iter().map(|c| stats::sample_sd(&c.to_vec())).collect()
}
