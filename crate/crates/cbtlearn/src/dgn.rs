//! Graph network that embeds one subject's multi-view network into node
//! embeddings and derives a connectional brain template (CBT) from their
//! pairwise L1 distances.
//!
//! Each layer is an edge-conditioned convolution over the fully connected
//! region graph: a filter network maps the edge's view-weight vector to a
//! full weight matrix, neighbor messages are averaged over the `n_r - 1`
//! neighbors with the layer bias inside that average, and a rectifier sits
//! between layers but not after the last one. Training minimizes the
//! centeredness of the subject template against a sampled subset of the
//! training population, with all gradients computed analytically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{sample_training_subset, MultiViewNetwork, ViewNormalizers};
use crate::linalg::{Matrix, RngSeed};

/// Shape of an edge-conditioned network: view count, node feature width,
/// per-layer embedding widths, and an optional hidden width for the filter
/// networks (absent means a single affine map per layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccDims {
    pub n_views: usize,
    pub input_dim: usize,
    pub layer_dims: Vec<usize>,
    pub filter_hidden: Option<usize>,
}

impl EccDims {
    fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.input_dim == 0 {
            return Err(Error::Dimension(
                "network needs at least one view and feature".into(),
            ));
        }
        if self.layer_dims.is_empty() || self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension("layer widths must be positive".into()));
        }
        if self.filter_hidden == Some(0) {
            return Err(Error::Dimension(
                "filter hidden width must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layer_dims[layer - 1]
        }
    }
}

/// Flat offsets of one layer's tensors inside the parameter vector.
/// `fw`/`fb` back the affine filter; `w1`..`b2` back the variant with one
/// hidden rectifier layer. Exactly one of the two groups is active.
#[derive(Debug, Clone, PartialEq)]
struct LayerOffsets {
    d_in: usize,
    d_out: usize,
    /// d_out * d_in, the flattened size of one generated weight matrix.
    dd: usize,
    theta: usize,
    bias: usize,
    fw: usize,
    fb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

fn build_layout(dims: &EccDims) -> (Vec<LayerOffsets>, usize) {
    let mut layers = Vec::with_capacity(dims.n_layers());
    let mut off = 0;
    for l in 0..dims.n_layers() {
        let d_in = dims.in_dim(l);
        let d_out = dims.layer_dims[l];
        let dd = d_in * d_out;
        let theta = off;
        off += dd;
        let bias = off;
        off += d_out;
        let (fw, fb, w1, b1, w2, b2);
        match dims.filter_hidden {
            None => {
                fw = off;
                off += dd * dims.n_views;
                fb = off;
                off += dd;
                w1 = off;
                b1 = off;
                w2 = off;
                b2 = off;
            }
            Some(h) => {
                w1 = off;
                off += h * dims.n_views;
                b1 = off;
                off += h;
                w2 = off;
                off += dd * h;
                b2 = off;
                off += dd;
                fw = off;
                fb = off;
            }
        }
        layers.push(LayerOffsets {
            d_in,
            d_out,
            dd,
            theta,
            bias,
            fw,
            fb,
            w1,
            b1,
            w2,
            b2,
            end: off,
        });
    }
    (layers, off)
}

/// Edge-conditioned network parameters, stored as one flat vector so the
/// optimizer, snapshots and finite-difference probes all share a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EccNetwork {
    dims: EccDims,
    layout: Vec<LayerOffsets>,
    params: Vec<f64>,
}

impl EccNetwork {
    /// Fresh network with every tensor drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(dims: EccDims, seed: RngSeed) -> Result<EccNetwork> {
        dims.validate()?;
        let (layout, len) = build_layout(&dims);
        let mut params = vec![0.0; len];
        let mut rng = seed.rng();
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, buf: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut buf[range] {
                *p = rand::Rng::gen_range(&mut rng, -bound..bound);
            }
        };
        for (l, lo) in layout.iter().enumerate() {
            fill(lo.theta..lo.theta + lo.dd, lo.d_in, &mut params);
            fill(lo.bias..lo.bias + lo.d_out, lo.d_in, &mut params);
            match dims.filter_hidden {
                None => {
                    fill(
                        lo.fw..lo.fw + lo.dd * dims.n_views,
                        dims.n_views,
                        &mut params,
                    );
                    fill(lo.fb..lo.fb + lo.dd, dims.n_views, &mut params);
                }
                Some(h) => {
                    fill(lo.w1..lo.w1 + h * dims.n_views, dims.n_views, &mut params);
                    fill(lo.b1..lo.b1 + h, dims.n_views, &mut params);
                    fill(lo.w2..lo.w2 + lo.dd * h, h, &mut params);
                    fill(lo.b2..lo.b2 + lo.dd, h, &mut params);
                }
            }
            let _ = l;
        }
        Ok(EccNetwork {
            dims,
            layout,
            params,
        })
    }

    pub fn dims(&self) -> &EccDims {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} does not fit network with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Rebuilds a network from dimensions plus a flat parameter vector.
    pub fn from_params(dims: EccDims, params: Vec<f64>) -> Result<EccNetwork> {
        dims.validate()?;
        let (layout, len) = build_layout(&dims);
        if params.len() != len {
            return Err(Error::Dimension(format!(
                "expected {len} parameters for these dimensions, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("network parameters must be finite".into()));
        }
        Ok(EccNetwork {
            dims,
            layout,
            params,
        })
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        self.params[idx] = value;
    }

    pub fn param(&self, idx: usize) -> f64 {
        self.params[idx]
    }
}

/// All-ones node features, the default input when no measurements exist per
/// region.
pub fn default_features(n_regions: usize, input_dim: usize) -> Matrix {
    Matrix::from_fn(n_regions, input_dim, |_, _| 1.0)
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Intermediate state of one forward pass, kept for the backward pass.
struct ForwardCache {
    /// Post-activation node features per depth; index 0 is the input.
    acts: Vec<Matrix>,
    /// Pre-activation outputs per layer.
    pre: Vec<Matrix>,
    /// Per layer, edge-major flattened filter outputs (one `dd` block per
    /// unordered edge).
    filters: Vec<Vec<f64>>,
    /// Per layer, edge-major hidden pre-activations (hidden variant only).
    hidden_pre: Vec<Vec<f64>>,
}

fn edge_features(subject: &MultiViewNetwork) -> Vec<f64> {
    let n = subject.n_regions();
    let n_v = subject.n_views();
    let mut feats = Vec::with_capacity(n * (n - 1) / 2 * n_v);
    for p in 0..n {
        for q in p + 1..n {
            for v in 0..n_v {
                feats.push(subject.view(v)[(p, q)]);
            }
        }
    }
    feats
}

fn check_forward_inputs(
    net: &EccNetwork,
    subject: &MultiViewNetwork,
    features: &Matrix,
) -> Result<()> {
    if subject.n_views() != net.dims.n_views {
        return Err(Error::Dimension(format!(
            "subject has {} views, network expects {}",
            subject.n_views(),
            net.dims.n_views
        )));
    }
    if subject.n_regions() < 2 {
        return Err(Error::Dimension("need at least two regions".into()));
    }
    if features.rows() != subject.n_regions() || features.cols() != net.dims.input_dim {
        return Err(Error::Dimension(format!(
            "features are {}x{}, expected {}x{}",
            features.rows(),
            features.cols(),
            subject.n_regions(),
            net.dims.input_dim
        )));
    }
    Ok(())
}

fn forward_cached(
    net: &EccNetwork,
    subject: &MultiViewNetwork,
    features: &Matrix,
) -> Result<(Matrix, ForwardCache)> {
    check_forward_inputs(net, subject, features)?;
    let n = subject.n_regions();
    let n_v = net.dims.n_views;
    let n_layers = net.dims.n_layers();
    let n_edges = n * (n - 1) / 2;
    let inv_deg = 1.0 / (n as f64 - 1.0);
    let edges = edge_features(subject);
    let p = &net.params;

    let mut cache = ForwardCache {
        acts: vec![features.clone()],
        pre: Vec::with_capacity(n_layers),
        filters: Vec::with_capacity(n_layers),
        hidden_pre: Vec::with_capacity(n_layers),
    };

    for (l, lo) in net.layout.iter().enumerate() {
        let x = &cache.acts[l];
        let (d_in, d_out, dd) = (lo.d_in, lo.d_out, lo.dd);

        // Generate one weight matrix per unordered edge from its view vector.
        let mut filters = vec![0.0f64; n_edges * dd];
        let mut hidden_pre = Vec::new();
        match net.dims.filter_hidden {
            None => {
                for (e, block) in filters.chunks_mut(dd).enumerate() {
                    let ef = &edges[e * n_v..(e + 1) * n_v];
                    block.copy_from_slice(&p[lo.fb..lo.fb + dd]);
                    for (d, out) in block.iter_mut().enumerate() {
                        let row = &p[lo.fw + d * n_v..lo.fw + (d + 1) * n_v];
                        for (w, &ev) in row.iter().zip(ef) {
                            *out += w * ev;
                        }
                    }
                }
            }
            Some(h) => {
                hidden_pre = vec![0.0f64; n_edges * h];
                for e in 0..n_edges {
                    let ef = &edges[e * n_v..(e + 1) * n_v];
                    let hp = &mut hidden_pre[e * h..(e + 1) * h];
                    hp.copy_from_slice(&p[lo.b1..lo.b1 + h]);
                    for (j, out) in hp.iter_mut().enumerate() {
                        let row = &p[lo.w1 + j * n_v..lo.w1 + (j + 1) * n_v];
                        for (w, &ev) in row.iter().zip(ef) {
                            *out += w * ev;
                        }
                    }
                    let block = &mut filters[e * dd..(e + 1) * dd];
                    block.copy_from_slice(&p[lo.b2..lo.b2 + dd]);
                    for (d, out) in block.iter_mut().enumerate() {
                        let row = &p[lo.w2 + d * h..lo.w2 + (d + 1) * h];
                        for (&w, &hv) in row.iter().zip(hp.iter()) {
                            *out += w * relu(hv);
                        }
                    }
                }
            }
        }

        // Self term plus averaged neighbor messages; the bias sits inside
        // the neighbor average.
        let mut pre = Matrix::zeros(n, d_out);
        for node in 0..n {
            let xr = x.row(node);
            let out = pre.row_mut(node);
            for (a, o) in out.iter_mut().enumerate() {
                let theta_row = &p[lo.theta + a * d_in..lo.theta + (a + 1) * d_in];
                let mut acc = 0.0;
                for (t, &xv) in theta_row.iter().zip(xr) {
                    acc += t * xv;
                }
                *o = acc + p[lo.bias + a] * inv_deg;
            }
        }
        let mut edge_idx = 0;
        for pn in 0..n {
            for qn in pn + 1..n {
                let block = &filters[edge_idx * dd..(edge_idx + 1) * dd];
                edge_idx += 1;
                let xq = cache.acts[l].row(qn);
                let xp = cache.acts[l].row(pn);
                for a in 0..d_out {
                    let row = &block[a * d_in..(a + 1) * d_in];
                    let mut to_p = 0.0;
                    let mut to_q = 0.0;
                    for (b, &w) in row.iter().enumerate() {
                        to_p += w * xq[b];
                        to_q += w * xp[b];
                    }
                    pre[(pn, a)] += to_p * inv_deg;
                    pre[(qn, a)] += to_q * inv_deg;
                }
            }
        }

        let act = if l + 1 < n_layers {
            pre.map(relu)
        } else {
            pre.clone()
        };
        cache.pre.push(pre);
        cache.filters.push(filters);
        cache.hidden_pre.push(hidden_pre);
        cache.acts.push(act);
    }

    let embeddings = cache.acts[n_layers].clone();
    Ok((embeddings, cache))
}

/// Runs the edge-conditioned network over one subject, returning the
/// `n_regions x d_last` node embeddings.
pub fn ecc_forward(
    net: &EccNetwork,
    subject: &MultiViewNetwork,
    features: &Matrix,
) -> Result<Matrix> {
    forward_cached(net, subject, features).map(|(emb, _)| emb)
}

/// A connectional brain template: symmetric, nonnegative, zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cbt(Matrix);

impl Cbt {
    /// Validates the template invariants on an externally supplied matrix.
    pub fn new(m: Matrix) -> Result<Cbt> {
        if !m.is_square() || m.is_empty() {
            return Err(Error::Format("template must be square and nonempty".into()));
        }
        for i in 0..m.rows() {
            if m[(i, i)] != 0.0 {
                return Err(Error::Format(format!("template diagonal nonzero at {i}")));
            }
            for j in 0..m.cols() {
                let w = m[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Format(format!("template weight {w} at ({i},{j})")));
                }
                if m[(j, i)] != w {
                    return Err(Error::Format(format!("template asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Cbt(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn n_regions(&self) -> usize {
        self.0.rows()
    }
}

/// Template entries are the L1 distances between node embedding rows:
/// `C_ij = sum_k |V_ik - V_jk|`.
pub fn cbt_from_embeddings(embeddings: &Matrix) -> Cbt {
    let n = embeddings.rows();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (ri, rj) = (embeddings.row(i), embeddings.row(j));
            let d: f64 = ri.iter().zip(rj).map(|(&a, &b)| (a - b).abs()).sum();
            c[(i, j)] = d;
            c[(j, i)] = d;
        }
    }
    Cbt(c)
}

/// Sum over the subset and all views of the Frobenius distance between the
/// template and each normalizer-scaled view.
pub fn centeredness_loss(
    cbt: &Matrix,
    subset: &[&MultiViewNetwork],
    normalizers: &ViewNormalizers,
) -> Result<f64> {
    let mut loss = 0.0;
    for s in subset {
        if s.n_views() != normalizers.lambdas.len() {
            return Err(Error::Dimension(format!(
                "subject {} has {} views but {} normalizers are given",
                s.subject_id(),
                s.n_views(),
                normalizers.lambdas.len()
            )));
        }
        for (v, &lambda) in normalizers.lambdas.iter().enumerate() {
            let target = s.view(v);
            if target.rows() != cbt.rows() {
                return Err(Error::Dimension(format!(
                    "template is {}x{} but subject {} views are {}x{}",
                    cbt.rows(),
                    cbt.cols(),
                    s.subject_id(),
                    target.rows(),
                    target.cols()
                )));
            }
            let mut sq = 0.0;
            for (c, t) in cbt.as_slice().iter().zip(target.as_slice()) {
                let d = c - t * lambda;
                sq += d * d;
            }
            loss += sq.sqrt();
        }
    }
    Ok(loss)
}

/// Loss and analytic gradient of `centeredness(cbt(forward(subject)))` with
/// respect to every network parameter, laid out like `EccNetwork::params`.
/// Subgradients at the absolute-value and rectifier kinks are zero.
pub fn loss_gradients(
    net: &EccNetwork,
    subject: &MultiViewNetwork,
    subset: &[&MultiViewNetwork],
    normalizers: &ViewNormalizers,
    features: &Matrix,
) -> Result<(f64, Vec<f64>)> {
    if subset.is_empty() {
        return Err(Error::Sampling("empty training subset".into()));
    }
    if normalizers.lambdas.len() != net.dims.n_views {
        return Err(Error::Dimension(format!(
            "{} normalizers for {} views",
            normalizers.lambdas.len(),
            net.dims.n_views
        )));
    }
    let (embeddings, cache) = forward_cached(net, subject, features)?;
    let cbt = cbt_from_embeddings(&embeddings);
    let c = cbt.matrix();
    let n = c.rows();

    // d(loss)/d(template): sum of unit-normalized residuals.
    let mut loss = 0.0;
    let mut d_c = Matrix::zeros(n, n);
    for s in subset {
        for (v, &lambda) in normalizers.lambdas.iter().enumerate() {
            let target = s.view(v);
            if target.rows() != n || s.n_views() != net.dims.n_views {
                return Err(Error::Dimension(format!(
                    "subset subject {} does not match the template shape",
                    s.subject_id()
                )));
            }
            let mut sq = 0.0;
            for (cv, tv) in c.as_slice().iter().zip(target.as_slice()) {
                let d = cv - tv * lambda;
                sq += d * d;
            }
            let norm = sq.sqrt();
            loss += norm;
            if norm > 0.0 {
                let inv = 1.0 / norm;
                for (dst, (cv, tv)) in d_c
                    .as_mut_slice()
                    .iter_mut()
                    .zip(c.as_slice().iter().zip(target.as_slice()))
                {
                    *dst += (cv - tv * lambda) * inv;
                }
            }
        }
    }

    // d(template)/d(embeddings): C_ij couples rows i and j through the sign
    // of their per-coordinate differences.
    let d_last = embeddings.cols();
    let mut g = Matrix::zeros(n, d_last);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = d_c[(i, j)] + d_c[(j, i)];
            if w == 0.0 {
                continue;
            }
            let (ri, rj) = (embeddings.row(i), embeddings.row(j));
            let gi = g.row_mut(i);
            for (k, go) in gi.iter_mut().enumerate() {
                // Row i is touched by C_ij (through V_i directly) and by
                // C_ji (through its second argument), hence the transposed
                // entry inside w.
                *go += w * sign(ri[k] - rj[k]);
            }
        }
    }

    let mut grads = vec![0.0f64; net.params.len()];
    let n_v = net.dims.n_views;
    let inv_deg = 1.0 / (n as f64 - 1.0);
    let edges = edge_features(subject);
    let p = &net.params;
    let n_layers = net.dims.n_layers();

    let mut upstream = g;
    for l in (0..n_layers).rev() {
        let lo = &net.layout[l];
        let (d_in, d_out, dd) = (lo.d_in, lo.d_out, lo.dd);
        let x = &cache.acts[l];
        // Activation gate; the last layer has none.
        if l + 1 < n_layers {
            let pre = &cache.pre[l];
            for (u, &h) in upstream.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if h <= 0.0 {
                    *u = 0.0;
                }
            }
        }

        // Self-loop weights and bias.
        for node in 0..n {
            let gr = upstream.row(node);
            let xr = x.row(node);
            for (a, &ga) in gr.iter().enumerate() {
                if ga == 0.0 {
                    continue;
                }
                let trow = &mut grads[lo.theta + a * d_in..lo.theta + (a + 1) * d_in];
                for (t, &xv) in trow.iter_mut().zip(xr) {
                    *t += ga * xv;
                }
                grads[lo.bias + a] += ga * inv_deg;
            }
        }

        // Per-edge filter gradients and input gradients.
        let mut d_x = Matrix::zeros(n, d_in);
        let filters = &cache.filters[l];
        let mut d_block = vec![0.0f64; dd];
        let mut edge_idx = 0;
        for pn in 0..n {
            for qn in pn + 1..n {
                let block = &filters[edge_idx * dd..(edge_idx + 1) * dd];
                let ef = &edges[edge_idx * n_v..(edge_idx + 1) * n_v];
                let gp = upstream.row(pn);
                let gq = upstream.row(qn);
                let xp = x.row(pn);
                let xq = x.row(qn);
                // Gradient of the generated weight matrix: both directions
                // of the edge share one filter output.
                for a in 0..d_out {
                    let ga_p = gp[a] * inv_deg;
                    let ga_q = gq[a] * inv_deg;
                    let row = &mut d_block[a * d_in..(a + 1) * d_in];
                    for (b, r) in row.iter_mut().enumerate() {
                        *r = ga_p * xq[b] + ga_q * xp[b];
                    }
                }
                // Input gradients through the generated weights.
                {
                    let dq = d_x.row_mut(qn);
                    for a in 0..d_out {
                        let ga = gp[a] * inv_deg;
                        if ga == 0.0 {
                            continue;
                        }
                        let row = &block[a * d_in..(a + 1) * d_in];
                        for (b, &w) in row.iter().enumerate() {
                            dq[b] += w * ga;
                        }
                    }
                }
                {
                    let dp = d_x.row_mut(pn);
                    for a in 0..d_out {
                        let ga = gq[a] * inv_deg;
                        if ga == 0.0 {
                            continue;
                        }
                        let row = &block[a * d_in..(a + 1) * d_in];
                        for (b, &w) in row.iter().enumerate() {
                            dp[b] += w * ga;
                        }
                    }
                }
                // Through the filter network onto its parameters.
                match net.dims.filter_hidden {
                    None => {
                        for (d, &db) in d_block.iter().enumerate() {
                            if db == 0.0 {
                                continue;
                            }
                            grads[lo.fb + d] += db;
                            let row = &mut grads[lo.fw + d * n_v..lo.fw + (d + 1) * n_v];
                            for (w, &ev) in row.iter_mut().zip(ef) {
                                *w += db * ev;
                            }
                        }
                    }
                    Some(h) => {
                        let hp = &cache.hidden_pre[l][edge_idx * h..(edge_idx + 1) * h];
                        let mut d_h = vec![0.0f64; h];
                        for (d, &db) in d_block.iter().enumerate() {
                            if db == 0.0 {
                                continue;
                            }
                            grads[lo.b2 + d] += db;
                            let wrow = &p[lo.w2 + d * h..lo.w2 + (d + 1) * h];
                            let grow = &mut grads[lo.w2 + d * h..lo.w2 + (d + 1) * h];
                            for j in 0..h {
                                grow[j] += db * relu(hp[j]);
                                d_h[j] += wrow[j] * db;
                            }
                        }
                        for j in 0..h {
                            if hp[j] <= 0.0 || d_h[j] == 0.0 {
                                continue;
                            }
                            grads[lo.b1 + j] += d_h[j];
                            let row = &mut grads[lo.w1 + j * n_v..lo.w1 + (j + 1) * n_v];
                            for (w, &ev) in row.iter_mut().zip(ef) {
                                *w += d_h[j] * ev;
                            }
                        }
                    }
                }
                edge_idx += 1;
            }
        }

        // Self-loop contribution to the input gradient.
        for node in 0..n {
            let gr = upstream.row(node);
            let dxr = d_x.row_mut(node);
            for (a, &ga) in gr.iter().enumerate() {
                if ga == 0.0 {
                    continue;
                }
                let trow = &p[lo.theta + a * d_in..lo.theta + (a + 1) * d_in];
                for (b, &t) in trow.iter().enumerate() {
                    dxr[b] += t * ga;
                }
            }
        }
        upstream = d_x;
    }

    Ok((loss, grads))
}

/// Optimizer settings for template training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Size of the random population subset each subject's loss is measured
    /// against; clamped to the training-set size.
    pub subset_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without improvement of the epoch-mean loss before stopping.
    pub early_stop_patience: usize,
    pub layer_dims: Vec<usize>,
    pub filter_hidden: Option<usize>,
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            epochs: 500,
            subset_size: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 50,
            layer_dims: vec![36, 24, 5],
            filter_hidden: None,
            seed: RngSeed(0),
        }
    }
}

/// Stochastic trainer driving one network over a fixed training set. The
/// co-optimization loop reuses it so a plain run and a co-optimized run with
/// refits disabled produce identical traces.
pub struct DgnTrainer {
    cfg: TrainConfig,
    subjects: Vec<MultiViewNetwork>,
    ids: Vec<String>,
    normalizers: ViewNormalizers,
    features: Matrix,
    net: EccNetwork,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
    subset_seed: RngSeed,
    draw_counter: u64,
}

impl DgnTrainer {
    pub fn new(subjects: &[MultiViewNetwork], cfg: TrainConfig) -> Result<DgnTrainer> {
        if subjects.is_empty() {
            return Err(Error::Split("cannot train on an empty population".into()));
        }
        let refs: Vec<&MultiViewNetwork> = subjects.iter().collect();
        let normalizers = crate::graphdata::compute_view_normalizers(&refs)?;
        let dims = EccDims {
            n_views: subjects[0].n_views(),
            input_dim: 1,
            layer_dims: cfg.layer_dims.clone(),
            filter_hidden: cfg.filter_hidden,
        };
        let net = EccNetwork::init(dims, cfg.seed.derive(0x1297))?;
        let n_params = net.n_params();
        Ok(DgnTrainer {
            features: default_features(subjects[0].n_regions(), 1),
            ids: subjects
                .iter()
                .map(|s| s.subject_id().to_string())
                .collect(),
            subjects: subjects.to_vec(),
            normalizers,
            net,
            adam_m: vec![0.0; n_params],
            adam_v: vec![0.0; n_params],
            adam_t: 0,
            subset_seed: cfg.seed.derive(0x5a3b),
            draw_counter: 0,
            cfg,
        })
    }

    pub fn network(&self) -> &EccNetwork {
        &self.net
    }

    pub fn normalizers(&self) -> &ViewNormalizers {
        &self.normalizers
    }

    pub fn snapshot(&self) -> Vec<f64> {
        self.net.params().to_vec()
    }

    pub fn restore(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn subset(&mut self) -> Result<Vec<&MultiViewNetwork>> {
        let size = self.cfg.subset_size.clamp(1, self.ids.len());
        let picked = sample_training_subset(&self.ids, size, self.subset_seed, self.draw_counter)?;
        self.draw_counter += 1;
        picked
            .iter()
            .map(|id| {
                self.subjects
                    .iter()
                    .find(|s| s.subject_id() == id)
                    .ok_or_else(|| Error::Sampling(format!("lost subject {id}")))
            })
            .collect()
    }

    /// One pass over all training subjects with per-subject Adam updates;
    /// returns the mean per-subject loss observed during the pass.
    pub fn run_epoch(&mut self, epoch_index: usize) -> Result<f64> {
        let mut total = 0.0;
        for idx in 0..self.subjects.len() {
            let subset = {
                let picked = self.subset()?;
                picked
                    .into_iter()
                    .map(|s| s as *const MultiViewNetwork)
                    .collect::<Vec<_>>()
            };
            // The subset borrows self immutably while the update needs self
            // mutably; raw pointers into the stable subjects vector avoid
            // cloning matrices every step.
            let subset_refs: Vec<&MultiViewNetwork> =
                subset.iter().map(|&ptr| unsafe { &*ptr }).collect();
            let subject = &self.subjects[idx];
            let (loss, grads) = loss_gradients(
                &self.net,
                subject,
                &subset_refs,
                &self.normalizers,
                &self.features,
            )?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch_index });
            }
            total += loss;
            self.adam_t += 1;
            let t = self.adam_t as f64;
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            let bc1 = 1.0 - b1.powf(t);
            let bc2 = 1.0 - b2.powf(t);
            let lr = self.cfg.learning_rate;
            let eps = self.cfg.epsilon;
            let params = self.net.params.as_mut_slice();
            for (((pv, &gv), m), v) in params
                .iter_mut()
                .zip(&grads)
                .zip(self.adam_m.iter_mut())
                .zip(self.adam_v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * gv;
                *v = b2 * *v + (1.0 - b2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        let mean = total / self.subjects.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch: epoch_index });
        }
        Ok(mean)
    }

    /// Deterministic evaluation loss: every subject's template measured
    /// against the full training set, averaged over subjects. Consumes no
    /// randomness, so checkpoint scoring never perturbs the training stream.
    pub fn full_training_loss(&self) -> Result<f64> {
        let all: Vec<&MultiViewNetwork> = self.subjects.iter().collect();
        let mut total = 0.0;
        for s in &self.subjects {
            let emb = ecc_forward(&self.net, s, &self.features)?;
            let cbt = cbt_from_embeddings(&emb);
            total += centeredness_loss(cbt.matrix(), &all, &self.normalizers)?;
        }
        Ok(total / self.subjects.len() as f64)
    }

    pub fn subject_cbts(&self) -> Result<Vec<(String, Cbt)>> {
        self.subjects
            .iter()
            .map(|s| {
                let emb = ecc_forward(&self.net, s, &self.features)?;
                Ok((s.subject_id().to_string(), cbt_from_embeddings(&emb)))
            })
            .collect()
    }
}

/// Outcome of a training run: the network at the best epoch, that network's
/// per-subject templates, and the per-epoch mean loss trace.
#[derive(Debug)]
pub struct DgnTrainResult {
    pub network: EccNetwork,
    pub per_subject_cbts: Vec<(String, Cbt)>,
    pub loss_trace: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Trains a template network on `subjects` with Adam, early stopping on the
/// epoch-mean loss, returning artifacts from the best-seen parameters.
/// `epochs = 0` returns the freshly initialized network untouched.
pub fn train_dgn(subjects: &[MultiViewNetwork], cfg: TrainConfig) -> Result<DgnTrainResult> {
    let patience = cfg.early_stop_patience.max(1);
    let epochs = cfg.epochs;
    let mut trainer = DgnTrainer::new(subjects, cfg)?;
    let mut trace = Vec::with_capacity(epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 0..epochs {
        let loss = trainer.run_epoch(epoch)?;
        trace.push(loss);
        let improved = best.as_ref().map_or(true, |(_, b, _)| loss < *b);
        if improved {
            best = Some((epoch, loss, trainer.snapshot()));
        } else if let Some((be, _, _)) = &best {
            if epoch - be >= patience {
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, params)) = &best {
        trainer.restore(params)?;
    }
    Ok(DgnTrainResult {
        per_subject_cbts: trainer.subject_cbts()?,
        network: trainer.net,
        loss_trace: trace,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerCheckpoint {
    theta: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filter_w: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filter_b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_w1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_b1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_w2: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_b2: Option<Vec<f64>>,
}

/// On-disk form of a trained network: dimensions, row-major tensors per
/// layer, the training configuration and its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgnCheckpoint {
    pub format_version: u32,
    n_views: usize,
    input_dim: usize,
    layer_dims: Vec<usize>,
    filter_hidden: Option<usize>,
    layers: Vec<LayerCheckpoint>,
    pub train_config: TrainConfig,
}

pub const DGN_FORMAT_VERSION: u32 = 1;

impl DgnCheckpoint {
    pub fn from_network(net: &EccNetwork, cfg: &TrainConfig) -> DgnCheckpoint {
        let p = net.params();
        let grab = |off: usize, len: usize| p[off..off + len].to_vec();
        let layers = net
            .layout
            .iter()
            .map(|lo| {
                let (affine, hidden) = match net.dims.filter_hidden {
                    None => (
                        Some((grab(lo.fw, lo.dd * net.dims.n_views), grab(lo.fb, lo.dd))),
                        None,
                    ),
                    Some(h) => (
                        None,
                        Some((
                            grab(lo.w1, h * net.dims.n_views),
                            grab(lo.b1, h),
                            grab(lo.w2, lo.dd * h),
                            grab(lo.b2, lo.dd),
                        )),
                    ),
                };
                let (filter_w, filter_b) = match affine {
                    Some((w, b)) => (Some(w), Some(b)),
                    None => (None, None),
                };
                let (hidden_w1, hidden_b1, hidden_w2, hidden_b2) = match hidden {
                    Some((w1, b1, w2, b2)) => (Some(w1), Some(b1), Some(w2), Some(b2)),
                    None => (None, None, None, None),
                };
                LayerCheckpoint {
                    theta: grab(lo.theta, lo.dd),
                    bias: grab(lo.bias, lo.d_out),
                    filter_w,
                    filter_b,
                    hidden_w1,
                    hidden_b1,
                    hidden_w2,
                    hidden_b2,
                }
            })
            .collect();
        DgnCheckpoint {
            format_version: DGN_FORMAT_VERSION,
            n_views: net.dims.n_views,
            input_dim: net.dims.input_dim,
            layer_dims: net.dims.layer_dims.clone(),
            filter_hidden: net.dims.filter_hidden,
            layers,
            train_config: cfg.clone(),
        }
    }

    pub fn into_network(self) -> Result<EccNetwork> {
        if self.format_version != DGN_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network checkpoint version {}",
                self.format_version
            )));
        }
        let dims = EccDims {
            n_views: self.n_views,
            input_dim: self.input_dim,
            layer_dims: self.layer_dims.clone(),
            filter_hidden: self.filter_hidden,
        };
        dims.validate()?;
        let (layout, len) = build_layout(&dims);
        if self.layers.len() != layout.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} layers, dimensions describe {}",
                self.layers.len(),
                layout.len()
            )));
        }
        let mut params = vec![0.0; len];
        let mut put = |off: usize, want: usize, src: Option<Vec<f64>>, what: &str| {
            let src = src.ok_or_else(|| Error::Format(format!("missing tensor {what}")))?;
            if src.len() != want {
                return Err(Error::Format(format!(
                    "tensor {what} has {} values, expected {want}",
                    src.len()
                )));
            }
            params[off..off + want].copy_from_slice(&src);
            Ok(())
        };
        for (lo, layer) in layout.iter().zip(self.layers) {
            put(lo.theta, lo.dd, Some(layer.theta), "theta")?;
            put(lo.bias, lo.d_out, Some(layer.bias), "bias")?;
            match dims.filter_hidden {
                None => {
                    put(lo.fw, lo.dd * dims.n_views, layer.filter_w, "filter_w")?;
                    put(lo.fb, lo.dd, layer.filter_b, "filter_b")?;
                }
                Some(h) => {
                    put(lo.w1, h * dims.n_views, layer.hidden_w1, "hidden_w1")?;
                    put(lo.b1, h, layer.hidden_b1, "hidden_b1")?;
                    put(lo.w2, lo.dd * h, layer.hidden_w2, "hidden_w2")?;
                    put(lo.b2, lo.dd, layer.hidden_b2, "hidden_b2")?;
                }
            }
        }
        EccNetwork::from_params(dims, params)
    }
}
