//! Forward pass with cached intermediates, and the matching reverse pass.

use super::{Featurization, GcnError, PolicyParams};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    edges: Vec<(usize, usize)>,
    focus: Option<usize>,
    /// Node features entering each layer, plus the final output.
    nodes: Vec<Array2<f64>>,
    /// Per layer and channel: channel-weighted neighbour sums.
    agg: Vec<Vec<Array2<f64>>>,
    /// Per layer and channel: the tanh branch.
    act: Vec<Vec<Array2<f64>>>,
    /// Edge vectors read by each layer.
    edge_feats: Vec<Array2<f64>>,
    /// Per edge update: pair input, message pre-activation, edge input,
    /// edge pre-activation.
    edge_pre: Vec<[Array2<f64>; 4]>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|x| x.max(0.0))
}

fn relu_mask(pre: &Array2<f64>, grad: &mut Array2<f64>) {
    grad.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

fn endpoint_pairs(v: &Array2<f64>, edges: &[(usize, usize)]) -> Array2<f64> {
    let d = v.ncols();
    let mut x = Array2::zeros((edges.len(), 2 * d));
    for (k, &(a, b)) in edges.iter().enumerate() {
        x.slice_mut(s![k, ..d]).assign(&v.row(a));
        x.slice_mut(s![k, d..]).assign(&v.row(b));
    }
    x
}

fn channel_sum(
    v: &Array2<f64>,
    edges: &[(usize, usize)],
    e: &Array2<f64>,
    c: usize,
) -> Array2<f64> {
    let mut a = Array2::zeros(v.raw_dim());
    for (k, &(u, w)) in edges.iter().enumerate() {
        let weight = e[[k, c]];
        if weight != 0.0 {
            a.row_mut(u).scaled_add(weight, &v.row(w));
        }
    }
    a
}

fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: ndarray::ArrayView1<f64>) -> Array2<f64> {
    let mut z = x.dot(w);
    z += &b;
    z
}

pub fn forward(params: &PolicyParams, feat: &Featurization) -> Result<Forward, GcnError> {
    let d = params.hidden();
    let s_e = params.channels();
    let n = feat.node_count();
    if feat.node_features.ncols() > d {
        return Err(GcnError::ShapeMismatch(format!(
            "input width {} exceeds hidden width {d}",
            feat.node_features.ncols()
        )));
    }
    if feat.channels() != s_e || feat.edge_features.nrows() != feat.edges.len() {
        return Err(GcnError::ShapeMismatch(format!(
            "edge features {:?} for {} edges, expected {s_e} channels",
            feat.edge_features.dim(),
            feat.edges.len()
        )));
    }
    if feat.edges.iter().any(|&(u, w)| u >= n || w >= n) || feat.focus.is_some_and(|f| f >= n) {
        return Err(GcnError::ShapeMismatch("node index out of range".into()));
    }
    let mut v = Array2::zeros((n, d));
    v.slice_mut(s![.., ..feat.node_features.ncols()])
        .assign(&feat.node_features);
    let mut e = feat.edge_features.clone();
    let layers = params.layers.len();
    let mut out = Forward {
        edges: feat.edges.clone(),
        focus: feat.focus,
        nodes: Vec::with_capacity(layers + 1),
        agg: Vec::with_capacity(layers),
        act: Vec::with_capacity(layers),
        edge_feats: Vec::with_capacity(layers),
        edge_pre: Vec::with_capacity(layers.saturating_sub(1)),
    };
    // with no edge labels at all, layers reduce to the residual path
    let inv = 1.0 / s_e.max(1) as f64;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut next = v.clone();
        let mut aggs = Vec::with_capacity(s_e);
        let mut acts = Vec::with_capacity(s_e);
        for c in 0..s_e {
            let a = channel_sum(&v, &feat.edges, &e, c);
            let t = affine(a.view(), &layer.w[c], layer.b.row(c)).mapv(f64::tanh);
            next.scaled_add(inv, &t);
            aggs.push(a);
            acts.push(t);
        }
        out.nodes.push(v);
        out.agg.push(aggs);
        out.act.push(acts);
        out.edge_feats.push(e.clone());
        if l + 1 < layers {
            let el = &params.edge_layers[l];
            let x1 = endpoint_pairs(&next, &feat.edges);
            let z1 = affine(x1.view(), &el.w_pair, el.b_pair.view());
            let msg = relu(&z1);
            let x2 = concatenate(Axis(1), &[msg.view(), e.view()]).expect("row counts agree");
            let z2 = affine(x2.view(), &el.w_edge, el.b_edge.view());
            e = relu(&z2);
            out.edge_pre.push([x1, z1, x2, z2]);
        }
        v = next;
    }
    out.nodes.push(v);
    Ok(out)
}

impl Forward {
    /// Final node features, `|V| x d`.
    pub fn output(&self) -> &Array2<f64> {
        self.nodes.last().expect("at least the input")
    }

    pub fn focus(&self) -> Option<usize> {
        self.focus
    }

    /// Edge vectors entering layer `l`.
    pub fn edge_features(&self, l: usize) -> &Array2<f64> {
        &self.edge_feats[l]
    }

    /// Every pre-activation fed to a rectifier.
    pub fn rectifier_inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.edge_pre
            .iter()
            .flat_map(|[_, z1, _, z2]| z1.iter().chain(z2.iter()).copied())
    }

    pub fn logits(&self, params: &PolicyParams) -> Result<Vec<f64>, GcnError> {
        let f = self.focus.ok_or(GcnError::NoFocus)?;
        let z = self.output().row(f).dot(&params.w_policy) + &params.b_policy;
        Ok(z.to_vec())
    }

    pub fn value(&self, params: &PolicyParams) -> f64 {
        let h = self.output();
        if h.nrows() == 0 {
            return params.b_critic[0];
        }
        let mean = h.mean_axis(Axis(0)).expect("non-empty");
        mean.dot(&params.w_critic) + params.b_critic[0]
    }
}

/// Accumulates into `grads` the gradient of a scalar loss whose partial
/// derivatives are `dlogits` (w.r.t. the focus logits) and `dvalue`
/// (w.r.t. the critic output).
pub fn backward(
    params: &PolicyParams,
    fwd: &Forward,
    dlogits: Option<&[f64]>,
    dvalue: f64,
    grads: &mut PolicyParams,
) -> Result<(), GcnError> {
    let h = fwd.output();
    let n = h.nrows();
    let d = params.hidden();
    let s_e = params.channels();
    let mut dh = Array2::<f64>::zeros((n, d));
    if let Some(dz) = dlogits {
        let f = fwd.focus.ok_or(GcnError::NoFocus)?;
        if dz.len() != params.rules() {
            return Err(GcnError::ShapeMismatch("logit gradient length".into()));
        }
        let dz = Array1::from(dz.to_vec());
        let row = h.row(f);
        for i in 0..d {
            grads.w_policy.row_mut(i).scaled_add(row[i], &dz);
        }
        grads.b_policy += &dz;
        dh.row_mut(f).assign(&params.w_policy.dot(&dz));
    }
    if dvalue != 0.0 && n > 0 {
        let mean = h.mean_axis(Axis(0)).expect("non-empty");
        grads.w_critic.scaled_add(dvalue, &mean);
        grads.b_critic[0] += dvalue;
        let per_row = &params.w_critic * (dvalue / n as f64);
        dh += &per_row;
    } else if dvalue != 0.0 {
        grads.b_critic[0] += dvalue;
    }

    let inv = 1.0 / s_e.max(1) as f64;
    let layers = params.layers.len();
    // `dv`: gradient w.r.t. the output of layer l; `de_carry`: gradient
    // w.r.t. the edge vectors of layer l coming from the edge update above it
    let mut dv = dh;
    let mut de_carry: Option<Array2<f64>> = None;
    for l in (0..layers).rev() {
        let layer = &params.layers[l];
        let v_in = &fwd.nodes[l];
        let e_in = &fwd.edge_feats[l];
        let mut dv_in = dv.clone();
        let mut de_in = de_carry
            .take()
            .unwrap_or_else(|| Array2::zeros(e_in.raw_dim()));
        {
            let glayer = &mut grads.layers[l];
            for c in 0..s_e {
                let t = &fwd.act[l][c];
                let a = &fwd.agg[l][c];
                let mut dz = dv.mapv(|g| g * inv);
                dz.zip_mut_with(t, |g, &y| *g *= 1.0 - y * y);
                glayer.w[c] += &a.t().dot(&dz);
                glayer.b.row_mut(c).scaled_add(1.0, &dz.sum_axis(Axis(0)));
                let da = dz.dot(&layer.w[c].t());
                for (k, &(u, w)) in fwd.edges.iter().enumerate() {
                    let weight = e_in[[k, c]];
                    if weight != 0.0 {
                        dv_in.row_mut(w).scaled_add(weight, &da.row(u));
                    }
                    de_in[[k, c]] += da.row(u).dot(&v_in.row(w));
                }
            }
        }
        if l > 0 {
            // edge vectors of layer l came from update l - 1, which read this
            // layer's input nodes and the edge vectors of layer l - 1
            let el = &params.edge_layers[l - 1];
            let gel = &mut grads.edge_layers[l - 1];
            let [x1, z1, x2, z2] = &fwd.edge_pre[l - 1];
            let mut dz2 = de_in;
            relu_mask(z2, &mut dz2);
            gel.w_edge += &x2.t().dot(&dz2);
            gel.b_edge += &dz2.sum_axis(Axis(0));
            let dx2 = dz2.dot(&el.w_edge.t());
            let mut dz1 = dx2.slice(s![.., ..s_e]).to_owned();
            relu_mask(z1, &mut dz1);
            gel.w_pair += &x1.t().dot(&dz1);
            gel.b_pair += &dz1.sum_axis(Axis(0));
            let dx1 = dz1.dot(&el.w_pair.t());
            for (k, &(u, w)) in fwd.edges.iter().enumerate() {
                dv_in.row_mut(u).scaled_add(1.0, &dx1.slice(s![k, ..d]));
                dv_in.row_mut(w).scaled_add(1.0, &dx1.slice(s![k, d..]));
            }
            de_carry = Some(dx2.slice(s![.., s_e..]).to_owned());
        }
        dv = dv_in;
    }
    grads.check_finite()
}
